//! Checkpoint and feature file formats.
//!
//! Checkpoint (`*.ckpt`): magic `NGCCCKPT`, `u32` version, `u32` tensor
//! count, then per tensor a `u32`-length-prefixed UTF-8 name, `u32` rank,
//! `u32` dims and `f32` values. All integers and floats little-endian. A
//! JSON manifest with the same stem sits next to it.
//!
//! Feature file: magic `NGCCFEAT`, `u32` version, 16 ASCII bytes of config
//! hash, `u32` frames, `u32` channels, `u32` pairs, `u32` lags, then
//! `f32` values frame by frame in `[C, pairs, lags]` order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, NgccModel, TdoaFeature, TrackPosterior};
use crate::autodiff::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::scene::store::write_json;

const CKPT_MAGIC: &[u8; 8] = b"NGCCCKPT";
const FEAT_MAGIC: &[u8; 8] = b"NGCCFEAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch_hash: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    /// Compatibility hash of the data the model was trained on.
    pub compat_hash: Option<String>,
    /// Digest of the checkpoint bytes.
    pub params_hash: String,
}

pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }
}

pub fn encode_params(params: &ModelParams) -> Result<Vec<u8>> {
    let mut buf = CKPT_MAGIC.to_vec();
    put_u32(&mut buf, VERSION as usize)?;
    let tensors = params.tensors();
    put_u32(&mut buf, tensors.len())?;
    for (name, t) in tensors {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

/// Name, shape and values of one stored tensor.
pub type NamedBlob = (String, Vec<usize>, Vec<f64>);

pub fn decode_params(bytes: &[u8]) -> Result<Vec<NamedBlob>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CKPT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let values = r.f32s(shape.iter().product())?;
        out.push((name, shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Writes `model` to `path` plus its manifest; returns the manifest.
pub fn save_checkpoint(
    path: &Path,
    model: &NgccModel,
    seed: u64,
    step: u64,
    compat_hash: Option<String>,
) -> Result<CheckpointManifest> {
    let bytes = encode_params(&model.params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &bytes)?;
    let manifest = CheckpointManifest {
        format_version: VERSION,
        arch_hash: model.config.arch_hash(),
        config: model.config.clone(),
        seed,
        step,
        compat_hash,
        params_hash: crate::hash::bytes_hash(&bytes),
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(NgccModel, CheckpointManifest)> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| Error::config("checkpoint", format!("cannot read {}: {e}", mpath.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.arch_hash != manifest.config.arch_hash() {
        return Err(Error::Incompatible("checkpoint manifest architecture hash is stale".into()));
    }
    let bytes = fs::read(path)
        .map_err(|e| Error::config("checkpoint", format!("cannot read {}: {e}", path.display())))?;
    if crate::hash::bytes_hash(&bytes) != manifest.params_hash {
        return Err(Error::Incompatible("checkpoint bytes do not match their manifest".into()));
    }
    let mut params = ModelParams::init(&manifest.config, 0)?;
    params.load_named(decode_params(&bytes)?)?;
    Ok((NgccModel::from_params(manifest.config.clone(), params)?, manifest))
}

pub fn write_features<W: Write>(out: &mut W, config_hash: &str, features: &[TdoaFeature]) -> Result<()> {
    let mut buf = FEAT_MAGIC.to_vec();
    put_u32(&mut buf, VERSION as usize)?;
    let mut hash = [b'0'; 16];
    for (dst, src) in hash.iter_mut().zip(config_hash.bytes()) {
        *dst = src;
    }
    buf.extend_from_slice(&hash);
    put_u32(&mut buf, features.len())?;
    let shape = features.first().map_or([0, 0, 0], |f| {
        let s = f.values.shape();
        [s[0], s[1], s[2]]
    });
    for d in shape {
        put_u32(&mut buf, d)?;
    }
    for f in features {
        if f.values.shape() != shape {
            return Err(Error::Shape("features of one file must share a shape".into()));
        }
        for &v in f.values.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Returns the stored config hash and the features.
pub fn read_features(bytes: &[u8]) -> Result<(String, Vec<TdoaFeature>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != FEAT_MAGIC {
        return Err(Error::Format("not a feature file".into()));
    }
    if r.u32()? != VERSION as usize {
        return Err(Error::Format("unsupported feature file version".into()));
    }
    let hash = String::from_utf8(r.take(16)?.to_vec()).map_err(|_| Error::Format("bad hash".into()))?;
    let frames = r.u32()?;
    let shape = [r.u32()?, r.u32()?, r.u32()?];
    let per = shape.iter().product();
    let features = (0..frames)
        .map(|_| {
            Ok(TdoaFeature {
                values: Tensor::from_vec(&shape, r.f32s(per)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((hash, features))
}

/// CSV rows `frame,pair,track,lag,prob` for each `(frame index, posterior)`.
pub fn write_posterior_csv<'a, W, I>(out: &mut W, posteriors: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, &'a TrackPosterior)>,
{
    writeln!(out, "frame,pair,track,lag,prob")?;
    for (frame, post) in posteriors {
        let t = post.tau_max as i64;
        for pair in 0..post.pairs() {
            for track in 0..post.tracks() {
                for (lag, p) in (-t..=t).zip(post.probs(pair, track)) {
                    writeln!(out, "{frame},{pair},{track},{lag},{p:.6e}")?;
                }
            }
        }
    }
    Ok(())
}
