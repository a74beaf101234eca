//! On-disk datasets.
//!
//! A dataset directory holds `manifest.json` plus, per frame `n`,
//! `frame_{n:06}.f32` (channel-major little-endian `f32`, `window` samples
//! per channel) and a `frame_{n:06}.json` sidecar with the labels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{compat_hash, ArrayGeometry, DatasetFrame, DatasetGenerator, DatasetSpec, TdoaLabelSet};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub frames: usize,
    pub channels: usize,
    pub window: usize,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    /// Always `"channel_major_f32le"`.
    pub layout: String,
    pub geometry: ArrayGeometry,
    pub geometry_hash: String,
    pub compat_hash: String,
    pub config_hash: String,
    pub spec: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub index: usize,
    pub polyphony: usize,
    pub pairs: Vec<(usize, usize)>,
    /// `[pair][event]` lags for every active event.
    pub labels: Vec<Vec<i64>>,
    pub geometry_hash: String,
    pub seed: u64,
}

fn frame_stem(index: usize) -> String {
    format!("frame_{index:06}")
}

pub fn encode_f32(channels: &[Vec<f64>]) -> Vec<u8> {
    channels
        .iter()
        .flatten()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("waveform length is not a multiple of 4 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Renders `spec` under `seed` into `dir`.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, seed: u64) -> Result<DatasetManifest> {
    let generator = DatasetGenerator::new(spec.clone())?;
    fs::create_dir_all(dir)?;
    let geometry = generator.geometry().clone();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed,
        frames: spec.frames,
        channels: geometry.len(),
        window: spec.window,
        sample_rate: spec.sample_rate,
        speed_of_sound: spec.speed_of_sound,
        layout: "channel_major_f32le".into(),
        geometry_hash: geometry.hash(),
        compat_hash: compat_hash(&geometry, spec.sample_rate, spec.speed_of_sound, spec.window),
        config_hash: crate::hash::json_hash(spec),
        geometry,
        spec: spec.clone(),
    };
    for index in 0..spec.frames {
        let frame = generator.frame(seed, index)?;
        let stem = frame_stem(index);
        fs::write(dir.join(format!("{stem}.f32")), encode_f32(&frame.channels))?;
        let sidecar = FrameSidecar {
            index,
            polyphony: frame.polyphony,
            pairs: frame.labels.pairs.clone(),
            labels: frame.labels.lags.clone(),
            geometry_hash: manifest.geometry_hash.clone(),
            seed,
        };
        write_json(&dir.join(format!("{stem}.json")), &sidecar)?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct StoredDataset {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl StoredDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::config("dataset", format!("cannot read {}: {e}", path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                manifest.format_version
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.frames
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames == 0
    }

    pub fn frame(&self, index: usize) -> Result<DatasetFrame> {
        let stem = frame_stem(index);
        let sidecar: FrameSidecar =
            serde_json::from_str(&fs::read_to_string(self.dir.join(format!("{stem}.json")))?)?;
        let samples = decode_f32(&fs::read(self.dir.join(format!("{stem}.f32")))?)?;
        let (m, n) = (self.manifest.channels, self.manifest.window);
        if samples.len() != m * n {
            return Err(Error::Format(format!(
                "{stem}.f32 holds {} samples, expected {m} x {n}",
                samples.len()
            )));
        }
        if sidecar.geometry_hash != self.manifest.geometry_hash {
            return Err(Error::Incompatible(format!("{stem} was rendered for another array")));
        }
        Ok(DatasetFrame {
            index,
            channels: samples.chunks_exact(n).map(<[f64]>::to_vec).collect(),
            labels: TdoaLabelSet {
                pairs: sidecar.pairs,
                lags: sidecar.labels,
            },
            polyphony: sidecar.polyphony,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<DatasetFrame>> + '_ {
        (0..self.len()).map(move |i| self.frame(i))
    }
}
