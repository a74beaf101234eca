use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::gcc::{correlate_backward, correlate_spectra, spectra, spectra_backward};
use super::{ModelConfig, ModelParams};
use crate::autodiff::{conv1d, conv1d_backward, leaky_relu, leaky_relu_backward, log_softmax, Padding, Tensor};
use crate::error::{Error, Result};
use crate::scene::mic_pairs;
use crate::signal::{frame_signal, GccPhat};

/// Correlation-head output for one frame, `[C, pairs, 2 tau_max + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaFeature {
    pub values: Tensor,
}

/// Per pair and track categorical distributions over lags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPosterior {
    /// `[pairs, K, 2 tau_max + 1]`
    pub probs: Tensor,
    pub log_probs: Tensor,
    pub tau_max: usize,
}

impl TrackPosterior {
    pub fn from_logits(logits: &Tensor, tau_max: usize) -> Result<Self> {
        let lags = 2 * tau_max + 1;
        if logits.shape().len() != 3 || logits.dim(2) != lags {
            return Err(Error::Shape(format!(
                "logits {:?} are not [pairs, K, {lags}]",
                logits.shape()
            )));
        }
        let mut log_probs = Tensor::zeros(logits.shape());
        for (src, dst) in logits.data().chunks(lags).zip(log_probs.data_mut().chunks_mut(lags)) {
            dst.copy_from_slice(&log_softmax(src));
        }
        let probs = Tensor::from_vec(logits.shape(), log_probs.data().iter().map(|v| v.exp()).collect())?;
        Ok(Self {
            probs,
            log_probs,
            tau_max,
        })
    }

    pub fn pairs(&self) -> usize {
        self.probs.dim(0)
    }

    pub fn tracks(&self) -> usize {
        self.probs.dim(1)
    }

    pub fn lags(&self) -> usize {
        self.probs.dim(2)
    }

    fn offset(&self, pair: usize, track: usize) -> usize {
        (pair * self.tracks() + track) * self.lags()
    }

    pub fn probs(&self, pair: usize, track: usize) -> &[f64] {
        let o = self.offset(pair, track);
        &self.probs.data()[o..o + self.lags()]
    }

    pub fn log_probs(&self, pair: usize, track: usize) -> &[f64] {
        let o = self.offset(pair, track);
        &self.log_probs.data()[o..o + self.lags()]
    }
}

/// Slice `[L, lags]` of pair `p` out of a `[L, pairs, lags]` tensor.
fn pair_slice(t: &Tensor, p: usize) -> Tensor {
    let (channels, pairs, lags) = (t.dim(0), t.dim(1), t.dim(2));
    let mut out = Tensor::zeros(&[channels, lags]);
    for c in 0..channels {
        let src = &t.data()[(c * pairs + p) * lags..(c * pairs + p + 1) * lags];
        out.row_mut(c).copy_from_slice(src);
    }
    out
}

fn stack_pairs(parts: &[Tensor]) -> Tensor {
    let (channels, lags) = (parts[0].dim(0), parts[0].dim(1));
    let pairs = parts.len();
    let mut out = Tensor::zeros(&[channels, pairs, lags]);
    for (p, part) in parts.iter().enumerate() {
        for c in 0..channels {
            let o = (c * pairs + p) * lags;
            out.data_mut()[o..o + lags].copy_from_slice(part.row(c));
        }
    }
    out
}

struct FilterbankCache {
    /// Input of every layer; `inputs[0]` is the raw `[1, N]` waveform.
    inputs: Vec<Tensor>,
    /// Pre-activation of every layer.
    pre: Vec<Tensor>,
    output: Tensor,
}

struct HeadCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    feature: Tensor,
}

/// Intermediate values of one forward pass, kept for [`NgccModel::backward`].
pub struct ForwardCache {
    filterbank: Vec<FilterbankCache>,
    spectra: Vec<Vec<Vec<Complex64>>>,
    heads: Vec<HeadCache>,
    /// `[pairs, K, lags]`
    pub logits: Tensor,
}

impl ForwardCache {
    pub fn posterior(&self, tau_max: usize) -> Result<TrackPosterior> {
        TrackPosterior::from_logits(&self.logits, tau_max)
    }

    pub fn feature(&self) -> TdoaFeature {
        let parts: Vec<Tensor> = self.heads.iter().map(|h| h.feature.clone()).collect();
        TdoaFeature {
            values: stack_pairs(&parts),
        }
    }
}

/// The neural GCC-PHAT network.
#[derive(Debug, Clone)]
pub struct NgccModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pairs: Vec<(usize, usize)>,
    fft: GccPhat,
}

impl NgccModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            pairs: mic_pairs(config.microphones),
            fft: GccPhat::new(config.window),
            config,
            params,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn check_channel(&self, samples: &[f64]) -> Result<()> {
        if samples.len() != self.config.window {
            return Err(Error::Shape(format!(
                "frame has {} samples, model expects {}",
                samples.len(),
                self.config.window
            )));
        }
        Ok(())
    }

    fn filterbank_cached(&self, samples: &[f64], sinc_kernels: &Tensor) -> Result<FilterbankCache> {
        self.check_channel(samples)?;
        let padding = self.config.padding;
        let mut inputs = vec![Tensor::from_vec(&[1, samples.len()], samples.to_vec())?];
        let mut pre = Vec::with_capacity(1 + self.params.filterbank.len());
        let weights = std::iter::once(sinc_kernels).chain(&self.params.filterbank);
        for w in weights {
            let z = conv1d(inputs.last().expect("input"), w, None, padding)?;
            inputs.push(leaky_relu(&z));
            pre.push(z);
        }
        let output = inputs.pop().expect("output");
        Ok(FilterbankCache { inputs, pre, output })
    }

    /// Shared filter bank on one microphone signal, `[L, window]`.
    pub fn filterbank_forward(&self, samples: &[f64]) -> Result<Tensor> {
        Ok(self.filterbank_cached(samples, &self.params.sinc.kernels())?.output)
    }

    /// Channel-wise GCC-PHAT of two filter-bank outputs, `[L, 2 tau_max + 1]`.
    pub fn channelwise_gcc(&self, feat_i: &Tensor, feat_j: &Tensor) -> Result<Tensor> {
        let shape = [self.config.filters, self.config.window];
        if feat_i.shape() != shape || feat_j.shape() != shape {
            return Err(Error::Shape(format!(
                "expected filter-bank outputs {shape:?}, got {:?} and {:?}",
                feat_i.shape(),
                feat_j.shape()
            )));
        }
        Ok(correlate_spectra(
            &self.fft,
            &spectra(&self.fft, feat_i),
            &spectra(&self.fft, feat_j),
            self.config.tau_max,
            self.config.phat_epsilon,
        ))
    }

    fn head_cached(&self, corr: Tensor) -> Result<HeadCache> {
        let mut inputs = vec![corr];
        let mut pre = Vec::new();
        for (w, b) in self.params.head_weights.iter().zip(&self.params.head_biases) {
            let z = conv1d(inputs.last().expect("input"), w, Some(b), Padding::Zero)?;
            inputs.push(leaky_relu(&z));
            pre.push(z);
        }
        let feature = inputs.pop().expect("feature");
        Ok(HeadCache { inputs, pre, feature })
    }

    /// Correlation head applied to every pair with shared weights.
    /// `corr` is `[L, pairs, lags]`; the result is `[C, pairs, lags]`.
    pub fn head_forward(&self, corr: &Tensor) -> Result<TdoaFeature> {
        if corr.shape().len() != 3 || corr.dim(0) != self.config.filters || corr.dim(2) != self.config.lags() {
            return Err(Error::Shape(format!(
                "correlations {:?} are not [{}, pairs, {}]",
                corr.shape(),
                self.config.filters,
                self.config.lags()
            )));
        }
        let parts = (0..corr.dim(1))
            .map(|p| Ok(self.head_cached(pair_slice(corr, p))?.feature))
            .collect::<Result<Vec<_>>>()?;
        Ok(TdoaFeature {
            values: stack_pairs(&parts),
        })
    }

    fn track_logits(&self, feature: &Tensor) -> Result<Tensor> {
        conv1d(feature, &self.params.track_weight, Some(&self.params.track_bias), Padding::Zero)
    }

    /// Per-pair 1-tap projection to `K` tracks, then softmax over lags.
    pub fn track_forward(&self, feature: &TdoaFeature) -> Result<TrackPosterior> {
        let v = &feature.values;
        if v.shape().len() != 3 || v.dim(0) != self.config.head_channels {
            return Err(Error::Shape(format!("feature {:?} has the wrong layout", v.shape())));
        }
        let (pairs, lags, k) = (v.dim(1), v.dim(2), self.config.tracks);
        let mut logits = Tensor::zeros(&[pairs, k, lags]);
        for p in 0..pairs {
            let l = self.track_logits(&pair_slice(v, p))?;
            logits.data_mut()[p * k * lags..(p + 1) * k * lags].copy_from_slice(l.data());
        }
        TrackPosterior::from_logits(&logits, self.config.tau_max)
    }

    /// Full forward pass keeping everything the backward pass needs.
    pub fn forward_cached(&self, channels: &[Vec<f64>]) -> Result<ForwardCache> {
        if channels.len() != self.config.microphones {
            return Err(Error::Shape(format!(
                "model expects {} channels, got {}",
                self.config.microphones,
                channels.len()
            )));
        }
        let kernels = self.params.sinc.kernels();
        let filterbank = channels
            .par_iter()
            .map(|x| self.filterbank_cached(x, &kernels))
            .collect::<Result<Vec<_>>>()?;
        let spectra: Vec<_> = filterbank.par_iter().map(|f| spectra(&self.fft, &f.output)).collect();
        let (k, lags) = (self.config.tracks, self.config.lags());
        let per_pair = self
            .pairs
            .par_iter()
            .map(|&(i, j)| {
                let corr = correlate_spectra(
                    &self.fft,
                    &spectra[i],
                    &spectra[j],
                    self.config.tau_max,
                    self.config.phat_epsilon,
                );
                let head = self.head_cached(corr)?;
                let l = self.track_logits(&head.feature)?;
                Ok((head, l))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut logits = Tensor::zeros(&[self.pairs.len(), k, lags]);
        let mut heads = Vec::with_capacity(self.pairs.len());
        for (p, (head, l)) in per_pair.into_iter().enumerate() {
            logits.data_mut()[p * k * lags..(p + 1) * k * lags].copy_from_slice(l.data());
            heads.push(head);
        }
        Ok(ForwardCache {
            filterbank,
            spectra,
            heads,
            logits,
        })
    }

    /// Posterior and feature for one multichannel frame.
    pub fn forward(&self, channels: &[Vec<f64>]) -> Result<(TrackPosterior, TdoaFeature)> {
        let cache = self.forward_cached(channels)?;
        Ok((cache.posterior(self.config.tau_max)?, cache.feature()))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<ModelParams> {
        if grad_logits.shape() != cache.logits.shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} does not match {:?}",
                grad_logits.shape(),
                cache.logits.shape()
            )));
        }
        let mut grads = self.params.zeros_like();
        let (k, lags) = (self.config.tracks, self.config.lags());
        let n = self.config.window;
        let zero = vec![vec![Complex64::new(0.0, 0.0); n]; self.config.filters];
        let mut spectral: Vec<Vec<Vec<Complex64>>> = vec![zero; self.config.microphones];

        // per-pair head gradients in parallel, summed in pair order
        let per_pair = cache
            .heads
            .par_iter()
            .enumerate()
            .map(|(p, head)| {
                let g = Tensor::from_vec(&[k, lags], grad_logits.data()[p * k * lags..(p + 1) * k * lags].to_vec())?;
                let t = conv1d_backward(&head.feature, &self.params.track_weight, &g, Padding::Zero, true, true)?;
                let mut layers = Vec::with_capacity(self.params.head_weights.len());
                let mut g = t.input.expect("input");
                for layer in (0..self.params.head_weights.len()).rev() {
                    leaky_relu_backward(&head.pre[layer], &mut g);
                    let c = conv1d_backward(
                        &head.inputs[layer],
                        &self.params.head_weights[layer],
                        &g,
                        Padding::Zero,
                        true,
                        true,
                    )?;
                    g = c.input.expect("input");
                    layers.push((layer, c.weight, c.bias.expect("bias")));
                }
                Ok((t.weight, t.bias.expect("bias"), layers, g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (&(i, j), (tw, tb, layers, g)) in self.pairs.iter().zip(per_pair) {
            grads.track_weight.add_assign(&tw);
            grads.track_bias.add_assign(&tb);
            for (layer, w, b) in layers {
                grads.head_weights[layer].add_assign(&w);
                grads.head_biases[layer].add_assign(&b);
            }
            let (left, right) = spectral.split_at_mut(j);
            correlate_backward(
                &self.fft,
                &cache.spectra[i],
                &cache.spectra[j],
                &g,
                self.config.phat_epsilon,
                &mut left[i],
                &mut right[0],
            );
        }

        let kernels = self.params.sinc.kernels();
        let padding = self.config.padding;
        let per_mic = cache
            .filterbank
            .par_iter()
            .zip(spectral)
            .map(|(fb, spec)| {
                let mut g = spectra_backward(&self.fft, spec);
                let mut weights = Vec::with_capacity(fb.pre.len());
                for layer in (0..fb.pre.len()).rev() {
                    leaky_relu_backward(&fb.pre[layer], &mut g);
                    if layer == 0 {
                        let c = conv1d_backward(&fb.inputs[0], &kernels, &g, padding, false, false)?;
                        weights.push((0, c.weight));
                    } else {
                        let w = &self.params.filterbank[layer - 1];
                        let c = conv1d_backward(&fb.inputs[layer], w, &g, padding, true, false)?;
                        weights.push((layer, c.weight));
                        g = c.input.expect("input");
                    }
                }
                Ok(weights)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad_kernels = Tensor::zeros_like(&kernels);
        for weights in per_mic {
            for (layer, w) in weights {
                if layer == 0 {
                    grad_kernels.add_assign(&w);
                } else {
                    grads.filterbank[layer - 1].add_assign(&w);
                }
            }
        }
        let (low, band) = self.params.sinc.kernel_backward(&grad_kernels);
        grads.sinc.low_hz = low;
        grads.sinc.band_hz = band;
        Ok(grads)
    }

    /// Feature of one frame without the track projection.
    pub fn feature(&self, channels: &[Vec<f64>]) -> Result<TdoaFeature> {
        if channels.len() != self.config.microphones {
            return Err(Error::Shape(format!(
                "model expects {} channels, got {}",
                self.config.microphones,
                channels.len()
            )));
        }
        let kernels = self.params.sinc.kernels();
        let spectra = channels
            .iter()
            .map(|x| Ok(spectra(&self.fft, &self.filterbank_cached(x, &kernels)?.output)))
            .collect::<Result<Vec<_>>>()?;
        let parts = self
            .pairs
            .iter()
            .map(|&(i, j)| {
                let corr = correlate_spectra(
                    &self.fft,
                    &spectra[i],
                    &spectra[j],
                    self.config.tau_max,
                    self.config.phat_epsilon,
                );
                Ok(self.head_cached(corr)?.feature)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TdoaFeature {
            values: stack_pairs(&parts),
        })
    }

    /// Features for a long recording, one per non-overlapping window.
    pub fn extract_features(&self, channels: &[Vec<f64>]) -> Result<Vec<TdoaFeature>> {
        if channels.len() != self.config.microphones {
            return Err(Error::Shape(format!(
                "model expects {} channels, got {}",
                self.config.microphones,
                channels.len()
            )));
        }
        let frames = frame_signal(channels, self.config.sample_rate, self.config.window, self.config.window)?;
        frames
            .iter()
            .map(|frame| {
                let samples: Vec<Vec<f64>> = frame.iter().map(|f| f.samples.clone()).collect();
                self.feature(&samples)
            })
            .collect()
    }
}
