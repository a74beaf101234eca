use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::autodiff::{Parameters, SincLayerParams, Tensor, LEAKY_SLOPE};
use crate::error::{Error, Result};

/// All trainable tensors of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sinc: SincLayerParams,
    /// `[L, L, taps]` for each convolution after the sinc layer.
    pub filterbank: Vec<Tensor>,
    /// `[out, in, taps]` per head layer.
    pub head_weights: Vec<Tensor>,
    pub head_biases: Vec<Tensor>,
    /// `[K, C, 1]`.
    pub track_weight: Tensor,
    pub track_bias: Tensor,
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("shape")
}

impl ModelParams {
    /// Mel-spaced sinc cutoffs and He-normal convolution weights, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = config.filters;
        let sinc = SincLayerParams::mel_init(l, config.filter_lengths[0], config.sample_rate)?;
        let filterbank = config.filter_lengths[1..]
            .iter()
            .map(|&taps| he_normal(&[l, l, taps], l * taps, &mut rng))
            .collect();
        let mut head_weights = Vec::new();
        let mut head_biases = Vec::new();
        let layers = config.head_kernels.len();
        let mut c_in = l;
        for (i, &taps) in config.head_kernels.iter().enumerate() {
            let c_out = if i + 1 == layers { config.head_channels } else { config.head_width };
            head_weights.push(he_normal(&[c_out, c_in, taps], c_in * taps, &mut rng));
            head_biases.push(Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let c = config.head_channels;
        let normal = Normal::new(0.0, 1.0 / (c as f64).sqrt()).expect("finite std");
        let track_weight = Tensor::from_vec(
            &[config.tracks, c, 1],
            (0..config.tracks * c).map(|_| normal.sample(&mut rng)).collect(),
        )?;
        Ok(Self {
            sinc,
            filterbank,
            head_weights,
            head_biases,
            track_weight,
            track_bias: Tensor::zeros(&[config.tracks]),
        })
    }

    /// Same layout, every value zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            sinc: SincLayerParams {
                low_hz: Tensor::zeros_like(&self.sinc.low_hz),
                band_hz: Tensor::zeros_like(&self.sinc.band_hz),
                ..self.sinc.clone()
            },
            filterbank: self.filterbank.iter().map(Tensor::zeros_like).collect(),
            head_weights: self.head_weights.iter().map(Tensor::zeros_like).collect(),
            head_biases: self.head_biases.iter().map(Tensor::zeros_like).collect(),
            track_weight: Tensor::zeros_like(&self.track_weight),
            track_bias: Tensor::zeros_like(&self.track_bias),
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `(name, l2 norm)` per tensor.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.tensors().into_iter().map(|(n, t)| (n, t.norm())).collect()
    }

    /// First tensor holding a NaN or infinity, as an error naming it.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            t.check_finite(&name)?;
        }
        Ok(())
    }

    /// Overwrites every tensor from `(name, shape, values)` records, which
    /// must match this layout exactly.
    pub fn load_named(&mut self, records: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != records.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, found {}",
                names.len(),
                records.len()
            )));
        }
        for ((name, shape), (target, (rname, rshape, values))) in
            names.iter().zip(self.tensors_mut().into_iter().zip(records))
        {
            if *name != rname || *shape != rshape {
                return Err(Error::Incompatible(format!(
                    "tensor {rname} {rshape:?} does not match {name} {shape:?}"
                )));
            }
            *target = Tensor::from_vec(shape, values)?;
        }
        Ok(())
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("sinc.low_hz".to_string(), &self.sinc.low_hz),
            ("sinc.band_hz".to_string(), &self.sinc.band_hz),
        ];
        for (i, w) in self.filterbank.iter().enumerate() {
            out.push((format!("fb{}.weight", i + 1), w));
        }
        for (i, (w, b)) in self.head_weights.iter().zip(&self.head_biases).enumerate() {
            out.push((format!("head{}.weight", i + 1), w));
            out.push((format!("head{}.bias", i + 1), b));
        }
        out.push(("track.weight".into(), &self.track_weight));
        out.push(("track.bias".into(), &self.track_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.sinc.low_hz, &mut self.sinc.band_hz];
        out.extend(self.filterbank.iter_mut());
        for (w, b) in self.head_weights.iter_mut().zip(self.head_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.track_weight);
        out.push(&mut self.track_bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_names() {
        let mut p = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            [
                "sinc.low_hz", "sinc.band_hz", "fb1.weight", "fb2.weight", "fb3.weight", "head1.weight",
                "head1.bias", "head2.weight", "head2.bias", "head3.weight", "head3.bias", "head4.weight",
                "head4.bias", "track.weight", "track.bias"
            ]
        );
        assert_eq!(p.filterbank[0].shape(), &[32, 32, 11]);
        assert_eq!(p.head_weights[0].shape(), &[32, 32, 5]);
        assert_eq!(p.head_weights[3].shape(), &[16, 32, 1]);
        assert_eq!(p.track_weight.shape(), &[3, 16, 1]);
        assert_eq!(p.tensors_mut().len(), names.len());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let c = ModelConfig::default();
        assert_eq!(ModelParams::init(&c, 5).unwrap(), ModelParams::init(&c, 5).unwrap());
        assert_ne!(ModelParams::init(&c, 5).unwrap(), ModelParams::init(&c, 6).unwrap());
    }

    #[test]
    fn load_rejects_mismatched_layout() {
        let mut p = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        let mut records: Vec<_> = p
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec()))
            .collect();
        p.load_named(records.clone()).unwrap();
        records[2].1 = vec![32, 32, 9];
        assert!(matches!(p.load_named(records), Err(Error::Incompatible(_))));
    }
}
