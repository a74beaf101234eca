use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{read_features, write_features, write_posterior_csv};
use super::*;
use crate::autodiff::{grad_check, softmax_xent, Parameters, Tensor};
use crate::signal::{gcc_phat, Frame, PHAT_EPSILON};

fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn shift(x: &[f64], s: i64) -> Vec<f64> {
    let n = x.len() as i64;
    (0..n).map(|i| x[(i - s).rem_euclid(n) as usize]).collect()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        filters: 4,
        head_channels: 3,
        head_width: 5,
        tracks: 2,
        filter_lengths: vec![15, 5, 3],
        head_kernels: vec![3, 1],
        tau_max: 4,
        window: 64,
        microphones: 3,
        ..Default::default()
    }
}

#[test]
fn default_shapes() {
    let model = NgccModel::new(ModelConfig::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let channels: Vec<Vec<f64>> = (0..4).map(|_| noise(480, &mut rng)).collect();
    let fb = model.filterbank_forward(&channels[0]).unwrap();
    assert_eq!(fb.shape(), &[32, 480]);
    let (post, feature) = model.forward(&channels).unwrap();
    assert_eq!(feature.values.shape(), &[16, 6, 13]);
    assert_eq!(post.probs.shape(), &[6, 3, 13]);
    for p in 0..6 {
        for k in 0..3 {
            let row = post.probs(p, k);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn filterbank_zero_in_zero_out_and_shape_contract() {
    let model = NgccModel::new(small_config(), 2).unwrap();
    let out = model.filterbank_forward(&[0.0; 64]).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
    assert!(model.filterbank_forward(&[0.0; 63]).is_err());
    assert!(model.forward(&vec![vec![0.0; 64]; 2]).is_err());
}

#[test]
fn filterbank_commutes_with_circular_shift() {
    let model = NgccModel::new(ModelConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = noise(480, &mut rng);
    let y = model.filterbank_forward(&x).unwrap();
    for s in [1, -7, 100] {
        let ys = model.filterbank_forward(&shift(&x, s)).unwrap();
        for l in 0..32 {
            assert_eq!(ys.row(l), shift(y.row(l), s).as_slice());
        }
    }
}

#[test]
fn relative_shift_moves_every_channel_peak() {
    let model = NgccModel::new(ModelConfig::default(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = noise(480, &mut rng);
    let fi = model.filterbank_forward(&x).unwrap();
    for s in [-6i64, -2, 0, 3, 6] {
        let fj = model.filterbank_forward(&shift(&x, s)).unwrap();
        let r = model.channelwise_gcc(&fi, &fj).unwrap();
        for l in 0..32 {
            let row = r.row(l);
            let best = (0..13).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap() as i64 - 6;
            assert_eq!(best, -s, "channel {l}");
        }
        // equal shifts on both channels leave the correlations in place
        let both = model
            .channelwise_gcc(
                &model.filterbank_forward(&shift(&x, 11)).unwrap(),
                &model.filterbank_forward(&shift(&shift(&x, s), 11)).unwrap(),
            )
            .unwrap();
        for (a, b) in both.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn channelwise_gcc_matches_plain_gcc() {
    let model = NgccModel::new(ModelConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fi = model.filterbank_forward(&noise(480, &mut rng)).unwrap();
    let fj = model.filterbank_forward(&noise(480, &mut rng)).unwrap();
    let r = model.channelwise_gcc(&fi, &fj).unwrap();
    for l in 0..32 {
        let a = Frame::new(fi.row(l).to_vec(), 24_000.0).unwrap();
        let b = Frame::new(fj.row(l).to_vec(), 24_000.0).unwrap();
        let reference = gcc_phat(&a, &b, 6, PHAT_EPSILON).unwrap();
        for (x, y) in r.row(l).iter().zip(&reference.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn head_is_pair_permutation_equivariant() {
    let model = NgccModel::new(ModelConfig::default(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let corr = Tensor::from_vec(&[32, 6, 13], noise(32 * 6 * 13, &mut rng)).unwrap();
    let perm = [3, 0, 5, 1, 4, 2];
    let mut permuted = Tensor::zeros(&[32, 6, 13]);
    for c in 0..32 {
        for (dst, &src) in perm.iter().enumerate() {
            let from = (c * 6 + src) * 13;
            let to = (c * 6 + dst) * 13;
            let row = corr.data()[from..from + 13].to_vec();
            permuted.data_mut()[to..to + 13].copy_from_slice(&row);
        }
    }
    let a = model.head_forward(&corr).unwrap();
    let b = model.head_forward(&permuted).unwrap();
    assert_eq!(a.values.shape(), &[16, 6, 13]);
    for c in 0..16 {
        for (dst, &src) in perm.iter().enumerate() {
            let x = &a.values.data()[(c * 6 + src) * 13..(c * 6 + src + 1) * 13];
            let y = &b.values.data()[(c * 6 + dst) * 13..(c * 6 + dst + 1) * 13];
            assert_eq!(x, y);
        }
    }
}

#[test]
fn zero_feature_gives_uniform_posterior() {
    let model = NgccModel::new(ModelConfig::default(), 7).unwrap();
    let post = model
        .track_forward(&TdoaFeature {
            values: Tensor::zeros(&[16, 6, 13]),
        })
        .unwrap();
    assert_eq!(post.probs.shape(), &[6, 3, 13]);
    assert!(post.probs.data().iter().all(|p| (p - 1.0 / 13.0).abs() < 1e-15));
}

fn loss_and_grad(model: &NgccModel, channels: &[Vec<f64>], targets: &[Vec<i64>]) -> (f64, Tensor) {
    let cache = model.forward_cached(channels).unwrap();
    let (pairs, k, lags) = (cache.logits.dim(0), cache.logits.dim(1), cache.logits.dim(2));
    let mut grad = Tensor::zeros(cache.logits.shape());
    let mut total = 0.0;
    for (p, target) in targets.iter().enumerate().take(pairs) {
        let logits = Tensor::from_vec(&[k, lags], cache.logits.data()[p * k * lags..(p + 1) * k * lags].to_vec()).unwrap();
        let (l, g) = softmax_xent(&logits, target, model.config.tau_max).unwrap();
        total += l / pairs as f64;
        for (dst, v) in grad.data_mut()[p * k * lags..(p + 1) * k * lags].iter_mut().zip(g.data()) {
            *dst = v / pairs as f64;
        }
    }
    (total, grad)
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let config = small_config();
    let model = NgccModel::new(config.clone(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let channels: Vec<Vec<f64>> = (0..3).map(|_| noise(64, &mut rng)).collect();
    let targets: Vec<Vec<i64>> = (0..3).map(|_| vec![rng.gen_range(-4..=4), rng.gen_range(-4..=4)]).collect();
    let (_, dlogits) = loss_and_grad(&model, &channels, &targets);
    let cache = model.forward_cached(&channels).unwrap();
    let analytic = model.backward(&cache, &dlogits).unwrap();
    assert!(analytic.tensors().iter().all(|(_, t)| t.norm() > 0.0));
    let mut params = model.params.clone();
    let report = grad_check(
        &mut params,
        &analytic,
        |p| {
            let m = NgccModel::from_params(config.clone(), p.clone()).unwrap();
            loss_and_grad(&m, &channels, &targets).0
        },
        50,
        1e-4,
        1,
    );
    assert!(report.passed(), "{:#?}", report);
}

#[test]
fn extract_features_counts_windows() {
    let model = NgccModel::new(ModelConfig::default(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let channels: Vec<Vec<f64>> = (0..4).map(|_| noise(24_000 * 5, &mut rng)).collect();
    let feats = model.extract_features(&channels).unwrap();
    assert_eq!(feats.len(), 250);
    assert!(feats.iter().all(|f| f.values.shape() == [16, 6, 13]));
    // identical to running each window on its own
    for t in [0, 137, 249] {
        let window: Vec<Vec<f64>> = channels.iter().map(|c| c[t * 480..(t + 1) * 480].to_vec()).collect();
        assert_eq!(model.forward(&window).unwrap().1, feats[t]);
    }
    assert!(model.extract_features(&vec![Vec::new(); 4]).unwrap().is_empty());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = NgccModel::new(ModelConfig::default(), 10).unwrap();
    let manifest = save_checkpoint(&path, &model, 10, 42, Some("abc".into())).unwrap();
    let (loaded, read) = load_checkpoint(&path).unwrap();
    assert_eq!(manifest, read);
    assert_eq!(read.step, 42);
    for ((_, a), (_, b)) in model.params.tensors().into_iter().zip(loaded.params.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    // saving the loaded model reproduces the same bytes
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &loaded, 10, 42, Some("abc".into())).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[20] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(crate::Error::Incompatible(_))));
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn feature_file_and_posterior_csv() {
    let model = NgccModel::new(ModelConfig::default(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let channels: Vec<Vec<f64>> = (0..4).map(|_| noise(480, &mut rng)).collect();
    let (post, feature) = model.forward(&channels).unwrap();
    let mut buf = Vec::new();
    write_features(&mut buf, "0123456789abcdef", &[feature.clone(), feature.clone()]).unwrap();
    let (hash, back) = read_features(&buf).unwrap();
    assert_eq!(hash, "0123456789abcdef");
    assert_eq!(back.len(), 2);
    for (a, b) in back[1].values.data().iter().zip(feature.values.data()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    let mut csv = Vec::new();
    write_posterior_csv(&mut csv, (0..5).map(|f| (f, &post))).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 6 * 3 * 13);
    assert!(text.lines().nth(1).unwrap().starts_with("0,0,0,-6,"));
}
