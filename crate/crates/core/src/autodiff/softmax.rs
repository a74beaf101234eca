use super::Tensor;
use crate::error::{Error, Result};

/// Log-softmax via the max-shifted log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy of `K` categorical rows against one target lag each.
///
/// `logits` is `[K, 2 tau_max + 1]`, `targets[k]` in `-tau_max..=tau_max`.
/// Returns the loss `-(1/K) sum_k log p_k(target_k)` and its gradient
/// `(p - onehot) / K`.
pub fn softmax_xent(logits: &Tensor, targets: &[i64], tau_max: usize) -> Result<(f64, Tensor)> {
    let lags = 2 * tau_max + 1;
    if logits.shape().len() != 2 || logits.dim(1) != lags || logits.dim(0) != targets.len() {
        return Err(Error::Shape(format!(
            "logits {:?} do not match {} targets over {lags} lags",
            logits.shape(),
            targets.len()
        )));
    }
    let k = targets.len();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for (row, &target) in targets.iter().enumerate() {
        if target.unsigned_abs() as usize > tau_max {
            return Err(Error::InvalidInput(format!("target lag {target} exceeds tau_max {tau_max}")));
        }
        let idx = (target + tau_max as i64) as usize;
        let logp = log_softmax(logits.row(row));
        loss -= logp[idx];
        let g = grad.row_mut(row);
        for (gi, lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp() / k as f64;
        }
        g[idx] -= 1.0 / k as f64;
    }
    Ok((loss / k as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_13() {
        let logits = Tensor::zeros(&[3, 13]);
        for target in [-6, 0, 4] {
            let (loss, _) = softmax_xent(&logits, &[target; 3], 6).unwrap();
            assert!((loss - 13f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_logits_give_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 13]);
        logits.data_mut()[9] = 1000.0;
        let (loss, grad) = softmax_xent(&logits, &[3], 6).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn matches_naive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let data: Vec<f64> = (0..39).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let logits = Tensor::from_vec(&[3, 13], data.clone()).unwrap();
            let targets: Vec<i64> = (0..3).map(|_| rng.gen_range(-6..=6)).collect();
            let (loss, grad) = softmax_xent(&logits, &targets, 6).unwrap();
            let mut naive = 0.0;
            for (k, &t) in targets.iter().enumerate() {
                let row = &data[k * 13..(k + 1) * 13];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                naive -= (row[(t + 6) as usize].exp() / z).ln();
            }
            naive /= 3.0;
            assert!((loss - naive).abs() < 1e-12, "{loss} {naive}");
            // each gradient row sums to zero
            for k in 0..3 {
                assert!(grad.row(k).iter().sum::<f64>().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1e3, -1e3, 0.5, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_targets() {
        assert!(softmax_xent(&Tensor::zeros(&[1, 13]), &[7], 6).is_err());
        assert!(softmax_xent(&Tensor::zeros(&[2, 13]), &[0], 6).is_err());
    }
}
