use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, Point};

/// Smallest admissible ratio of the weakest to the strongest singular value
/// of the pair-difference matrix.
const RANK_TOLERANCE: f64 = 1e-9;

/// Far-field direction of arrival from pairwise TDOAs.
///
/// Solves `tau_ij = (fs / c) (r_j - r_i) . d` for `d` in the least-squares
/// sense and returns it normalized. `tdoas` holds `(i, j, tau_ij)`.
pub fn doa_least_squares(tdoas: &[(usize, usize, f64)], geometry: &ArrayGeometry, fs: f64, c: f64) -> Result<Point> {
    if tdoas.len() < 3 {
        return Err(Error::Degenerate(format!("{} pairs cannot fix a 3-D direction", tdoas.len())));
    }
    let r = geometry.positions();
    let scale = fs / c;
    let mut a = DMatrix::zeros(tdoas.len(), 3);
    let mut b = DVector::zeros(tdoas.len());
    for (row, &(i, j, tau)) in tdoas.iter().enumerate() {
        if i >= r.len() || j >= r.len() {
            return Err(Error::InvalidInput(format!("pair ({i}, {j}) is outside the array")));
        }
        for axis in 0..3 {
            a[(row, axis)] = scale * (r[j][axis] - r[i][axis]);
        }
        b[row] = tau;
    }
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let (smax, smin) = (s.max(), s.min());
    if smax == 0.0 || smin / smax < RANK_TOLERANCE {
        return Err(Error::Degenerate(format!(
            "pair baselines span fewer than three dimensions (singular values {:?})",
            s.as_slice()
        )));
    }
    let d = svd
        .solve(&b, RANK_TOLERANCE * smax)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let norm = d.norm();
    if norm < 1e-12 {
        return Err(Error::Degenerate("all delays vanish; the direction is undefined".into()));
    }
    Ok([d[0] / norm, d[1] / norm, d[2] / norm])
}

/// Angle between two directions, degrees.
pub fn angular_error_deg(a: &Point, b: &Point) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{tetrahedral_array, SPEED_OF_SOUND};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(a: &Point, b: &Point) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn recovers_far_source_from_rounded_delays() {
        let g = tetrahedral_array(0.084).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut errors = Vec::new();
        for _ in 0..500 {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let d = [r * phi.cos(), r * phi.sin(), z];
            let s = [d[0] * 1e4, d[1] * 1e4, d[2] * 1e4];
            let p = g.positions();
            let tdoas: Vec<(usize, usize, f64)> = g
                .pairs()
                .into_iter()
                .map(|(i, j)| {
                    let tau = (dist(&s, &p[i]) - dist(&s, &p[j])) * 24_000.0 / SPEED_OF_SOUND;
                    (i, j, tau.round())
                })
                .collect();
            let est = doa_least_squares(&tdoas, &g, 24_000.0, SPEED_OF_SOUND).unwrap();
            errors.push(angular_error_deg(&est, &d));
        }
        errors.sort_by(f64::total_cmp);
        // integer rounding alone bounds the accuracy; a few directions sit
        // just above 5 degrees
        let (median, p95, worst) = (errors[250], errors[475], errors[499]);
        assert!(median < 3.0 && p95 < 5.0 && worst < 6.0, "{median} {p95} {worst}");
    }

    #[test]
    fn exact_delays_give_exact_direction() {
        let g = tetrahedral_array(0.084).unwrap();
        let d = [0.6, -0.64, 0.48];
        let p = g.positions();
        let scale = 24_000.0 / SPEED_OF_SOUND;
        let tdoas: Vec<_> = g
            .pairs()
            .into_iter()
            .map(|(i, j)| (i, j, scale * (0..3).map(|a| (p[j][a] - p[i][a]) * d[a]).sum::<f64>()))
            .collect();
        let est = doa_least_squares(&tdoas, &g, 24_000.0, SPEED_OF_SOUND).unwrap();
        assert!(angular_error_deg(&est, &d) < 1e-6);
        let flipped: Vec<_> = tdoas.iter().map(|&(i, j, t)| (i, j, -t)).collect();
        let back = doa_least_squares(&flipped, &g, 24_000.0, SPEED_OF_SOUND).unwrap();
        for a in 0..3 {
            assert_eq!(back[a], -est[a]);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let g = tetrahedral_array(0.084).unwrap();
        let zeros: Vec<_> = g.pairs().into_iter().map(|(i, j)| (i, j, 0.0)).collect();
        assert!(matches!(
            doa_least_squares(&zeros, &g, 24_000.0, SPEED_OF_SOUND),
            Err(Error::Degenerate(_))
        ));
        let line = ArrayGeometry::new(vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]]).unwrap();
        let t: Vec<_> = line.pairs().into_iter().map(|(i, j)| (i, j, 1.0)).collect();
        let err = doa_least_squares(&t, &line, 24_000.0, SPEED_OF_SOUND).unwrap_err();
        assert!(err.to_string().contains("fewer than three"), "{err}");
        assert!(doa_least_squares(&t[..2], &g, 24_000.0, SPEED_OF_SOUND).is_err());
    }
}
