//! Peak-to-correlation energy over circular normalised cross-correlation.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

pub const DEFAULT_EXCLUSION_RADIUS: usize = 5;

/// In-place 2-D FFT over rows then columns.
pub fn fft2(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for mut row in data.rows_mut() {
        let mut buf = row.to_vec();
        row_fft.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
    for mut col in data.columns_mut() {
        let mut buf = col.to_vec();
        col_fft.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
}

/// Mean-removed, unit-norm copy of `x`.
fn standardize(x: &Array2<f64>) -> Result<Array2<f64>> {
    let mean = x.mean().ok_or_else(|| Error::numerical("zero-variance input"))?;
    let centered = x.mapv(|v| v - mean);
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::numerical("zero-variance input"));
    }
    Ok(centered / norm)
}

/// `rho[s] = sum_p x~(p) y~(p + s)` with both inputs standardised, for every
/// circular shift `s = (dy, dx)`.
pub fn normalized_cross_correlation(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::shape(format!("correlation of {:?} with {:?}", x.dim(), y.dim())));
    }
    let a = standardize(x)?;
    let b = standardize(y)?;
    let mut fa = a.mapv(|v| Complex64::new(v, 0.0));
    let mut fb = b.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut fa, false);
    fft2(&mut fb, false);
    fa.zip_mut_with(&fb, |p, q| *p = p.conj() * q);
    fft2(&mut fa, true);
    let n = (x.len()) as f64;
    Ok(fa.mapv(|c| c.re / n))
}

/// PCE of `rho`: squared peak over the mean squared correlation outside the
/// `(2r+1)^2` neighbourhood (with wrap-around) of the peak.
pub fn pce_from_correlation(rho: &Array2<f64>, exclusion_radius: usize) -> Result<f64> {
    let (h, w) = rho.dim();
    let mut peak = (0, 0);
    for ((y, x), &v) in rho.indexed_iter() {
        if v > rho[peak] {
            peak = (y, x);
        }
    }
    let r = exclusion_radius as isize;
    let excluded = |y: usize, x: usize| {
        let dy = circular_distance(y, peak.0, h);
        let dx = circular_distance(x, peak.1, w);
        dy <= r && dx <= r
    };
    let mut energy = 0.0;
    let mut count = 0usize;
    for ((y, x), &v) in rho.indexed_iter() {
        if !excluded(y, x) {
            energy += v * v;
            count += 1;
        }
    }
    if count == 0 || !(energy > 0.0) {
        return Err(Error::numerical("degenerate correlation"));
    }
    Ok(rho[peak].powi(2) / (energy / count as f64))
}

fn circular_distance(a: usize, b: usize, n: usize) -> isize {
    let d = (a as isize - b as isize).rem_euclid(n as isize);
    d.min(n as isize - d)
}

/// Peak-to-correlation energy between a residual and a fingerprint.
pub fn pce(residual: &Array2<f64>, fingerprint: &Array2<f64>, exclusion_radius: usize) -> Result<f64> {
    pce_from_correlation(&normalized_cross_correlation(residual, fingerprint)?, exclusion_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, h: usize, w: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fft_round_trip() {
        let x = noise(0, 6, 10).mapv(|v| Complex64::new(v, 0.0));
        let mut y = x.clone();
        fft2(&mut y, false);
        fft2(&mut y, true);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b / 60.0).norm() < 1e-12);
        }
    }

    #[test]
    fn self_correlation_peaks_at_origin() {
        let x = noise(1, 16, 16);
        let rho = normalized_cross_correlation(&x, &x).unwrap();
        assert!((rho[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(pce(&x, &x, 2).unwrap() > 100.0);
    }

    #[test]
    fn shifted_copy_peaks_at_shift() {
        let x = noise(2, 12, 20);
        let y = Array2::from_shape_fn((12, 20), |(i, j)| x[[(i + 12 - 3) % 12, (j + 20 - 5) % 20]]);
        let rho = normalized_cross_correlation(&x, &y).unwrap();
        assert!((rho[[3, 5]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let c = Array2::from_elem((8, 8), 2.0);
        let x = noise(3, 8, 8);
        assert_eq!(pce(&c, &x, 1).unwrap_err().to_string(), "numerical failure: zero-variance input");
        assert!(pce(&x, &noise(4, 8, 9), 1).is_err());
        assert!(pce(&x, &x, 4).unwrap_err().to_string().contains("degenerate correlation"));
    }

    #[test]
    fn scale_invariance() {
        let x = noise(5, 16, 16);
        let y = noise(6, 16, 16);
        let base = pce(&x, &y, 2).unwrap();
        assert!((pce(&x.mapv(|v| 2.0 * v), &y, 2).unwrap() - base).abs() <= 1e-9 * base);
        assert!((pce(&x.mapv(|v| 7.3 * v), &y.mapv(|v| 0.01 * v), 2).unwrap() - base).abs() <= 1e-9 * base);
    }
}
