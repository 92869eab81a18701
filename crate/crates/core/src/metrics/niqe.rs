//! Natural Image Quality Evaluator.
//!
//! Per patch and per scale, 18 features: generalised-Gaussian shape and
//! variance of the MSCN coefficients, then shape, mean, left and right
//! variance of an asymmetric generalised Gaussian fitted to each of the four
//! neighbour products (horizontal, vertical, both diagonals). The second
//! scale is a 2x2 box-downsampled copy.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::imaging::luminance;
use crate::parallel::map_indexed;
use crate::{Error, Result};

pub const NIQE_FEATURES: usize = 36;
pub const NIQE_MAGIC: &[u8] = b"SIAMTE-NIQE-1\n";

const MSCN_C: f64 = 1.0;
const SHARPNESS_FRACTION: f64 = 0.75;
const MIN_PRISTINE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct NiqePristineModel {
    pub patch_size: usize,
    pub mean: Vec<f64>,
    /// Row-major `NIQE_FEATURES x NIQE_FEATURES`.
    pub covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    patch_size: usize,
    dim: usize,
}

fn gaussian_window() -> Vec<f64> {
    let sigma = 7.0 / 6.0;
    let k: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn blur(x: &Array2<f64>) -> Array2<f64> {
    let k = gaussian_window();
    let (h, w) = x.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let rows = Array2::from_shape_fn((h, w), |(y, xx)| {
        (0..7).map(|t| k[t] * x[[y, clamp(xx as isize + t as isize - 3, w)]]).sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, xx)| {
        (0..7).map(|t| k[t] * rows[[clamp(y as isize + t as isize - 3, h), xx]]).sum::<f64>()
    })
}

/// Mean-subtracted contrast-normalised coefficients and the local deviation.
fn mscn(plane: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mu = blur(plane);
    let centered = plane - &mu;
    let var = blur(&centered.mapv(|v| v * v));
    let sigma = var.mapv(|v| v.max(0.0).sqrt());
    let mut out = centered;
    out.zip_mut_with(&sigma, |c, s| *c /= s + MSCN_C);
    (out, sigma)
}

fn downsample(plane: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        (plane[[2 * y, 2 * x]] + plane[[2 * y + 1, 2 * x]] + plane[[2 * y, 2 * x + 1]] + plane[[2 * y + 1, 2 * x + 1]])
            / 4.0
    })
}

fn gamma_ratio(alpha: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / alpha) - ln_gamma(1.0 / alpha) - ln_gamma(3.0 / alpha)).exp()
}

fn shape_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=9800).map(|i| 0.2 + i as f64 * 0.001).map(|a| (a, gamma_ratio(a))).collect())
}

fn best_shape(target: f64) -> f64 {
    let mut best = (0.2, f64::INFINITY);
    for &(a, r) in shape_table() {
        let d = (r - target).abs();
        if d < best.1 {
            best = (a, d);
        }
    }
    best.0
}

/// Shape and variance of a zero-mean generalised Gaussian.
fn fit_ggd(x: &[f64]) -> Option<[f64; 2]> {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if !(var > 0.0) {
        return None;
    }
    Some([best_shape(abs * abs / var), var])
}

/// Shape, mean, left and right variance of an asymmetric generalised
/// Gaussian.
fn fit_aggd(x: &[f64]) -> Option<[f64; 4]> {
    let side = |keep: fn(f64) -> bool| {
        let v: Vec<f64> = x.iter().copied().filter(|v| keep(*v)).collect();
        (!v.is_empty()).then(|| (v.iter().map(|v| v * v).sum::<f64>() / v.len() as f64).sqrt())
    };
    let left = side(|v| v < 0.0)?;
    let right = side(|v| v > 0.0)?;
    let n = x.len() as f64;
    let abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let g = left / right;
    let r = abs * abs / sq;
    let rnorm = r * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let alpha = best_shape(rnorm);
    let scale = (0.5 * (ln_gamma(1.0 / alpha) - ln_gamma(3.0 / alpha))).exp();
    let mean = (right - left) * (ln_gamma(2.0 / alpha) - ln_gamma(1.0 / alpha)).exp() * scale;
    Some([alpha, mean, left * left, right * right])
}

fn scale_features(m: &Array2<f64>, out: &mut Vec<f64>) -> Option<()> {
    let flat: Vec<f64> = m.iter().copied().collect();
    out.extend_from_slice(&fit_ggd(&flat)?);
    let (h, w) = m.dim();
    let pairs = [
        (s![.., ..w - 1], s![.., 1..]),
        (s![..h - 1, ..], s![1.., ..]),
        (s![..h - 1, ..w - 1], s![1.., 1..]),
        (s![..h - 1, 1..], s![1.., ..w - 1]),
    ];
    for (a, b) in pairs {
        let prod: Vec<f64> = m.slice(a).iter().zip(m.slice(b).iter()).map(|(p, q)| p * q).collect();
        out.extend_from_slice(&fit_aggd(&prod)?);
    }
    Some(())
}

struct Patch {
    features: Vec<f64>,
    sharpness: f64,
}

fn patches(image: &Array3<f32>, patch: usize) -> Result<Vec<Patch>> {
    if patch < 8 || patch % 2 != 0 {
        return Err(Error::config("niqe.patch_size", "must be even and >= 8"));
    }
    let plane = luminance(image);
    let (h, w) = plane.dim();
    let (ny, nx) = (h / patch, w / patch);
    if ny < 2 || nx < 2 {
        return Err(Error::shape(format!("image {h}x{w} is smaller than 2x2 NIQE patches of {patch}")));
    }
    let (m1, sigma) = mscn(&plane);
    let (m2, _) = mscn(&downsample(&plane));
    let half = patch / 2;
    let mut out = Vec::new();
    for py in 0..ny {
        for px in 0..nx {
            let mut features = Vec::with_capacity(NIQE_FEATURES);
            let fine = m1.slice(s![py * patch..(py + 1) * patch, px * patch..(px + 1) * patch]);
            let coarse = m2.slice(s![py * half..(py + 1) * half, px * half..(px + 1) * half]);
            if scale_features(&fine.to_owned(), &mut features).is_none()
                || scale_features(&coarse.to_owned(), &mut features).is_none()
            {
                continue;
            }
            let sharpness = sigma
                .slice(s![py * patch..(py + 1) * patch, px * patch..(px + 1) * patch])
                .mean()
                .unwrap_or(0.0);
            out.push(Patch { features, sharpness });
        }
    }
    if out.is_empty() {
        return Err(Error::numerical("zero-variance MSCN"));
    }
    Ok(out)
}

/// Feature vectors of every non-degenerate patch of `image`.
pub fn niqe_features(image: &Array3<f32>, patch: usize) -> Result<Vec<Vec<f64>>> {
    Ok(patches(image, patch)?.into_iter().map(|p| p.features).collect())
}

fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    (mean, cov)
}

/// Fits the pristine Gaussian on the sharpest patches of each image.
pub fn fit_niqe_model(images: &[Array3<f32>], patch: usize) -> Result<NiqePristineModel> {
    if images.len() < MIN_PRISTINE {
        return Err(Error::data(format!(
            "NIQE needs at least {MIN_PRISTINE} pristine images, got {}",
            images.len()
        )));
    }
    let per_image = map_indexed(images.len(), |i| patches(&images[i], patch))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for ps in per_image {
        let peak = ps.iter().map(|p| p.sharpness).fold(0.0, f64::max);
        rows.extend(
            ps.into_iter()
                .filter(|p| p.sharpness > SHARPNESS_FRACTION * peak)
                .map(|p| p.features),
        );
    }
    if rows.len() < 2 {
        return Err(Error::data("too few sharp pristine patches for NIQE"));
    }
    let (mean, cov) = mean_cov(&rows);
    let cov = (&cov + cov.transpose()) / 2.0;
    Ok(NiqePristineModel {
        patch_size: patch,
        mean: mean.as_slice().to_vec(),
        covariance: cov.transpose().as_slice().to_vec(),
    })
}

/// Distance between the image's patch-feature Gaussian and the pristine
/// model under their averaged covariance.
pub fn niqe(image: &Array3<f32>, model: &NiqePristineModel) -> Result<f64> {
    model.validate()?;
    let rows = niqe_features(image, model.patch_size)?;
    let (mu, cov) = mean_cov(&rows);
    let d = NIQE_FEATURES;
    let pristine_cov = DMatrix::from_row_slice(d, d, &model.covariance);
    let avg = (pristine_cov + cov) / 2.0;
    let svd = avg.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let inv = svd.pseudo_inverse(tol).map_err(|e| Error::numerical(e.to_string()))?;
    let diff = DVector::from_column_slice(&model.mean) - mu;
    let q = (diff.transpose() * inv * &diff)[(0, 0)];
    if !q.is_finite() {
        return Err(Error::numerical("non-finite NIQE distance"));
    }
    Ok(q.max(0.0).sqrt())
}

impl NiqePristineModel {
    pub fn validate(&self) -> Result<()> {
        let d = NIQE_FEATURES;
        if self.mean.len() != d || self.covariance.len() != d * d {
            return Err(Error::shape(format!("NIQE model must be {d}-dimensional")));
        }
        Ok(())
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(NIQE_FEATURES, NIQE_FEATURES, &self.covariance)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&Header {
            patch_size: self.patch_size,
            dim: self.mean.len(),
        })?;
        let mut out = NIQE_MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.mean.iter().chain(&self.covariance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let rest = bytes.strip_prefix(NIQE_MAGIC).ok_or_else(|| bad("missing SIAMTE-NIQE-1 magic header"))?;
        if rest.len() < 4 {
            return Err(bad("truncated header length"));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len])?;
        let data = &rest[len..];
        let d = header.dim;
        if data.len() != 8 * (d + d * d) {
            return Err(bad("data length does not match dimension"));
        }
        let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let model = NiqePristineModel {
            patch_size: header.patch_size,
            mean: values[..d].to_vec(),
            covariance: values[d..].to_vec(),
        };
        model.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?, path)
    }
}
