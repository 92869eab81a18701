//! Noise residuals: `image - denoise(image)` with a wavelet-domain local
//! Wiener denoiser.

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Daubechies-4 (8 tap) analysis lowpass filter.
const DB4: [f64; 8] = [
    -0.010_597_401_784_997_278,
    0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    -0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    0.230_377_813_308_855_23,
];

/// Anything that maps a single-channel image to a noise residual.
pub trait ResidualExtractor: Sync {
    fn extract(&self, plane: &Array2<f64>) -> Result<Array2<f64>>;

    /// Stable identifier of the extractor and its settings.
    fn config_hash(&self) -> String;

    /// Residuals of all three channels averaged to one plane, zero mean.
    fn extract_rgb(&self, image: &Array3<f32>) -> Result<Array2<f64>> {
        let (c, h, w) = image.dim();
        let mut acc = Array2::zeros((h, w));
        for ch in 0..c {
            let plane = image.index_axis(Axis(0), ch).mapv(|v| v as f64);
            acc += &self.extract(&plane)?;
        }
        acc /= c as f64;
        let mean = acc.mean().unwrap_or(0.0);
        acc -= mean;
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletWiener {
    pub levels: usize,
    /// Assumed noise variance in 8-bit units.
    pub noise_variance: f64,
    /// Odd window sizes for the local variance estimate; the smallest
    /// estimate wins.
    pub windows: Vec<usize>,
}

impl Default for WaveletWiener {
    fn default() -> Self {
        WaveletWiener {
            levels: 4,
            noise_variance: 3.0,
            windows: vec![3, 5, 7, 9],
        }
    }
}

impl WaveletWiener {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::config("residual.levels", "must be in [1, 8]"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::config("residual.noise_variance", "must be > 0"));
        }
        if self.windows.is_empty() || self.windows.iter().any(|w| w % 2 == 0) {
            return Err(Error::config("residual.windows", "must be a non-empty list of odd sizes"));
        }
        Ok(())
    }

    /// Smallest side the extractor accepts.
    pub fn min_size(&self) -> usize {
        1 << self.levels
    }

    fn denoise(&self, plane: &Array2<f64>) -> Array2<f64> {
        let mut coeffs = plane.clone();
        let (h, w) = plane.dim();
        let (mut ch, mut cw) = (h, w);
        for _ in 0..self.levels {
            let mut view = coeffs.slice_mut(s![..ch, ..cw]);
            let level = dwt2(&view.to_owned());
            view.assign(&level);
            let (hh, hw) = (ch / 2, cw / 2);
            for (ys, xs) in [(0..hh, hw..cw), (hh..ch, 0..hw), (hh..ch, hw..cw)] {
                let band = coeffs.slice(s![ys.clone(), xs.clone()]).to_owned();
                let shrunk = self.wiener(&band);
                coeffs.slice_mut(s![ys, xs]).assign(&shrunk);
            }
            ch = hh;
            cw = hw;
        }
        for _ in 0..self.levels {
            ch *= 2;
            cw *= 2;
            let level = idwt2(&coeffs.slice(s![..ch, ..cw]).to_owned());
            coeffs.slice_mut(s![..ch, ..cw]).assign(&level);
        }
        coeffs
    }

    fn wiener(&self, band: &Array2<f64>) -> Array2<f64> {
        let sq = band.mapv(|v| v * v);
        let mut best = Array2::from_elem(band.dim(), f64::INFINITY);
        for &win in &self.windows {
            let local = box_mean(&sq, win);
            best.zip_mut_with(&local, |b, &m| *b = b.min((m - self.noise_variance).max(0.0)));
        }
        let mut out = band.clone();
        out.zip_mut_with(&best, |c, &var| *c *= var / (var + self.noise_variance));
        out
    }
}

impl ResidualExtractor for WaveletWiener {
    fn extract(&self, plane: &Array2<f64>) -> Result<Array2<f64>> {
        self.validate()?;
        let (h, w) = plane.dim();
        let m = self.min_size();
        if h < m || w < m {
            return Err(Error::shape(format!(
                "image {h}x{w} is smaller than the {m}x{m} wavelet support"
            )));
        }
        let padded = mirror_pad(plane, h.next_multiple_of(m), w.next_multiple_of(m));
        let denoised = self.denoise(&padded);
        Ok(plane - &denoised.slice(s![..h, ..w]))
    }

    fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&(("wavelet-wiener-db4", self))).expect("serializable");
        crate::models::hex(&Sha256::digest(json))
    }
}

/// Symmetric (whole-sample) extension of `plane` to `h x w`.
fn mirror_pad(plane: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (ph, pw) = plane.dim();
    let reflect = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let period = 2 * n - 2;
        let j = i % period;
        if j < n {
            j
        } else {
            period - j
        }
    };
    Array2::from_shape_fn((h, w), |(y, x)| plane[[reflect(y, ph), reflect(x, pw)]])
}

fn box_mean(a: &Array2<f64>, win: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    let r = (win / 2) as isize;
    let mut integral = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        for x in 0..w {
            integral[[y + 1, x + 1]] = a[[y, x]] + integral[[y, x + 1]] + integral[[y + 1, x]] - integral[[y, x]];
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = (y as isize - r).max(0) as usize;
        let y1 = ((y as isize + r + 1) as usize).min(h);
        let x0 = (x as isize - r).max(0) as usize;
        let x1 = ((x as isize + r + 1) as usize).min(w);
        let sum = integral[[y1, x1]] - integral[[y0, x1]] - integral[[y1, x0]] + integral[[y0, x0]];
        sum / ((y1 - y0) * (x1 - x0)) as f64
    })
}

fn highpass() -> [f64; 8] {
    std::array::from_fn(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * DB4[7 - n])
}

/// One periodic analysis step: first half lowpass, second half highpass.
fn dwt1(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let g = highpass();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for t in 0..8 {
            let v = x[(2 * k + t) % n];
            a += DB4[t] * v;
            d += g[t] * v;
        }
        out[k] = a;
        out[n / 2 + k] = d;
    }
}

/// Inverse of [`dwt1`] (the periodised transform is orthogonal).
fn idwt1(c: &[f64], out: &mut [f64]) {
    let n = c.len();
    let g = highpass();
    out.fill(0.0);
    for k in 0..n / 2 {
        let (a, d) = (c[k], c[n / 2 + k]);
        for t in 0..8 {
            out[(2 * k + t) % n] += DB4[t] * a + g[t] * d;
        }
    }
}

fn apply_rows_cols(x: &Array2<f64>, f: fn(&[f64], &mut [f64])) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut tmp = Array2::zeros((h, w));
    let mut buf = vec![0.0; w.max(h)];
    for y in 0..h {
        let row: Vec<f64> = x.row(y).to_vec();
        f(&row, &mut buf[..w]);
        tmp.row_mut(y).assign(&ndarray::ArrayView1::from(&buf[..w]));
    }
    let mut out = Array2::zeros((h, w));
    for xcol in 0..w {
        let col: Vec<f64> = tmp.column(xcol).to_vec();
        f(&col, &mut buf[..h]);
        out.column_mut(xcol).assign(&ndarray::ArrayView1::from(&buf[..h]));
    }
    out
}

/// Single-level 2-D transform laid out as `[LL LH; HL HH]`.
pub fn dwt2(x: &Array2<f64>) -> Array2<f64> {
    apply_rows_cols(x, dwt1)
}

pub fn idwt2(c: &Array2<f64>) -> Array2<f64> {
    apply_rows_cols(c, idwt1)
}
