//! Spatial and frequency-domain renderings of an extracted trace.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;

use super::pce::fft2;
use crate::imaging::save_png;
use crate::Result;

/// Linear stretch of the whole trace to `[0, 255]`. A constant trace maps to
/// mid-grey.
pub fn stretch(trace: &Array3<f32>) -> Array3<f32> {
    let lo = trace.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = trace.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return Array3::from_elem(trace.dim(), 128.0);
    }
    trace.mapv(|v| (v - lo) / (hi - lo) * 255.0)
}

/// `ln(1 + |F|)` of the channel-averaged trace with the zero frequency moved
/// to the centre.
pub fn log_spectrum(trace: &Array3<f32>) -> Array2<f64> {
    let (c, h, w) = trace.dim();
    let mut f = Array2::from_shape_fn((h, w), |(y, x)| {
        let mean = (0..c).map(|ch| trace[[ch, y, x]] as f64).sum::<f64>() / c as f64;
        Complex64::new(mean, 0.0)
    });
    fft2(&mut f, false);
    Array2::from_shape_fn((h, w), |(y, x)| {
        f[[(y + h - h / 2) % h, (x + w - w / 2) % w]].norm().ln_1p()
    })
}

fn gray(plane: &Array2<f64>) -> Array3<f32> {
    let (h, w) = plane.dim();
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled = if hi > lo {
        plane.mapv(|v| ((v - lo) / (hi - lo) * 255.0) as f32)
    } else {
        Array2::zeros((h, w))
    };
    Array3::from_shape_fn((3, h, w), |(_, y, x)| scaled[[y, x]])
}

/// Writes `<stem>_trace.png` and `<stem>_spectrum.png` into `dir`.
pub fn visualize_trace(trace: &Array3<f32>, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let spatial = dir.join(format!("{stem}_trace.png"));
    let spectrum = dir.join(format!("{stem}_spectrum.png"));
    save_png(&stretch(trace), &spatial)?;
    save_png(&gray(&log_spectrum(trace)), &spectrum)?;
    Ok((spatial, spectrum))
}
