//! Classical anti-forensic transforms: median filter, Gaussian filter, JPEG
//! recompression and gradient-sign adversarial dithering.
//!
//! All transforms take and return `(3, H, W)` images in `[0, 255]`.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::imaging::{array_to_rgb, rgb_to_array};
use crate::models::OriginClassifier;
use crate::nn::cross_entropy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformSpec {
    Median { kernel: usize },
    Gaussian { kernel: usize, sigma: f64 },
    Jpeg { quality: u8 },
    Adversarial { epsilon: f64 },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformSpec::Median { kernel } => check_kernel(kernel),
            TransformSpec::Gaussian { kernel, sigma } => {
                check_kernel(kernel)?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("sigma", "must be > 0"));
                }
                Ok(())
            }
            TransformSpec::Jpeg { quality } => {
                if !(1..=100).contains(&quality) {
                    return Err(Error::config("quality", "must be in [1, 100]"));
                }
                Ok(())
            }
            TransformSpec::Adversarial { epsilon } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::config("epsilon", "must be > 0"));
                }
                Ok(())
            }
        }
    }

    /// Whether the transform needs a classifier and the true label.
    pub fn needs_classifier(&self) -> bool {
        matches!(self, TransformSpec::Adversarial { .. })
    }

    /// Applies the transform. `oracle` supplies the classifier and true
    /// label for adversarial dithering and is ignored otherwise.
    pub fn apply<C: OriginClassifier<f32> + ?Sized>(
        &self,
        image: &Array3<f32>,
        oracle: Option<(&C, usize)>,
    ) -> Result<Array3<f32>> {
        self.validate()?;
        match *self {
            TransformSpec::Median { kernel } => median_filter(image, kernel),
            TransformSpec::Gaussian { kernel, sigma } => gaussian_filter(image, kernel, sigma),
            TransformSpec::Jpeg { quality } => Ok(jpeg_compress(image, quality)?.0),
            TransformSpec::Adversarial { epsilon } => {
                let (classifier, label) = oracle.ok_or_else(|| {
                    Error::config("method", "adversarial dithering needs a classifier")
                })?;
                adversarial_dither(image, classifier, label, epsilon as f32)
            }
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Parses the method labels `mfK`, `gfK`, `cpQ` and `adE`
    /// (e.g. `mf5`, `gf3`, `cp30`, `ad2`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::config("method", format!("unknown transform `{s}`"));
        if s.len() < 3 || !s.is_char_boundary(2) {
            return Err(bad());
        }
        let (kind, num) = s.split_at(2);
        let spec = match kind {
            "mf" => TransformSpec::Median {
                kernel: num.parse().map_err(|_| bad())?,
            },
            "gf" => {
                let kernel: usize = num.parse().map_err(|_| bad())?;
                TransformSpec::Gaussian {
                    kernel,
                    sigma: default_sigma(kernel),
                }
            }
            "cp" => TransformSpec::Jpeg {
                quality: num.parse().map_err(|_| bad())?,
            },
            "ad" => TransformSpec::Adversarial {
                epsilon: num.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TransformSpec::Median { kernel } => write!(f, "mf{kernel}"),
            TransformSpec::Gaussian { kernel, .. } => write!(f, "gf{kernel}"),
            TransformSpec::Jpeg { quality } => write!(f, "cp{quality}"),
            TransformSpec::Adversarial { epsilon } => write!(f, "ad{epsilon}"),
        }
    }
}

/// Kernel spans +-3 sigma.
pub fn default_sigma(kernel: usize) -> f64 {
    kernel as f64 / 6.0
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::config("kernel", format!("must be odd and >= 3, got {kernel}")));
    }
    Ok(())
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-channel `k x k` median with edge-replication padding.
pub fn median_filter(image: &Array3<f32>, kernel: usize) -> Result<Array3<f32>> {
    check_kernel(kernel)?;
    let (c, h, w) = image.dim();
    let r = (kernel / 2) as isize;
    let mut out = Array3::zeros((c, h, w));
    let mut window = Vec::with_capacity(kernel * kernel);
    for ch in 0..c {
        let plane = image.index_axis(ndarray::Axis(0), ch);
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -r..=r {
                    let yy = clamp_index(y as isize + dy, h);
                    for dx in -r..=r {
                        window.push(plane[[yy, clamp_index(x as isize + dx, w)]]);
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                out[[ch, y, x]] = *m;
            }
        }
    }
    Ok(out)
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_kernel(kernel: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel / 2) as f64;
    let taps: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_filter(image: &Array3<f32>, kernel: usize, sigma: f64) -> Result<Array3<f32>> {
    check_kernel(kernel)?;
    if !(sigma > 0.0) {
        return Err(Error::config("sigma", "must be > 0"));
    }
    let taps = gaussian_kernel(kernel, sigma);
    let (c, h, w) = image.dim();
    let r = (kernel / 2) as isize;
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = image.index_axis(ndarray::Axis(0), ch);
        let mut tmp = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                tmp[[y, x]] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * plane[[y, clamp_index(x as isize + i as isize - r, w)]] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * tmp[[clamp_index(y as isize + i as isize - r, h), x]])
                    .sum();
                out[[ch, y, x]] = v as f32;
            }
        }
    }
    Ok(out)
}

/// Encodes an 8-bit RGB image as baseline sequential JPEG with 4:2:0 chroma
/// subsampling and the standard (Annex K) tables scaled for `quality`.
pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
    encoder.set_progressive(false);
    encoder.set_optimized_huffman_tables(false);
    let (w, h) = img.dimensions();
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(Error::shape("image too large for JPEG"));
    }
    encoder
        .encode(img.as_raw(), w as u16, h as u16, ColorType::Rgb)
        .map_err(|e| Error::data(format!("jpeg encoding failed: {e}")))?;
    Ok(bytes)
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)?.to_rgb8())
}

/// JPEG round trip at `quality`; returns the decoded image and the encoded
/// bytes. The input is quantised to 8 bits first.
pub fn jpeg_compress(image: &Array3<f32>, quality: u8) -> Result<(Array3<f32>, Vec<u8>)> {
    if !(1..=100).contains(&quality) {
        return Err(Error::config("quality", "must be in [1, 100]"));
    }
    let bytes = encode_jpeg(&array_to_rgb(image), quality)?;
    let decoded = decode_jpeg(&bytes)?;
    Ok((rgb_to_array(&decoded), bytes))
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Untargeted gradient-sign dithering:
/// `clip(image + epsilon * sign(d CE(C(image), label) / d image), 0, 255)`.
pub fn adversarial_dither<C: OriginClassifier<f32> + ?Sized>(
    image: &Array3<f32>,
    classifier: &C,
    label: usize,
    epsilon: f32,
) -> Result<Array3<f32>> {
    if label >= classifier.num_classes() {
        return Err(Error::data(format!(
            "label {label} outside classifier vocabulary of {}",
            classifier.num_classes()
        )));
    }
    let (logits, tape) = classifier.logits_taped(image)?;
    let (_, dlogits) = cross_entropy(&logits, label);
    let grad = classifier.logits_backward(&tape, &dlogits);
    Ok(apply_gradient_sign(image, &grad, epsilon))
}

/// `clip(image + epsilon * sign(grad), 0, 255)`.
pub fn apply_gradient_sign(image: &Array3<f32>, grad: &Array3<f32>, epsilon: f32) -> Array3<f32> {
    let mut out = image.clone();
    out.zip_mut_with(grad, |x, &g| *x = (*x + epsilon * sign(g)).clamp(0.0, 255.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_median(plane: &Array2<f32>, k: usize) -> Array2<f32> {
        let (h, w) = plane.dim();
        let r = (k / 2) as isize;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut v = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    v.push(plane[[yy, xx]]);
                }
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        })
    }

    fn direct_conv2d(plane: &Array2<f32>, k2: &Array2<f64>) -> Array2<f64> {
        let (h, w) = plane.dim();
        let r = (k2.nrows() / 2) as isize;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = 0.0;
            for i in 0..k2.nrows() {
                for j in 0..k2.ncols() {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += k2[[i, j]] * plane[[yy, xx]] as f64;
                }
            }
            acc
        })
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.random_range(0..=255) as f32)
    }

    #[test]
    fn median_constant_and_impulse() {
        let flat = Array3::from_elem((3, 9, 9), 77.0f32);
        assert_eq!(median_filter(&flat, 3).unwrap(), flat);
        let mut spike = flat.clone();
        spike[[1, 4, 4]] = 255.0;
        assert_eq!(median_filter(&spike, 3).unwrap(), flat);
        assert!(median_filter(&flat, 4).is_err());
        assert!(median_filter(&flat, 1).is_err());
    }

    #[test]
    fn median_matches_sliding_window_oracle() {
        let img = random_image(1, 5, 5);
        let out = median_filter(&img, 3).unwrap();
        for c in 0..3 {
            let plane = img.index_axis(ndarray::Axis(0), c).to_owned();
            assert_eq!(out.index_axis(ndarray::Axis(0), c), brute_median(&plane, 3));
        }
    }

    #[test]
    fn gaussian_constant_impulse_and_direct_oracle() {
        let flat = Array3::from_elem((3, 7, 7), 40.0f32);
        let out = gaussian_filter(&flat, 5, default_sigma(5)).unwrap();
        assert!(out.iter().all(|&v| (v - 40.0).abs() < 1e-4));

        let mut impulse = Array3::zeros((3, 9, 9));
        impulse[[0, 4, 4]] = 1.0f32;
        let out = gaussian_filter(&impulse, 3, 0.8).unwrap();
        let taps = gaussian_kernel(3, 0.8);
        for i in 0..3 {
            for j in 0..3 {
                assert!((out[[0, 3 + i, 3 + j]] as f64 - taps[i] * taps[j]).abs() < 1e-6);
            }
        }

        let img = random_image(2, 7, 7);
        let taps = gaussian_kernel(5, default_sigma(5));
        let k2 = Array2::from_shape_fn((5, 5), |(i, j)| taps[i] * taps[j]);
        let out = gaussian_filter(&img, 5, default_sigma(5)).unwrap();
        let plane = img.index_axis(ndarray::Axis(0), 2).to_owned();
        let reference = direct_conv2d(&plane, &k2);
        for ((y, x), v) in reference.indexed_iter() {
            assert!((out[[2, y, x]] as f64 - v).abs() < 1e-3);
        }
    }

    #[test]
    fn parse_method_labels() {
        assert_eq!("mf5".parse::<TransformSpec>().unwrap(), TransformSpec::Median { kernel: 5 });
        assert_eq!("cp30".parse::<TransformSpec>().unwrap(), TransformSpec::Jpeg { quality: 30 });
        assert_eq!("ad2".parse::<TransformSpec>().unwrap(), TransformSpec::Adversarial { epsilon: 2.0 });
        match "gf3".parse::<TransformSpec>().unwrap() {
            TransformSpec::Gaussian { kernel, sigma } => {
                assert_eq!(kernel, 3);
                assert!((sigma - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        for bad in ["mf4", "cp0", "cp101", "zz3", "m", "ad0", "mf"] {
            assert!(bad.parse::<TransformSpec>().is_err(), "{bad}");
        }
        for label in ["mf3", "mf5", "gf3", "gf5", "cp30", "cp40", "cp50", "ad1", "ad2"] {
            assert_eq!(label.parse::<TransformSpec>().unwrap().to_string(), label);
        }
    }

    #[test]
    fn jpeg_is_deterministic() {
        let img = random_image(3, 32, 48);
        let (a, bytes_a) = jpeg_compress(&img, 50).unwrap();
        let (b, bytes_b) = jpeg_compress(&img, 50).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a, b);
        assert_eq!(a.dim(), img.dim());
    }

    struct ScriptedGradient(Array3<f32>);

    impl OriginClassifier<f32> for ScriptedGradient {
        type ClassifyTape = ();
        fn num_classes(&self) -> usize {
            2
        }
        fn logits_taped(&self, _: &Array3<f32>) -> Result<(Array1<f32>, ())> {
            Ok((Array1::zeros(2), ()))
        }
        fn logits_backward(&self, _: &(), grad: &Array1<f32>) -> Array3<f32> {
            // d<grad, logits>/dx = grad[0] * script, so the loss gradient
            // for label 1 (grad[0] = +0.5) carries the script's sign.
            &self.0 * grad[0]
        }
    }

    #[test]
    fn dither_follows_gradient_sign() {
        let image = Array3::from_shape_vec((3, 2, 2), vec![
            10.0, 0.5, 254.5, 100.0, //
            10.0, 10.0, 10.0, 10.0, //
            0.0, 255.0, 128.0, 128.0,
        ])
        .unwrap();
        let script = Array3::from_shape_vec((3, 2, 2), vec![
            1.0, -1.0, 1.0, 0.0, //
            -2.0, 3.0, 0.0, 0.0, //
            -1.0, 1.0, 1.0, -1.0,
        ])
        .unwrap();
        let out = adversarial_dither(&image, &ScriptedGradient(script), 1, 2.0).unwrap();
        let expected = vec![
            12.0, 0.0, 255.0, 100.0, //
            8.0, 12.0, 10.0, 10.0, //
            0.0, 255.0, 130.0, 126.0,
        ];
        assert_eq!(out.iter().copied().collect::<Vec<_>>(), expected);

        let zero = ScriptedGradient(Array3::zeros((3, 2, 2)));
        assert_eq!(adversarial_dither(&image, &zero, 0, 1.0).unwrap(), image);
        assert!(adversarial_dither(&image, &zero, 5, 1.0).is_err());
    }
}
