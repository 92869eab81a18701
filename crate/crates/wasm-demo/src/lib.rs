//! Browser front end for the `siamte` core. Everything runs client side:
//! images come from the synthetic camera corpus, so nothing is uploaded.

use std::cell::RefCell;

use ndarray::{Array2, Array3};
use siamte::baselines::TransformSpec;
use siamte::forensics::visualize::{log_spectrum, stretch};
use siamte::forensics::{fingerprint_from_images, pce, CameraFingerprint, ResidualExtractor, WaveletWiener};
use siamte::metrics::l1_distance;
use siamte::models::CameraClassifier;
use siamte::synth::SynthConfig;
use wasm_bindgen::prelude::*;

/// Images per camera averaged into a demo fingerprint.
const FINGERPRINT_IMAGES: usize = 12;
/// Fingerprints use corpus indices from here on, so they never include the
/// image being viewed.
const FINGERPRINT_OFFSET: usize = 10_000;
const EXCLUSION_RADIUS: usize = 5;

#[wasm_bindgen]
pub struct Demo {
    config: SynthConfig,
    extractor: WaveletWiener,
    fingerprints: RefCell<Vec<Option<CameraFingerprint>>>,
}

#[wasm_bindgen]
#[derive(Debug)]
pub struct AttackResult {
    rgba: Vec<u8>,
    l1: f64,
    pce_before: f64,
    pce_after: f64,
}

#[wasm_bindgen]
impl AttackResult {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn l1(&self) -> f64 {
        self.l1
    }

    #[wasm_bindgen(getter)]
    pub fn pce_before(&self) -> f64 {
        self.pce_before
    }

    #[wasm_bindgen(getter)]
    pub fn pce_after(&self) -> f64 {
        self.pce_after
    }
}

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `(C, H, W)` pixels to RGBA bytes; one channel is drawn as grey.
pub fn to_rgba(pixels: &Array3<f32>) -> Vec<u8> {
    let (c, h, w) = pixels.dim();
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(pixels[[ch.min(c - 1), y, x]].round().clamp(0.0, 255.0) as u8);
            }
            out.push(255);
        }
    }
    out
}

fn plane(p: &Array2<f64>) -> Array3<f32> {
    let (h, w) = p.dim();
    Array3::from_shape_fn((1, h, w), |(_, y, x)| p[[y, x]] as f32)
}

impl Demo {
    pub fn with_config(config: SynthConfig) -> Result<Demo, String> {
        config.validate().map_err(|e| e.to_string())?;
        let n = config.profiles.len();
        Ok(Demo {
            config,
            extractor: WaveletWiener::default(),
            fingerprints: RefCell::new(vec![None; n]),
        })
    }

    pub fn image(&self, camera: usize, index: usize) -> Result<Array3<f32>, String> {
        siamte::synth::camera_image(&self.config, camera, index).map_err(|e| e.to_string())
    }

    /// `ori` returns the image unchanged; otherwise `mfK`, `gfK` or `cpQ`.
    pub fn transform(&self, image: &Array3<f32>, method: &str) -> Result<Array3<f32>, String> {
        if method.trim().eq_ignore_ascii_case("ori") {
            return Ok(image.clone());
        }
        let spec: TransformSpec = method.parse().map_err(|e: siamte::Error| e.to_string())?;
        if spec.needs_classifier() {
            return Err(format!("`{method}` needs a trained classifier, which the demo does not ship"));
        }
        spec.apply::<CameraClassifier<f32>>(image, None).map_err(|e| e.to_string())
    }

    fn pce_against(&self, image: &Array3<f32>, camera: usize) -> Result<f64, String> {
        if self.fingerprints.borrow()[camera].is_none() {
            let images = (0..FINGERPRINT_IMAGES)
                .map(|i| self.image(camera, FINGERPRINT_OFFSET + i))
                .collect::<Result<Vec<_>, _>>()?;
            let side = self.config.width.min(self.config.height);
            let fp = fingerprint_from_images(&self.config.profiles[camera].name, &images, &self.extractor, side)
                .map_err(|e| e.to_string())?;
            self.fingerprints.borrow_mut()[camera] = Some(fp);
        }
        let fps = self.fingerprints.borrow();
        let fp = fps[camera].as_ref().unwrap();
        let side = fp.residual.nrows();
        let crop = siamte::imaging::center_crop(image, side, side).map_err(|e| e.to_string())?;
        let residual = self.extractor.extract_rgb(&crop).map_err(|e| e.to_string())?;
        pce(&residual, &fp.residual, EXCLUSION_RADIUS).map_err(|e| e.to_string())
    }

    pub fn attack_native(&self, camera: usize, index: usize, method: &str) -> Result<AttackResult, String> {
        let original = self.image(camera, index)?;
        let attacked = self.transform(&original, method)?;
        Ok(AttackResult {
            rgba: to_rgba(&attacked),
            l1: l1_distance(&original, &attacked).map_err(|e| e.to_string())?,
            pce_before: self.pce_against(&original, camera)?,
            pce_after: self.pce_against(&attacked, camera)?,
        })
    }

    /// `residual`: stretched noise residual of the processed image.
    /// `removed`: stretched `original - processed`.
    /// `spectrum`: log-magnitude spectrum of the residual.
    pub fn view_native(&self, camera: usize, index: usize, method: &str, mode: &str) -> Result<Vec<u8>, String> {
        let original = self.image(camera, index)?;
        let processed = self.transform(&original, method)?;
        let residual = || self.extractor.extract_rgb(&processed).map_err(|e| e.to_string());
        let img = match mode {
            "residual" => stretch(&plane(&residual()?)),
            "removed" => stretch(&(&original - &processed)),
            "spectrum" => stretch(&plane(&log_spectrum(&plane(&residual()?)))),
            other => return Err(format!("unknown view `{other}`")),
        };
        Ok(to_rgba(&img))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Four default camera profiles rendered at 128x128 from `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsValue> {
        Demo::with_config(SynthConfig {
            seed: seed.into(),
            ..SynthConfig::default()
        })
        .map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.config.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn cameras(&self) -> Vec<String> {
        self.config.profiles.iter().map(|p| p.name.clone()).collect()
    }

    /// RGBA bytes of corpus image `index` from `camera`.
    pub fn render(&self, camera: usize, index: usize) -> Result<Vec<u8>, JsValue> {
        self.image(camera, index).map(|x| to_rgba(&x)).map_err(js)
    }

    /// Applies a baseline and reports L1 distance and PCE against the
    /// camera's fingerprint before and after.
    pub fn attack(&self, camera: usize, index: usize, method: &str) -> Result<AttackResult, JsValue> {
        self.attack_native(camera, index, method).map_err(js)
    }

    pub fn view(&self, camera: usize, index: usize, method: &str, mode: &str) -> Result<Vec<u8>, JsValue> {
        self.view_native(camera, index, method, mode).map_err(js)
    }
}
