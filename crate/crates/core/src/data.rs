//! Dataset ingestion, grouped patch sampling, and the additive
//! `image = signal + trace` decomposition.
//!
//! A dataset is a directory with one subdirectory per camera type:
//! `<root>/<camera_type>/<image files>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use log::warn;
use ndarray::Array3;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::{load_rgb, rgb_to_array};
use crate::models::TraceEraser;
use crate::{Error, Result};

/// Maximum deviation allowed between `signal + trace` and the input.
pub const RECONSTRUCTION_TOLERANCE: f32 = 1e-5;

/// A crop of a camera image in display units.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    /// `(3, H, W)` values in `[0, 255]`.
    pub pixels: Array3<f32>,
    pub origin: String,
    pub source_id: String,
}

impl ImagePatch {
    pub fn new(pixels: Array3<f32>, origin: impl Into<String>, source_id: impl Into<String>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::shape(format!("patch must be 3xHxW, got {c}x{h}x{w}")));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 255.0) {
            return Err(Error::data("patch values must be finite and within [0, 255]"));
        }
        Ok(ImagePatch {
            pixels,
            origin: origin.into(),
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

/// Patches from pairwise distinct camera types, the unit of Siamese training.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGroup {
    pub patches: Vec<ImagePatch>,
    /// Index of each patch's camera type in the manifest vocabulary.
    pub labels: Vec<usize>,
}

impl ImageGroup {
    pub fn new(patches: Vec<ImagePatch>, labels: Vec<usize>) -> Result<Self> {
        if patches.len() != labels.len() || patches.is_empty() {
            return Err(Error::data("group needs one label per patch and at least one patch"));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[i + 1..].contains(a) {
                return Err(Error::data("group origins must be pairwise distinct"));
            }
        }
        Ok(ImageGroup { patches, labels })
    }

    pub fn size(&self) -> usize {
        self.patches.len()
    }

    pub fn images(&self) -> Vec<Array3<f32>> {
        self.patches.iter().map(|p| p.pixels.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDecomposition {
    pub signal: Array3<f32>,
    pub trace: Array3<f32>,
}

impl TraceDecomposition {
    pub fn reconstruct(&self) -> Array3<f32> {
        &self.signal + &self.trace
    }
}

/// Splits `image` into `signal = eraser(image)` and `trace = image - signal`.
pub fn decompose<E: TraceEraser<f32> + ?Sized>(image: &ImagePatch, eraser: &E) -> Result<TraceDecomposition> {
    let signal = eraser.erase(&image.pixels)?;
    if signal.dim() != image.pixels.dim() {
        return Err(Error::shape("eraser changed the patch shape"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("eraser produced non-finite values"));
    }
    let trace = &image.pixels - &signal;
    Ok(TraceDecomposition { signal, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    /// Path relative to the manifest root.
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    pub images: Vec<ImageEntry>,
}

/// Per-camera lists of decodable images under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted by name; the position is the camera's label index.
    pub cameras: Vec<CameraEntry>,
    pub split: Split,
    /// Files skipped during the scan, with the reason.
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Scans `<root>/<camera_type>/*` for PNG/JPEG images. Camera types and files
/// are listed in lexicographic order; undecodable files are skipped with a
/// warning.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingInput(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut cameras = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        let mut images = Vec::new();
        for file in files {
            match load_rgb(&file) {
                Ok(img) => images.push(ImageEntry {
                    path: file.strip_prefix(root).unwrap().to_path_buf(),
                    width: img.width(),
                    height: img.height(),
                }),
                Err(e) => {
                    let msg = format!("skipping {}: {e}", file.display());
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
        if images.is_empty() {
            let msg = format!("camera type {name} has no decodable images; ignored");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        cameras.push(CameraEntry { name, images });
    }
    if cameras.is_empty() {
        return Err(Error::data("no camera types found"));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        cameras,
        split: Split::All,
        warnings,
    })
}

/// Train/val/test partition of one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifests {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

impl DatasetManifest {
    pub fn vocabulary(&self) -> Vec<String> {
        self.cameras.iter().map(|c| c.name.clone()).collect()
    }

    pub fn num_images(&self) -> usize {
        self.cameras.iter().map(|c| c.images.len()).sum()
    }

    pub fn label_of(&self, camera: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.name == camera)
    }

    pub fn absolute(&self, entry: &ImageEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Deterministic per-camera partition: after a seeded shuffle of each
    /// camera's files, the first `val` fraction goes to validation, the next
    /// `test` fraction to test, the rest to training. Every camera keeps at
    /// least one training image.
    pub fn partition(&self, val: f64, test: f64, seed: u64) -> Result<SplitManifests> {
        if !(0.0..1.0).contains(&val) || !(0.0..1.0).contains(&test) || val + test >= 1.0 {
            return Err(Error::config("data.split", "fractions must be in [0,1) and sum below 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = [self.clone(), self.clone(), self.clone()];
        for (p, split) in parts.iter_mut().zip([Split::Train, Split::Val, Split::Test]) {
            p.split = split;
            p.warnings.clear();
            p.cameras.iter_mut().for_each(|c| c.images.clear());
        }
        for (ci, cam) in self.cameras.iter().enumerate() {
            let n = cam.images.len();
            let order = sample_indices(&mut rng, n, n).into_vec();
            let n_val = ((n as f64) * val).round() as usize;
            let n_test = ((n as f64) * test).round() as usize;
            let n_val = n_val.min(n.saturating_sub(1));
            let n_test = n_test.min(n - 1 - n_val.min(n - 1));
            for (rank, &idx) in order.iter().enumerate() {
                let which = if rank < n_val {
                    1
                } else if rank < n_val + n_test {
                    2
                } else {
                    0
                };
                parts[which].cameras[ci].images.push(cam.images[idx].clone());
            }
        }
        for p in parts.iter_mut() {
            for c in p.cameras.iter_mut() {
                c.images.sort_by(|a, b| a.path.cmp(&b.path));
            }
        }
        let [train, val, test] = parts;
        Ok(SplitManifests { train, val, test })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Decodes every listed image into memory.
    pub fn load_corpus(&self) -> Result<Corpus> {
        let mut images = Vec::with_capacity(self.cameras.len());
        for cam in &self.cameras {
            let mut decoded = Vec::with_capacity(cam.images.len());
            for entry in &cam.images {
                decoded.push(Arc::new(load_rgb(&self.absolute(entry))?));
            }
            images.push(decoded);
        }
        Ok(Corpus {
            manifest: self.clone(),
            images,
        })
    }
}

/// A manifest with all images decoded, ready for sampling.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    /// `images[camera][i]` matches `manifest.cameras[camera].images[i]`.
    pub images: Vec<Vec<Arc<RgbImage>>>,
}

impl Corpus {
    pub fn num_cameras(&self) -> usize {
        self.images.len()
    }

    pub fn image(&self, camera: usize, index: usize) -> Array3<f32> {
        rgb_to_array(&self.images[camera][index])
    }

    fn eligible(&self, camera: usize, patch: usize) -> Vec<usize> {
        self.images[camera]
            .iter()
            .enumerate()
            .filter(|(_, img)| img.width() as usize >= patch && img.height() as usize >= patch)
            .map(|(i, _)| i)
            .collect()
    }

    /// Uniformly positioned `patch x patch` crop of a uniformly chosen image
    /// of `camera` (with replacement).
    pub fn random_patch<R: Rng>(&self, camera: usize, patch: usize, rng: &mut R) -> Result<ImagePatch> {
        let eligible = self.eligible(camera, patch);
        if eligible.is_empty() {
            return Err(Error::data(format!(
                "camera type {} has no image of at least {patch}x{patch}",
                self.manifest.cameras[camera].name
            )));
        }
        let idx = eligible[rng.random_range(0..eligible.len())];
        Ok(self.crop_patch(camera, idx, patch, rng))
    }

    fn crop_patch<R: Rng>(&self, camera: usize, idx: usize, patch: usize, rng: &mut R) -> ImagePatch {
        let img = &self.images[camera][idx];
        let top = rng.random_range(0..=img.height() as usize - patch);
        let left = rng.random_range(0..=img.width() as usize - patch);
        let pixels = Array3::from_shape_fn((3, patch, patch), |(c, y, x)| {
            img.get_pixel((left + x) as u32, (top + y) as u32)[c] as f32
        });
        let cam = &self.manifest.cameras[camera];
        ImagePatch {
            pixels,
            origin: cam.name.clone(),
            source_id: cam.images[idx].path.to_string_lossy().into_owned(),
        }
    }

    /// Draws `group_size` patches from distinct, uniformly chosen camera
    /// types. A pure function of `(corpus, group_size, patch, seed)`.
    pub fn sample_group(&self, group_size: usize, patch: usize, seed: u64) -> Result<ImageGroup> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_group_with(group_size, patch, &mut rng)
    }

    pub fn sample_group_with<R: Rng>(&self, group_size: usize, patch: usize, rng: &mut R) -> Result<ImageGroup> {
        if group_size == 0 {
            return Err(Error::config("data.group_size", "must be >= 1"));
        }
        let eligible: Vec<usize> = (0..self.num_cameras())
            .filter(|&c| !self.eligible(c, patch).is_empty())
            .collect();
        if eligible.len() < group_size {
            return Err(Error::data(format!(
                "need {group_size} camera types with images of at least {patch}x{patch}, found {}",
                eligible.len()
            )));
        }
        let chosen = sample_indices(rng, eligible.len(), group_size).into_vec();
        let mut patches = Vec::with_capacity(group_size);
        let mut labels = Vec::with_capacity(group_size);
        for i in chosen {
            let camera = eligible[i];
            patches.push(self.random_patch(camera, patch, rng)?);
            labels.push(camera);
        }
        ImageGroup::new(patches, labels)
    }
}

/// Free-function form of [`Corpus::sample_group`].
pub fn sample_group(corpus: &Corpus, group_size: usize, patch: usize, seed: u64) -> Result<ImageGroup> {
    corpus.sample_group(group_size, patch, seed)
}
