//! Camera-type fingerprints: averaged noise residuals.
//!
//! File layout (little-endian):
//!
//! ```text
//! "SIAMTE-FPRINT-1\n"
//! u32  header length
//! JSON header {camera, shape, count, extractor}
//! f64  residual values, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::residual::ResidualExtractor;
use crate::imaging::center_crop;
use crate::parallel::map_indexed;
use crate::{Error, Result};

pub const FINGERPRINT_MAGIC: &[u8] = b"SIAMTE-FPRINT-1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFingerprint {
    pub camera: String,
    pub residual: Array2<f64>,
    pub count: usize,
    /// Hash of the residual extractor settings used.
    pub extractor: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    camera: String,
    shape: [usize; 2],
    count: usize,
    extractor: String,
}

/// Elementwise mean of `residuals`.
pub fn build_fingerprint(camera: &str, residuals: &[Array2<f64>], extractor: &str) -> Result<CameraFingerprint> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::data(format!("no images to build a fingerprint for `{camera}`")))?;
    let mut acc = Array2::<f64>::zeros(first.dim());
    for r in residuals {
        if r.dim() != first.dim() {
            return Err(Error::shape(format!("residual {:?} differs from {:?}", r.dim(), first.dim())));
        }
        acc += r;
    }
    acc /= residuals.len() as f64;
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite fingerprint"));
    }
    Ok(CameraFingerprint {
        camera: camera.to_string(),
        residual: acc,
        count: residuals.len(),
        extractor: extractor.to_string(),
    })
}

/// Center-crops every image to `crop x crop`, extracts residuals and
/// averages them.
pub fn fingerprint_from_images<X: ResidualExtractor + ?Sized>(
    camera: &str,
    images: &[Array3<f32>],
    extractor: &X,
    crop: usize,
) -> Result<CameraFingerprint> {
    let residuals = map_indexed(images.len(), |i| {
        center_crop(&images[i], crop, crop).and_then(|c| extractor.extract_rgb(&c))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    build_fingerprint(camera, &residuals, &extractor.config_hash())
}

impl CameraFingerprint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, w) = self.residual.dim();
        let header = serde_json::to_vec(&Header {
            camera: self.camera.clone(),
            shape: [h, w],
            count: self.count,
            extractor: self.extractor.clone(),
        })?;
        let mut out = Vec::with_capacity(FINGERPRINT_MAGIC.len() + 4 + header.len() + 8 * h * w);
        out.extend_from_slice(FINGERPRINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.residual.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let rest = bytes
            .strip_prefix(FINGERPRINT_MAGIC)
            .ok_or_else(|| bad("missing SIAMTE-FPRINT-1 magic header"))?;
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
        let [h, w] = header.shape;
        if data.len() != 8 * h * w {
            return Err(bad("data length does not match shape"));
        }
        if header.count == 0 {
            return Err(bad("fingerprint built from zero images"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(CameraFingerprint {
            camera: header.camera,
            residual: Array2::from_shape_vec((h, w), values).map_err(|e| bad(&e.to_string()))?,
            count: header.count,
            extractor: header.extractor,
        })
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

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn averaging_cases() {
        let r = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(build_fingerprint("a", &[r.clone()], "x").unwrap().residual, r);
        let zero = build_fingerprint("a", &[r.clone(), -&r], "x").unwrap();
        assert!(zero.residual.iter().all(|v| *v == 0.0));
        let three = [array![[1.0, 2.0]], array![[4.0, 5.0]], array![[7.0, -1.0]]];
        let fp = build_fingerprint("a", &three, "x").unwrap();
        assert_eq!(fp.residual, array![[4.0, 2.0]]);
        assert_eq!(fp.count, 3);
        let copies = vec![r.clone(); 7];
        assert_eq!(build_fingerprint("a", &copies, "x").unwrap().residual, r);
        assert!(build_fingerprint("a", &[], "x").is_err());
        assert!(build_fingerprint("a", &[r, array![[1.0]]], "x").is_err());
    }

    #[test]
    fn file_round_trip() {
        let fp = build_fingerprint("cam_a", &[array![[0.25, -1.5, 3.0], [1e-9, 2.0, -7.0]]], "h").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.fp");
        fp.save(&path).unwrap();
        assert_eq!(CameraFingerprint::load(&path).unwrap(), fp);
        let mut bytes = fp.to_bytes().unwrap();
        bytes.pop();
        assert!(CameraFingerprint::from_bytes(&bytes, &path).is_err());
        assert!(matches!(
            CameraFingerprint::load(&dir.path().join("missing")),
            Err(Error::MissingInput(_))
        ));
    }
}
