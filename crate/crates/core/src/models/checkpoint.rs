//! Versioned single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SIAMTE-CKPT-1\n"
//! u32  header length
//! JSON header {kind, descriptor, step, arrays: [{name, shape}]}
//! f32  parameter values, arrays concatenated in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::Parameters;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"SIAMTE-CKPT-1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `"eraser"` or `"classifier"`.
    pub kind: String,
    /// Architecture descriptor (the model config) as JSON.
    pub descriptor: serde_json::Value,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    descriptor: serde_json::Value,
    step: u64,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn from_model<P: Parameters<f32>>(
        kind: &str,
        descriptor: serde_json::Value,
        step: u64,
        model: &P,
    ) -> Result<Self> {
        let arrays = model
            .named_params()
            .into_iter()
            .map(|(name, shape, data)| NamedArray {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Ok(Checkpoint {
            kind: kind.to_string(),
            descriptor,
            step,
            arrays,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::data(format!(
                "checkpoint holds a {}, expected a {kind}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Copies the stored arrays into `model`, checking names and shapes.
    pub fn load_into<P: Parameters<f32>>(&self, model: &mut P) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != self.arrays.len() {
            return Err(Error::data(format!(
                "checkpoint has {} arrays, model expects {}",
                self.arrays.len(),
                expected.len()
            )));
        }
        for ((name, shape), stored) in expected.iter().zip(&self.arrays) {
            if *name != stored.name || *shape != stored.shape {
                return Err(Error::data(format!(
                    "checkpoint array {} {:?} does not match model array {name} {shape:?}",
                    stored.name, stored.shape
                )));
            }
        }
        for (dst, stored) in model.params_mut().into_iter().zip(&self.arrays) {
            dst.copy_from_slice(&stored.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            descriptor: self.descriptor.clone(),
            step: self.step,
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let values: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + json.len() + 4 * values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| bad("missing SIAMTE-CKPT-1 magic header"))?;
        if rest.len() < 4 {
            return Err(bad("truncated header length"));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len])?;
        let mut data = &rest[len..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad("truncated parameter data"));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[4 * n..];
            arrays.push(NamedArray {
                name: entry.name,
                shape: entry.shape,
                data: values,
            });
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            descriptor: header.descriptor,
            step: header.step,
            arrays,
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

    /// SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(super::hex(&Sha256::digest(self.to_bytes()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CameraClassifier, ClassifierConfig, EraserConfig, ResidualEraser};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eraser_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut eraser = ResidualEraser::<f32>::build(EraserConfig { depth: 3, width: 4, ..Default::default() }).unwrap();
        for p in eraser.params_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let ckpt = eraser.to_checkpoint(17).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        assert!(bytes.starts_with(b"SIAMTE-CKPT-1"));
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.step, 17);
        let restored = ResidualEraser::from_checkpoint(&back).unwrap();
        assert_eq!(restored, eraser);
        let x = Array3::from_shape_fn((3, 9, 7), |_| rng.random_range(0.0..255.0f32));
        assert_eq!(restored.forward(&x).unwrap(), eraser.forward(&x).unwrap());
    }

    #[test]
    fn classifier_round_trip_and_kind_check() {
        let c = CameraClassifier::<f32>::build(ClassifierConfig {
            vocabulary: vec!["a".into(), "b".into()],
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let ckpt = c.to_checkpoint(0).unwrap();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap(), Path::new("mem")).unwrap();
        assert_eq!(CameraClassifier::from_checkpoint(&back).unwrap(), c);
        assert!(ResidualEraser::from_checkpoint(&back).is_err());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE", Path::new("x")).is_err());
        let eraser = ResidualEraser::<f32>::build(EraserConfig::default()).unwrap();
        let mut bytes = eraser.to_checkpoint(0).unwrap().to_bytes().unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
    }
}
