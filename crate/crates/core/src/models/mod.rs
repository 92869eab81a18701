//! The three parametric actors: trace eraser, origin classifier and embedder.
//!
//! The loss functions only see these through the traits below, so tests can
//! substitute scripted stubs for the trained networks.

mod checkpoint;
mod classifier;
mod eraser;

use ndarray::{Array1, Array3};
use sha2::{Digest, Sha256};

use crate::nn::{Parameters, Scalar};
use crate::Result;

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC};
pub use classifier::{CameraClassifier, ClassifierConfig, ClassifierTape};
pub use eraser::{EraserConfig, EraserTape, ResidualEraser};

/// Image-to-image map that removes camera trace; `signal = erase(image)`.
pub trait TraceEraser<T: Scalar>: Sync {
    fn erase(&self, image: &Array3<T>) -> Result<Array3<T>>;
}

/// Differentiable image embedding `E(.)`; returns raw (unnormalised) features.
pub trait Embedder<T: Scalar>: Sync {
    type EmbedTape: Send;

    fn feature_len(&self) -> usize;

    fn embed_taped(&self, image: &Array3<T>) -> Result<(Array1<T>, Self::EmbedTape)>;

    /// Gradient of `<grad, E(image)>` with respect to the image.
    fn embed_backward(&self, tape: &Self::EmbedTape, grad: &Array1<T>) -> Array3<T>;

    fn embed(&self, image: &Array3<T>) -> Result<Array1<T>> {
        Ok(self.embed_taped(image)?.0)
    }
}

/// Differentiable origin classifier `C(.)` producing logits over a fixed
/// camera vocabulary. Its parameters are never updated through this trait.
pub trait OriginClassifier<T: Scalar>: Sync {
    type ClassifyTape: Send;

    fn num_classes(&self) -> usize;

    fn logits_taped(&self, image: &Array3<T>) -> Result<(Array1<T>, Self::ClassifyTape)>;

    /// Gradient of `<grad, C(image)>` with respect to the image.
    fn logits_backward(&self, tape: &Self::ClassifyTape, grad: &Array1<T>) -> Array3<T>;

    fn logits(&self, image: &Array3<T>) -> Result<Array1<T>> {
        Ok(self.logits_taped(image)?.0)
    }

    fn predict(&self, image: &Array3<T>) -> Result<usize> {
        let logits = self.logits(image)?;
        Ok(argmax(&logits))
    }
}

/// Eraser that returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEraser;

impl<T: Scalar> TraceEraser<T> for IdentityEraser {
    fn erase(&self, image: &Array3<T>) -> Result<Array3<T>> {
        Ok(image.clone())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// SHA-256 over every parameter's name, shape and little-endian bytes.
pub fn parameter_hash<P: Parameters<f32>>(model: &P) -> String {
    let mut hasher = Sha256::new();
    for (name, shape, values) in model.named_params() {
        hasher.update(name.as_bytes());
        for d in shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
