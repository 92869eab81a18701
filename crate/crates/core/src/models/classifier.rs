use ndarray::{Array1, Array2, Array3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Embedder, OriginClassifier};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, Conv2d, Linear,
    Parameters, Scalar,
};
use crate::{Error, Result};

const PIXEL_SCALE: f64 = 255.0;
/// Gain applied after the fixed high-pass so sensor-noise amplitudes land
/// near unit scale.
const HIGHPASS_GAIN: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Stem channels; the embedding has `4 * width` features.
    pub width: usize,
    /// Camera-type names; logit `i` scores `vocabulary[i]`.
    pub vocabulary: Vec<String>,
    /// Prepend a fixed 3x3 high-pass (pixel minus local mean) per channel.
    pub highpass: bool,
    /// Clamp the high-pass output to `[-t, t]`; 0 disables.
    pub truncation: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            width: 8,
            vocabulary: Vec::new(),
            highpass: true,
            truncation: 0.5,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("model.classifier.width", "must be >= 1"));
        }
        if self.vocabulary.len() < 2 {
            return Err(Error::config(
                "model.classifier.vocabulary",
                "need at least 2 camera types",
            ));
        }
        if !(self.truncation.is_finite() && self.truncation >= 0.0) {
            return Err(Error::config("model.classifier.truncation", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        4 * self.width
    }
}

/// Small residual camera-type classifier.
///
/// `highpass -> conv(w) -> conv/2(2w) -> conv/2(4w) -> residual block(4w)
/// -> global average pool -> linear`. The pooled trunk output is the
/// embedding used by the similarity loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraClassifier<T> {
    pub config: ClassifierConfig,
    highpass: Option<Conv2d<T>>,
    pub stem: Conv2d<T>,
    pub down1: Conv2d<T>,
    pub down2: Conv2d<T>,
    pub res_a: Conv2d<T>,
    pub res_b: Conv2d<T>,
    pub head: Linear<T>,
}

/// Intermediate activations of one classifier forward pass.
#[derive(Debug, Clone)]
pub struct ClassifierTape<T> {
    input: Array3<T>,
    filtered: Array3<T>,
    a1: Array3<T>,
    a2: Array3<T>,
    a3: Array3<T>,
    a4: Array3<T>,
    a5: Array3<T>,
    features: Array1<T>,
}

fn highpass_layer<T: Scalar>() -> Conv2d<T> {
    let mut layer = Conv2d::zeros(3, 3, 3, 1, 0);
    let off = T::from_f64_lossy(-HIGHPASS_GAIN / 9.0);
    let centre = T::from_f64_lossy(HIGHPASS_GAIN * 8.0 / 9.0);
    for c in 0..3 {
        for k in 0..9 {
            layer.weight[[c, c * 9 + k]] = if k == 4 { centre } else { off };
        }
    }
    layer
}

impl<T: Scalar> CameraClassifier<T> {
    /// Smallest accepted input side.
    pub const MIN_INPUT: usize = 16;

    fn truncation(&self) -> Option<T> {
        (self.config.highpass && self.config.truncation > 0.0).then(|| T::from_f64_lossy(self.config.truncation))
    }

    pub fn build(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = config.width;
        let classes = config.vocabulary.len();
        Ok(CameraClassifier {
            highpass: config.highpass.then(highpass_layer),
            stem: Conv2d::zeros(3, w, 3, 1, 1).he_init(&mut rng),
            down1: Conv2d::zeros(w, 2 * w, 3, 2, 1).he_init(&mut rng),
            down2: Conv2d::zeros(2 * w, 4 * w, 3, 2, 1).he_init(&mut rng),
            res_a: Conv2d::zeros(4 * w, 4 * w, 3, 1, 1).he_init(&mut rng),
            res_b: Conv2d::zeros(4 * w, 4 * w, 3, 1, 1).he_init(&mut rng),
            head: Linear::zeros(4 * w, classes).xavier_init(&mut rng),
            config,
        })
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.config.vocabulary
    }

    pub fn zeros_like(&self) -> Self {
        CameraClassifier {
            config: self.config.clone(),
            highpass: self.highpass.clone(),
            stem: self.stem.zeros_like(),
            down1: self.down1.zeros_like(),
            down2: self.down2.zeros_like(),
            res_a: self.res_a.zeros_like(),
            res_b: self.res_b.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> CameraClassifier<U> {
        CameraClassifier {
            config: self.config.clone(),
            highpass: self.highpass.as_ref().map(|l| l.cast()),
            stem: self.stem.cast(),
            down1: self.down1.cast(),
            down2: self.down2.cast(),
            res_a: self.res_a.cast(),
            res_b: self.res_b.cast(),
            head: self.head.cast(),
        }
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::shape(format!("classifier expects 3 channels, got {c}")));
        }
        if h < Self::MIN_INPUT || w < Self::MIN_INPUT {
            return Err(Error::shape(format!(
                "patch {h}x{w} below classifier minimum {m}x{m}",
                m = Self::MIN_INPUT
            )));
        }
        Ok(())
    }

    pub fn forward_taped(&self, x: &Array3<T>) -> Result<(Array1<T>, ClassifierTape<T>)> {
        self.check_input(x)?;
        let scale = T::from_f64_lossy(PIXEL_SCALE);
        let input = x.mapv(|v| v / scale);
        let mut filtered = match &self.highpass {
            Some(hp) => hp.forward(&input),
            None => input.clone(),
        };
        if let Some(t) = self.truncation() {
            filtered.mapv_inplace(|v| v.max(-t).min(t));
        }
        let mut a1 = self.stem.forward(&filtered);
        relu_inplace(&mut a1);
        let mut a2 = self.down1.forward(&a1);
        relu_inplace(&mut a2);
        let mut a3 = self.down2.forward(&a2);
        relu_inplace(&mut a3);
        let mut a4 = self.res_a.forward(&a3);
        relu_inplace(&mut a4);
        let mut a5 = self.res_b.forward(&a4) + &a3;
        relu_inplace(&mut a5);
        let features = global_avg_pool(&a5);
        let tape = ClassifierTape {
            input,
            filtered,
            a1,
            a2,
            a3,
            a4,
            a5,
            features: features.clone(),
        };
        Ok((features, tape))
    }

    /// Backpropagates a feature gradient through the trunk. Parameter
    /// gradients go to `grads` when given; the image gradient is returned
    /// when `want_input_grad` is set.
    pub fn trunk_backward(
        &self,
        tape: &ClassifierTape<T>,
        grad: &Array1<T>,
        mut grads: Option<&mut CameraClassifier<T>>,
        want_input_grad: bool,
    ) -> Option<Array3<T>> {
        let (_, h5, w5) = tape.a5.dim();
        let d5 = relu_backward(&tape.a5, &global_avg_pool_backward(grad, h5, w5));
        let d4 = self
            .res_b
            .backward(&tape.a4, &d5, grads.as_deref_mut().map(|g| &mut g.res_b), true)
            .unwrap();
        let d4 = relu_backward(&tape.a4, &d4);
        let mut d3 = self
            .res_a
            .backward(&tape.a3, &d4, grads.as_deref_mut().map(|g| &mut g.res_a), true)
            .unwrap();
        d3 += &d5;
        let d3 = relu_backward(&tape.a3, &d3);
        let d2 = self
            .down2
            .backward(&tape.a2, &d3, grads.as_deref_mut().map(|g| &mut g.down2), true)
            .unwrap();
        let d2 = relu_backward(&tape.a2, &d2);
        let d1 = self
            .down1
            .backward(&tape.a1, &d2, grads.as_deref_mut().map(|g| &mut g.down1), true)
            .unwrap();
        let d1 = relu_backward(&tape.a1, &d1);
        let d0 = self.stem.backward(
            &tape.filtered,
            &d1,
            grads.as_deref_mut().map(|g| &mut g.stem),
            want_input_grad,
        )?;
        let mut d0 = d0;
        if let Some(t) = self.truncation() {
            Zip::from(&mut d0).and(&tape.filtered).for_each(|g, &f| {
                if f >= t || f <= -t {
                    *g = T::zero();
                }
            });
        }
        let dinput = match &self.highpass {
            Some(hp) => hp.backward(&tape.input, &d0, None, true).unwrap(),
            None => d0,
        };
        let scale = T::from_f64_lossy(PIXEL_SCALE);
        Some(dinput.mapv(|v| v / scale))
    }

    pub fn logits_from_features(&self, features: &Array1<T>) -> Array1<T> {
        self.head.forward(features)
    }

    /// Full backward from a logit gradient.
    pub fn backward(
        &self,
        tape: &ClassifierTape<T>,
        grad_logits: &Array1<T>,
        mut grads: Option<&mut CameraClassifier<T>>,
        want_input_grad: bool,
    ) -> Option<Array3<T>> {
        let dfeat = self.head.backward(
            &tape.features,
            grad_logits,
            grads.as_deref_mut().map(|g| &mut g.head),
        );
        self.trunk_backward(tape, &dfeat, grads, want_input_grad)
    }

    /// Logits for a batch of images as a `[batch, classes]` matrix.
    pub fn logits_batch(&self, images: &[Array3<T>]) -> Result<Array2<T>> {
        let mut out = Array2::zeros((images.len(), self.num_classes()));
        for (mut row, img) in out.outer_iter_mut().zip(images) {
            row.assign(&OriginClassifier::logits(self, img)?);
        }
        Ok(out)
    }
}

impl<T: Scalar> Embedder<T> for CameraClassifier<T> {
    type EmbedTape = ClassifierTape<T>;

    fn feature_len(&self) -> usize {
        self.config.feature_len()
    }

    fn embed_taped(&self, image: &Array3<T>) -> Result<(Array1<T>, ClassifierTape<T>)> {
        self.forward_taped(image)
    }

    fn embed_backward(&self, tape: &ClassifierTape<T>, grad: &Array1<T>) -> Array3<T> {
        self.trunk_backward(tape, grad, None, true).unwrap()
    }
}

impl<T: Scalar> OriginClassifier<T> for CameraClassifier<T> {
    type ClassifyTape = ClassifierTape<T>;

    fn num_classes(&self) -> usize {
        self.config.vocabulary.len()
    }

    fn logits_taped(&self, image: &Array3<T>) -> Result<(Array1<T>, ClassifierTape<T>)> {
        let (features, tape) = self.forward_taped(image)?;
        Ok((self.logits_from_features(&features), tape))
    }

    fn logits_backward(&self, tape: &ClassifierTape<T>, grad: &Array1<T>) -> Array3<T> {
        self.backward(tape, grad, None, true).unwrap()
    }
}

impl<T: Scalar> Parameters<T> for CameraClassifier<T> {
    fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        let convs: [(&str, &Conv2d<T>); 5] = [
            ("stem", &self.stem),
            ("down1", &self.down1),
            ("down2", &self.down2),
            ("res_a", &self.res_a),
            ("res_b", &self.res_b),
        ];
        for (prefix, layer) in convs {
            for (n, s, v) in layer.named_params() {
                out.push((format!("{prefix}.{n}"), s, v));
            }
        }
        for (n, s, v) in self.head.named_params() {
            out.push((format!("head.{n}"), s, v));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        out.extend(self.stem.params_mut());
        out.extend(self.down1.params_mut());
        out.extend(self.down2.params_mut());
        out.extend(self.res_a.params_mut());
        out.extend(self.res_b.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

impl CameraClassifier<f32> {
    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Checkpoint::from_model("classifier", serde_json::to_value(&self.config)?, step, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("classifier")?;
        let config: ClassifierConfig = serde_json::from_value(ckpt.descriptor.clone())?;
        let mut model = Self::build(config)?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }
}
