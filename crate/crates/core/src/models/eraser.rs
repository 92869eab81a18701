use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, TraceEraser};
use crate::nn::{relu_backward, relu_inplace, Conv2d, Parameters, Scalar};
use crate::{Error, Result};

const PIXEL_SCALE: f64 = 255.0;
const RESIDUAL_SCALE: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EraserConfig {
    /// Number of 3x3 convolutions.
    pub depth: usize,
    /// Channels of the hidden convolutions.
    pub width: usize,
    /// Predict a correction added to the input instead of the output itself.
    pub residual: bool,
    pub seed: u64,
}

impl Default for EraserConfig {
    fn default() -> Self {
        EraserConfig {
            depth: 4,
            width: 16,
            residual: true,
            seed: 0,
        }
    }
}

impl EraserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("model.eraser.depth", "must be >= 1"));
        }
        if self.width == 0 {
            return Err(Error::config("model.eraser.width", "must be >= 1"));
        }
        Ok(())
    }

    /// Parameter count of the network this config builds.
    ///
    /// With depth `d >= 2` and width `w`: the first layer has `27w + w`
    /// parameters, each of the `d - 2` hidden layers `9w^2 + w`, and the
    /// last `27w + 3`. A depth-1 eraser is a single `3 -> 3` layer (84).
    pub fn parameter_count(&self) -> usize {
        let w = self.width;
        match self.depth {
            0 => 0,
            1 => 27 * 3 + 3,
            d => (27 * w + w) + (d - 2) * (9 * w * w + w) + (27 * w + 3),
        }
    }
}

/// Fully convolutional residual eraser `F_theta`. All convolutions are 3x3
/// with same-padding, ReLU between layers, and the last layer zero-initialised
/// so a freshly built residual eraser is exactly the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEraser<T> {
    pub config: EraserConfig,
    pub layers: Vec<Conv2d<T>>,
}

/// Inputs of every convolution, recorded by [`ResidualEraser::forward_taped`].
#[derive(Debug, Clone)]
pub struct EraserTape<T> {
    inputs: Vec<Array3<T>>,
}

impl<T: Scalar> ResidualEraser<T> {
    pub fn build(config: EraserConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(config.depth);
        if config.depth == 1 {
            layers.push(Conv2d::zeros(3, 3, 3, 1, 1));
        } else {
            layers.push(Conv2d::zeros(3, config.width, 3, 1, 1).he_init(&mut rng));
            for _ in 0..config.depth - 2 {
                layers.push(Conv2d::zeros(config.width, config.width, 3, 1, 1).he_init(&mut rng));
            }
            layers.push(Conv2d::zeros(config.width, 3, 3, 1, 1));
        }
        Ok(ResidualEraser { config, layers })
    }

    pub fn zeros_like(&self) -> Self {
        ResidualEraser {
            config: self.config,
            layers: self.layers.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ResidualEraser<U> {
        ResidualEraser {
            config: self.config,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::shape(format!("eraser expects 3xHxW input, got {c}x{h}x{w}")));
        }
        Ok(())
    }

    pub fn forward_taped(&self, x: &Array3<T>) -> Result<(Array3<T>, EraserTape<T>)> {
        self.check_input(x)?;
        let scale = T::from_f64_lossy(PIXEL_SCALE);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let half = T::from_f64_lossy(0.5);
        let mut h = x.mapv(|v| v / scale - half);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.forward(&h);
            if i < last {
                relu_inplace(&mut next);
            }
            inputs.push(std::mem::replace(&mut h, next));
        }
        let out_scale = T::from_f64_lossy(RESIDUAL_SCALE);
        let mut out = h.mapv(|v| v * out_scale);
        if self.config.residual {
            out += x;
        }
        Ok((out, EraserTape { inputs }))
    }

    /// Backpropagates `grad` (w.r.t. the eraser output), accumulating
    /// parameter gradients into `grads`. Returns the input gradient when
    /// asked for.
    pub fn backward(
        &self,
        tape: &EraserTape<T>,
        grad: &Array3<T>,
        grads: &mut ResidualEraser<T>,
        want_input_grad: bool,
    ) -> Option<Array3<T>> {
        let scale = T::from_f64_lossy(PIXEL_SCALE);
        let out_scale = T::from_f64_lossy(RESIDUAL_SCALE);
        let mut g = grad.mapv(|v| v * out_scale);
        let n = self.layers.len();
        for i in (0..n).rev() {
            let need_dx = i > 0 || want_input_grad;
            let dx = self.layers[i].backward(&tape.inputs[i], &g, Some(&mut grads.layers[i]), need_dx);
            match dx {
                Some(dx) if i > 0 => g = relu_backward(&tape.inputs[i], &dx),
                Some(dx) => g = dx,
                None => return None,
            }
        }
        let mut dx = g.mapv(|v| v / scale);
        if self.config.residual {
            dx += grad;
        }
        Some(dx)
    }

    pub fn forward(&self, x: &Array3<T>) -> Result<Array3<T>> {
        Ok(self.forward_taped(x)?.0)
    }
}

impl<T: Scalar> TraceEraser<T> for ResidualEraser<T> {
    fn erase(&self, image: &Array3<T>) -> Result<Array3<T>> {
        self.forward(image)
    }
}

impl<T: Scalar> Parameters<T> for ResidualEraser<T> {
    fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.named_params()
                    .into_iter()
                    .map(move |(n, s, v)| (format!("conv{i}.{n}"), s, v))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl ResidualEraser<f32> {
    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Checkpoint::from_model("eraser", serde_json::to_value(self.config)?, step, self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind("eraser")?;
        let config: EraserConfig = serde_json::from_value(ckpt.descriptor.clone())?;
        let mut model = Self::build(config)?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }
}
