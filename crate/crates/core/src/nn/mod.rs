//! Minimal differentiable building blocks for the toy-scale networks.
//!
//! Activations are `(channels, height, width)` arrays. Every layer exposes an
//! explicit `forward` and a `backward` that accumulates parameter gradients
//! into a zero-initialised twin of the layer (`zeros_like`), so a model's
//! gradient has the same type as the model itself.

mod adam;
mod conv;
mod linear;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array3, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;

/// Floating point type the networks can run in. Training uses `f32`;
/// gradient checks run the same code in `f64`.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A set of trainable arrays with a stable ordering.
pub trait Parameters<T: Scalar> {
    /// `(name, shape, values)` for every parameter array, in a fixed order.
    fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])>;

    /// Mutable views in the same order as [`Parameters::named_params`].
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, _, v)| v.len()).sum()
    }

    fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.fill(T::zero());
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut Array3<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward<T: Scalar>(output: &Array3<T>, grad: &Array3<T>) -> Array3<T> {
    let mut g = grad.clone();
    g.zip_mut_with(output, |g, &y| {
        if y <= T::zero() {
            *g = T::zero();
        }
    });
    g
}

pub fn global_avg_pool<T: Scalar>(x: &Array3<T>) -> Array1<T> {
    let (c, h, w) = x.dim();
    let n = T::from_usize(h * w).unwrap();
    let mut out = Array1::zeros(c);
    for (o, plane) in out.iter_mut().zip(x.outer_iter()) {
        *o = plane.sum() / n;
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(grad: &Array1<T>, h: usize, w: usize) -> Array3<T> {
    let n = T::from_usize(h * w).unwrap();
    let mut out = Array3::zeros((grad.len(), h, w));
    for (mut plane, &g) in out.outer_iter_mut().zip(grad.iter()) {
        plane.fill(g / n);
    }
    out
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Cross-entropy of `logits` against class `label`, plus its gradient with
/// respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Array1<T>, label: usize) -> (T, Array1<T>) {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] = grad[label] - T::one();
    (loss, grad)
}

pub fn cast_array3<A: Scalar, B: Scalar>(x: &Array3<A>) -> Array3<B> {
    x.mapv(|v| B::from_f64_lossy(v.to_f64_lossy()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&array![1000.0f64, -3.0, 2.5, 0.0]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_two_class_by_hand() {
        // logits (2, 0), label 1: -ln(e^0 / (e^2 + e^0)) = ln(1 + e^2)
        let (loss, grad) = cross_entropy(&array![2.0f64, 0.0], 1);
        assert!((loss - (1.0 + 2f64.exp()).ln()).abs() < 1e-12);
        let p0 = 2f64.exp() / (1.0 + 2f64.exp());
        assert!((grad[0] - p0).abs() < 1e-12);
        assert!((grad[1] - (1.0 - p0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let x = Array3::from_shape_fn((2, 3, 4), |(c, i, j)| (c * 12 + i * 4 + j) as f64 * 0.1);
        let g = array![0.3, -1.2];
        let lhs: f64 = global_avg_pool(&x).dot(&g);
        let rhs: f64 = (&global_avg_pool_backward(&g, 3, 4) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
