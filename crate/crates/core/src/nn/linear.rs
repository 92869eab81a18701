use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Parameters, Scalar};

/// Fully connected layer, `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn xavier_init<R: Rng>(mut self, rng: &mut R) -> Self {
        let (o, i) = self.weight.dim();
        let normal = Normal::new(0.0, (2.0 / (i + o) as f64).sqrt()).unwrap();
        self.weight
            .mapv_inplace(|_| T::from_f64_lossy(normal.sample(rng)));
        self
    }

    pub fn zeros_like(&self) -> Self {
        let (o, i) = self.weight.dim();
        Self::zeros(i, o)
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            bias: self.bias.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array1<T>) -> Array1<T> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&self, x: &Array1<T>, grad: &Array1<T>, grads: Option<&mut Linear<T>>) -> Array1<T> {
        if let Some(acc) = grads {
            for (mut row, &g) in acc.weight.outer_iter_mut().zip(grad.iter()) {
                row.scaled_add(g, x);
            }
            acc.bias += grad;
        }
        self.weight.t().dot(grad)
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        vec![
            (
                "weight".into(),
                self.weight.shape().to_vec(),
                self.weight.as_slice().unwrap(),
            ),
            (
                "bias".into(),
                self.bias.shape().to_vec(),
                self.bias.as_slice().unwrap(),
            ),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.weight.as_slice_mut().unwrap(),
            self.bias.as_slice_mut().unwrap(),
        ]
    }
}
