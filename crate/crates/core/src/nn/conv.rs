use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Parameters, Scalar};

/// 2-D convolution with zero padding, lowered to GEMM via im2col.
///
/// `weight` is stored as `[out_channels, in_channels * kernel * kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            weight: Array2::zeros((out_channels, in_channels * kernel * kernel)),
            bias: Array1::zeros(out_channels),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// He-normal weights, zero bias.
    pub fn he_init<R: Rng>(mut self, rng: &mut R) -> Self {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        self.weight
            .mapv_inplace(|_| T::from_f64_lossy(normal.sample(rng)));
        self
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.padding,
        )
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            bias: self.bias.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn im2col(&self, x: &Array3<T>, ho: usize, wo: usize) -> Array2<T> {
        let (c, h, w) = x.dim();
        let k = self.kernel;
        let mut col = Array2::zeros((c * k * k, ho * wo));
        let xs = x.as_slice().expect("standard layout");
        let cols = col.as_slice_mut().unwrap();
        let (pad, s) = (self.padding as isize, self.stride);
        for ci in 0..c {
            let plane = &xs[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let out = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut out[oy * wo..(oy + 1) * wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &Array2<T>, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Array3<T> {
        let k = self.kernel;
        let mut x = Array3::zeros((c, h, w));
        let xs = x.as_slice_mut().unwrap();
        let cols = col.as_slice().expect("standard layout");
        let (pad, s) = (self.padding as isize, self.stride);
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ki as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = ci * h * w + iy as usize * w;
                        for ox in 0..wo {
                            let ix = (ox * s) as isize + kj as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                xs[base + ix as usize] = xs[base + ix as usize] + src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Panics if the input channel count or spatial size is incompatible;
    /// callers validate sizes up front.
    pub fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(h, w).expect("input smaller than kernel");
        let col = self.im2col(x, ho, wo);
        let mut out = Array2::zeros((self.out_channels, ho * wo));
        for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.fill(b);
        }
        general_mat_mul(T::one(), &self.weight, &col, T::one(), &mut out);
        out.into_shape_with_order((self.out_channels, ho, wo)).unwrap()
    }

    /// Backpropagates `grad` (w.r.t. this layer's output) given the layer's
    /// input `x`. Parameter gradients are accumulated into `grads` when given;
    /// the input gradient is returned when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: &Array3<T>,
        grad: &Array3<T>,
        grads: Option<&mut Conv2d<T>>,
        want_input_grad: bool,
    ) -> Option<Array3<T>> {
        let (c, h, w) = x.dim();
        let (_, ho, wo) = grad.dim();
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.out_channels, ho * wo))
            .unwrap();
        if let Some(acc) = grads {
            let col = self.im2col(x, ho, wo);
            general_mat_mul(T::one(), &g, &col.t(), T::one(), &mut acc.weight);
            acc.bias += &g.sum_axis(Axis(1));
        }
        if !want_input_grad {
            return None;
        }
        let mut dcol = Array2::zeros((c * self.kernel * self.kernel, ho * wo));
        general_mat_mul(T::one(), &self.weight.t(), &g, T::zero(), &mut dcol);
        Some(self.col2im(&dcol, c, h, w, ho, wo))
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as the reference.
    fn direct_conv(layer: &Conv2d<f64>, x: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let (ho, wo) = layer.output_size(h, w).unwrap();
        let k = layer.kernel;
        let mut y = Array3::zeros((layer.out_channels, ho, wo));
        for o in 0..layer.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = layer.bias[o];
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * layer.stride + ki) as isize - layer.padding as isize;
                                let ix = (ox * layer.stride + kj) as isize - layer.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += layer.weight[[o, (ci * k + ki) * k + kj]]
                                        * x[[ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    y[[o, oy, ox]] = acc;
                }
            }
        }
        y
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
            let mut layer = Conv2d::<f64>::zeros(3, 4, 3, stride, pad).he_init(&mut rng);
            layer.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x = random_input(&mut rng, (3, 7, 6));
            let fast = layer.forward(&x);
            let slow = direct_conv(&layer, &x);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, J dx> == <J^T dy, dx> for the linear map x -> W*x (bias zero).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let layer = Conv2d::<f64>::zeros(2, 3, 3, stride, pad).he_init(&mut rng);
            let x = random_input(&mut rng, (2, 8, 9));
            let y = layer.forward(&x);
            let dy = random_input(&mut rng, y.dim());
            let dx = layer.backward(&x, &dy, None, true).unwrap();
            let lhs = (&y * &dy).sum();
            let rhs = (&dx * &x).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv2d::<f64>::zeros(2, 2, 3, 2, 1).he_init(&mut rng);
        let x = random_input(&mut rng, (2, 5, 5));
        let dy = random_input(&mut rng, layer.forward(&x).dim());
        let mut grads = layer.zeros_like();
        layer.backward(&x, &dy, Some(&mut grads), false);
        let objective = |l: &Conv2d<f64>| (&l.forward(&x) * &dy).sum();
        for idx in [0usize, 7, 17, 30] {
            let mut plus = layer.clone();
            let mut minus = layer.clone();
            plus.weight.as_slice_mut().unwrap()[idx] += 1e-6;
            minus.weight.as_slice_mut().unwrap()[idx] -= 1e-6;
            let fd = (objective(&plus) - objective(&minus)) / 2e-6;
            assert!((fd - grads.weight.as_slice().unwrap()[idx]).abs() < 1e-6);
        }
        let fd_bias = {
            let mut plus = layer.clone();
            let mut minus = layer.clone();
            plus.bias[1] += 1e-6;
            minus.bias[1] -= 1e-6;
            (objective(&plus) - objective(&minus)) / 2e-6
        };
        assert!((fd_bias - grads.bias[1]).abs() < 1e-6);
    }
}
