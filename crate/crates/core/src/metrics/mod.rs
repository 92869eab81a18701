//! Image-quality metrics: mean absolute difference and NIQE.

mod niqe;

pub use niqe::{fit_niqe_model, niqe, niqe_features, NiqePristineModel, NIQE_FEATURES, NIQE_MAGIC};

use ndarray::Array3;

use crate::{Error, Result};

/// Mean elementwise `|a - b|` in 8-bit units.
pub fn l1_distance(a: &Array3<f32>, b: &Array3<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("L1 distance between {:?} and {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(Error::shape("L1 distance of empty images"));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(sum / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let a = Array3::from_shape_vec((1, 2, 2), vec![0.0, 3.0, 1.0, 2.0]).unwrap();
        let b = Array3::from_shape_vec((1, 2, 2), vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(l1_distance(&a, &b).unwrap(), 1.25);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert!(l1_distance(&a, &Array3::zeros((1, 2, 3))).is_err());
    }

    fn triple() -> impl Strategy<Value = [Array3<f32>; 3]> {
        proptest::collection::vec(0.0f32..255.0, 3 * 12).prop_map(|v| {
            let mk = |k: usize| Array3::from_shape_vec((1, 3, 4), v[k * 12..(k + 1) * 12].to_vec()).unwrap();
            [mk(0), mk(1), mk(2)]
        })
    }

    proptest! {
        #[test]
        fn is_a_metric([a, b, c] in triple()) {
            let ab = l1_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, l1_distance(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(l1_distance(&a, &c).unwrap() <= ab + l1_distance(&b, &c).unwrap() + 1e-9);
        }
    }
}
