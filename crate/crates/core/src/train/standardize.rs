//! Per-concept standardization of activations before the classifier.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{invalid, Result};

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub mean: Array1<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Array1<f64>,
    pub z: Array2<f64>,
}

pub fn standardize_activations(z: ArrayView2<f64>) -> Result<Standardized> {
    let n = z.nrows();
    if n < 2 {
        return Err(invalid!("standardization needs at least 2 samples, got {n}"));
    }
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let std = z.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    let out = apply_standardization(z, &mean, &std);
    Ok(Standardized { mean, std, z: out })
}

pub fn apply_standardization(z: ArrayView2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    (&z - mean) / std
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_is_floored() {
        let s = standardize_activations(array![[3.0, 1.0], [3.0, -1.0]].view()).unwrap();
        assert_eq!(s.std[0], STD_FLOOR);
        assert_eq!(s.z.column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn standard_column_is_fixed_point() {
        let z = array![[1.0], [-1.0], [1.0], [-1.0]];
        let s = standardize_activations(z.view()).unwrap();
        for (a, b) in s.z.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn moments_recomputed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Array2::from_shape_fn((50, 7), |(_, j)| rng.random::<f64>() * (j as f64 + 1.0) + j as f64);
        let s = standardize_activations(z.view()).unwrap();
        for col in s.z.columns() {
            let m: f64 = col.iter().sum::<f64>() / 50.0;
            let v: f64 = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-6);
            assert!((v.sqrt() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn too_few_rows() {
        assert!(standardize_activations(array![[1.0]].view()).is_err());
    }
}
