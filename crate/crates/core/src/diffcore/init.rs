use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Half-width of the Glorot uniform interval, `√(6 / (fan_in + fan_out))`.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Glorot-uniform matrix, deterministic in `seed`. Marked trainable.
pub fn xavier_init<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Result<Tensor<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "xavier_init needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let bound = xavier_bound(rows, cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols)
        .map(|_| T::of(rng.gen_range(-bound..=bound)))
        .collect();
    Ok(Tensor::from_vec(rows, cols, values)?.with_grad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_within_bound() {
        let t: Tensor<f64> = xavier_init(256, 256, 3).unwrap();
        let b = xavier_bound(256, 256);
        assert!(t.values().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn deterministic_for_seed() {
        let a: Tensor<f64> = xavier_init(7, 5, 11).unwrap();
        let b: Tensor<f64> = xavier_init(7, 5, 11).unwrap();
        let c: Tensor<f64> = xavier_init(7, 5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_near_zero() {
        let t: Tensor<f64> = xavier_init(100, 1000, 5).unwrap();
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.01 * xavier_bound(100, 1000), "mean {mean}");
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(xavier_init::<f64>(0, 3, 1).is_err());
        assert!(xavier_init::<f64>(3, 0, 1).is_err());
    }
}
