use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// `fan_in x fan_out` matrix drawn from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

/// `rows x dim` matrix with entries from `N(0, 1/sqrt(dim))`.
pub fn normal_embedding<T: Scalar, R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Tensor<T> {
    let std = 1.0 / (dim.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * dim)
        .map(|_| T::from_f64_lossy(dist.sample(rng)))
        .collect();
    Tensor::new(vec![rows, dim], data).expect("shape matches")
}

pub fn zeros_row<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::zeros(&[1, n])
}
