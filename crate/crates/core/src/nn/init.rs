//! Seeded parameter initializers.

use alloc::vec::Vec;
use rand::Rng;

use super::Tensor;

/// Uniform in `(-s, s)` with `s = 1 / sqrt(fan_in)`, where `fan_in` is the
/// leading dimension of `shape`.
pub fn fan_in_uniform<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let fan_in = shape.first().copied().unwrap_or(1).max(1);
    let s = 1.0 / libm::sqrt(fan_in as f64);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-s..s)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Normal(0, std) through the Box-Muller transform.
pub fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        data.push(std * r * libm::cos(theta));
        if data.len() < n {
            data.push(std * r * libm::sin(theta));
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}
