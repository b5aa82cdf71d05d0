//! Deterministic parameter initialization.
//!
//! All draws happen in f64 and are cast to the target element type, so a
//! model built at f32 starts from the rounded value of the same f64 model.

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Scalar;

/// Fill a shape with U(-bound, bound) draws in row-major order.
pub fn uniform<T: Scalar, D: Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    bound: f64,
    rng: &mut ChaCha8Rng,
) -> Array<T, D> {
    let shape = shape.into_shape_with_order();
    let n = shape.raw_dim().size();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Array::from_shape_vec(shape, data).expect("shape/len agree")
}

/// Fill a shape with N(0, std^2) draws in row-major order.
pub fn normal<T: Scalar, D: Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array<T, D> {
    let dist = Normal::new(0.0, std).expect("std must be positive");
    let shape = shape.into_shape_with_order();
    let n = shape.raw_dim().size();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Array::from_shape_vec(shape, data).expect("shape/len agree")
}

/// Splitmix64 step, used to derive independent seeds from one run seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
