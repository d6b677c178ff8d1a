//! Weight initialization: Kaiming fan-in normals for convolutions, ones/zeros
//! for batch-norm affine parameters, zeros for biases.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Element;

/// `N(0, sqrt(2 / fan_in))` draws, the usual scaling for ReLU networks.
pub fn kaiming<T: Element, R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
        .collect()
}

pub fn zeros<T: Element>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

pub fn ones<T: Element>(n: usize) -> Vec<T> {
    vec![T::one(); n]
}
