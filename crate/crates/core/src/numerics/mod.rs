//! Dense tensors, reverse-mode autodiff, activations/losses and Adam.

mod adam;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use ops::{causal_dilated_conv1d, leaky_relu, linear, rmse, sigmoid, softmax_rows, DEFAULT_LEAKY_SLOPE};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

/// Uniform `[-b, b]` initialization with `b = sqrt(6 / fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Reborrows an optional dropout RNG for one nested call.
pub fn reborrow_rng<'a>(rng: &'a mut Option<&mut dyn rand::RngCore>) -> Option<&'a mut dyn rand::RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}
