//! Seeded inputs shared by the criterion benches.

use atcn::numerics::fan_in_uniform;
use atcn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1)`.
pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    fan_in_uniform(shape, 6, &mut rng(seed))
}

/// Heavy-tailed nonnegative scores with every 50th point labeled and inflated.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng(seed);
    let labels: Vec<bool> = (0..n).map(|i| i % 50 < 3).collect();
    let scores = labels
        .iter()
        .map(|&l| {
            let u: f64 = r.random_range(1e-9..1.0);
            -u.ln() + if l { 2.0 } else { 0.0 }
        })
        .collect();
    (scores, labels)
}
