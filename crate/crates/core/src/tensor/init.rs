use rand::{Rng as _, SeedableRng};

use super::Tensor;

/// The crate-wide seeded generator. Callers own it and thread it through
/// every stochastic step so runs are reproducible.
pub type Rng = rand_xoshiro::SplitMix64;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_range_and_determinism() {
        let a = glorot_uniform(&[4, 5], 4, 5, &mut seeded_rng(3));
        let b = glorot_uniform(&[4, 5], 4, 5, &mut seeded_rng(3));
        assert_eq!(a, b);
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }
}
