use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Tensor;

/// Deterministic generator used for all initialization and shuffling.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` over a tensor of `shape`.
///
/// Fans are the last two axes; a vector uses `(len, 1)`.
pub fn xavier_uniform(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = match shape {
        [] => (1, 1),
        [n] => (*n, 1),
        [.., a, b] => (*a, *b),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape, data).expect("xavier shape")
}
