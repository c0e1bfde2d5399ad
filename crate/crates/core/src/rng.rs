//! Seeded, splittable random streams.
//!
//! Every random draw in the crate is keyed by a `(seed, index)` pair. The
//! index selects an independent ChaCha stream, so a batch of draws gives the
//! same values no matter how it is partitioned across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Lower clamp applied to uniform draws before taking logarithms.
pub const UNIFORM_FLOOR: f64 = 1e-20;
/// Upper clamp. `1 − 1e-20` rounds to one in double precision, so the
/// largest double below one is used instead.
pub const UNIFORM_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// Generator for stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Child seed for sub-task `index`, for APIs that take a single seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw clamped into `[UNIFORM_FLOOR, UNIFORM_CEIL]`.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>().clamp(UNIFORM_FLOOR, UNIFORM_CEIL)
}

/// Standard Gumbel draw `−log(−log U)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-open_uniform(rng).ln()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 3), |r, _| Some(r.gen())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 3), |r, _| Some(r.gen())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(stream(7, 4), |r, _| Some(r.gen())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 0));
    }

    #[test]
    fn gumbel_is_finite_at_the_clamps() {
        let ceil = std::hint::black_box(UNIFORM_CEIL);
        assert!(ceil < 1.0);
        assert!((-(-UNIFORM_FLOOR.ln()).ln()).is_finite());
        assert!((-(-ceil.ln()).ln()).is_finite());
    }
}
