//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 keystream keyed by a
//! 64-bit seed. Independent work items (paths, replicas) select disjoint
//! streams of the same key, so results do not depend on scheduling.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha20Rng;

/// Generator for stream `stream` under key `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_vector(rng: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}
