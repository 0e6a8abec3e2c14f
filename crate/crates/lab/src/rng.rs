//! Counter-based per-path random streams: path `p` of a run with seed `s`
//! always sees the same numbers, whatever the batching or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Branch index drawn by inverting the cumulative probabilities.
pub fn choose_branch(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
