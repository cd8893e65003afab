//! Seed bookkeeping.
//!
//! A run owns one master seed; every consumer (environment resets, network
//! initialization, batch sampling, exploration noise, evaluation episodes)
//! draws from its own ChaCha stream derived from that seed. Streams keep the
//! consumers independent: adding an evaluation episode never perturbs the
//! training sample sequence, which is what makes fixed-seed metrics
//! bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream identifiers, one per RNG consumer inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Environment dynamics and reset noise during training rollouts.
    Env = 1,
    /// Network parameter initialization.
    Init = 2,
    /// Replay/batch sampling indices.
    Sample = 3,
    /// Latent sampling noise and policy exploration noise.
    Noise = 4,
    /// Evaluation episodes (kept apart so evaluation cadence cannot
    /// influence training).
    Eval = 5,
    /// Marginal-set label shuffles inside MI estimation.
    Shuffle = 6,
    /// One-off data collection (expert demos, prior sets).
    Collect = 7,
}

/// ChaCha generator for `seed`, positioned on the given stream.
pub fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Derives a child seed (for nested runs such as matrix cells) without
/// correlating the parent and child streams.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 step; full-period mix keeps nearby indices uncorrelated.
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_independent() {
        let mut env = stream(7, Stream::Env);
        let mut eval = stream(7, Stream::Eval);
        let xs: Vec<u64> = (0..8).map(|_| env.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| eval.next_u64()).collect();
        assert_ne!(xs, ys);
        // Re-deriving the same stream reproduces it exactly.
        let mut env2 = stream(7, Stream::Env);
        let xs2: Vec<u64> = (0..8).map(|_| env2.next_u64()).collect();
        assert_eq!(xs, xs2);
    }

    #[test]
    fn child_seeds_differ() {
        let s0 = child_seed(42, 0);
        let s1 = child_seed(42, 1);
        assert_ne!(s0, s1);
        assert_eq!(s0, child_seed(42, 0));
    }
}
