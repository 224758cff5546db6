//! Seeds and derived random streams.
//!
//! Every sampling routine takes its randomness from a [`RngSeed`]. Independent
//! streams (per iteration, per worker, per trajectory) are derived with a
//! splitmix64 mix so that results never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used by all samplers.
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

/// One round of splitmix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Seed of the `index`-th child stream.
    pub fn derive(self, index: u64) -> RngSeed {
        RngSeed(splitmix64(self.0 ^ splitmix64(index)))
    }

    /// Child stream addressed by a path of indices, e.g. `[iter, STREAM_ACTOR, i]`.
    pub fn derive_path(self, path: &[u64]) -> RngSeed {
        path.iter().fold(self, |s, &i| s.derive(i))
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// Draws an index from a probability vector by inverse-CDF.
///
/// The last index with positive mass absorbs any round-off in the tail.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Same as [`sample_categorical`] over a sparse `(index, prob)` row.
pub fn sample_sparse<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in row {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.last().map(|&(i, _)| i).unwrap_or(0)
}
