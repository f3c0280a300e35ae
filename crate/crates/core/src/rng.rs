//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha20 (`rand_chacha`). A
//! master seed is expanded into the 256-bit key with `seed_from_u64`, and
//! independent streams are selected with the 64-bit stream id:
//!
//! ```text
//! stream = replication * 256 + purpose
//! ```
//!
//! Replication 0 is used by single-shot operations (the CLI `simulate`
//! command, direct library calls). Studies assign replication ids
//! `(rung << 32) | replication + 1` so no study stream collides with a
//! single-shot one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub const GENERATOR_NAME: &str = "ChaCha20 (rand_chacha 0.9), stream = replication*256 + purpose";

/// What a stream is used for. The discriminant is the low byte of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Sites = 0,
    Field = 1,
    Noise = 2,
    /// Covariate field `j` uses `Covariate as u64 + j`.
    Covariate = 16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub seed: u64,
    pub replication: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed, replication: 0 }
    }

    pub fn replication(self, replication: u64) -> Self {
        Streams { replication, ..self }
    }

    /// Streams for replication `rep` of rung `rung` in a study.
    pub fn study(seed: u64, rung: usize, rep: usize) -> Self {
        Streams::new(seed).replication(((rung as u64) << 32) | (rep as u64 + 1))
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha20Rng {
        self.rng_offset(purpose, 0)
    }

    pub(crate) fn rng_offset(&self, purpose: Purpose, offset: u64) -> ChaCha20Rng {
        let low = (purpose as u64 + offset) & 0xff;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replication.wrapping_mul(256).wrapping_add(low));
        rng
    }
}

impl From<u64> for Streams {
    fn from(seed: u64) -> Self {
        Streams::new(seed)
    }
}
