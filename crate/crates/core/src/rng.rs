//! Seeded random streams.
//!
//! All randomness in a run flows from one root seed. Independent streams are
//! derived by mixing the root with a stream name and optional indices, so the
//! rollout of instance `i` at step `s` draws the same numbers regardless of how
//! the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Rollout,
    Transform,
    Init,
    Eval,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Rollout => "rollout",
            Stream::Transform => "transform",
            Stream::Init => "init",
            Stream::Eval => "eval",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed`, a stream and a path of indices.
pub fn derive_seed(seed: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for b in stream.name().bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x5151)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, path))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
