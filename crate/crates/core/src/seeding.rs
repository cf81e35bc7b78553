//! Deterministic random streams derived from one master seed.
//!
//! Every consumer gets its own ChaCha8 stream: the generator is seeded with
//! the master seed and the 64-bit stream id is `(domain << 32) | index`.
//! Streams never overlap, so results do not depend on evaluation order or
//! on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    /// Interior way-point scatter during preconditioning (index = attempt batch).
    Precondition = 1,
    /// Campaign target sampling (index = 0).
    Targets = 2,
    /// Per-target pipeline seed (index = target).
    Pipeline = 3,
    /// Parameter draws for one flight (index = flight id).
    Flight = 4,
    /// Measurement noise (index = 0).
    Noise = 5,
}

pub fn stream(master: u64, domain: Domain, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << 32) | index as u64);
    rng
}

/// Child seed for a nested computation (e.g. one pipeline per target).
pub fn child_seed(master: u64, domain: Domain, index: u32) -> u64 {
    use rand::RngCore;
    stream(master, domain, index).next_u64()
}
