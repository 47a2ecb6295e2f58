//! Independent reference implementations and synthetic data used by the
//! attriq test suites. Nothing here shares code with the engine's own
//! arithmetic.

pub mod backend;
pub mod exact;
pub mod rank;
pub mod stats;
pub mod synth;

pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

/// Deterministic generator for a test case.
pub fn rng(seed: u64) -> Rng {
    rand::SeedableRng::seed_from_u64(seed)
}
