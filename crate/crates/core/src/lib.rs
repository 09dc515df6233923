//! Compile 3-SAT instances to QUBO, anneal them and analyse their spectra.
//!
//! The pipeline is [`cnf`] → [`transforms`] → [`qubo`] → [`annealer`], with
//! [`spectrum`] for exhaustive analysis of small instances and [`harness`]
//! for experiment sweeps.

pub mod annealer;
pub mod cnf;
pub mod harness;
pub mod par;
pub mod patternsearch;
pub mod qubo;
pub mod spectrum;
pub mod transforms;

pub use annealer::{anneal, auto_schedule, AnnealOptions, Schedule, ScheduleParams};
pub use cnf::{Assignment, Clause, Formula, Literal};
pub use par::Exec;
pub use qubo::{Qubo, QuboBuilder};
pub use spectrum::{full_spectrum, Spectrum};
pub use transforms::{transform, TransformKind, TransformResult};

/// Derives an independent 64-bit seed from a base seed and a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
