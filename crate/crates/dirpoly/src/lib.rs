//! Numerical laboratory for two-dimensional directed polymers at sub-critical
//! coupling: exact random-walk kernels, reproducible disorder environments,
//! the partition-function field and its test-function pairings, exact
//! polynomial-chaos evaluators with their dominated / block / record-time
//! decompositions, second-moment dynamic programs, a second-moment CLT
//! criterion checker, and sample statistics against Gaussian targets.

pub mod chaos_exact;
pub mod cli;
pub mod clt_criterion;
pub mod disorder;
mod error;
pub mod grid;
pub mod plot;
pub mod polymer_sim;
pub mod quad;
pub mod stats;
pub mod testfn;
pub mod walk_kernels;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
