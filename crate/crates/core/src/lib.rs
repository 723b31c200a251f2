//! Energy-aware CPU/GPU operator partitioning on a simulated mobile SoC.
//!
//! The pieces, bottom up: [`model`] describes workloads and devices, [`hwsim`]
//! is the analytic ground truth, [`profiler`] learns a cost model from it,
//! [`partitioner`] plans per-operator splits under a latency budget, and
//! [`runtime`] closes the loop with mid-frame replanning. [`bench`] drives
//! experiments for the `opsplit` binary.

pub mod bench;
pub mod error;
pub mod hwsim;
pub mod model;
pub mod partitioner;
pub mod profiler;
pub mod runtime;

pub use error::{Error, Result};
