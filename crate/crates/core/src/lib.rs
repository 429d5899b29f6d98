//! Feedback-driven classical spin dynamics for Ising ground-state search.
//!
//! Every spin is a Bloch vector in the X-Z plane that rotates about Y with an
//! amplitude chosen so the mean-field energy never increases. The crate also
//! carries exact statevector baselines (linear annealing and two feedback
//! schemes), brute-force oracles, and the experiment drivers behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cacao;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod qsim;

pub use cacao::{CacaoConfig, Scheme, SpinState, StopRule, Trajectory};
pub use error::{Error, Result};
pub use model::{ClauseInstance, IsingModel, SpinConfig};
pub use qsim::{ControlTrace, DriverSpec, QuantumConfig, StateVector};
