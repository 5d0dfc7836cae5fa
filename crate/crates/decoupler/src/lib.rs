//! Variational compilation of quantum circuits by decoupling.
//!
//! The crate compiles a target unitary into a staged ansatz by first driving a
//! decoupling cost to zero (so the target factors into independent blocks up
//! to outer circuits), then fitting the remaining local pieces by fidelity
//! maximization. It ships:
//!
//! - [`statekit`]: dense states, density operators, unitaries, Haar sampling;
//! - [`circuit`]: a small parameterized gate IR with JSON serialization;
//! - [`cost`]: gate fidelity, Hilbert-Schmidt test costs, and three decoupling
//!   cost estimators (exact, shot-sampled swap test, Haar Monte Carlo);
//! - [`grad`]: parameter-shift gradients (two-term and doubled four-term rules)
//!   and a finite-difference check;
//! - [`optimize`]: ADAM with threshold/patience/budget stopping and tracing;
//! - [`decouple`]: staged compilation plans and experiment drivers;
//! - [`runner`]: config-driven experiment execution, CSV/JSON/SVG artifacts,
//!   and the functions behind the `decoupler` command-line tool.
//!
//! See the `examples/` directory for runnable entry points per capability.

pub mod circuit;
pub mod cost;
pub mod decouple;
pub mod error;
pub mod grad;
pub mod optimize;
pub mod runner;
pub mod statekit;

pub use error::{Error, Result};
