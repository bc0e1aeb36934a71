//! Value-iteration adaptive dynamic programming for continuous-time linear
//! periodic (CTLP) systems.
//!
//! The crate learns near-optimal periodic state-feedback gains from
//! input/state trajectory data, and ships a model-based periodic Riccati
//! solver used as the reference oracle.
//!
//! Module map:
//!
//! - [`vectorize`]: `vec`, `vecs` and the quadratic-form vector `ṽ`.
//! - [`fourier`]: truncated Fourier basis, quadrature coefficients and
//!   least-squares fitting.
//! - [`periodic_system`]: plant and cost descriptions, RK4 simulation,
//!   monodromy matrices and characteristic multipliers.
//! - [`pre_solver`]: backward periodic Riccati integration and the steady
//!   periodic solution.
//! - [`data_collection`]: exploration input, trajectory logging with state
//!   resets, and the data matrices `Θ`, `Γ`.
//! - [`vi_adp`]: the data-driven backward flow, gain reconstruction and the
//!   end-to-end learning pipeline.
//! - [`bench`]: triple inverted pendulum benchmark, baselines, cost
//!   evaluation and the trial runner behind the CLI.

pub mod bench;
pub mod data_collection;
pub mod error;
pub mod fourier;
pub mod io;
pub mod ode;
pub mod periodic_system;
pub mod pre_solver;
pub mod vectorize;
pub mod vi_adp;

pub use error::{Error, Result, Stage};
