//! Downlink power allocation for zero-forcing OFDMA-SDMA systems.
//!
//! The problem: split a power budget over the (subcarrier, user) pairs chosen
//! by the scheduler so as to maximize the weighted sum rate, while real-time
//! users keep a minimum rate. Solvers provided:
//!
//! - [`unconstrained`]: exact power-only solution (corner search and fixed point);
//! - [`boundary`]: feasible point with every rate floor met with equality;
//! - [`heuristic`]: one-shot dual-space heuristic;
//! - [`oracle`]: exact reference solver with KKT certificates.
//!
//! [`scenario`] generates Rayleigh test cases and [`batch`] runs solvers over
//! many instances, in parallel when the `parallel` feature is on.

pub mod batch;
pub mod boundary;
pub mod error;
pub mod heuristic;
pub mod model;
pub mod oracle;
mod report;
pub mod scenario;
pub mod unconstrained;
pub mod waterfill;

pub use error::{Error, Result};
pub use model::{
    check_feasibility, objective, total_power, user_rates, Allocation, FeasibilityReport,
    ProblemInstance, Tolerances, Violation,
};
pub use report::{SolveReport, SolveStatus};
pub use waterfill::DualPoint;
