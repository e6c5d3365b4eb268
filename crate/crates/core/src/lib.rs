//! Learned dispatch prediction for security-constrained DC optimal power flow.
//!
//! The crate is organized around the predict-and-reconstruct workflow:
//!
//! - [`grid_model`] parses case files and builds per-contingency admittance
//!   and line-flow matrices.
//! - [`scopf`] assembles the preventive N-1 DC-OPF quadratic program.
//! - [`solver`] is a dense primal-dual interior-point method used as the
//!   reference oracle and as the LP engine for feasibility projection.
//! - [`dataset`] samples loads, labels them with the oracle and normalizes.
//! - [`mlp`] is the feed-forward network with the flow-penalty loss.
//! - [`pipeline`] predicts generations, reconstructs angles, checks and
//!   projects. It also hosts the nearest-neighbor baseline.
//! - [`analysis`] evaluates the capacity bound and operation counts.
//! - [`cli`] implements the commands behind the `scopf` binary and the
//!   benchmark report.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod analysis;
pub mod cli;
pub mod dataset;
mod error;
pub mod grid_model;
pub mod mlp;
pub mod pipeline;
pub mod scopf;
pub mod solver;

pub use error::{Error, Result};
