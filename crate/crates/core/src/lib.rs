//! Mirror descent for neural-network quantization.
//!
//! Quantization is posed as constrained optimisation over the convex hull of
//! the quantization levels (`w`-space) or over per-parameter label
//! probabilities (`u`-space). A parametric projection `P_beta` from an
//! unconstrained dual space onto the constraint interior induces a mirror
//! map with `grad Phi = P^{-1}`; mirror descent with that map, while `beta`
//! is annealed upward, drives the iterates toward a discrete solution.
//!
//! Modules:
//! * [`projections`]: tanh, shifted tanh, softmax and sign projections.
//! * [`mirror`]: mirror maps and Bregman divergences.
//! * [`optimizers`]: closed-form and stable MD steps, baselines, schedules.
//! * [`convex_bench`]: convex problems, proximal oracle, convergence bound.
//! * [`nn`]: a small dense network with manual backprop.
//! * [`harness`]: quantized training loops and their CSV/JSON outputs.
//! * [`checks`]: the invariant suites run by `mirrorquant check`.

pub mod checks;
pub mod convex_bench;
pub mod error;
pub mod harness;
pub mod mirror;
pub mod nn;
pub mod optimizers;
pub mod projections;

pub use error::{Error, Result};
pub use mirror::{MirrorKind, MirrorMap};
pub use optimizers::{BetaSchedule, OptimizerState, Space, StepSizeSchedule};
pub use projections::{Projection, ProjectionKind, QuantLevels};
