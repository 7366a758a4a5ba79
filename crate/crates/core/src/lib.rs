//! Parameter identification for the one-RC Thevenin battery model.
//!
//! All nine model parameters (OCV polynomial, SoC-dependent ohmic
//! resistance, RC pair) are estimated in one run from a single
//! constant-current discharge using trust-region nonlinear least squares,
//! either box-constrained or ridge-regularized.
//!
//! Module map:
//!
//! * [`model`]: the circuit model, closed-form and ZOH simulation;
//! * [`identifiability`]: sensitivity matrix, rank test, Cramér–Rao and
//!   ridge accuracy;
//! * [`solver`]: the trust-region engine;
//! * [`workflow`]: datasets, problem assembly, estimators, validation;
//! * [`montecarlo`]: synthetic studies and NRMSE statistics;
//! * [`profiles`]: synthetic drive-cycle and intermittent-discharge profiles;
//! * [`io`], [`config`], [`cli`]: file formats and the command-line front end.
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability.

pub mod cli;
pub mod config;
pub mod error;
pub mod identifiability;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod profiles;
pub mod solver;
pub mod workflow;

pub use error::{Error, ErrorClass, Result};
pub use model::{CellConstants, CurrentProfile, SimState, TheveninParams, N_PARAMS, PARAM_NAMES};
pub use solver::{BoxConstraint, SolveReport, TerminationReason, TrustRegionConfig};
pub use workflow::{DischargeDataset, Method, PriorSpec};
