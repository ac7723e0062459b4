//! Numerical toolkit for controlled diffusions with a fast mean-reverting
//! component.
//!
//! The crate revolves around [`TwoScaleModel`]: a slow controlled state
//! coupled to a fast state whose dynamics run at rate `1/eps`.  On top of it
//! sit Monte Carlo simulation ([`sim`]), long-run statistics of the fast
//! subsystem ([`ergodic`]), averaged limit problems ([`homogenize`]), grid
//! solvers for the associated dynamic-programming equations ([`hjb`]), and an
//! application to relaxation-driven optimization ([`relax`]).

pub mod config;
pub mod error;
pub mod ergodic;
pub mod hjb;
pub mod homogenize;
pub mod model;
pub mod quad;
pub mod relax;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{TsError, TsResult};
pub use model::assumptions::{
    validate_assumptions, AssumptionBox, AssumptionReport, Check, Verdict, Witness,
};
pub use model::benchmarks::{
    make_benchmark, BenchmarkSpec, Custom1dParams, DriftFreeParams, LqParams, OuParams,
};
pub use model::{ControlSet, ModelBuilder, ModelScratch, TwoScaleModel};
