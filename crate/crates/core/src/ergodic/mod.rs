//! Long-time statistics of the fast subsystem at a frozen slow state:
//! invariant-measure sampling, Gibbs quadrature oracles for gradient-type
//! drifts, total-variation decay profiles, first-exit ensembles with their
//! Laplace functionals and barrier bounds, exact one-dimensional
//! Wasserstein-2 distances, and a directional Lyapunov drift scan.

mod exit;
mod gibbs;
mod lyapunov;
mod measure;
mod tv;
mod wasserstein;

pub use exit::{
    default_censor_horizon, exit_time_ensemble, laplace_exit, reflected_barrier_phi,
    reflected_barrier_residual, ExitTimeEnsemble, LaplaceExit,
};
pub use gibbs::{gibbs_oracle, gibbs_oracle_nodes, GibbsQuery, Potential};
pub use lyapunov::{lyapunov_diagnostic, LyapunovDiagnostic};
pub use measure::{
    relaxation_time_probe, sample_invariant_measure, sample_invariant_measure_chains,
    EmpiricalMeasure, Provenance,
};
pub use tv::{tv_decay_profile, TvPoint, TvProfile};
pub use wasserstein::{wasserstein2_1d, wasserstein_continuity_bound, ContinuityBound};
