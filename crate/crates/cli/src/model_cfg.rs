//! Translate config keys into models and relaxation problems.

use twoscale::config::Config;
use twoscale::relax::RelaxationSpec;
use twoscale::{make_benchmark, BenchmarkSpec, TsError, TsResult, TwoScaleModel};

/// Build the benchmark named by `benchmark = ...`, apply family-specific
/// parameter keys, then the model-level `epsilon`, `horizon`, `lambda`.
pub fn model_from_config(cfg: &Config) -> TsResult<(TwoScaleModel, BenchmarkSpec)> {
    let name = cfg.get_str("benchmark")?.to_string();
    let mut spec = BenchmarkSpec::by_name(&name)?;
    match &mut spec {
        BenchmarkSpec::Ou(p) => {
            p.kappa = cfg.get_f64_or("kappa", p.kappa)?;
            p.mean = cfg.get_f64_or("mean", p.mean)?;
            p.rho_bar = cfg.get_f64_or("rho_bar", p.rho_bar)?;
        }
        BenchmarkSpec::LqDeepRelax(p) => {
            p.q = cfg.get_f64_or("q", p.q)?;
            p.gamma = cfg.get_f64_or("gamma", p.gamma)?;
            p.beta = cfg.get_f64_or("beta", p.beta)?;
            p.control_points = cfg.get_usize_or("control_points", p.control_points)?;
        }
        BenchmarkSpec::DriftFree(p) => {
            p.rho_bar = cfg.get_f64_or("rho_bar", p.rho_bar)?;
        }
        BenchmarkSpec::Custom1d(p) => {
            p.f0 = cfg.get_f64_or("f0", p.f0)?;
            p.fx = cfg.get_f64_or("fx", p.fx)?;
            p.fy = cfg.get_f64_or("fy", p.fy)?;
            p.fu = cfg.get_f64_or("fu", p.fu)?;
            p.sigma0 = cfg.get_f64_or("sigma0", p.sigma0)?;
            p.bx = cfg.get_f64_or("bx", p.bx)?;
            p.kappa = cfg.get_f64_or("kappa", p.kappa)?;
            p.mean = cfg.get_f64_or("mean", p.mean)?;
            p.rho_bar = cfg.get_f64_or("rho_bar", p.rho_bar)?;
            p.ell0 = cfg.get_f64_or("ell0", p.ell0)?;
            p.ellx = cfg.get_f64_or("ellx", p.ellx)?;
            p.elly = cfg.get_f64_or("elly", p.elly)?;
            p.ellx2 = cfg.get_f64_or("ellx2", p.ellx2)?;
            p.elly2 = cfg.get_f64_or("elly2", p.elly2)?;
            p.ellu2 = cfg.get_f64_or("ellu2", p.ellu2)?;
            p.g0 = cfg.get_f64_or("g0", p.g0)?;
            p.gx = cfg.get_f64_or("gx", p.gx)?;
            p.gy = cfg.get_f64_or("gy", p.gy)?;
            p.gx2 = cfg.get_f64_or("gx2", p.gx2)?;
            p.gy2 = cfg.get_f64_or("gy2", p.gy2)?;
            p.u_lo = cfg.get_f64_or("u_lo", p.u_lo)?;
            p.u_hi = cfg.get_f64_or("u_hi", p.u_hi)?;
            p.control_points = cfg.get_usize_or("control_points", p.control_points)?;
        }
    }
    let mut model = make_benchmark(&spec)?;
    if cfg.contains("epsilon") {
        model = model.with_epsilon(cfg.get_f64("epsilon")?)?;
    }
    if cfg.contains("horizon") {
        model = model.with_horizon(cfg.get_f64("horizon")?)?;
    }
    if cfg.contains("lambda") {
        model = model.with_lambda(cfg.get_f64("lambda")?)?;
    }
    Ok((model, spec))
}

/// Build a relaxation problem from `loss = quadratic | double_well` plus
/// `gamma`, `beta` (and `q` for the quadratic loss).
pub fn relaxation_from_config(cfg: &Config) -> TsResult<RelaxationSpec> {
    let gamma = cfg.get_f64("gamma")?;
    let beta = cfg.get_f64("beta")?;
    match cfg.get_str("loss")? {
        "quadratic" => RelaxationSpec::quadratic(cfg.get_f64("q")?, gamma, beta),
        "double_well" => RelaxationSpec::double_well(gamma, beta),
        other => Err(TsError::Config(format!(
            "invalid value `{other}` for key `loss` (expected quadratic or double_well)"
        ))),
    }
}

/// Nominal squared fast-noise scale of a benchmark, used for default
/// censoring horizons.
pub fn rho_bar_of(spec: &BenchmarkSpec) -> f64 {
    match spec {
        BenchmarkSpec::Ou(p) => p.rho_bar,
        BenchmarkSpec::DriftFree(p) => p.rho_bar,
        BenchmarkSpec::Custom1d(p) => p.rho_bar,
        BenchmarkSpec::LqDeepRelax(p) => 1.0 / p.beta,
    }
}

/// Closed-form stationary mean and variance of the fast state with the slow
/// state frozen at `x0`, for the families where it is known.
pub fn stationary_reference(spec: &BenchmarkSpec, x0: &[f64]) -> Option<(f64, f64)> {
    match spec {
        BenchmarkSpec::Ou(p) => Some((p.mean, p.rho_bar / p.kappa)),
        BenchmarkSpec::LqDeepRelax(p) => {
            let a = p.q + 1.0 / p.gamma;
            Some((x0[0] / (p.gamma * a), 1.0 / (p.beta * a)))
        }
        BenchmarkSpec::Custom1d(p) if p.kappa > 0.0 => {
            Some((p.mean + p.bx * x0[0] / p.kappa, p.rho_bar / p.kappa))
        }
        _ => None,
    }
}
