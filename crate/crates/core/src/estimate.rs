//! Numerical-solution-based nonlinear least squares, with an optional
//! B-spline sieve for a time-varying parameter.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::{Dataset, OdeSystem};
use crate::optim::{self, OptimizerConfig, Scale, SearchSpace};
use crate::solver::{integrate, Grid, Method};
use crate::spline::{centering_offsets, SplineConfig, SplineModel};

/// Objective value for a trajectory that could not be integrated. The
/// fractional part shrinks as the failing step moves later in the grid, so
/// candidates that survive longer rank better.
pub const DIVERGENCE_PENALTY: f64 = 1e12;

/// Number of points in the reported `eta` curve.
pub const ETA_CURVE_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq)]
pub enum EtaMode {
    None,
    Constant,
    Spline(SplineConfig),
    CenteredSpline(SplineConfig),
}

impl EtaMode {
    /// Number of search coordinates describing `eta`.
    pub fn n_coords(&self) -> usize {
        match self {
            EtaMode::None => 0,
            EtaMode::Constant => 1,
            EtaMode::Spline(c) | EtaMode::CenteredSpline(c) => c.n_basis(),
        }
    }

    pub fn spline_config(&self) -> Option<&SplineConfig> {
        match self {
            EtaMode::Spline(c) | EtaMode::CenteredSpline(c) => Some(c),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EtaMode::None => "none".into(),
            EtaMode::Constant => "constant".into(),
            EtaMode::Spline(c) => format!("spline(order={},knots={})", c.order, c.interior_knots),
            EtaMode::CenteredSpline(c) => format!("centered_spline(order={},knots={})", c.order, c.interior_knots),
        }
    }
}

/// A candidate or estimate: free constant parameters, `eta` coordinates
/// (one value for a constant, spline coefficients otherwise) and the
/// parameters held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub fixed: Vec<(String, f64)>,
}

impl ParameterVector {
    /// Concatenated search coordinates `(beta, alpha)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        t.extend_from_slice(&self.alpha);
        t
    }
}

#[derive(Clone)]
pub struct FitSpec {
    pub system: Arc<dyn OdeSystem>,
    pub dataset: Dataset,
    pub eta_mode: EtaMode,
    /// Full constant-parameter vector; entries outside `free` stay fixed.
    pub base_params: Vec<f64>,
    pub free: Vec<usize>,
    pub h: f64,
    pub method: Method,
    /// Box over `(beta_free, eta coordinates)`.
    pub space: SearchSpace,
    pub optimizer: OptimizerConfig,
}

impl std::fmt::Debug for FitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FitSpec")
            .field("system", &self.system.name())
            .field("eta_mode", &self.eta_mode)
            .field("free", &self.free)
            .field("h", &self.h)
            .field("method", &self.method)
            .finish_non_exhaustive()
    }
}

impl FitSpec {
    pub fn dim(&self) -> usize {
        self.free.len() + self.eta_mode.n_coords()
    }

    /// Number of estimated scalars: unpinned coordinates of the search box.
    pub fn k(&self) -> usize {
        self.space.free_indices().len()
    }

    pub fn validate(&self) -> Result<()> {
        let sys = &self.system;
        let (t0, t_end) = sys.interval();
        if !(self.h > 0.0 && self.h <= (t_end - t0) / 4.0) {
            return Err(Error::invalid(format!(
                "solver step h = {} must be positive and at most a quarter of the interval",
                self.h
            )));
        }
        if self.base_params.len() != sys.param_names().len() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                sys.name(),
                sys.param_names().len(),
                self.base_params.len()
            )));
        }
        if self.base_params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("base parameters must be finite"));
        }
        for (pos, &i) in self.free.iter().enumerate() {
            if i >= self.base_params.len() || self.free[..pos].contains(&i) {
                return Err(Error::invalid(format!("invalid or repeated free parameter index {i}")));
            }
        }
        match (&self.eta_mode, sys.uses_eta()) {
            (EtaMode::None, true) => {
                return Err(Error::invalid(format!("{} needs a model for its time-varying parameter", sys.name())))
            }
            (EtaMode::None, false) => {}
            (_, false) => {
                return Err(Error::invalid(format!("{} has no time-varying parameter", sys.name())));
            }
            _ => {}
        }
        if let Some(cfg) = self.eta_mode.spline_config() {
            cfg.validate()?;
            if cfg.t0 > t0 || cfg.t_end < t_end {
                return Err(Error::invalid("spline domain must cover the model interval"));
            }
            let off = self.free.len();
            for j in 0..cfg.n_basis() {
                let (lo, hi) = (self.space.lower()[off + j], self.space.upper()[off + j]);
                if lo < -cfg.coef_bound || hi > cfg.coef_bound {
                    return Err(Error::invalid(format!(
                        "spline coefficient box [{lo}, {hi}] exceeds the bound {}",
                        cfg.coef_bound
                    )));
                }
            }
        }
        if self.space.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "search space has {} coordinates, the fit needs {}",
                self.space.dim(),
                self.dim()
            )));
        }
        self.dataset.validate()?;
        self.dataset.check_within(t0, t_end)?;
        if self.dataset.obs_dim() != sys.obs_dim() {
            return Err(Error::invalid(format!(
                "dataset has {} observed coordinates, {} observes {}",
                self.dataset.obs_dim(),
                sys.name(),
                sys.obs_dim()
            )));
        }
        if self.k() >= self.dataset.n_values() {
            return Err(Error::invalid(format!(
                "{} free scalars cannot be estimated from {} observations",
                self.k(),
                self.dataset.n_values()
            )));
        }
        self.optimizer.validate()
    }

    pub fn param_labels(&self) -> Vec<String> {
        let names = self.system.param_names();
        let mut labels: Vec<String> = self.free.iter().map(|&i| names[i].to_string()).collect();
        match &self.eta_mode {
            EtaMode::None => {}
            EtaMode::Constant => labels.push("eta".into()),
            EtaMode::Spline(c) | EtaMode::CenteredSpline(c) => {
                labels.extend((1..=c.n_basis()).map(|j| format!("alpha_{j}")));
            }
        }
        labels
    }

    /// Split search coordinates into a [`ParameterVector`].
    pub fn parameter_vector(&self, theta: &[f64]) -> ParameterVector {
        let nb = self.free.len();
        let names = self.system.param_names();
        let fixed = (0..self.base_params.len())
            .filter(|i| !self.free.contains(i))
            .map(|i| (names[i].to_string(), self.base_params[i]))
            .collect();
        ParameterVector {
            beta: theta[..nb].to_vec(),
            alpha: theta[nb..].to_vec(),
            fixed,
        }
    }

    /// Full constant-parameter vector with the free entries from `theta`.
    pub fn full_params(&self, theta: &[f64]) -> Vec<f64> {
        let mut p = self.base_params.clone();
        for (k, &i) in self.free.iter().enumerate() {
            p[i] = theta[k];
        }
        p
    }
}

/// A validated spec with the per-evaluation invariants precomputed.
pub struct Problem<'a> {
    spec: &'a FitSpec,
    grid: Grid,
    offsets: Option<Vec<f64>>,
}

impl<'a> Problem<'a> {
    pub fn new(spec: &'a FitSpec) -> Result<Problem<'a>> {
        spec.validate()?;
        let (t0, t_end) = spec.system.interval();
        let grid = Grid::uniform(t0, t_end, spec.h)?;
        let offsets = match &spec.eta_mode {
            EtaMode::CenteredSpline(cfg) => Some(centering_offsets(cfg, &spec.dataset.times)?),
            _ => None,
        };
        Ok(Problem { spec, grid, offsets })
    }

    pub fn spec(&self) -> &FitSpec {
        self.spec
    }

    /// The `eta` function encoded by `theta`, if any.
    pub fn eta_model(&self, theta: &[f64]) -> Result<Option<EtaModel>> {
        let a = &theta[self.spec.free.len()..];
        Ok(match &self.spec.eta_mode {
            EtaMode::None => None,
            EtaMode::Constant => Some(EtaModel::Constant(a[0])),
            EtaMode::Spline(cfg) => Some(EtaModel::Spline(SplineModel::new(cfg.clone(), a.to_vec())?)),
            EtaMode::CenteredSpline(cfg) => Some(EtaModel::Spline(SplineModel::with_offsets(
                cfg.clone(),
                a.to_vec(),
                self.offsets.clone().unwrap_or_default(),
            )?)),
        })
    }

    /// Model predictions on the fitting scale at the dataset times.
    pub fn predictions(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let spec = self.spec;
        if theta.len() != spec.dim() {
            return Err(Error::invalid(format!(
                "candidate has {} coordinates, expected {}",
                theta.len(),
                spec.dim()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("candidate coordinates must be finite"));
        }
        let params = spec.full_params(theta);
        let eta = self.eta_model(theta)?;
        let f = |t: f64| eta.as_ref().map_or(0.0, |e| e.eval(t));
        let eta_fn: Option<&(dyn Fn(f64) -> f64 + Sync)> = if eta.is_some() { Some(&f) } else { None };
        let sol = integrate(spec.system.as_ref(), &params, eta_fn, &self.grid, spec.method)?;
        let data = &spec.dataset;
        let mut x = vec![0.0; spec.system.dim()];
        let mut out = Vec::with_capacity(data.len());
        for &t in &data.times {
            sol.interpolate_into(t, &mut x)?;
            let mut y = vec![0.0; data.obs_dim()];
            spec.system.observe(&x, &mut y);
            for (j, v) in y.iter_mut().enumerate() {
                if data.log_scale[j] {
                    *v = v.max(f64::MIN_POSITIVE).ln();
                }
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Residual sum of squares, optionally with one weight per time point.
    /// Failed integrations map to the divergence penalty.
    pub fn objective(&self, theta: &[f64], weights: Option<&[f64]>) -> f64 {
        match self.predictions(theta) {
            Ok(pred) => {
                let mut acc = 0.0;
                for (i, (obs, p)) in self.spec.dataset.observations.iter().zip(&pred).enumerate() {
                    let w = weights.map_or(1.0, |w| w[i]);
                    let ss: f64 = obs.iter().zip(p).map(|(y, q)| (y - q) * (y - q)).sum();
                    acc += w * ss;
                }
                if acc.is_finite() {
                    acc
                } else {
                    DIVERGENCE_PENALTY + 1.0
                }
            }
            Err(Error::Diverged { index, len, .. }) => {
                DIVERGENCE_PENALTY + (1.0 - index as f64 / len.max(1) as f64)
            }
            Err(_) => DIVERGENCE_PENALTY + 1.0,
        }
    }
}

/// Evaluated form of the time-varying parameter.
#[derive(Debug, Clone)]
pub enum EtaModel {
    Constant(f64),
    Spline(SplineModel),
}

impl EtaModel {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            EtaModel::Constant(c) => *c,
            EtaModel::Spline(s) => s.eval(t),
        }
    }
}

/// Objective of `spec` at `candidate`.
pub fn nls_objective(spec: &FitSpec, candidate: &ParameterVector) -> Result<f64> {
    if candidate.beta.len() != spec.free.len() || candidate.alpha.len() != spec.eta_mode.n_coords() {
        return Err(Error::invalid("candidate dimensions do not match the fitted model"));
    }
    let problem = Problem::new(spec)?;
    Ok(problem.objective(&candidate.theta(), None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub generations: usize,
    pub evaluations: usize,
    pub stalled: bool,
    /// Best objective is a divergence penalty: no integrable candidate found.
    pub penalized: bool,
    /// Some estimated coordinate sits on its search bound.
    pub at_bound: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub labels: Vec<String>,
    pub theta_hat: ParameterVector,
    /// Full constant-parameter vector at the estimate.
    pub params: Vec<f64>,
    pub rss: f64,
    pub trace: Vec<f64>,
    /// Number of observation times.
    pub n: usize,
    /// Observations per time.
    pub obs_dim: usize,
    pub k: usize,
    pub sigma2_hat: f64,
    pub eta_curve: Vec<(f64, f64)>,
    pub eta_mode: String,
    pub diagnostics: Diagnostics,
}

impl FitReport {
    pub fn theta(&self) -> Vec<f64> {
        self.theta_hat.theta()
    }

    pub fn n_values(&self) -> usize {
        self.n * self.obs_dim
    }

    pub fn estimate(&self, label: &str) -> Option<f64> {
        let theta = self.theta();
        self.labels.iter().position(|l| l == label).map(|i| theta[i])
    }
}

pub fn fit(spec: &FitSpec) -> Result<FitReport> {
    fit_weighted(spec, None)
}

/// Fit minimizing the weighted residual sum of squares; `weights` has one
/// entry per observation time.
pub fn fit_weighted(spec: &FitSpec, weights: Option<&[f64]>) -> Result<FitReport> {
    let problem = Problem::new(spec)?;
    if let Some(w) = weights {
        if w.len() != spec.dataset.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("weights must be finite, nonnegative and one per observation time"));
        }
    }
    let objective = |theta: &[f64]| problem.objective(theta, weights);
    let result = optim::minimize(&objective, &spec.space, &spec.optimizer)?;
    let rss = if weights.is_some() {
        problem.objective(&result.argmin, None)
    } else {
        result.value
    };
    report_from(&problem, result.argmin, rss, result.trace, result.generations, result.evaluations, result.stalled)
}

fn report_from(
    problem: &Problem<'_>,
    theta: Vec<f64>,
    rss: f64,
    trace: Vec<f64>,
    generations: usize,
    evaluations: usize,
    stalled: bool,
) -> Result<FitReport> {
    let spec = problem.spec();
    let k = spec.k();
    let n_values = spec.dataset.n_values();
    let labels = spec.param_labels();
    let space = &spec.space;
    let at_bound = (0..theta.len())
        .filter(|&i| space.lower()[i] < space.upper()[i] && (theta[i] <= space.lower()[i] || theta[i] >= space.upper()[i]))
        .map(|i| labels[i].clone())
        .collect();
    let (t0, t_end) = spec.system.interval();
    let eta_curve = match problem.eta_model(&theta)? {
        None => Vec::new(),
        Some(m) => (0..ETA_CURVE_POINTS)
            .map(|i| {
                let t = t0 + (t_end - t0) * i as f64 / (ETA_CURVE_POINTS - 1) as f64;
                (t, m.eval(t))
            })
            .collect(),
    };
    Ok(FitReport {
        labels,
        params: spec.full_params(&theta),
        theta_hat: spec.parameter_vector(&theta),
        rss,
        trace,
        n: spec.dataset.len(),
        obs_dim: spec.dataset.obs_dim(),
        k,
        sigma2_hat: rss / (n_values - k) as f64,
        eta_curve,
        eta_mode: spec.eta_mode.label(),
        diagnostics: Diagnostics {
            generations,
            evaluations,
            stalled,
            penalized: rss >= DIVERGENCE_PENALTY,
            at_bound,
        },
    })
}

/// One row of a step-size study.
#[derive(Debug, Clone, PartialEq)]
pub struct StepError {
    pub h: f64,
    pub method: Method,
    /// Euclidean norm of the relative errors of the free constant parameters.
    pub error: f64,
    pub beta_hat: Vec<f64>,
}

/// Refit `template` (zero-noise data) at each step size and measure the
/// deviation of the free constant parameters from `beta_truth`.
pub fn bias_vs_step_study(template: &FitSpec, beta_truth: &[f64], steps: &[f64]) -> Result<Vec<StepError>> {
    if steps.len() < 3 {
        return Err(Error::invalid("a step-size study needs at least three step sizes"));
    }
    if beta_truth.len() != template.free.len() || beta_truth.contains(&0.0) {
        return Err(Error::invalid("truth must give one nonzero value per free parameter"));
    }
    steps
        .iter()
        .map(|&h| {
            let spec = FitSpec { h, ..template.clone() };
            let report = fit(&spec)?;
            let error = relative_error_norm(&report.theta_hat.beta, beta_truth);
            Ok(StepError {
                h,
                method: spec.method,
                error,
                beta_hat: report.theta_hat.beta,
            })
        })
        .collect()
}

pub fn relative_error_norm(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| ((e - t) / t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Default bounds for the HIV study's free parameters `(lambda, N, c)`.
pub const HIV_BETA_BOUNDS: [(f64, f64); 3] = [(1.0, 200.0), (100.0, 1e4), (0.1, 20.0)];
/// Default bounds for a constant `eta` and for spline coefficients.
pub const HIV_ETA_BOUNDS: (f64, f64) = (1e-7, 1e-3);

/// Fit of the HIV model with `rho` and `delta` fixed at their true values and
/// `(lambda, N, c)` plus the `eta` coordinates estimated on log-scaled boxes.
/// A centered spline gets a symmetric linear box instead.
pub fn hiv_fit_spec(dataset: Dataset, eta_mode: EtaMode, h: f64, seed: u64) -> Result<FitSpec> {
    use crate::models::{hiv_system, HIV_TRUTH};
    let mut lower: Vec<f64> = HIV_BETA_BOUNDS.iter().map(|b| b.0).collect();
    let mut upper: Vec<f64> = HIV_BETA_BOUNDS.iter().map(|b| b.1).collect();
    let mut scale = vec![Scale::Log; 3];
    let centered = matches!(eta_mode, EtaMode::CenteredSpline(_));
    for _ in 0..eta_mode.n_coords() {
        if centered {
            lower.push(-HIV_ETA_BOUNDS.1);
            upper.push(HIV_ETA_BOUNDS.1);
            scale.push(Scale::Linear);
        } else {
            lower.push(HIV_ETA_BOUNDS.0);
            upper.push(HIV_ETA_BOUNDS.1);
            scale.push(Scale::Log);
        }
    }
    let spec = FitSpec {
        system: Arc::new(hiv_system()),
        dataset,
        eta_mode,
        base_params: HIV_TRUTH.to_vec(),
        free: vec![0, 2, 4],
        h,
        method: Method::Rk4,
        space: SearchSpace::new(lower, upper, scale)?,
        optimizer: OptimizerConfig::with_seed(seed),
    };
    spec.validate()?;
    Ok(spec)
}
