//! Variance estimation, weighted-bootstrap intervals, AICc selection and
//! the average relative error.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{fit, fit_weighted, EtaMode, FitReport, FitSpec, Problem};
use crate::optim::{OptimizerConfig, SearchSpace, WarmStart};
use crate::rng::{self, streams};
use crate::spline::SplineConfig;

/// Relative finite-difference step for the Hessian.
pub const HESSIAN_REL_STEP: f64 = 1e-4;
/// Eigenvalues below this fraction of the largest are floored before inversion.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInformation {
    /// Labels of the estimated (unpinned) coordinates, in matrix order.
    pub labels: Vec<String>,
    /// Indices of those coordinates within the fit's search vector.
    pub coords: Vec<usize>,
    /// Hessian of the per-observation objective at the estimate.
    pub hessian: DMatrix<f64>,
    /// Covariance estimate; the diagonal holds squared standard errors.
    pub covariance: DMatrix<f64>,
    pub condition_estimate: f64,
    pub sigma2_hat: f64,
    /// Eigenvalue flooring changed the spectrum.
    pub floored: bool,
    /// A clearly negative eigenvalue: the point is not an interior minimum.
    pub indefinite: bool,
}

impl PseudoInformation {
    pub fn variances(&self) -> Vec<f64> {
        (0..self.covariance.nrows()).map(|i| self.covariance[(i, i)]).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.variances().into_iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn variance_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.covariance[(i, i)])
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate `steps`.
pub fn hessian_central<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let f0 = f(x);
    let mut h = DMatrix::zeros(k, k);
    let mut p = x.to_vec();
    let at = |p: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, d) in moves {
            p[i] += d;
        }
        let v = f(p);
        for &(i, d) in moves {
            p[i] -= d;
        }
        v
    };
    for i in 0..k {
        let si = steps[i];
        let fp = at(&mut p, &[(i, si)]);
        let fm = at(&mut p, &[(i, -si)]);
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (si * si);
        for j in 0..i {
            let sj = steps[j];
            let fpp = at(&mut p, &[(i, si), (j, sj)]);
            let fpm = at(&mut p, &[(i, si), (j, -sj)]);
            let fmp = at(&mut p, &[(i, -si), (j, sj)]);
            let fmm = at(&mut p, &[(i, -si), (j, -sj)]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * si * sj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Observed pseudo-information at `theta_hat` (full search vector).
///
/// The objective is differenced as `RSS / (n K_obs)`; the covariance is
/// `2 sigma2_hat (n K_obs H)^-1` with `sigma2_hat = RSS / (n K_obs - k)`.
/// Conditioning and eigenvalue flooring refer to the Hessian in relative
/// coordinates, `diag|theta| H diag|theta|`.
pub fn pseudo_information(spec: &FitSpec, theta_hat: &[f64]) -> Result<PseudoInformation> {
    let problem = Problem::new(spec)?;
    if theta_hat.len() != spec.dim() {
        return Err(Error::invalid("estimate dimension does not match the fitted model"));
    }
    let coords = spec.space.free_indices();
    let k = coords.len();
    let n_values = spec.dataset.n_values() as f64;
    let rss = problem.objective(theta_hat, None);
    if rss >= crate::estimate::DIVERGENCE_PENALTY {
        return Err(Error::numerical("objective is penalized at the estimate"));
    }
    let sigma2_hat = rss / (n_values - k as f64);
    let all_labels = spec.param_labels();
    let labels = coords.iter().map(|&i| all_labels[i].clone()).collect();

    let x0: Vec<f64> = coords.iter().map(|&i| theta_hat[i]).collect();
    let steps: Vec<f64> = x0.iter().map(|v| HESSIAN_REL_STEP * v.abs().max(1e-8)).collect();
    let mean_objective = |x: &[f64]| {
        let mut theta = theta_hat.to_vec();
        for (c, &i) in coords.iter().enumerate() {
            theta[i] = x[c];
        }
        problem.objective(&theta, None) / n_values
    };
    let hessian = hessian_central(&mean_objective, &x0, &steps);
    // Floor and invert in relative coordinates so that parameters of very
    // different magnitude do not swamp each other's spectrum.
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, x0.iter().map(|v| v.abs().max(1e-8))));
    let inv = floored_inverse(&(&d * &hessian * &d))?;
    let covariance = &d * inv.inverse * &d * (2.0 * sigma2_hat / n_values);
    Ok(PseudoInformation {
        labels,
        coords,
        hessian,
        covariance,
        condition_estimate: inv.condition,
        sigma2_hat,
        floored: inv.floored,
        indefinite: inv.indefinite,
    })
}

struct FlooredInverse {
    inverse: DMatrix<f64>,
    condition: f64,
    floored: bool,
    indefinite: bool,
}

fn floored_inverse(h: &DMatrix<f64>) -> Result<FlooredInverse> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("Hessian has non-finite entries"));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::numerical("Hessian has no positive curvature"));
    }
    let floor = EIGEN_FLOOR * max;
    let mut floored = false;
    let mut indefinite = false;
    let mut min_used = f64::INFINITY;
    let vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l < -floor {
                indefinite = true;
            }
            let v = if l < floor {
                floored = true;
                floor
            } else {
                l
            };
            min_used = min_used.min(v);
            v
        })
        .collect();
    let q = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|l| 1.0 / l)));
    let inverse = q * d * q.transpose();
    Ok(FlooredInverse {
        inverse,
        condition: max / min_used,
        floored,
        indefinite,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    /// Fraction of the cold-start generation budget given to each replicate.
    pub budget_fraction: f64,
    /// Warm-start spread as a fraction of each internal coordinate range.
    pub spread: f64,
    /// Every weight equal to one; replicates then reproduce the base fit.
    pub force_unit_weights: bool,
    /// Largest tolerated share of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            budget_fraction: 0.25,
            spread: 0.05,
            force_unit_weights: false,
            max_failure_rate: 0.2,
        }
    }
}

pub const MIN_BOOTSTRAP: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub labels: Vec<String>,
    /// Successful replicates, one row of search coordinates each.
    pub replicates: Vec<Vec<f64>>,
    /// 2.5% / 97.5% quantiles per coordinate.
    pub intervals: Vec<(f64, f64)>,
    /// Pointwise 2.5% / 97.5% quantiles of the replicate `eta` curves.
    pub eta_band: Vec<(f64, f64, f64)>,
    pub requested: usize,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn b(&self) -> usize {
        self.replicates.len()
    }

    /// Equal-tailed percentile interval at `level`, per coordinate.
    pub fn interval_at(&self, level: f64) -> Vec<(f64, f64)> {
        let a = (1.0 - level) / 2.0;
        (0..self.labels.len())
            .map(|j| {
                let mut col: Vec<f64> = self.replicates.iter().map(|r| r[j]).collect();
                col.sort_by(f64::total_cmp);
                (quantile_sorted(&col, a), quantile_sorted(&col, 1.0 - a))
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Exponential(1) weights for replicate `b`.
pub fn bootstrap_weights(seed: u64, b: usize, n: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, streams::BOOTSTRAP_WEIGHTS + b as u64);
    (0..n).map(|_| Exp1.sample(&mut rng)).collect()
}

/// Weighted bootstrap around `base`, the search vector of the unweighted fit of `spec`.
pub fn weighted_bootstrap(
    spec: &FitSpec,
    base: &[f64],
    b: usize,
    seed: u64,
    options: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {b}")));
    }
    if !(options.budget_fraction > 0.0 && options.budget_fraction <= 1.0) {
        return Err(Error::invalid("bootstrap budget fraction must be in (0, 1]"));
    }
    spec.validate()?;
    if base.len() != spec.dim() || base.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("base estimate does not match the fitted model"));
    }
    let center = base.to_vec();
    let cold = spec.optimizer.max_generations;
    let optimizer_for = |r: usize| OptimizerConfig {
        max_generations: ((cold as f64 * options.budget_fraction).ceil() as usize).max(1),
        seed: rng::derive_seed(seed, streams::BOOTSTRAP_OPTIMIZER + r as u64),
        warm_start: Some(WarmStart {
            center: center.clone(),
            spread: options.spread,
        }),
        parallel: false,
        ..spec.optimizer.clone()
    };
    let n = spec.dataset.len();
    let outcomes: Vec<Option<FitReport>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let weights = if options.force_unit_weights {
                vec![1.0; n]
            } else {
                bootstrap_weights(seed, r, n)
            };
            let rep_spec = FitSpec {
                optimizer: optimizer_for(r),
                ..spec.clone()
            };
            match fit_weighted(&rep_spec, Some(&weights)) {
                Ok(rep) if !rep.diagnostics.penalized => Some(rep),
                _ => None,
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures as f64 > options.max_failure_rate * b as f64 {
        return Err(Error::numerical(format!("{failures} of {b} bootstrap replicates failed")));
    }
    let reps: Vec<FitReport> = outcomes.into_iter().flatten().collect();
    let replicates: Vec<Vec<f64>> = reps.iter().map(|r| r.theta()).collect();
    let mut result = BootstrapResult {
        labels: spec.param_labels(),
        replicates,
        intervals: Vec::new(),
        eta_band: Vec::new(),
        requested: b,
        failures,
    };
    result.intervals = result.interval_at(0.95);
    if let Some(first) = reps.first() {
        result.eta_band = (0..first.eta_curve.len())
            .map(|i| {
                let mut col: Vec<f64> = reps.iter().map(|r| r.eta_curve[i].1).collect();
                col.sort_by(f64::total_cmp);
                (first.eta_curve[i].0, quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975))
            })
            .collect();
    }
    Ok(result)
}

/// Small-sample corrected AIC, `n ln(rss/n) + 2nk/(n-k-1)`.
pub fn aicc(rss: f64, n: usize, k: usize) -> Result<f64> {
    if !(rss > 0.0 && rss.is_finite()) {
        return Err(Error::invalid(format!("AICc needs a positive finite RSS, got {rss}")));
    }
    if n <= k + 1 {
        return Err(Error::invalid(format!("AICc needs n > k + 1, got n = {n}, k = {k}")));
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(nf * (rss / nf).ln() + 2.0 * nf * kf / (nf - kf - 1.0))
}

pub fn aic(rss: f64, n: usize, k: usize) -> f64 {
    let nf = n as f64;
    nf * (rss / nf).ln() + 2.0 * k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub order: usize,
    /// Interior knots.
    pub knots: usize,
    pub k: usize,
    pub rss: Option<f64>,
    pub aicc: Option<f64>,
}

/// Fit every `(order, knots)` spline and rank by AICc; failed fits sort last
/// with no value. `template` supplies the data, `beta` box and the bounds
/// applied to every spline coefficient.
pub fn select_spline(template: &FitSpec, orders: &[usize], knots: &[usize]) -> Result<Vec<SelectionRow>> {
    let (base_cfg, centered) = match &template.eta_mode {
        EtaMode::Spline(c) => (c.clone(), false),
        EtaMode::CenteredSpline(c) => (c.clone(), true),
        _ => return Err(Error::invalid("spline selection needs a spline template")),
    };
    if orders.is_empty() || knots.is_empty() {
        return Err(Error::invalid("spline selection needs at least one order and one knot count"));
    }
    let nb = template.free.len();
    let (alo, ahi, ascale) = (
        template.space.lower()[nb],
        template.space.upper()[nb],
        template.space.scale()[nb],
    );
    let mut jobs = Vec::new();
    for &order in orders {
        for &q in knots {
            jobs.push((order, q));
        }
    }
    let mut rows: Vec<SelectionRow> = jobs
        .into_par_iter()
        .map(|(order, q)| {
            let attempt = || -> Result<(usize, f64)> {
                let cfg = SplineConfig {
                    order,
                    interior_knots: q,
                    ..base_cfg.clone()
                };
                cfg.validate()?;
                let mut lower = template.space.lower()[..nb].to_vec();
                let mut upper = template.space.upper()[..nb].to_vec();
                let mut scale = template.space.scale()[..nb].to_vec();
                for _ in 0..cfg.n_basis() {
                    lower.push(alo);
                    upper.push(ahi);
                    scale.push(ascale);
                }
                let spec = FitSpec {
                    eta_mode: if centered { EtaMode::CenteredSpline(cfg) } else { EtaMode::Spline(cfg) },
                    space: SearchSpace::new(lower, upper, scale)?,
                    ..template.clone()
                };
                let report = fit(&spec)?;
                if report.diagnostics.penalized {
                    return Err(Error::numerical("fit diverged"));
                }
                Ok((report.k, report.rss))
            };
            let k_guess = nb + q + order;
            match attempt() {
                Ok((k, rss)) => SelectionRow {
                    order,
                    knots: q,
                    k,
                    rss: Some(rss),
                    aicc: aicc(rss, template.dataset.n_values(), k).ok(),
                },
                Err(_) => SelectionRow {
                    order,
                    knots: q,
                    k: k_guess,
                    rss: None,
                    aicc: None,
                },
            }
        })
        .collect();
    rank_rows(&mut rows);
    Ok(rows)
}

pub fn rank_rows(rows: &mut [SelectionRow]) {
    rows.sort_by(|a, b| match (a.aicc, b.aicc) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => (a.order, a.knots).cmp(&(b.order, b.knots)),
    });
}

/// Average relative error in percent, per component.
pub fn are(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::invalid("ARE needs at least one estimate"));
    }
    if truth.iter().any(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::invalid("ARE needs nonzero finite truth values"));
    }
    if estimates.iter().any(|e| e.len() != truth.len()) {
        return Err(Error::invalid("every estimate must match the truth dimension"));
    }
    let m = estimates.len() as f64;
    Ok((0..truth.len())
        .map(|j| estimates.iter().map(|e| ((e[j] - truth[j]) / truth[j]).abs()).sum::<f64>() / m * 100.0)
        .collect())
}
