//! Clamped normalized B-spline bases for the sieve approximation
//! `eta(t) = pi(t)^T alpha`.
//!
//! Interior knots are equally spaced on either the linear time scale or on
//! `log(t + 1)`. With `q` interior knots and order `o` (degree `o - 1`) the
//! basis has `q + o` functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest supported order (degree 7).
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotScale {
    Linear,
    /// Equal spacing in `log(t + 1)`.
    LogShifted,
}

impl KnotScale {
    pub fn parse(s: &str) -> Result<KnotScale> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(KnotScale::Linear),
            "log_shifted" | "log" => Ok(KnotScale::LogShifted),
            other => Err(Error::invalid(format!("unknown knot scale '{other}' (linear|log_shifted)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KnotScale::Linear => "linear",
            KnotScale::LogShifted => "log_shifted",
        }
    }

    #[inline]
    fn map(self, t: f64) -> f64 {
        match self {
            KnotScale::Linear => t,
            KnotScale::LogShifted => (t + 1.0).ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineConfig {
    pub t0: f64,
    pub t_end: f64,
    pub interior_knots: usize,
    pub order: usize,
    pub scale: KnotScale,
    /// Box bound `|alpha_i| <= coef_bound` applied by the estimator.
    pub coef_bound: f64,
}

impl SplineConfig {
    pub fn new(t0: f64, t_end: f64, interior_knots: usize, order: usize) -> Result<SplineConfig> {
        let cfg = SplineConfig {
            t0,
            t_end,
            interior_knots,
            order,
            scale: KnotScale::Linear,
            coef_bound: 1e6,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scale(mut self, scale: KnotScale) -> Result<SplineConfig> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t0 < self.t_end) {
            return Err(Error::invalid(format!(
                "spline domain must satisfy t0 < t_end, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(2..=MAX_ORDER).contains(&self.order) {
            return Err(Error::invalid(format!(
                "spline order must be in 2..={MAX_ORDER}, got {}",
                self.order
            )));
        }
        if self.scale == KnotScale::LogShifted && self.t0 <= -1.0 {
            return Err(Error::invalid("log_shifted knots need t0 > -1"));
        }
        if !(self.coef_bound > 0.0) {
            return Err(Error::invalid("spline coefficient bound must be positive"));
        }
        Ok(())
    }

    /// Number of basis functions.
    pub fn n_basis(&self) -> usize {
        self.interior_knots + self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    /// Full clamped knot vector on the transformed scale.
    pub fn knots(&self) -> Vec<f64> {
        let (a, b) = (self.scale.map(self.t0), self.scale.map(self.t_end));
        let q = self.interior_knots;
        let mut knots = Vec::with_capacity(q + 2 * self.order);
        knots.extend(std::iter::repeat_n(a, self.order));
        knots.extend((1..=q).map(|i| a + (b - a) * i as f64 / (q + 1) as f64));
        knots.extend(std::iter::repeat_n(b, self.order));
        knots
    }

    /// Interior knot locations in model time.
    pub fn interior_knot_times(&self) -> Vec<f64> {
        let k = self.knots();
        k[self.order..self.order + self.interior_knots]
            .iter()
            .map(|&u| match self.scale {
                KnotScale::Linear => u,
                KnotScale::LogShifted => u.exp() - 1.0,
            })
            .collect()
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t >= self.t0 && t <= self.t_end {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                what: "spline time",
                value: t,
                lo: self.t0,
                hi: self.t_end,
            })
        }
    }
}

/// Compact view of the nonzero basis functions at one point.
struct LocalBasis {
    first: usize,
    values: [f64; MAX_ORDER],
}

/// Knot vector plus evaluation scratch; evaluation is allocation-free.
#[derive(Debug, Clone)]
struct Basis {
    knots: Vec<f64>,
    order: usize,
    n: usize,
    scale: KnotScale,
}

impl Basis {
    fn new(cfg: &SplineConfig) -> Basis {
        Basis {
            knots: cfg.knots(),
            order: cfg.order,
            n: cfg.n_basis(),
            scale: cfg.scale,
        }
    }

    /// Cox-de Boor in triangular form, for `t` already inside the domain.
    #[inline]
    fn local(&self, t: f64) -> LocalBasis {
        let u = self.scale.map(t);
        let p = self.order - 1;
        let knots = &self.knots;
        // Span index i with knots[i] <= u < knots[i+1], clamped to the last
        // non-degenerate span at the right end.
        let span = {
            let hi = self.n;
            if u >= knots[hi] {
                hi - 1
            } else {
                let idx = knots[..=hi].partition_point(|&k| k <= u);
                (idx - 1).max(p)
            }
        };
        let mut values = [0.0; MAX_ORDER];
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        values[0] = 1.0;
        for j in 1..=p {
            left[j] = u - knots[span + 1 - j];
            right[j] = knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { values[r] / denom } else { 0.0 };
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        LocalBasis {
            first: span - p,
            values,
        }
    }
}

/// All `N` basis values at `t`.
pub fn basis_eval(config: &SplineConfig, t: f64) -> Result<Vec<f64>> {
    config.validate()?;
    config.check_domain(t)?;
    let basis = Basis::new(config);
    let local = basis.local(t);
    let mut out = vec![0.0; basis.n];
    out[local.first..local.first + basis.order].copy_from_slice(&local.values[..basis.order]);
    Ok(out)
}

/// `eta(t) = pi(t)^T alpha`, optionally centered so that it sums to zero over
/// a reference sample of times.
#[derive(Debug, Clone)]
pub struct SplineModel {
    config: SplineConfig,
    basis: Basis,
    coefficients: Vec<f64>,
    centering: Option<Vec<f64>>,
    // sum_j alpha_j * offset_j, zero when uncentered
    correction: f64,
}

impl SplineModel {
    pub fn new(config: SplineConfig, coefficients: Vec<f64>) -> Result<SplineModel> {
        config.validate()?;
        if coefficients.len() != config.n_basis() {
            return Err(Error::invalid(format!(
                "spline needs {} coefficients, got {}",
                config.n_basis(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("spline coefficients must be finite"));
        }
        let basis = Basis::new(&config);
        Ok(SplineModel {
            config,
            basis,
            coefficients,
            centering: None,
            correction: 0.0,
        })
    }

    /// Centered model: subtracts the mean of `pi(t_i)^T alpha` over `reference`.
    pub fn centered(config: SplineConfig, coefficients: Vec<f64>, reference: &[f64]) -> Result<SplineModel> {
        let offsets = centering_offsets(&config, reference)?;
        SplineModel::with_offsets(config, coefficients, offsets)
    }

    /// Centered model with precomputed offsets (see [`centering_offsets`]).
    pub fn with_offsets(config: SplineConfig, coefficients: Vec<f64>, offsets: Vec<f64>) -> Result<SplineModel> {
        if offsets.len() != config.n_basis() {
            return Err(Error::invalid("centering offsets must have one entry per basis function"));
        }
        let mut model = SplineModel::new(config, coefficients)?;
        model.correction = model.coefficients.iter().zip(&offsets).map(|(a, o)| a * o).sum();
        model.centering = Some(offsets);
        Ok(model)
    }

    pub fn config(&self) -> &SplineConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn is_centered(&self) -> bool {
        self.centering.is_some()
    }

    pub fn centering_offsets(&self) -> Option<&[f64]> {
        self.centering.as_deref()
    }

    /// Checked evaluation.
    pub fn eval_eta(&self, t: f64) -> Result<f64> {
        self.config.check_domain(t)?;
        Ok(self.eval(t))
    }

    /// Unchecked evaluation; `t` is clamped into the domain. Used on the
    /// solver's inner loop where stage times are inside the grid by construction.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.config.t0, self.config.t_end);
        let local = self.basis.local(t);
        let mut acc = 0.0;
        for r in 0..self.basis.order {
            acc += local.values[r] * self.coefficients[local.first + r];
        }
        acc - self.correction
    }
}

/// Checked `eta(t)` for a model.
pub fn eval_eta(model: &SplineModel, t: f64) -> Result<f64> {
    model.eval_eta(t)
}

/// Mean basis vector over `reference`.
pub fn centering_offsets(config: &SplineConfig, reference: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    if reference.is_empty() {
        return Err(Error::invalid("centering needs at least one reference time"));
    }
    let basis = Basis::new(config);
    let mut offsets = vec![0.0; basis.n];
    for &t in reference {
        config.check_domain(t)?;
        let local = basis.local(t);
        for r in 0..basis.order {
            offsets[local.first + r] += local.values[r];
        }
    }
    let n = reference.len() as f64;
    offsets.iter_mut().for_each(|o| *o /= n);
    Ok(offsets)
}

/// Design matrix with one row of basis values per sample time.
pub fn design_matrix(config: &SplineConfig, times: &[f64]) -> Result<DMatrix<f64>> {
    let n = config.n_basis();
    let mut x = DMatrix::zeros(times.len(), n);
    for (i, &t) in times.iter().enumerate() {
        let row = basis_eval(config, t)?;
        for j in 0..n {
            x[(i, j)] = row[j];
        }
    }
    Ok(x)
}

/// Least-squares spline coefficients of `f` over `sample_times`.
pub fn project_function(config: &SplineConfig, f: impl Fn(f64) -> f64, sample_times: &[f64]) -> Result<Vec<f64>> {
    let n = config.n_basis();
    if sample_times.len() < n {
        return Err(Error::invalid(format!(
            "projection onto {n} basis functions needs at least {n} samples, got {}",
            sample_times.len()
        )));
    }
    let x = design_matrix(config, sample_times)?;
    let y = DVector::from_iterator(sample_times.len(), sample_times.iter().map(|&t| f(t)));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::numerical(format!(
            "spline design matrix is rank deficient (singular values {smin:e} / {smax:e}); \
             too few or clustered samples for {} interior knots",
            config.interior_knots
        )));
    }
    let alpha = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::numerical(format!("least squares solve failed: {e}")))?;
    Ok(alpha.iter().copied().collect())
}
