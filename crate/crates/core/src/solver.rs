//! Fixed-grid one-step integration with cubic Hermite dense output.
//!
//! The classic 4-stage Runge-Kutta method (order 4) is the default; explicit
//! Euler (order 1) is kept as a low-order reference. Node derivatives are
//! right-hand-side evaluations, so the Hermite interpolant is `O(h^4)` and the
//! combined solve + interpolate error is `O(h^min(p, 4))`.

use crate::error::{Error, Result};
use crate::models::OdeSystem;

/// Strictly increasing time grid `s_0 < ... < s_{m-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    max_step: f64,
}

impl Grid {
    /// Uniform grid with step `h` from `t0` ending exactly at `t_end`; the last
    /// step absorbs the remainder and may be shorter.
    pub fn uniform(t0: f64, t_end: f64, h: f64) -> Result<Grid> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid(format!("grid step must be positive and finite, got {h}")));
        }
        if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
            return Err(Error::invalid(format!("grid needs t0 < t_end, got [{t0}, {t_end}]")));
        }
        let ratio = (t_end - t0) / h;
        // Tolerate representation error in exact divisions such as 20 / 0.1.
        let steps = (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize;
        let mut points: Vec<f64> = (0..steps).map(|j| t0 + j as f64 * h).collect();
        points.push(t_end);
        Grid::from_points(points)
    }

    pub fn from_points(points: Vec<f64>) -> Result<Grid> {
        if points.len() < 2 {
            return Err(Error::invalid("grid needs at least two points"));
        }
        let mut max_step = 0.0_f64;
        for w in points.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0 && gap.is_finite()) {
                return Err(Error::invalid(format!(
                    "grid points must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
            max_step = max_step.max(gap);
        }
        Ok(Grid { points, max_step })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index `j` of the cell `[s_j, s_{j+1}]` containing `t`.
    fn cell(&self, t: f64) -> usize {
        let upper = self.points.partition_point(|&s| s <= t);
        upper.saturating_sub(1).min(self.points.len() - 2)
    }
}

/// Make the uniform grid used by the estimator and the order checks.
pub fn make_uniform_grid(t0: f64, t_end: f64, h: f64) -> Result<Grid> {
    Grid::uniform(t0, t_end, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rk4,
    Euler,
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::Rk4 => 4,
            Method::Euler => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            other => Err(Error::invalid(format!("unknown solver method '{other}' (rk4|euler)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        }
    }
}

/// Time-varying parameter injected into a right-hand side.
pub type EtaFn<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// Solved trajectory on a grid: states and right-hand-side values per node,
/// stored row-major (`m x K`).
#[derive(Debug, Clone)]
pub struct NumericalSolution {
    grid: Grid,
    dim: usize,
    states: Vec<f64>,
    derivs: Vec<f64>,
    method: Method,
}

impl NumericalSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn order(&self) -> u32 {
        self.method.order()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn deriv(&self, j: usize) -> &[f64] {
        &self.derivs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.len() - 1)
    }

    /// Cubic Hermite interpolation of the state at `t`.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.interpolate_into(t, &mut out)?;
        Ok(out)
    }

    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = (self.grid.start(), self.grid.end());
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain {
                what: "interpolation time",
                value: t,
                lo,
                hi,
            });
        }
        let j = self.grid.cell(t);
        let pts = self.grid.points();
        if t == pts[j] {
            out.copy_from_slice(self.state(j));
            return Ok(());
        }
        if t == pts[j + 1] {
            out.copy_from_slice(self.state(j + 1));
            return Ok(());
        }
        let h = pts[j + 1] - pts[j];
        let s = (t - pts[j]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (x0, f0) = (self.state(j), self.deriv(j));
        let (x1, f1) = (self.state(j + 1), self.deriv(j + 1));
        for k in 0..self.dim {
            out[k] = h00 * x0[k] + h10 * h * f0[k] + h01 * x1[k] + h11 * h * f1[k];
        }
        Ok(())
    }
}

/// Interpolate node data `(states, derivs)` that did not come from a solver.
pub fn hermite_from_nodes(
    grid: Grid,
    dim: usize,
    states: Vec<f64>,
    derivs: Vec<f64>,
) -> Result<NumericalSolution> {
    if states.len() != grid.len() * dim || derivs.len() != grid.len() * dim {
        return Err(Error::invalid("node data must have one K-vector per grid point"));
    }
    Ok(NumericalSolution {
        grid,
        dim,
        states,
        derivs,
        method: Method::Rk4,
    })
}

/// Integrate `system` over `grid` from its initial state.
///
/// Non-finite states or derivatives stop the integration with
/// [`Error::Diverged`] carrying the failing grid index.
pub fn integrate(
    system: &dyn OdeSystem,
    params: &[f64],
    eta: Option<EtaFn<'_>>,
    grid: &Grid,
    method: Method,
) -> Result<NumericalSolution> {
    let k = system.dim();
    let x0 = system.initial_state();
    if x0.len() != k {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    if params.len() != system.param_names().len() {
        return Err(Error::invalid(format!(
            "{} expects {} parameters, got {}",
            system.name(),
            system.param_names().len(),
            params.len()
        )));
    }
    let m = grid.len();
    let pts = grid.points();
    let eta_at = |t: f64| eta.map(|f| f(t));
    let diverged = |index: usize| Error::Diverged {
        index,
        len: m,
        time: pts[index],
    };

    let mut states = Vec::with_capacity(m * k);
    let mut derivs = Vec::with_capacity(m * k);
    states.extend_from_slice(x0);

    let mut k1 = vec![0.0; k];
    let mut k2 = vec![0.0; k];
    let mut k3 = vec![0.0; k];
    let mut k4 = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    let mut next = vec![0.0; k];

    for j in 0..m - 1 {
        let t = pts[j];
        let h = pts[j + 1] - t;
        let x = &states[j * k..(j + 1) * k];
        system.rhs(t, x, params, eta_at(t), &mut k1);
        if k1.iter().any(|v| !v.is_finite()) {
            return Err(diverged(j));
        }
        match method {
            Method::Euler => {
                for i in 0..k {
                    next[i] = x[i] + h * k1[i];
                }
            }
            Method::Rk4 => {
                let half = t + 0.5 * h;
                let eta_half = eta_at(half);
                for i in 0..k {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                system.rhs(half, &tmp, params, eta_half, &mut k2);
                for i in 0..k {
                    tmp[i] = x[i] + 0.5 * h * k2[i];
                }
                system.rhs(half, &tmp, params, eta_half, &mut k3);
                for i in 0..k {
                    tmp[i] = x[i] + h * k3[i];
                }
                system.rhs(t + h, &tmp, params, eta_at(t + h), &mut k4);
                for i in 0..k {
                    next[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        derivs.extend_from_slice(&k1);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(diverged(j + 1));
        }
        states.extend_from_slice(&next);
    }

    let last = m - 1;
    system.rhs(pts[last], &states[last * k..], params, eta_at(pts[last]), &mut k1);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(diverged(last));
    }
    derivs.extend_from_slice(&k1);

    Ok(NumericalSolution {
        grid: grid.clone(),
        dim: k,
        states,
        derivs,
        method,
    })
}

/// Least-squares slope of `log(error)` against `log(h)` at `t_probe`.
///
/// `reference` is the exact (or converged) state at `t_probe`; the error is
/// the max-norm deviation of the Hermite-interpolated solution.
pub fn empirical_order(
    system: &dyn OdeSystem,
    params: &[f64],
    eta: Option<EtaFn<'_>>,
    method: Method,
    t_probe: f64,
    reference: &[f64],
    steps: &[f64],
) -> Result<f64> {
    if steps.len() < 3 {
        return Err(Error::invalid("order estimation needs at least 3 step sizes"));
    }
    let (t0, t_end) = system.interval();
    let mut xs = Vec::with_capacity(steps.len());
    let mut ys = Vec::with_capacity(steps.len());
    for &h in steps {
        let grid = Grid::uniform(t0, t_end, h)?;
        let sol = integrate(system, params, eta, &grid, method)?;
        let x = sol.interpolate(t_probe)?;
        let err = x
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !(err > 0.0 && err.is_finite()) {
            return Err(Error::numerical(format!("degenerate error {err} at h = {h}")));
        }
        xs.push(h.ln());
        ys.push(err.ln());
    }
    Ok(ls_slope(&xs, &ys))
}

pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
