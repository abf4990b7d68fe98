//! Box-constrained black-box minimization: DE/rand/1/bin followed by a
//! bounded Nelder-Mead refinement of the best member.
//!
//! Coordinates flagged [`Scale::Log`] are searched in `ln x`. Coordinates
//! whose bounds coincide are pinned and excluded from the search.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, streams, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(Scale::Linear),
            "log" => Ok(Scale::Log),
            other => Err(Error::invalid(format!("unknown search scale '{other}' (linear|log)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Linear => "linear",
            Scale::Log => "log",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    scale: Vec<Scale>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, scale: Vec<Scale>) -> Result<SearchSpace> {
        if lower.len() != upper.len() || lower.len() != scale.len() {
            return Err(Error::invalid("search space bounds and scales must have equal length"));
        }
        if lower.is_empty() {
            return Err(Error::invalid("search space has no coordinates"));
        }
        for i in 0..lower.len() {
            let (lo, hi) = (lower[i], upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("coordinate {i}: need finite lower <= upper, got [{lo}, {hi}]")));
            }
            if scale[i] == Scale::Log && !(lo > 0.0) {
                return Err(Error::invalid(format!("coordinate {i}: log scale needs lower > 0, got {lo}")));
            }
        }
        Ok(SearchSpace { lower, upper, scale })
    }

    pub fn linear(lower: Vec<f64>, upper: Vec<f64>) -> Result<SearchSpace> {
        let n = lower.len();
        SearchSpace::new(lower, upper, vec![Scale::Linear; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn scale(&self) -> &[Scale] {
        &self.scale
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    /// Indices of coordinates with `lower < upper`.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.lower[i] < self.upper[i]).collect()
    }

    fn to_internal(&self, i: usize, x: f64) -> f64 {
        match self.scale[i] {
            Scale::Linear => x,
            Scale::Log => x.ln(),
        }
    }

    /// Map back and clamp into the box, absorbing `exp(ln x)` round-off.
    fn to_external(&self, i: usize, z: f64) -> f64 {
        let x = match self.scale[i] {
            Scale::Linear => z,
            Scale::Log => z.exp(),
        };
        x.clamp(self.lower[i], self.upper[i])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Search over the free coordinates in internal (log-mapped) units.
struct Internal<'a> {
    space: &'a SearchSpace,
    free: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    template: Vec<f64>,
}

impl<'a> Internal<'a> {
    fn new(space: &'a SearchSpace) -> Internal<'a> {
        let free = space.free_indices();
        let lo = free.iter().map(|&i| space.to_internal(i, space.lower[i])).collect();
        let hi = free.iter().map(|&i| space.to_internal(i, space.upper[i])).collect();
        Internal {
            space,
            free,
            lo,
            hi,
            template: space.lower.clone(),
        }
    }

    fn dim(&self) -> usize {
        self.free.len()
    }

    fn external(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.template.clone();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = self.space.to_external(i, z[k]);
        }
        x
    }

    fn internal(&self, x: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(k, &i)| self.space.to_internal(i, x[i]).clamp(self.lo[k], self.hi[k]))
            .collect()
    }

    fn range(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }
}

fn safe_eval<F: Fn(&[f64]) -> f64 + ?Sized>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Warm start: a population scattered around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub center: Vec<f64>,
    /// Standard deviation as a fraction of each internal coordinate's range.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// `None` means `15 * d` (free coordinates), at least 4.
    pub population: Option<usize>,
    pub de_weight: f64,
    pub crossover: f64,
    pub max_generations: usize,
    pub stall_generations: usize,
    pub stall_tolerance: f64,
    pub refine: bool,
    pub refine_tolerance: f64,
    pub seed: u64,
    pub warm_start: Option<WarmStart>,
    /// Evaluate each generation's trial vectors on the rayon pool.
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            population: None,
            de_weight: 0.8,
            crossover: 0.9,
            max_generations: 300,
            stall_generations: 30,
            stall_tolerance: 1e-8,
            refine: true,
            refine_tolerance: 1e-10,
            seed: 0,
            warm_start: None,
            parallel: true,
        }
    }
}

impl OptimizerConfig {
    pub fn with_seed(seed: u64) -> Self {
        OptimizerConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn population_for(&self, d: usize) -> usize {
        self.population.unwrap_or((15 * d).max(4))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.population {
            if p < 4 {
                return Err(Error::invalid(format!("population must be at least 4, got {p}")));
            }
        }
        if !(self.de_weight > 0.0 && self.de_weight < 2.0) {
            return Err(Error::invalid(format!("DE weight must be in (0, 2), got {}", self.de_weight)));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::invalid(format!("crossover must be in [0, 1], got {}", self.crossover)));
        }
        if self.max_generations == 0 {
            return Err(Error::invalid("max_generations must be positive"));
        }
        if !(self.stall_tolerance >= 0.0) || !(self.refine_tolerance > 0.0) {
            return Err(Error::invalid("tolerances must be nonnegative (refine tolerance positive)"));
        }
        if let Some(w) = &self.warm_start {
            if !(w.spread >= 0.0) {
                return Err(Error::invalid("warm start spread must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    /// Best value after each generation, starting with the initial population.
    pub trace: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
    /// DE stopped on the stall criterion rather than the generation cap.
    pub stalled: bool,
}

/// Hybrid global minimization over `space`.
///
/// Non-finite objective values are treated as `+inf`. Deterministic in
/// `config.seed` regardless of `config.parallel`.
pub fn minimize<F>(objective: &F, space: &SearchSpace, config: &OptimizerConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    config.validate()?;
    let map = Internal::new(space);
    let d = map.dim();
    if d == 0 {
        // Every coordinate pinned.
        let x = space.lower.clone();
        let v = safe_eval(objective, &x);
        return Ok(OptimResult {
            argmin: x,
            value: v,
            trace: vec![v],
            generations: 0,
            evaluations: 1,
            stalled: true,
        });
    }
    let np = config.population_for(d).max(4);
    let mut rng = rng::stream(config.seed, streams::OPTIMIZER);

    let eval_all = |pop: &[Vec<f64>]| -> Vec<f64> {
        if config.parallel {
            pop.par_iter().map(|z| safe_eval(objective, &map.external(z))).collect()
        } else {
            pop.iter().map(|z| safe_eval(objective, &map.external(z))).collect()
        }
    };

    let mut pop = initial_population(&map, np, config.warm_start.as_ref(), &mut rng);
    let mut fit = eval_all(&pop);
    let mut evaluations = np;
    let mut best = argmin_index(&fit);
    let mut trace = vec![fit[best]];
    let mut stalled = false;
    let mut generations = 0;

    for _ in 0..config.max_generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let (r1, r2, r3) = pick_three(np, i, &mut rng);
                let jrand = rng.random_range(0..d);
                (0..d)
                    .map(|j| {
                        let parent = pop[i][j];
                        if j == jrand || rng.random::<f64>() < config.crossover {
                            let v = pop[r1][j] + config.de_weight * (pop[r2][j] - pop[r3][j]);
                            repair(v, parent, map.lo[j], map.hi[j], &mut rng)
                        } else {
                            parent
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit = eval_all(&trials);
        evaluations += np;
        for (i, (trial, f)) in trials.into_iter().zip(trial_fit).enumerate() {
            if f <= fit[i] {
                pop[i] = trial;
                fit[i] = f;
            }
        }
        best = argmin_index(&fit);
        trace.push(fit[best]);
        generations += 1;

        let g = trace.len() - 1;
        if g >= config.stall_generations && config.stall_generations > 0 {
            let old = trace[g - config.stall_generations];
            let new = trace[g];
            if old.is_finite() && old - new <= config.stall_tolerance * old.abs() {
                stalled = true;
                break;
            }
        }
    }

    let mut z_best = pop[best].clone();
    let mut f_best = fit[best];
    if config.refine && f_best.is_finite() {
        let (z, f, n) = nelder_mead(objective, &map, &z_best, f_best, config.refine_tolerance, 500 * d);
        evaluations += n;
        if f <= f_best {
            z_best = z;
            f_best = f;
        }
    }
    if let Some(last) = trace.last_mut() {
        *last = last.min(f_best);
    }

    Ok(OptimResult {
        argmin: map.external(&z_best),
        value: f_best,
        trace,
        generations,
        evaluations,
        stalled,
    })
}

/// Bounded Nelder-Mead from `start`; never returns a value above `objective(start)`.
pub fn refine_local<F>(objective: &F, start: &[f64], space: &SearchSpace, tol: f64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if !space.contains(start) {
        return Err(Error::invalid("refinement start must lie inside the search space"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("refinement tolerance must be positive"));
    }
    let map = Internal::new(space);
    let f0 = safe_eval(objective, start);
    if map.dim() == 0 {
        return Ok((start.to_vec(), f0));
    }
    let z0 = map.internal(start);
    let (z, f, _) = nelder_mead(objective, &map, &z0, f0, tol, 500 * map.dim());
    if f <= f0 {
        Ok((map.external(&z), f))
    } else {
        Ok((start.to_vec(), f0))
    }
}

fn argmin_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn pick_three(np: usize, i: usize, rng: &mut StreamRng) -> (usize, usize, usize) {
    let mut draw = |exclude: &[usize]| loop {
        let r = rng.random_range(0..np);
        if !exclude.contains(&r) {
            return r;
        }
    };
    let r1 = draw(&[i]);
    let r2 = draw(&[i, r1]);
    let r3 = draw(&[i, r1, r2]);
    (r1, r2, r3)
}

/// Out-of-box mutants land uniformly between the violated bound and the parent.
fn repair(v: f64, parent: f64, lo: f64, hi: f64, rng: &mut StreamRng) -> f64 {
    if v < lo {
        lo + rng.random::<f64>() * (parent - lo)
    } else if v > hi {
        hi - rng.random::<f64>() * (hi - parent)
    } else {
        v
    }
}

fn initial_population(map: &Internal<'_>, np: usize, warm: Option<&WarmStart>, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let d = map.dim();
    match warm {
        None => (0..np)
            .map(|_| (0..d).map(|k| map.lo[k] + rng.random::<f64>() * map.range(k)).collect())
            .collect(),
        Some(w) => {
            let center = map.internal(&w.center);
            let mut pop = Vec::with_capacity(np);
            pop.push(center.clone());
            while pop.len() < np {
                let z = (0..d)
                    .map(|k| {
                        let n: f64 = StandardNormal.sample(rng);
                        reflect(center[k] + w.spread * map.range(k) * n, map.lo[k], map.hi[k])
                    })
                    .collect();
                pop.push(z);
            }
            pop
        }
    }
}

fn reflect(mut z: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    for _ in 0..4 {
        if z < lo {
            z = 2.0 * lo - z;
        } else if z > hi {
            z = 2.0 * hi - z;
        } else {
            return z;
        }
    }
    z.clamp(lo, hi)
}

/// Adaptive-coefficient Nelder-Mead on the internal box with projection,
/// restarted from the best vertex until a restart no longer improves.
fn nelder_mead<F>(
    objective: &F,
    map: &Internal<'_>,
    z0: &[f64],
    f0: f64,
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = map.dim();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let project = |z: &mut Vec<f64>| {
        for k in 0..n {
            z[k] = z[k].clamp(map.lo[k], map.hi[k]);
        }
    };
    let mut evals = 0usize;
    let f = |z: &[f64], evals: &mut usize| {
        *evals += 1;
        safe_eval(objective, &map.external(z))
    };

    let mut best_z = z0.to_vec();
    let mut best_f = f0;
    let mut step_frac = 0.05;

    for _restart in 0..4 {
        // Initial simplex around the incumbent.
        let mut simplex: Vec<Vec<f64>> = vec![best_z.clone()];
        let mut values = vec![best_f];
        for k in 0..n {
            let mut z = best_z.clone();
            let step = step_frac * map.range(k);
            z[k] = if z[k] + step <= map.hi[k] { z[k] + step } else { z[k] - step };
            project(&mut z);
            values.push(f(&z, &mut evals));
            simplex.push(z);
        }
        let start_f = best_f;

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let s: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
            let v: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            simplex = s;
            values = v;

            let diameter = simplex[1..]
                .iter()
                .map(|z| {
                    (0..n)
                        .map(|k| ((z[k] - simplex[0][k]) / map.range(k)).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if diameter < tol || evals >= max_evals {
                break;
            }

            let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|z| z[k]).sum::<f64>() / nf).collect();
            let worst = &simplex[n];
            let along = |coef: f64| -> Vec<f64> {
                let mut z: Vec<f64> = (0..n).map(|k| centroid[k] + coef * (centroid[k] - worst[k])).collect();
                project(&mut z);
                z
            };

            let zr = along(alpha);
            let fr = f(&zr, &mut evals);
            if fr < values[0] {
                let ze = along(alpha * beta);
                let fe = f(&ze, &mut evals);
                if fe < fr {
                    simplex[n] = ze;
                    values[n] = fe;
                } else {
                    simplex[n] = zr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = zr;
                values[n] = fr;
                continue;
            }
            let (zc, fc) = if fr < values[n] {
                let z = along(alpha * gamma);
                let fz = f(&z, &mut evals);
                (z, fz)
            } else {
                let z = along(-gamma);
                let fz = f(&z, &mut evals);
                (z, fz)
            };
            if fc < values[n].min(fr) {
                simplex[n] = zc;
                values[n] = fc;
                continue;
            }
            // Shrink toward the best vertex.
            for i in 1..=n {
                let mut z: Vec<f64> = (0..n).map(|k| simplex[0][k] + delta * (simplex[i][k] - simplex[0][k])).collect();
                project(&mut z);
                values[i] = f(&z, &mut evals);
                simplex[i] = z;
            }
        }

        let ib = argmin_index(&values);
        if values[ib] <= best_f {
            best_z = simplex[ib].clone();
            best_f = values[ib];
        }
        if evals >= max_evals || !(best_f < start_f) {
            break;
        }
        step_frac = (step_frac * 0.5).max(10.0 * tol);
    }
    (best_z, best_f, evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sphere_five_dims() {
        let space = SearchSpace::linear(vec![-5.0; 5], vec![5.0; 5]).unwrap();
        let r = minimize(&sphere, &space, &OptimizerConfig::with_seed(1)).unwrap();
        assert!(r.value < 1e-10, "{}", r.value);
        assert!(r.argmin.iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let space = SearchSpace::linear(vec![-2.0; 2], vec![2.0; 2]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(3)).unwrap();
        assert!((r.argmin[0] - 1.0).abs() < 1e-3 && (r.argmin[1] - 1.0).abs() < 1e-3, "{:?}", r.argmin);
    }

    #[test]
    fn constant_objective() {
        let space = SearchSpace::linear(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let r = minimize(&|_: &[f64]| 4.25, &space, &OptimizerConfig::with_seed(0)).unwrap();
        assert_eq!(r.value, 4.25);
        assert!(space.contains(&r.argmin));
    }

    #[test]
    fn log_scaled_coordinates() {
        // Minimum at 3e-5 on a box spanning four decades.
        let f = |x: &[f64]| (x[0].ln() - 3e-5_f64.ln()).powi(2) + (x[1] - 2.0).powi(2);
        let space = SearchSpace::new(vec![1e-7, 0.0], vec![1e-3, 5.0], vec![Scale::Log, Scale::Linear]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(5)).unwrap();
        assert!((r.argmin[0] / 3e-5 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_is_monotone_and_beats_initial_population() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) * (2.0 + (7.0 * x[1]).sin()) + (x[1] - 0.1).abs();
        let space = SearchSpace::linear(vec![-3.0; 2], vec![3.0; 2]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(11)).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(r.value <= r.trace[0]);
    }

    #[test]
    fn seed_determinism_including_parallel() {
        let f = |x: &[f64]| sphere(x) + (3.0 * x[0]).cos();
        let space = SearchSpace::linear(vec![-4.0; 3], vec![4.0; 3]).unwrap();
        let mut cfg = OptimizerConfig::with_seed(9);
        let a = minimize(&f, &space, &cfg).unwrap();
        let b = minimize(&f, &space, &cfg).unwrap();
        cfg.parallel = false;
        let c = minimize(&f, &space, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        cfg.seed = 10;
        let d = minimize(&f, &space, &cfg).unwrap();
        assert_ne!(a.trace, d.trace);
    }

    #[test]
    fn every_evaluation_stays_in_box() {
        let seen = Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            // Pulls toward a corner outside the box.
            (x[0] - 10.0).powi(2) + (x[1] + 10.0).powi(2)
        };
        let space = SearchSpace::new(vec![0.1, -1.0], vec![2.0, 1.0], vec![Scale::Log, Scale::Linear]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(2)).unwrap();
        assert!((r.argmin[0] - 2.0).abs() < 1e-6 && (r.argmin[1] + 1.0).abs() < 1e-6);
        for x in seen.into_inner().unwrap() {
            assert!(space.contains(&x), "{x:?}");
        }
    }

    #[test]
    fn non_finite_values_do_not_poison() {
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                f64::NAN
            } else if x[0] < -0.5 {
                f64::INFINITY
            } else {
                (x[0] - 0.2).powi(2)
            }
        };
        let space = SearchSpace::linear(vec![-2.0], vec![2.0]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(4)).unwrap();
        assert!(r.value.is_finite());
        assert!((r.argmin[0] - 0.2).abs() < 1e-5);
    }

    #[test]
    fn pinned_coordinates_are_held() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] - x[2]).powi(2);
        let space = SearchSpace::linear(vec![-3.0, 0.7, -3.0], vec![3.0, 0.7, 3.0]).unwrap();
        let r = minimize(&f, &space, &OptimizerConfig::with_seed(8)).unwrap();
        assert_eq!(r.argmin[1], 0.7);
        assert!((r.argmin[2] - 0.7).abs() < 1e-5);
        let all = SearchSpace::linear(vec![1.0, 2.0, 2.0], vec![1.0, 2.0, 2.0]).unwrap();
        let r = minimize(&f, &all, &OptimizerConfig::default()).unwrap();
        assert_eq!(r.argmin, vec![1.0, 2.0, 2.0]);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn warm_start_stays_near_center() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2);
        let space = SearchSpace::linear(vec![-10.0], vec![10.0]).unwrap();
        let cfg = OptimizerConfig {
            warm_start: Some(WarmStart {
                center: vec![1.4],
                spread: 0.01,
            }),
            max_generations: 20,
            ..OptimizerConfig::with_seed(1)
        };
        let r = minimize(&f, &space, &cfg).unwrap();
        assert!((r.argmin[0] - 1.5).abs() < 1e-6);
        assert!(r.trace[0] <= 0.1f64.powi(2) + 1e-12);
    }

    #[test]
    fn config_validation() {
        let space = SearchSpace::linear(vec![0.0], vec![1.0]).unwrap();
        for cfg in [
            OptimizerConfig { population: Some(3), ..Default::default() },
            OptimizerConfig { de_weight: 2.0, ..Default::default() },
            OptimizerConfig { crossover: 1.5, ..Default::default() },
            OptimizerConfig { max_generations: 0, ..Default::default() },
        ] {
            assert!(minimize(&|x: &[f64]| x[0], &space, &cfg).is_err());
        }
        assert!(SearchSpace::new(vec![0.0], vec![1.0], vec![Scale::Log]).is_err());
        assert!(SearchSpace::linear(vec![2.0], vec![1.0]).is_err());
    }

    #[test]
    fn refine_quadratic() {
        let space = SearchSpace::linear(vec![-10.0], vec![10.0]).unwrap();
        let (x, v) = refine_local(&|x: &[f64]| (x[0] - 3.0).powi(2), &[0.0], &space, 1e-10).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-6, "{x:?}");
        assert!(v <= 9.0);
    }

    #[test]
    fn refine_from_minimum_does_not_increase() {
        let space = SearchSpace::linear(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let (x, v) = refine_local(&sphere, &[0.0, 0.0], &space, 1e-8).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn refine_respects_box_on_penalty_plateau() {
        // Flat penalty beyond 0.9 and a slope pushing toward the upper edge.
        let plateau = |x: &[f64]| if x[0] > 0.9 { 1e12 } else { -x[0] };
        let space = SearchSpace::linear(vec![0.0], vec![1.0]).unwrap();
        let (x, v) = refine_local(&plateau, &[0.5], &space, 1e-9).unwrap();
        assert!(space.contains(&x));
        assert!(v <= -0.5);
        assert!(x[0] <= 0.9 + 1e-12);
        assert!(refine_local(&plateau, &[1.5], &space, 1e-9).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn quick(seed: u64) -> OptimizerConfig {
            OptimizerConfig {
                max_generations: 25,
                ..OptimizerConfig::with_seed(seed)
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn feasible_monotone_and_deterministic(
                seed in any::<u64>(),
                c0 in -3.0f64..3.0,
                c1 in 0.01f64..50.0,
                lo0 in -2.0f64..0.0,
                w0 in 0.1f64..4.0,
            ) {
                let f = |x: &[f64]| {
                    let v = (x[0] - c0).powi(2) + (x[1].ln() - c1.ln()).powi(2);
                    if x[0] > 1.5 { f64::NAN } else { v }
                };
                let space = SearchSpace::new(
                    vec![lo0, 0.02],
                    vec![lo0 + w0, 20.0],
                    vec![Scale::Linear, Scale::Log],
                ).unwrap();
                let a = minimize(&f, &space, &quick(seed)).unwrap();
                let b = minimize(&f, &space, &quick(seed)).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!(space.contains(&a.argmin));
                prop_assert!(a.value <= a.trace[0]);
                for w in a.trace.windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
            }
        }
    }
}
