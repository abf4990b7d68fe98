use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::system::{OdeSystem, HIV_TRUTH};
use crate::rng::{self, streams};
use crate::solver::{integrate, Grid, Method};

/// Observation times and observed vectors, stored on the fitting scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    /// `n` rows of `K_obs` values.
    pub observations: Vec<Vec<f64>>,
    /// Per observed coordinate: stored values are natural logs of the measurements.
    pub log_scale: Vec<bool>,
    /// Raw-scale noise standard deviations, known only for synthetic data.
    pub noise_sd: Option<Vec<Vec<f64>>>,
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioId>,
    pub noise_fraction: Option<f64>,
    pub system: Option<String>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, observations: Vec<Vec<f64>>, log_scale: Vec<bool>) -> Result<Dataset> {
        let d = Dataset {
            times,
            observations,
            log_scale,
            noise_sd: None,
            seed: None,
            scenario: None,
            noise_fraction: None,
            system: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.log_scale.len()
    }

    /// Total scalar observation count `n * K_obs`.
    pub fn n_values(&self) -> usize {
        self.len() * self.obs_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::invalid("dataset has no observations"));
        }
        if self.observations.len() != self.times.len() {
            return Err(Error::invalid("dataset needs one observation row per time"));
        }
        let k = self.log_scale.len();
        if k == 0 {
            return Err(Error::invalid("dataset has no observed coordinates"));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "observation times must be strictly increasing (row {})",
                    i + 2
                )));
            }
        }
        for (i, (t, row)) in self.times.iter().zip(&self.observations).enumerate() {
            if !t.is_finite() {
                return Err(Error::invalid(format!("non-finite time in row {}", i + 1)));
            }
            if row.len() != k {
                return Err(Error::invalid(format!("row {} has {} values, expected {k}", i + 1, row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite observation in row {}", i + 1)));
            }
        }
        if let Some(sd) = &self.noise_sd {
            if sd.len() != self.times.len() || sd.iter().any(|r| r.len() != k) {
                return Err(Error::invalid("noise sd block must match the observations"));
            }
        }
        Ok(())
    }

    /// Check that all times lie inside `[t0, t_end]`.
    pub fn check_within(&self, t0: f64, t_end: f64) -> Result<()> {
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        if first < t0 || last > t_end {
            return Err(Error::invalid(format!(
                "observation times [{first}, {last}] fall outside the model interval [{t0}, {t_end}]"
            )));
        }
        Ok(())
    }

    /// Observation at row `i`, coordinate `j`, on the raw (measurement) scale.
    pub fn raw_value(&self, i: usize, j: usize) -> f64 {
        let v = self.observations[i][j];
        if self.log_scale[j] {
            v.exp()
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    /// Small constant infection rate.
    I,
    /// Time-varying with about 10% variation.
    II,
    /// Larger constant.
    III,
    /// Time-varying with a tenfold variation.
    IV,
    /// Robustness case with an oscillating trend.
    Complex,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::I, ScenarioId::II, ScenarioId::III, ScenarioId::IV, ScenarioId::Complex];

    pub fn parse(s: &str) -> Result<ScenarioId> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(ScenarioId::I),
            "ii" | "2" => Ok(ScenarioId::II),
            "iii" | "3" => Ok(ScenarioId::III),
            "iv" | "4" => Ok(ScenarioId::IV),
            "complex" => Ok(ScenarioId::Complex),
            other => Err(Error::invalid(format!("unknown scenario '{other}' (i|ii|iii|iv|complex)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::I => "i",
            ScenarioId::II => "ii",
            ScenarioId::III => "iii",
            ScenarioId::IV => "iv",
            ScenarioId::Complex => "complex",
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, ScenarioId::I | ScenarioId::III)
    }

    pub fn eta(self, t: f64) -> f64 {
        match self {
            ScenarioId::I => 9.5e-6,
            ScenarioId::II => 9e-5 * (1.0 - 0.9 * (PI * t / 400.0).cos()),
            ScenarioId::III => 3.84e-5,
            ScenarioId::IV => 9e-5 * (1.0 - 0.9 * (PI * t / 40.0).cos()),
            ScenarioId::Complex => 9.0e-6 + 9.0e-7 * t * (1.0 - 0.5 * (PI * t / 5.8).sin()),
        }
    }
}

/// Infection-rate truth for a scenario at time `t`.
pub fn scenario_eta(id: ScenarioId, t: f64) -> f64 {
    id.eta(t)
}

/// Observation design `step, 2 step, ..., t_end` (the known initial time is excluded).
pub fn regular_design(t0: f64, t_end: f64, step: f64) -> Vec<f64> {
    let n = ((t_end - t0) / step + 1e-9).floor() as usize;
    (1..=n).map(|i| t0 + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    /// Full constant-parameter vector of the system.
    pub beta_truth: Vec<f64>,
    pub design: Vec<f64>,
    pub noise_fraction: f64,
    pub log_scale: Vec<bool>,
}

impl Scenario {
    /// HIV simulation-study settings: 40 times at spacing 0.5 on (0, 20],
    /// 20% proportional noise, both outputs log-transformed.
    pub fn hiv(id: ScenarioId) -> Scenario {
        Scenario {
            id,
            beta_truth: HIV_TRUTH.to_vec(),
            design: regular_design(0.0, 20.0, 0.5),
            noise_fraction: 0.20,
            log_scale: vec![true, true],
        }
    }

    pub fn eta(&self, t: f64) -> f64 {
        self.id.eta(t)
    }
}

/// Measurement noise added on the raw scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// `sd = fraction * |truth|`.
    Proportional(f64),
    /// Constant `sd`.
    Additive(f64),
}

impl Noise {
    fn sd(self, truth: f64) -> f64 {
        match self {
            Noise::Proportional(f) => f * truth.abs(),
            Noise::Additive(sd) => sd,
        }
    }
}

/// Noise-free outputs of `system` at `times`, integrated with rk4 at step `h`.
pub fn true_outputs(
    system: &dyn OdeSystem,
    params: &[f64],
    eta: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    times: &[f64],
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let (t0, t_end) = system.interval();
    let grid = Grid::uniform(t0, t_end, h)?;
    let sol = integrate(system, params, eta, &grid, Method::Rk4)?;
    let mut x = vec![0.0; system.dim()];
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        sol.interpolate_into(t, &mut x)?;
        let mut y = vec![0.0; system.obs_dim()];
        system.observe(&x, &mut y);
        out.push(y);
    }
    Ok(out)
}

/// Synthetic observations: truth plus independent Gaussian noise, then the
/// per-coordinate log transform. Deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_observations(
    system: &dyn OdeSystem,
    params: &[f64],
    eta: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    times: &[f64],
    h_truth: f64,
    noise: Noise,
    log_scale: &[bool],
    seed: u64,
) -> Result<Dataset> {
    if log_scale.len() != system.obs_dim() {
        return Err(Error::invalid("log_scale needs one flag per observed coordinate"));
    }
    let (t0, t_end) = system.interval();
    if times.is_empty() || times[0] < t0 || times[times.len() - 1] > t_end {
        return Err(Error::invalid("design times must be non-empty and inside the model interval"));
    }
    let truth = true_outputs(system, params, eta, times, h_truth)?;
    let mut rng = rng::stream(seed, streams::NOISE);
    let mut observations = Vec::with_capacity(times.len());
    let mut sds = Vec::with_capacity(times.len());
    for (i, row) in truth.iter().enumerate() {
        let mut obs = Vec::with_capacity(row.len());
        let mut sd_row = Vec::with_capacity(row.len());
        for (j, &y) in row.iter().enumerate() {
            let sd = noise.sd(y);
            let z: f64 = StandardNormal.sample(&mut rng);
            let raw = if sd > 0.0 { y + sd * z } else { y };
            if log_scale[j] {
                if !(y > 0.0) {
                    return Err(Error::invalid(format!(
                        "true output {y} at t = {} is not positive; cannot log-transform",
                        times[i]
                    )));
                }
                if !(raw > 0.0) {
                    return Err(Error::numerical(format!(
                        "noisy observation {raw} at t = {} is not positive; cannot log-transform",
                        times[i]
                    )));
                }
                obs.push(raw.ln());
            } else {
                obs.push(raw);
            }
            sd_row.push(sd);
        }
        observations.push(obs);
        sds.push(sd_row);
    }
    let mut d = Dataset::new(times.to_vec(), observations, log_scale.to_vec())?;
    d.noise_sd = Some(sds);
    d.seed = Some(seed);
    d.system = Some(system.name().to_string());
    Ok(d)
}

/// Generate one synthetic replicate of a scenario.
pub fn simulate_dataset(system: &dyn OdeSystem, scenario: &Scenario, h_truth: f64, seed: u64) -> Result<Dataset> {
    let eta = |t: f64| scenario.eta(t);
    let eta_ref: Option<&(dyn Fn(f64) -> f64 + Sync)> = if system.uses_eta() { Some(&eta) } else { None };
    let mut d = simulate_observations(
        system,
        &scenario.beta_truth,
        eta_ref,
        &scenario.design,
        h_truth,
        Noise::Proportional(scenario.noise_fraction),
        &scenario.log_scale,
        seed,
    )?;
    d.scenario = Some(scenario.id);
    d.noise_fraction = Some(scenario.noise_fraction);
    Ok(d)
}
