//! Line-oriented run configuration: `section.key = value`, `#` comments.
//! Every key is validated up front and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimate::{hiv_fit_spec, EtaMode, FitSpec};
use crate::models::{Dataset, Decay, Hiv, OdeSystem, Scenario, ScenarioId, HIV_TRUTH};
use crate::optim::{OptimizerConfig, Scale, SearchSpace};
use crate::solver::Method;
use crate::spline::{KnotScale, SplineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Hiv,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaKind {
    None,
    Constant,
    Spline,
    CenteredSpline,
}

impl EtaKind {
    fn parse(s: &str) -> Result<EtaKind> {
        match s {
            "none" => Ok(EtaKind::None),
            "constant" => Ok(EtaKind::Constant),
            "spline" => Ok(EtaKind::Spline),
            "centered_spline" => Ok(EtaKind::CenteredSpline),
            _ => Err(Error::invalid(format!(
                "unknown eta mode '{s}' (none|constant|spline|centered_spline)"
            ))),
        }
    }
}

/// Size of the change in the time-varying truth for the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Magnitude {
    Small,
    Large,
}

impl Magnitude {
    pub fn parse(s: &str) -> Result<Magnitude> {
        match s {
            "small" => Ok(Magnitude::Small),
            "large" => Ok(Magnitude::Large),
            _ => Err(Error::invalid(format!("unknown change magnitude '{s}' (small|large)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Small => "small",
            Magnitude::Large => "large",
        }
    }

    /// `(constant truth, time-varying truth)` scenarios.
    pub fn scenarios(self) -> (ScenarioId, ScenarioId) {
        match self {
            Magnitude::Small => (ScenarioId::I, ScenarioId::II),
            Magnitude::Large => (ScenarioId::III, ScenarioId::IV),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub system: SystemKind,
    pub params: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub free: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSection {
    pub id: ScenarioId,
    pub noise_fraction: f64,
    pub design_step: f64,
    /// Step of the reference solution used to generate data.
    pub truth_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub method: Method,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineSection {
    pub order: usize,
    pub knots: usize,
    pub scale: KnotScale,
    pub coef_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSection {
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub scale: Option<Vec<Scale>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSection {
    pub replicates: usize,
    pub pseudo_information: bool,
    pub force_unit_weights: bool,
    pub budget_fraction: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSection {
    pub orders: Vec<usize>,
    pub knots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySection {
    pub replicates: usize,
    pub magnitudes: Vec<Magnitude>,
    pub max_failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentSection {
    pub h: f64,
    pub step: f64,
    pub threshold: f64,
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSection {
    pub steps: Vec<f64>,
    pub probe: f64,
    pub off_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub scenario: ScenarioSection,
    pub solver: SolverSection,
    pub eta_mode: EtaKind,
    pub spline: SplineSection,
    pub search: SearchSection,
    pub optimizer: OptimizerConfig,
    pub inference: InferenceSection,
    pub select: SelectSection,
    pub study: StudySection,
    pub ident: IdentSection,
    pub order: OrderSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSection {
                system: SystemKind::Hiv,
                params: None,
                x0: None,
                t0: None,
                t_end: None,
                free: None,
            },
            scenario: ScenarioSection {
                id: ScenarioId::I,
                noise_fraction: 0.2,
                design_step: 0.5,
                truth_step: 0.005,
            },
            solver: SolverSection {
                method: Method::Rk4,
                h: 0.05,
            },
            eta_mode: EtaKind::Constant,
            spline: SplineSection {
                order: 3,
                knots: 1,
                scale: KnotScale::Linear,
                coef_bound: 1e6,
            },
            search: SearchSection::default(),
            optimizer: OptimizerConfig::default(),
            inference: InferenceSection {
                replicates: 200,
                pseudo_information: true,
                force_unit_weights: false,
                budget_fraction: 0.25,
                spread: 0.05,
            },
            select: SelectSection {
                orders: vec![3, 4],
                knots: (3..=10).collect(),
            },
            study: StudySection {
                replicates: 50,
                magnitudes: vec![Magnitude::Small, Magnitude::Large],
                max_failure_rate: 0.1,
            },
            ident: IdentSection {
                h: 1e-3,
                step: 0.05,
                threshold: 1e-6,
                perturbation: 0.1,
            },
            order: OrderSection {
                steps: vec![0.2, 0.1, 0.05, 0.025],
                probe: 1.0,
                off_grid: vec![0.33, 0.51, 0.93],
            },
            run: RunSection {
                seed: 0,
                threads: None,
                out: None,
            },
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::invalid(format!("{key}: expected a finite number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::invalid(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::invalid(format!("{key}: empty list")));
    }
    items.into_iter().map(|s| item(key, s)).collect()
}

/// `a..b` (inclusive) or a comma list.
fn parse_usize_range(key: &str, v: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b) = (parse_usize(key, a.trim())?, parse_usize(key, b.trim())?);
        if a > b {
            return Err(Error::invalid(format!("{key}: empty range {v}")));
        }
        Ok((a..=b).collect())
    } else {
        parse_list(key, v, parse_usize)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected 'section.key = value'", lineno + 1)))?;
            let key = key.trim().to_string();
            if !key.contains('.') {
                return Err(Error::invalid(format!("line {}: key '{key}' lacks a section", lineno + 1)));
            }
            if entries.insert(key.clone(), (lineno + 1, value.trim().to_string())).is_some() {
                return Err(Error::invalid(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        let mut cfg = RunConfig::default();
        for (key, (line, v)) in &entries {
            cfg.set(key, v).map_err(|e| match e {
                Error::Invalid(msg) => Error::Invalid(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "model.system" => {
                self.model.system = match v {
                    "hiv" => SystemKind::Hiv,
                    "decay" => SystemKind::Decay,
                    _ => return Err(Error::invalid(format!("{k}: unknown system '{v}' (hiv|decay)"))),
                }
            }
            "model.params" => self.model.params = Some(parse_list(k, v, parse_f64)?),
            "model.x0" => self.model.x0 = Some(parse_list(k, v, parse_f64)?),
            "model.t0" => self.model.t0 = Some(parse_f64(k, v)?),
            "model.t_end" => self.model.t_end = Some(parse_f64(k, v)?),
            "model.free" => self.model.free = Some(parse_list(k, v, |_, s| Ok(s.to_string()))?),
            "scenario.id" => self.scenario.id = ScenarioId::parse(v)?,
            "scenario.noise_fraction" => self.scenario.noise_fraction = parse_f64(k, v)?,
            "scenario.design_step" => self.scenario.design_step = parse_f64(k, v)?,
            "scenario.truth_step" => self.scenario.truth_step = parse_f64(k, v)?,
            "solver.method" => self.solver.method = Method::parse(v)?,
            "solver.h" => self.solver.h = parse_f64(k, v)?,
            "fit.eta_mode" => self.eta_mode = EtaKind::parse(v)?,
            "spline.order" => self.spline.order = parse_usize(k, v)?,
            "spline.knots" => self.spline.knots = parse_usize(k, v)?,
            "spline.scale" => self.spline.scale = KnotScale::parse(v)?,
            "spline.coef_bound" => self.spline.coef_bound = parse_f64(k, v)?,
            "search.lower" => self.search.lower = Some(parse_list(k, v, parse_f64)?),
            "search.upper" => self.search.upper = Some(parse_list(k, v, parse_f64)?),
            "search.scale" => self.search.scale = Some(parse_list(k, v, |_, s| Scale::parse(s))?),
            "optimizer.population" => self.optimizer.population = Some(parse_usize(k, v)?),
            "optimizer.de_weight" => self.optimizer.de_weight = parse_f64(k, v)?,
            "optimizer.crossover" => self.optimizer.crossover = parse_f64(k, v)?,
            "optimizer.max_generations" => self.optimizer.max_generations = parse_usize(k, v)?,
            "optimizer.stall_generations" => self.optimizer.stall_generations = parse_usize(k, v)?,
            "optimizer.stall_tolerance" => self.optimizer.stall_tolerance = parse_f64(k, v)?,
            "optimizer.refine" => self.optimizer.refine = parse_bool(k, v)?,
            "optimizer.refine_tolerance" => self.optimizer.refine_tolerance = parse_f64(k, v)?,
            "inference.replicates" => self.inference.replicates = parse_usize(k, v)?,
            "inference.pseudo_information" => self.inference.pseudo_information = parse_bool(k, v)?,
            "inference.force_unit_weights" => self.inference.force_unit_weights = parse_bool(k, v)?,
            "inference.budget_fraction" => self.inference.budget_fraction = parse_f64(k, v)?,
            "inference.spread" => self.inference.spread = parse_f64(k, v)?,
            "select.orders" => self.select.orders = parse_usize_range(k, v)?,
            "select.knots" => self.select.knots = parse_usize_range(k, v)?,
            "study.replicates" => self.study.replicates = parse_usize(k, v)?,
            "study.magnitudes" => self.study.magnitudes = parse_list(k, v, |_, s| Magnitude::parse(s))?,
            "study.max_failure_rate" => self.study.max_failure_rate = parse_f64(k, v)?,
            "ident.h" => self.ident.h = parse_f64(k, v)?,
            "ident.step" => self.ident.step = parse_f64(k, v)?,
            "ident.threshold" => self.ident.threshold = parse_f64(k, v)?,
            "ident.perturbation" => self.ident.perturbation = parse_f64(k, v)?,
            "order.steps" => self.order.steps = parse_list(k, v, parse_f64)?,
            "order.probe" => self.order.probe = parse_f64(k, v)?,
            "order.off_grid" => self.order.off_grid = parse_list(k, v, parse_f64)?,
            "run.seed" => self.run.seed = v.parse().map_err(|_| Error::invalid(format!("{k}: expected a u64 seed")))?,
            "run.threads" => self.run.threads = Some(parse_usize(k, v)?),
            "run.out" => self.run.out = Some(v.to_string()),
            _ => return Err(Error::invalid(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Check everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        let (t0, t_end) = sys.interval();
        if !(t0 < t_end) {
            return Err(Error::invalid("model interval must satisfy t0 < t_end"));
        }
        self.base_params()?;
        self.free_indices()?;
        if !(self.scenario.noise_fraction >= 0.0) {
            return Err(Error::invalid("scenario.noise_fraction must be nonnegative"));
        }
        if !(self.scenario.design_step > 0.0 && self.scenario.truth_step > 0.0) {
            return Err(Error::invalid("scenario steps must be positive"));
        }
        if !(self.solver.h > 0.0 && self.solver.h <= (t_end - t0) / 4.0) {
            return Err(Error::invalid(format!(
                "solver.h = {} must be positive and at most a quarter of the interval",
                self.solver.h
            )));
        }
        if matches!(self.eta_mode, EtaKind::Spline | EtaKind::CenteredSpline) {
            self.spline_config()?;
        }
        self.optimizer.validate()?;
        if self.inference.replicates < crate::inference::MIN_BOOTSTRAP {
            return Err(Error::invalid(format!(
                "inference.replicates must be at least {}",
                crate::inference::MIN_BOOTSTRAP
            )));
        }
        if !(self.inference.budget_fraction > 0.0 && self.inference.budget_fraction <= 1.0) {
            return Err(Error::invalid("inference.budget_fraction must be in (0, 1]"));
        }
        if !(self.inference.spread >= 0.0) {
            return Err(Error::invalid("inference.spread must be nonnegative"));
        }
        if self.study.replicates < 10 {
            return Err(Error::invalid("study.replicates must be at least 10"));
        }
        if !(0.0..=1.0).contains(&self.study.max_failure_rate) {
            return Err(Error::invalid("study.max_failure_rate must be in [0, 1]"));
        }
        if !(self.ident.h > 0.0 && self.ident.step > 0.0 && self.ident.threshold >= 0.0 && self.ident.perturbation > 0.0)
        {
            return Err(Error::invalid("ident settings must be positive"));
        }
        if self.order.steps.len() < 3 || self.order.steps.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("order.steps needs at least three positive steps"));
        }
        if let Some(0) = self.run.threads {
            return Err(Error::invalid("run.threads must be positive"));
        }
        let search = &self.search;
        if search.lower.is_some() != search.upper.is_some() {
            return Err(Error::invalid("search.lower and search.upper must be given together"));
        }
        if let (Some(lo), Some(hi)) = (&search.lower, &search.upper) {
            let scale = search.scale.clone().unwrap_or_else(|| vec![Scale::Linear; lo.len()]);
            SearchSpace::new(lo.clone(), hi.clone(), scale)?;
        } else if search.scale.is_some() {
            return Err(Error::invalid("search.scale needs search.lower and search.upper"));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<Arc<dyn OdeSystem>> {
        Ok(match self.model.system {
            SystemKind::Hiv => Arc::new(self.hiv()?),
            SystemKind::Decay => {
                let d = Decay::default();
                let x0 = match &self.model.x0 {
                    Some(v) if v.len() == 1 => v[0],
                    Some(_) => return Err(Error::invalid("model.x0 for decay needs one value")),
                    None => d.x0,
                };
                Arc::new(Decay::new(x0, self.model.t0.unwrap_or(d.t0), self.model.t_end.unwrap_or(d.t_end)))
            }
        })
    }

    pub fn hiv(&self) -> Result<Hiv> {
        let d = Hiv::default();
        let x0 = match &self.model.x0 {
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            Some(_) => return Err(Error::invalid("model.x0 for hiv needs three values")),
            None => d.x0,
        };
        Ok(Hiv {
            x0,
            t0: self.model.t0.unwrap_or(d.t0),
            t_end: self.model.t_end.unwrap_or(d.t_end),
        })
    }

    pub fn base_params(&self) -> Result<Vec<f64>> {
        let default = match self.model.system {
            SystemKind::Hiv => HIV_TRUTH.to_vec(),
            SystemKind::Decay => vec![1.0],
        };
        let p = self.model.params.clone().unwrap_or(default);
        let expected = self.system()?.param_names().len();
        if p.len() != expected {
            return Err(Error::invalid(format!("model.params needs {expected} values, got {}", p.len())));
        }
        Ok(p)
    }

    pub fn free_indices(&self) -> Result<Vec<usize>> {
        let sys = self.system()?;
        let names: Vec<String> = match (&self.model.free, self.model.system) {
            (Some(f), _) => f.clone(),
            (None, SystemKind::Hiv) => vec!["lambda".into(), "N".into(), "c".into()],
            (None, SystemKind::Decay) => vec!["k".into()],
        };
        let mut idx = Vec::with_capacity(names.len());
        for n in &names {
            let i = sys
                .param_index(n)
                .ok_or_else(|| Error::invalid(format!("model.free: '{n}' is not a parameter of {}", sys.name())))?;
            if idx.contains(&i) {
                return Err(Error::invalid(format!("model.free: '{n}' listed twice")));
            }
            idx.push(i);
        }
        Ok(idx)
    }

    pub fn spline_config(&self) -> Result<SplineConfig> {
        let (t0, t_end) = self.system()?.interval();
        let mut cfg = SplineConfig::new(t0, t_end, self.spline.knots, self.spline.order)?.with_scale(self.spline.scale)?;
        cfg.coef_bound = self.spline.coef_bound;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eta_mode(&self) -> Result<EtaMode> {
        Ok(match self.eta_mode {
            EtaKind::None => EtaMode::None,
            EtaKind::Constant => EtaMode::Constant,
            EtaKind::Spline => EtaMode::Spline(self.spline_config()?),
            EtaKind::CenteredSpline => EtaMode::CenteredSpline(self.spline_config()?),
        })
    }

    pub fn scenario(&self) -> Scenario {
        let t0 = self.model.t0.unwrap_or(0.0);
        let t_end = self.model.t_end.unwrap_or(20.0);
        let mut sc = Scenario::hiv(self.scenario.id);
        sc.noise_fraction = self.scenario.noise_fraction;
        sc.design = crate::models::regular_design(t0, t_end, self.scenario.design_step);
        if let Ok(p) = self.base_params() {
            sc.beta_truth = p;
        }
        sc
    }

    pub fn optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            seed,
            ..self.optimizer.clone()
        }
    }

    /// Fit problem for `dataset` under this configuration, with
    /// `eta_mode` overriding the configured mode when given.
    pub fn fit_spec(&self, dataset: Dataset, eta_mode: Option<EtaMode>, seed: u64) -> Result<FitSpec> {
        let eta_mode = match eta_mode {
            Some(m) => m,
            None => self.eta_mode()?,
        };
        let system = self.system()?;
        let free = self.free_indices()?;
        let mut spec = if self.model.system == SystemKind::Hiv && self.model.free.is_none() {
            let mut s = hiv_fit_spec(dataset, eta_mode, self.solver.h, seed)?;
            s.system = system;
            s
        } else {
            let dim = free.len() + eta_mode.n_coords();
            let (lower, upper) = match (&self.search.lower, &self.search.upper) {
                (Some(l), Some(u)) => (l.clone(), u.clone()),
                _ => {
                    return Err(Error::invalid(
                        "search.lower and search.upper are required for this model and parameter set",
                    ))
                }
            };
            let scale = self.search.scale.clone().unwrap_or_else(|| vec![Scale::Linear; dim]);
            FitSpec {
                system,
                dataset,
                eta_mode,
                base_params: self.base_params()?,
                free,
                h: self.solver.h,
                method: self.solver.method,
                space: SearchSpace::new(lower, upper, scale)?,
                optimizer: self.optimizer(seed),
            }
        };
        spec.base_params = self.base_params()?;
        spec.method = self.solver.method;
        spec.optimizer = self.optimizer(seed);
        if let (Some(l), Some(u)) = (&self.search.lower, &self.search.upper) {
            let scale = self.search.scale.clone().unwrap_or_else(|| vec![Scale::Linear; l.len()]);
            spec.space = SearchSpace::new(l.clone(), u.clone(), scale)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}
