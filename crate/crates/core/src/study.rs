//! Monte-Carlo simulation study on the HIV model: for each change
//! magnitude, a constant and a time-varying truth, each fitted with a
//! constant and a spline infection rate.

use std::path::Path;

use rayon::prelude::*;

use crate::config::Magnitude;
use crate::error::{Error, Result};
use crate::estimate::{fit, hiv_fit_spec, EtaMode};
use crate::inference::{are, pseudo_information};
use crate::io::{fmt_f64, read_csv, write_csv, write_text};
use crate::models::{hiv_system, simulate_dataset, Scenario, ScenarioId};
use crate::optim::OptimizerConfig;
use crate::rng::{self, streams};
use crate::spline::SplineConfig;

/// Estimated constants reported by the study, with their true values.
pub const STUDY_PARAMS: [&str; 3] = ["lambda", "N", "c"];
pub const STUDY_TRUTH: [f64; 3] = [36.0, 1000.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    Constant,
    TimeVarying,
}

impl FitModel {
    pub fn as_str(self) -> &'static str {
        match self {
            FitModel::Constant => "constant",
            FitModel::TimeVarying => "time_varying",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub magnitude: Magnitude,
    pub truth: ScenarioId,
    pub fit: FitModel,
}

impl Cell {
    pub fn truth_kind(&self) -> &'static str {
        if self.truth.is_constant() {
            "constant"
        } else {
            "time_varying"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub replicates: usize,
    pub magnitudes: Vec<Magnitude>,
    pub tv_spline: SplineConfig,
    pub h: f64,
    pub truth_h: f64,
    pub seed: u64,
    pub max_failure_rate: f64,
    pub optimizer: OptimizerConfig,
    pub threads: Option<usize>,
}

impl StudyConfig {
    pub fn new(replicates: usize, seed: u64) -> Result<StudyConfig> {
        Ok(StudyConfig {
            replicates,
            magnitudes: vec![Magnitude::Small, Magnitude::Large],
            tv_spline: SplineConfig::new(0.0, 20.0, 1, 3)?,
            h: 0.05,
            truth_h: 0.005,
            seed,
            max_failure_rate: 0.1,
            optimizer: OptimizerConfig::default(),
            threads: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub cell: Cell,
    pub replicate: usize,
    pub ok: bool,
    /// `(lambda, N, c)`.
    pub estimates: [f64; 3],
    /// Constant fits only.
    pub eta_hat: Option<f64>,
    pub rss: f64,
    /// Pseudo-information variances of `(lambda, N, c)`.
    pub variances: Option<[f64; 3]>,
    pub eta_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub successes: usize,
    pub failures: usize,
    pub are: [f64; 3],
    pub sigma2_emp: [f64; 3],
    /// Median over replicates of the pseudo-information variance.
    pub sigma2_ode: Option<[f64; 3]>,
    /// `(time, mean eta_hat, true eta)`.
    pub eta_mean: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub cells: Vec<CellSummary>,
}

impl StudyResult {
    pub fn cell(&self, magnitude: Magnitude, truth: ScenarioId, fit: FitModel) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.cell.magnitude == magnitude && c.cell.truth == truth && c.cell.fit == fit)
    }
}

fn scenario_index(id: ScenarioId) -> u64 {
    ScenarioId::ALL.iter().position(|s| *s == id).unwrap_or(0) as u64
}

/// Seeds for replicate `r` of `truth`: data, then one optimizer seed per fit model.
fn replicate_seeds(master: u64, truth: ScenarioId, r: usize) -> (u64, u64, u64) {
    let base = streams::STUDY + scenario_index(truth) * 1_000_000 + 3 * r as u64;
    (
        rng::derive_seed(master, base),
        rng::derive_seed(master, base + 1),
        rng::derive_seed(master, base + 2),
    )
}

fn fit_cell(cfg: &StudyConfig, cell: Cell, data: &crate::models::Dataset, seed: u64, r: usize) -> ReplicateRecord {
    let mode = match cell.fit {
        FitModel::Constant => EtaMode::Constant,
        FitModel::TimeVarying => EtaMode::Spline(cfg.tv_spline.clone()),
    };
    let failed = ReplicateRecord {
        cell,
        replicate: r,
        ok: false,
        estimates: [f64::NAN; 3],
        eta_hat: None,
        rss: f64::NAN,
        variances: None,
        eta_curve: Vec::new(),
    };
    let spec = match hiv_fit_spec(data.clone(), mode, cfg.h, seed) {
        Ok(mut s) => {
            s.optimizer = OptimizerConfig {
                seed,
                parallel: false,
                ..cfg.optimizer.clone()
            };
            s
        }
        Err(_) => return failed,
    };
    let report = match fit(&spec) {
        Ok(r) if !r.diagnostics.penalized => r,
        _ => return failed,
    };
    let theta = report.theta();
    let variances = pseudo_information(&spec, &theta)
        .ok()
        .filter(|pi| !pi.indefinite)
        .map(|pi| [pi.covariance[(0, 0)], pi.covariance[(1, 1)], pi.covariance[(2, 2)]]);
    ReplicateRecord {
        cell,
        replicate: r,
        ok: true,
        estimates: [theta[0], theta[1], theta[2]],
        eta_hat: (cell.fit == FitModel::Constant).then(|| theta[3]),
        rss: report.rss,
        variances,
        eta_curve: report.eta_curve,
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    if cfg.replicates < 10 {
        return Err(Error::invalid("a study needs at least 10 replicates"));
    }
    if cfg.magnitudes.is_empty() {
        return Err(Error::invalid("a study needs at least one change magnitude"));
    }
    let mut jobs = Vec::new();
    for &m in &cfg.magnitudes {
        let (a, b) = m.scenarios();
        for truth in [a, b] {
            for r in 0..cfg.replicates {
                jobs.push((m, truth, r));
            }
        }
    }
    let run = || -> Vec<Vec<ReplicateRecord>> {
        jobs.par_iter()
            .map(|&(magnitude, truth, r)| {
                let (data_seed, s_const, s_tv) = replicate_seeds(cfg.seed, truth, r);
                let cells = [
                    (Cell { magnitude, truth, fit: FitModel::Constant }, s_const),
                    (Cell { magnitude, truth, fit: FitModel::TimeVarying }, s_tv),
                ];
                match simulate_dataset(&hiv_system(), &Scenario::hiv(truth), cfg.truth_h, data_seed) {
                    Ok(data) => cells.iter().map(|&(c, s)| fit_cell(cfg, c, &data, s, r)).collect(),
                    Err(_) => cells
                        .iter()
                        .map(|&(cell, _)| ReplicateRecord {
                            cell,
                            replicate: r,
                            ok: false,
                            estimates: [f64::NAN; 3],
                            eta_hat: None,
                            rss: f64::NAN,
                            variances: None,
                            eta_curve: Vec::new(),
                        })
                        .collect(),
                }
            })
            .collect()
    };
    let nested = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build a {t}-thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    // Group by cell in a fixed order: magnitude, truth, fit, replicate.
    let mut records: Vec<ReplicateRecord> = nested.into_iter().flatten().collect();
    let key = |rec: &ReplicateRecord| {
        (
            cfg.magnitudes.iter().position(|m| *m == rec.cell.magnitude).unwrap_or(0),
            scenario_index(rec.cell.truth),
            rec.cell.fit == FitModel::TimeVarying,
            rec.replicate,
        )
    };
    records.sort_by_key(key);

    let mut cells = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let cell = records[i].cell;
        let j = records[i..].iter().position(|r| r.cell != cell).map_or(records.len(), |p| i + p);
        cells.push(summarize(cell, &records[i..j])?);
        i = j;
    }
    for c in &cells {
        let total = c.successes + c.failures;
        if c.failures as f64 > cfg.max_failure_rate * total as f64 {
            return Err(Error::numerical(format!(
                "{} of {total} replicates failed in the {} / {} truth {} / {} fit cell",
                c.failures,
                c.cell.magnitude.as_str(),
                c.cell.truth_kind(),
                c.cell.truth.as_str(),
                c.cell.fit.as_str()
            )));
        }
    }
    Ok(StudyResult { records, cells })
}

/// Sample variance with the `m - 1` denominator.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    crate::inference::quantile_sorted(&x, 0.5)
}

fn summarize(cell: Cell, recs: &[ReplicateRecord]) -> Result<CellSummary> {
    let ok: Vec<&ReplicateRecord> = recs.iter().filter(|r| r.ok).collect();
    let failures = recs.len() - ok.len();
    if ok.len() < 2 {
        return Err(Error::numerical(format!(
            "only {} successful replicates in the {} {} / {} fit cell",
            ok.len(),
            cell.magnitude.as_str(),
            cell.truth.as_str(),
            cell.fit.as_str()
        )));
    }
    let est: Vec<Vec<f64>> = ok.iter().map(|r| r.estimates.to_vec()).collect();
    let a = are(&est, &STUDY_TRUTH)?;
    let col = |j: usize| -> Vec<f64> { ok.iter().map(|r| r.estimates[j]).collect() };
    let sigma2_emp = [sample_variance(&col(0)), sample_variance(&col(1)), sample_variance(&col(2))];
    let vars: Vec<[f64; 3]> = ok.iter().filter_map(|r| r.variances).collect();
    let sigma2_ode = (!vars.is_empty()).then(|| {
        [
            median(vars.iter().map(|v| v[0]).collect()),
            median(vars.iter().map(|v| v[1]).collect()),
            median(vars.iter().map(|v| v[2]).collect()),
        ]
    });
    let npts = ok[0].eta_curve.len();
    let eta_mean = (0..npts)
        .map(|p| {
            let t = ok[0].eta_curve[p].0;
            let m = ok.iter().map(|r| r.eta_curve[p].1).sum::<f64>() / ok.len() as f64;
            (t, m, cell.truth.eta(t))
        })
        .collect();
    Ok(CellSummary {
        cell,
        successes: ok.len(),
        failures,
        are: [a[0], a[1], a[2]],
        sigma2_emp,
        sigma2_ode,
        eta_mean,
    })
}

fn cell_fields(c: &Cell) -> Vec<String> {
    vec![
        c.magnitude.as_str().to_string(),
        c.truth.as_str().to_string(),
        c.fit.as_str().to_string(),
    ]
}

pub const REPLICATES_FILE: &str = "study_replicates.csv";
pub const ARE_FILE: &str = "study_are.csv";
pub const VARIANCE_FILE: &str = "study_variance.csv";
pub const ETA_FILE: &str = "study_eta_mean.csv";
pub const SUMMARY_FILE: &str = "study_summary.txt";

pub fn write_study(dir: &Path, result: &StudyResult) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .map(|r| {
            let mut f = cell_fields(&r.cell);
            f.push(r.replicate.to_string());
            f.push((r.ok as u8).to_string());
            f.extend(r.estimates.iter().map(|v| fmt_f64(*v)));
            f.push(opt(r.eta_hat));
            f.push(fmt_f64(r.rss));
            match r.variances {
                Some(v) => f.extend(v.iter().map(|x| fmt_f64(*x))),
                None => f.extend(std::iter::repeat_n(String::new(), 3)),
            }
            f
        })
        .collect();
    write_csv(
        &dir.join(REPLICATES_FILE),
        &[
            "magnitude", "truth", "fit", "replicate", "ok", "lambda", "N", "c", "eta", "rss", "var_lambda", "var_N",
            "var_c",
        ],
        &rows,
    )?;

    let rows: Vec<Vec<String>> = result
        .cells
        .iter()
        .map(|c| {
            let mut f = cell_fields(&c.cell);
            f.push(c.successes.to_string());
            f.push(c.failures.to_string());
            f.extend(c.are.iter().map(|v| fmt_f64(*v)));
            f
        })
        .collect();
    write_csv(
        &dir.join(ARE_FILE),
        &["magnitude", "truth", "fit", "successes", "failures", "are_lambda", "are_N", "are_c"],
        &rows,
    )?;

    let mut rows = Vec::new();
    for c in &result.cells {
        for (j, p) in STUDY_PARAMS.iter().enumerate() {
            let mut f = cell_fields(&c.cell);
            f.push(p.to_string());
            f.push(opt(c.sigma2_ode.map(|v| v[j])));
            f.push(fmt_f64(c.sigma2_emp[j]));
            rows.push(f);
        }
    }
    write_csv(
        &dir.join(VARIANCE_FILE),
        &["magnitude", "truth", "fit", "param", "sigma2_ode", "sigma2_emp"],
        &rows,
    )?;

    let mut rows = Vec::new();
    for c in &result.cells {
        for (t, m, tr) in &c.eta_mean {
            let mut f = cell_fields(&c.cell);
            f.extend([fmt_f64(*t), fmt_f64(*m), fmt_f64(*tr)]);
            rows.push(f);
        }
    }
    write_csv(
        &dir.join(ETA_FILE),
        &["magnitude", "truth", "fit", "time", "eta_mean", "eta_true"],
        &rows,
    )?;
    write_text(&dir.join(SUMMARY_FILE), &format_summary(result))
}

pub fn format_summary(result: &StudyResult) -> String {
    let mut s = String::from(
        "magnitude truth          fit           ok   ARE(lambda)  ARE(N)     ARE(c)     s2ode(lambda) s2emp(lambda)\n",
    );
    for c in &result.cells {
        s.push_str(&format!(
            "{:<9} {:<14} {:<13} {:<4} {:<12.2} {:<10.2} {:<10.2} {:<13} {:.4}\n",
            c.cell.magnitude.as_str(),
            format!("{} ({})", c.cell.truth_kind(), c.cell.truth.as_str()),
            c.cell.fit.as_str(),
            c.successes,
            c.are[0],
            c.are[1],
            c.are[2],
            c.sigma2_ode.map(|v| format!("{:.4}", v[0])).unwrap_or_else(|| "-".into()),
            c.sigma2_emp[0],
        ));
    }
    s
}

/// Recompute the empirical variances of successful replicates per cell
/// from a persisted replicate table, in file order.
pub fn sigma2_emp_from_file(path: &Path) -> Result<Vec<(String, String, String, [f64; 3])>> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column {name}", path.display())))
    };
    let (im, it, ifit, iok) = (col("magnitude")?, col("truth")?, col("fit")?, col("ok")?);
    let ip = [col("lambda")?, col("N")?, col("c")?];
    let mut groups: Vec<((String, String, String), Vec<[f64; 3]>)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.get(iok).map(String::as_str) != Some("1") {
            continue;
        }
        let key = (r[im].clone(), r[it].clone(), r[ifit].clone());
        let mut v = [0.0; 3];
        for (j, &c) in ip.iter().enumerate() {
            v[j] = r[c].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: i + 2,
                msg: format!("bad estimate '{}'", r[c]),
            })?;
        }
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|((m, t, f), g)| {
            let c = |j: usize| -> Vec<f64> { g.iter().map(|v| v[j]).collect() };
            (m, t, f, [sample_variance(&c(0)), sample_variance(&c(1)), sample_variance(&c(2))])
        })
        .collect())
}
