//! The `odefit` command-line tool.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SystemKind};
use crate::error::{Error, Result};
use crate::estimate::{fit, EtaMode, FitReport, FitSpec};
use crate::ident::ident_check;
use crate::inference::{pseudo_information, select_spline, weighted_bootstrap, BootstrapOptions, MIN_BOOTSTRAP};
use crate::io;
use crate::models::{simulate_dataset, Decay};
use crate::solver::{empirical_order, Method};
use crate::study::{run_study, write_study, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "odefit", version, about = "Estimate constant and time-varying ODE parameters from noisy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bootstrap replicates B, or study replicates M.
    #[arg(long, global = true, value_name = "N")]
    replicates: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "W")]
    threads: Option<usize>,
    /// Dataset CSV for fit, bootstrap and select.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Base estimates (`param,estimate` CSV) for bootstrap.
    #[arg(long, global = true, value_name = "PATH")]
    base: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset for the configured scenario.
    Simulate,
    /// Fit the configured model to a dataset.
    Fit,
    /// Weighted-bootstrap intervals and bands around a fit.
    Bootstrap,
    /// Rank spline sizes by AICc.
    Select,
    /// Monte-Carlo study of constant and time-varying fits.
    Study,
    /// Reconstruct the infection rate from noiseless outputs.
    IdentCheck,
    /// Empirical convergence order of the solvers.
    OrderCheck,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

fn execute(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        cfg.run.threads = Some(t);
    }
    let seed = c.seed.unwrap_or(cfg.run.seed);
    let out = c
        .out
        .clone()
        .or_else(|| cfg.run.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ctx = Ctx { cfg, out, seed };
    let job = || match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Fit => cmd_fit(&ctx, need_data(c)?),
        Command::Bootstrap => cmd_bootstrap(&ctx, need_data(c)?, c.base.as_deref(), c.replicates),
        Command::Select => cmd_select(&ctx, need_data(c)?),
        Command::Study => cmd_study(&ctx, c.replicates),
        Command::IdentCheck => cmd_ident_check(&ctx),
        Command::OrderCheck => cmd_order_check(&ctx),
    };
    match ctx.cfg.run.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {t} worker threads: {e}")))?
            .install(job),
        None => job(),
    }
}

fn need_data(c: &Common) -> Result<&Path> {
    c.data.as_deref().ok_or_else(|| Error::invalid("this command needs --data <PATH>"))
}

fn require_hiv(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.model.system != SystemKind::Hiv {
        return Err(Error::invalid(format!("{what} is defined for the hiv system only")));
    }
    Ok(())
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    require_hiv(cfg, "simulate")?;
    let system = cfg.hiv()?;
    let scenario = cfg.scenario();
    let data = simulate_dataset(&system, &scenario, cfg.scenario.truth_step, ctx.seed)?;
    let path = ctx.out.join("data.csv");
    io::write_dataset(&path, &data)?;
    println!(
        "scenario {}: {} times on [{}, {}], noise {}, seed {} -> {}",
        scenario.id.as_str(),
        data.len(),
        data.times[0],
        data.times[data.len() - 1],
        scenario.noise_fraction,
        ctx.seed,
        path.display()
    );
    Ok(())
}

fn write_fit_outputs(dir: &Path, spec: &FitSpec, report: &FitReport) -> Result<()> {
    let text = io::format_report(report, spec.system.name(), spec.h, spec.method.as_str());
    io::write_text(&dir.join("report.txt"), &text)?;
    io::write_params(&dir.join("params.csv"), &report.labels, &report.theta())?;
    io::write_trace(&dir.join("trace.csv"), &report.trace)?;
    if !report.eta_curve.is_empty() {
        io::write_eta_curve(&dir.join("eta_hat.csv"), &report.eta_curve)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_fit(ctx: &Ctx, data: &Path) -> Result<()> {
    let dataset = io::read_dataset(data)?;
    let spec = ctx.cfg.fit_spec(dataset, None, ctx.seed)?;
    let report = fit(&spec)?;
    write_fit_outputs(&ctx.out, &spec, &report)?;
    if ctx.cfg.inference.pseudo_information && !report.diagnostics.penalized {
        match pseudo_information(&spec, &report.theta()) {
            Ok(pi) => {
                io::write_pseudo_info(&ctx.out.join("pseudo_info.csv"), &pi, &report.theta())?;
                if pi.floored || pi.indefinite {
                    println!(
                        "note         pseudo-information {}",
                        if pi.indefinite { "is indefinite" } else { "needed eigenvalue flooring" }
                    );
                }
            }
            Err(e) => println!("note         pseudo-information unavailable: {e}"),
        }
    }
    Ok(())
}

fn cmd_bootstrap(ctx: &Ctx, data: &Path, base: Option<&Path>, replicates: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let b = replicates.unwrap_or(cfg.inference.replicates);
    if b < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {b}")));
    }
    let dataset = io::read_dataset(data)?;
    let spec = cfg.fit_spec(dataset, None, ctx.seed)?;
    let labels = spec.param_labels();
    let center: Vec<f64> = match base {
        Some(p) => {
            let params = io::read_params(p)?;
            let names: Vec<&String> = params.iter().map(|(l, _)| l).collect();
            if names != labels.iter().collect::<Vec<_>>() {
                return Err(Error::invalid(format!(
                    "{}: parameters {:?} do not match the configured fit {:?}",
                    p.display(),
                    names,
                    labels
                )));
            }
            params.into_iter().map(|(_, v)| v).collect()
        }
        None => fit(&spec)?.theta(),
    };
    let options = BootstrapOptions {
        budget_fraction: cfg.inference.budget_fraction,
        spread: cfg.inference.spread,
        force_unit_weights: cfg.inference.force_unit_weights,
        ..BootstrapOptions::default()
    };
    let result = weighted_bootstrap(&spec, &center, b, ctx.seed, &options)?;
    io::write_intervals(&ctx.out.join("intervals.csv"), &result.labels, &result.intervals)?;
    if !result.eta_band.is_empty() {
        io::write_band(&ctx.out.join("band.csv"), &result.eta_band)?;
    }
    let rows: Vec<Vec<String>> = result
        .replicates
        .iter()
        .map(|r| r.iter().map(|v| io::fmt_f64(*v)).collect())
        .collect();
    let header: Vec<&str> = result.labels.iter().map(String::as_str).collect();
    io::write_csv(&ctx.out.join("bootstrap_replicates.csv"), &header, &rows)?;
    println!("bootstrap    {} of {} replicates succeeded", result.b(), result.requested);
    for ((l, (lo, hi)), est) in result.labels.iter().zip(&result.intervals).zip(&center) {
        println!("  {l:<10} {} [{}, {}]", io::fmt_f64(*est), io::fmt_f64(*lo), io::fmt_f64(*hi));
    }
    Ok(())
}

fn cmd_select(ctx: &Ctx, data: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let dataset = io::read_dataset(data)?;
    let mode = match cfg.eta_mode()? {
        m @ EtaMode::CenteredSpline(_) => m,
        _ => EtaMode::Spline(cfg.spline_config()?),
    };
    let template = cfg.fit_spec(dataset, Some(mode), ctx.seed)?;
    let rows = select_spline(&template, &cfg.select.orders, &cfg.select.knots)?;
    io::write_selection(&ctx.out.join("selection.csv"), &rows)?;
    println!("order knots k    aicc");
    for r in &rows {
        println!(
            "{:<5} {:<5} {:<4} {}",
            r.order,
            r.knots,
            r.k,
            r.aicc.map(|a| format!("{a:.2}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_study(ctx: &Ctx, replicates: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    require_hiv(cfg, "study")?;
    let study = StudyConfig {
        replicates: replicates.unwrap_or(cfg.study.replicates),
        magnitudes: cfg.study.magnitudes.clone(),
        tv_spline: cfg.spline_config()?,
        h: cfg.solver.h,
        truth_h: cfg.scenario.truth_step,
        seed: ctx.seed,
        max_failure_rate: cfg.study.max_failure_rate,
        optimizer: cfg.optimizer.clone(),
        threads: None,
    };
    let result = run_study(&study)?;
    write_study(&ctx.out, &result)?;
    print!("{}", crate::study::format_summary(&result));
    Ok(())
}

fn cmd_ident_check(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    require_hiv(cfg, "ident-check")?;
    let system = cfg.hiv()?;
    let truth = cfg.base_params()?;
    let id = cfg.scenario.id;
    let eta = move |t: f64| id.eta(t);
    let (t0, t_end) = crate::models::OdeSystem::interval(&system);
    let n = ((t_end - t0) / cfg.ident.step).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| (t0 + i as f64 * cfg.ident.step).min(t_end)).collect();
    let check = ident_check(&system, &truth, &truth, &eta, cfg.ident.h, &times, cfg.ident.threshold)?;
    io::write_ident(&ctx.out.join("ident.csv"), &check.rows)?;
    let flagged = check.rows.iter().filter(|r| r.flagged).count();
    println!(
        "scenario {}: max relative gap {:.3e}, max error {:.3e}, {} of {} times flagged",
        id.as_str(),
        check.max_gap,
        check.max_error,
        flagged,
        check.rows.len()
    );
    let names = ["lambda", "rho", "N", "delta", "c"];
    let mut rows = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for factor in [1.0 - cfg.ident.perturbation, 1.0 + cfg.ident.perturbation] {
            let mut cand = truth.clone();
            cand[j] *= factor;
            let c = ident_check(&system, &truth, &cand, &eta, cfg.ident.h, &times, cfg.ident.threshold)?;
            println!("  {name:<6} x{factor:<5} gap {:.3e}", c.max_gap);
            rows.push(vec![name.to_string(), io::fmt_f64(factor), io::fmt_f64(c.max_gap)]);
        }
    }
    io::write_csv(&ctx.out.join("ident_perturbed.csv"), &["param", "factor", "max_gap"], &rows)
}

fn cmd_order_check(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let sys = Decay::new(1.0, 0.0, 1.0);
    let mut rows = Vec::new();
    let mut probes = vec![(Method::Rk4, cfg.order.probe), (Method::Euler, cfg.order.probe)];
    probes.extend(cfg.order.off_grid.iter().map(|&t| (Method::Rk4, t)));
    for (method, t) in probes {
        let slope = empirical_order(&sys, &[1.0], None, method, t, &[sys.exact(1.0, t)], &cfg.order.steps)?;
        println!("{:<6} t = {:<6} slope {:.3}", method.as_str(), t, slope);
        rows.push(vec![method.as_str().to_string(), io::fmt_f64(t), io::fmt_f64(slope)]);
    }
    io::write_csv(&ctx.out.join("order.csv"), &["method", "probe", "slope"], &rows)
}
