//! CSV and text outputs. Floats are written in shortest round-trip form so
//! every table reads back bit-for-bit; missing values are blank fields.
//! Files are written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimate::FitReport;
use crate::ident::IdentRow;
use crate::inference::{PseudoInformation, SelectionRow};
use crate::models::{Dataset, ScenarioId};

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let werr = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(werr)?;
    for r in rows {
        w.write_record(r).map_err(werr)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    atomic_write(path, &bytes)
}

/// Header and string records of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, 1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, i + 2, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, row: usize, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => Error::io(path, std::io::Error::other(msg)),
        }
    } else {
        Error::Parse {
            path: path.to_path_buf(),
            row,
            msg: e.to_string(),
        }
    }
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

/// Parse a field; blank means NaN.
fn field(path: &Path, row: usize, name: &str, s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| parse_err(path, row, format!("column '{name}': '{s}' is not a number")))
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Write `time,y1..yK[,sd1..sdK]` plus the sidecar metadata file.
pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    d.validate()?;
    let k = d.obs_dim();
    let mut header = vec!["time".to_string()];
    header.extend((1..=k).map(|j| format!("y{j}")));
    if d.noise_sd.is_some() {
        header.extend((1..=k).map(|j| format!("sd{j}")));
    }
    let rows: Vec<Vec<String>> = (0..d.len())
        .map(|i| {
            let mut r = vec![fmt_f64(d.times[i])];
            r.extend(d.observations[i].iter().map(|v| fmt_f64(*v)));
            if let Some(sd) = &d.noise_sd {
                r.extend(sd[i].iter().map(|v| fmt_f64(*v)));
            }
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &h, &rows)?;

    let mut meta = String::new();
    let flags: Vec<&str> = d.log_scale.iter().map(|b| if *b { "true" } else { "false" }).collect();
    meta.push_str(&format!("log_scale = {}\n", flags.join(",")));
    if let Some(s) = &d.system {
        meta.push_str(&format!("system = {s}\n"));
    }
    if let Some(s) = d.scenario {
        meta.push_str(&format!("scenario = {}\n", s.as_str()));
    }
    if let Some(s) = d.seed {
        meta.push_str(&format!("seed = {s}\n"));
    }
    if let Some(f) = d.noise_fraction {
        meta.push_str(&format!("noise_fraction = {}\n", fmt_f64(f)));
    }
    atomic_write(&meta_path(path), meta.as_bytes())
}

/// Read a dataset; without a sidecar every coordinate is on the raw scale.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("time") {
        return Err(parse_err(path, 1, "first column must be 'time'"));
    }
    let k = header.iter().filter(|h| h.starts_with('y')).count();
    let with_sd = header.iter().any(|h| h.starts_with("sd"));
    let mut expected = vec!["time".to_string()];
    expected.extend((1..=k).map(|j| format!("y{j}")));
    if with_sd {
        expected.extend((1..=k).map(|j| format!("sd{j}")));
    }
    if k == 0 || header != expected {
        return Err(parse_err(path, 1, format!("header must be {}", expected.join(","))));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut obs = Vec::with_capacity(rows.len());
    let mut sds = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let row = i + 2;
        if r.len() != header.len() {
            return Err(parse_err(path, row, format!("expected {} fields, found {}", header.len(), r.len())));
        }
        let mut vals = Vec::with_capacity(r.len());
        for (name, s) in header.iter().zip(r) {
            let v = field(path, row, name, s)?;
            if !v.is_finite() {
                return Err(parse_err(path, row, format!("column '{name}' is missing or not finite")));
            }
            vals.push(v);
        }
        if let Some(&prev) = times.last() {
            if !(vals[0] > prev) {
                return Err(parse_err(path, row, "times must be strictly increasing"));
            }
        }
        times.push(vals[0]);
        obs.push(vals[1..=k].to_vec());
        if with_sd {
            sds.push(vals[k + 1..].to_vec());
        }
    }
    let mut d = Dataset::new(times, obs, vec![false; k])?;
    if with_sd {
        d.noise_sd = Some(sds);
    }
    let mp = meta_path(path);
    if mp.exists() {
        read_meta(&mp, &mut d)?;
    }
    d.validate()?;
    Ok(d)
}

fn read_meta(path: &Path, d: &mut Dataset) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = i + 1;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, row, "expected 'key = value'"))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "log_scale" => {
                let flags: std::result::Result<Vec<bool>, _> = v
                    .split(',')
                    .map(|s| match s.trim() {
                        "true" => Ok(true),
                        "false" => Ok(false),
                        other => Err(other.to_string()),
                    })
                    .collect();
                let flags = flags.map_err(|s| parse_err(path, row, format!("bad log_scale flag '{s}'")))?;
                if flags.len() != d.obs_dim() {
                    return Err(parse_err(path, row, "log_scale needs one flag per observed column"));
                }
                d.log_scale = flags;
            }
            "system" => d.system = Some(v.to_string()),
            "scenario" => d.scenario = Some(ScenarioId::parse(v).map_err(|e| parse_err(path, row, e.to_string()))?),
            "seed" => d.seed = Some(v.parse().map_err(|_| parse_err(path, row, "bad seed"))?),
            "noise_fraction" => d.noise_fraction = Some(field(path, row, k, v)?),
            _ => return Err(parse_err(path, row, format!("unknown metadata key '{k}'"))),
        }
    }
    Ok(())
}

pub fn write_params(path: &Path, labels: &[String], values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = labels.iter().zip(values).map(|(l, v)| vec![l.clone(), fmt_f64(*v)]).collect();
    write_csv(path, &["param", "estimate"], &rows)
}

pub fn read_params(path: &Path) -> Result<Vec<(String, f64)>> {
    let (header, rows) = read_csv(path)?;
    if header != ["param", "estimate"] {
        return Err(parse_err(path, 1, "header must be param,estimate"));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 2 {
                return Err(parse_err(path, i + 2, "expected 2 fields"));
            }
            Ok((r[0].clone(), field(path, i + 2, "estimate", &r[1])?))
        })
        .collect()
}

pub fn write_eta_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = curve.iter().map(|(t, e)| vec![fmt_f64(*t), fmt_f64(*e)]).collect();
    write_csv(path, &["time", "eta_hat"], &rows)
}

pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace.iter().enumerate().map(|(g, v)| vec![g.to_string(), fmt_f64(*v)]).collect();
    write_csv(path, &["generation", "best_value"], &rows)
}

pub fn write_pseudo_info(path: &Path, pi: &PseudoInformation, theta: &[f64]) -> Result<()> {
    let se = pi.standard_errors();
    let rows: Vec<Vec<String>> = pi
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            vec![
                l.clone(),
                fmt_f64(theta[pi.coords[i]]),
                fmt_f64(pi.covariance[(i, i)]),
                fmt_f64(se[i]),
            ]
        })
        .collect();
    write_csv(path, &["param", "estimate", "variance", "se"], &rows)
}

pub fn write_intervals(path: &Path, labels: &[String], intervals: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(intervals)
        .map(|(l, (lo, hi))| vec![l.clone(), fmt_f64(*lo), fmt_f64(*hi)])
        .collect();
    write_csv(path, &["param", "lo", "hi"], &rows)
}

pub fn write_band(path: &Path, band: &[(f64, f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = band
        .iter()
        .map(|(t, lo, hi)| vec![fmt_f64(*t), fmt_f64(*lo), fmt_f64(*hi)])
        .collect();
    write_csv(path, &["time", "lo", "hi"], &rows)
}

pub fn write_selection(path: &Path, rows: &[SelectionRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.order.to_string(), r.knots.to_string(), fmt_opt(r.aicc)])
        .collect();
    write_csv(path, &["order", "knots", "aicc"], &rows)
}

/// `(order, knots, aicc)` rows; a blank AICc reads as `None`.
pub fn read_selection(path: &Path) -> Result<Vec<(usize, usize, Option<f64>)>> {
    let (header, rows) = read_csv(path)?;
    if header != ["order", "knots", "aicc"] {
        return Err(parse_err(path, 1, "header must be order,knots,aicc"));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let row = i + 2;
            if r.len() != 3 {
                return Err(parse_err(path, row, "expected 3 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, row, format!("'{s}' is not an integer")));
            let a = field(path, row, "aicc", &r[2])?;
            Ok((int(&r[0])?, int(&r[1])?, if a.is_nan() { None } else { Some(a) }))
        })
        .collect()
}

pub fn write_ident(path: &Path, rows: &[IdentRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.time),
                fmt_f64(r.eta_cd4),
                fmt_f64(r.eta_viral),
                (r.flagged as u8).to_string(),
            ]
        })
        .collect();
    write_csv(path, &["time", "eta_cd4", "eta_viral", "flag"], &rows)
}

/// Plain-text summary of a fit.
pub fn format_report(r: &FitReport, system: &str, h: f64, method: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("system       {system}\n"));
    s.push_str(&format!("eta mode     {}\n", r.eta_mode));
    s.push_str(&format!("solver       {method}, h = {h}\n"));
    s.push_str(&format!("observations {} times x {} outputs\n", r.n, r.obs_dim));
    s.push_str(&format!("free scalars {}\n", r.k));
    s.push_str(&format!("rss          {}\n", fmt_f64(r.rss)));
    s.push_str(&format!("sigma2_hat   {}\n", fmt_f64(r.sigma2_hat)));
    s.push_str(&format!(
        "optimizer    {} generations, {} evaluations, {}\n",
        r.diagnostics.generations,
        r.diagnostics.evaluations,
        if r.diagnostics.stalled { "stalled" } else { "generation cap reached" }
    ));
    if r.diagnostics.penalized {
        s.push_str("warning      no integrable candidate found\n");
    }
    if !r.diagnostics.at_bound.is_empty() {
        s.push_str(&format!("at bound     {}\n", r.diagnostics.at_bound.join(", ")));
    }
    s.push_str("\nestimates\n");
    for (l, v) in r.labels.iter().zip(r.theta()) {
        s.push_str(&format!("  {l:<10} {}\n", fmt_f64(v)));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{hiv_system, simulate_dataset, Scenario};

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        let d = simulate_dataset(&hiv_system(), &Scenario::hiv(ScenarioId::II), 0.01, 5).unwrap();
        write_dataset(&p, &d).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn malformed_rows_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "time,y1,y2\n0.5,1,2\n1.0,abc,3\n").unwrap();
        let e = read_dataset(&p).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 3, .. }), "{e}");
        std::fs::write(&p, "time,y1,y2\n0.5,1,2\n1.0,3\n").unwrap();
        assert!(matches!(read_dataset(&p).unwrap_err(), Error::Parse { row: 3, .. }));
        std::fs::write(&p, "time,y1,y2\n0.5,1,2\n0.5,1,3\n").unwrap();
        assert!(matches!(read_dataset(&p).unwrap_err(), Error::Parse { row: 3, .. }));
        std::fs::write(&p, "t,y1\n0.5,1\n").unwrap();
        assert!(matches!(read_dataset(&p).unwrap_err(), Error::Parse { row: 1, .. }));
        let e = read_dataset(&dir.path().join("missing.csv")).unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn selection_blank_cells_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.csv");
        let rows = vec![
            SelectionRow { order: 3, knots: 5, k: 11, rss: Some(1.0), aicc: Some(-252.8) },
            SelectionRow { order: 4, knots: 3, k: 10, rss: None, aicc: None },
        ];
        write_selection(&p, &rows).unwrap();
        assert_eq!(read_selection(&p).unwrap(), vec![(3, 5, Some(-252.8)), (4, 3, None)]);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.ends_with("4,3,\n"), "{text}");
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("params.csv");
        let labels = vec!["lambda".to_string(), "eta".to_string()];
        let vals = vec![36.000000000000014, 9.5e-6];
        write_params(&p, &labels, &vals).unwrap();
        let back = read_params(&p).unwrap();
        assert_eq!(back, vec![("lambda".to_string(), vals[0]), ("eta".to_string(), vals[1])]);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn arbitrary_finite_datasets_round_trip(
                rows in proptest::collection::vec((any::<f64>(), any::<f64>()), 1..30),
                log in any::<bool>(),
            ) {
                let times: Vec<f64> = (0..rows.len()).map(|i| i as f64 * 0.37 + 0.1).collect();
                let obs: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|(a, b)| vec![if a.is_finite() { *a } else { 1.0 }, if b.is_finite() { *b } else { -2.5e-300 }])
                    .collect();
                let d = Dataset::new(times, obs, vec![log, false]).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("d.csv");
                write_dataset(&p, &d).unwrap();
                prop_assert_eq!(read_dataset(&p).unwrap(), d);
            }
        }
    }
}
