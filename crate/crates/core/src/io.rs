//! Text formats.
//!
//! Fringe scan CSV:
//!
//! ```text
//! # separation=2.64e-8
//! # seed=0
//! tau2_s,counts
//! -3e-11,30512
//! ...
//! ```
//!
//! Visibility curve CSV: header `separation_s,visibility,error` (or
//! `separation_s,visibility` for an unweighted curve).
//!
//! Experiment config: one `key = value` per line, `#` starts a comment, SI
//! units throughout. See [`CONFIG_KEYS`].
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit. Lines end with LF.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::decay_fit::VisibilityCurve;
use crate::error::{EchoError, Result};
use crate::experiment::{centered_scan, ExperimentConfig, NoiseModel};
use crate::fringe::FringeScan;

pub const SCAN_HEADER: &str = "tau2_s,counts";
pub const CURVE_HEADER: &str = "separation_s,visibility,error";
pub const CURVE_HEADER_UNWEIGHTED: &str = "separation_s,visibility";

pub fn scan_to_csv(scan: &FringeScan, metadata: &[(&str, String)]) -> String {
    let mut out = String::new();
    writeln!(out, "# separation={}", scan.separation).unwrap();
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out.push_str(SCAN_HEADER);
    out.push('\n');
    for (d, c) in scan.delays.iter().zip(&scan.counts) {
        writeln!(out, "{d},{c}").unwrap();
    }
    out
}

pub fn save_scan(
    path: impl AsRef<Path>,
    scan: &FringeScan,
    metadata: &[(&str, String)],
) -> Result<()> {
    fs::write(path, scan_to_csv(scan, metadata))?;
    Ok(())
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<FringeScan> {
    parse_scan(&fs::read_to_string(path)?)
}

/// Data rows of a CSV body after comments, with 1-based line numbers.
struct Table<'a> {
    comments: Vec<(usize, &'a str)>,
    rows: Vec<(usize, Vec<&'a str>)>,
    header_line: usize,
    header: &'a str,
}

fn split_table(text: &str) -> Result<Table<'_>> {
    if text.trim().is_empty() {
        return Err(EchoError::parse(1, "empty file"));
    }
    let mut comments = Vec::new();
    let mut header = None;
    let mut rows = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push((line_no, c.trim()));
            continue;
        }
        match header {
            None => header = Some((line_no, line)),
            Some(_) => rows.push((line_no, line.split(',').map(str::trim).collect())),
        }
    }
    let (header_line, header) =
        header.ok_or_else(|| EchoError::parse(last_line.max(1), "missing header row"))?;
    if rows.is_empty() {
        return Err(EchoError::parse(last_line.max(1), "no data rows"));
    }
    Ok(Table {
        comments,
        rows,
        header_line,
        header,
    })
}

fn number(line: usize, column: &str, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| EchoError::parse(line, format!("column {column}: '{field}' is not a number")))
        .and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(EchoError::parse(
                    line,
                    format!("column {column}: non-finite value {v}"),
                ))
            }
        })
}

pub fn parse_scan(text: &str) -> Result<FringeScan> {
    let table = split_table(text)?;
    if table.header != SCAN_HEADER {
        return Err(EchoError::parse(
            table.header_line,
            format!("expected header '{SCAN_HEADER}', found '{}'", table.header),
        ));
    }
    let mut separation = None;
    for (line, c) in &table.comments {
        if let Some((k, v)) = c.split_once('=') {
            if k.trim() == "separation" {
                separation = Some(number(*line, "separation", v.trim())?);
            }
        }
    }
    let separation =
        separation.ok_or_else(|| EchoError::parse(1, "missing '# separation=' metadata"))?;

    let mut delays = Vec::with_capacity(table.rows.len());
    let mut counts = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        if fields.len() != 2 {
            return Err(EchoError::parse(
                *line,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let d = number(*line, "tau2_s", fields[0])?;
        let c = number(*line, "counts", fields[1])?;
        if c < 0.0 {
            return Err(EchoError::parse(*line, format!("negative count {c}")));
        }
        if let Some(&prev) = delays.last() {
            if !(d > prev) {
                return Err(EchoError::parse(
                    *line,
                    "delays must be strictly increasing",
                ));
            }
        }
        delays.push(d);
        counts.push(c);
    }
    FringeScan::new(delays, counts, separation)
        .map_err(|e| EchoError::parse(table.header_line, e.to_string()))
}

pub fn curve_to_csv(curve: &VisibilityCurve) -> String {
    let mut out = String::new();
    match &curve.errors {
        Some(errors) => {
            out.push_str(CURVE_HEADER);
            out.push('\n');
            for ((s, v), e) in curve
                .separations
                .iter()
                .zip(&curve.visibilities)
                .zip(errors)
            {
                writeln!(out, "{s},{v},{e}").unwrap();
            }
        }
        None => {
            out.push_str(CURVE_HEADER_UNWEIGHTED);
            out.push('\n');
            for (s, v) in curve.separations.iter().zip(&curve.visibilities) {
                writeln!(out, "{s},{v}").unwrap();
            }
        }
    }
    out
}

pub fn save_curve(path: impl AsRef<Path>, curve: &VisibilityCurve) -> Result<()> {
    fs::write(path, curve_to_csv(curve))?;
    Ok(())
}

pub fn load_curve(path: impl AsRef<Path>) -> Result<VisibilityCurve> {
    parse_curve(&fs::read_to_string(path)?)
}

pub fn parse_curve(text: &str) -> Result<VisibilityCurve> {
    let table = split_table(text)?;
    let weighted = match table.header {
        CURVE_HEADER => true,
        CURVE_HEADER_UNWEIGHTED => false,
        other => {
            return Err(EchoError::parse(
                table.header_line,
                format!("expected header '{CURVE_HEADER}', found '{other}'"),
            ))
        }
    };
    let width = if weighted { 3 } else { 2 };
    let mut seps = Vec::new();
    let mut vis = Vec::new();
    let mut errs = Vec::new();
    for (line, fields) in &table.rows {
        if fields.len() != width {
            return Err(EchoError::parse(
                *line,
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        let s = number(*line, "separation_s", fields[0])?;
        let v = number(*line, "visibility", fields[1])?;
        if s < 0.0 {
            return Err(EchoError::parse(*line, format!("negative separation {s}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(EchoError::parse(
                *line,
                format!("visibility {v} outside [0, 1]"),
            ));
        }
        if weighted {
            let e = number(*line, "error", fields[2])?;
            if !(e > 0.0) {
                return Err(EchoError::parse(
                    *line,
                    format!("error must be positive, got {e}"),
                ));
            }
            errs.push(e);
        }
        seps.push(s);
        vis.push(v);
    }
    VisibilityCurve::new(seps, vis, weighted.then_some(errs))
        .map_err(|e| EchoError::parse(table.header_line, e.to_string()))
}

/// Keys accepted in experiment config files, in canonical order.
pub const CONFIG_KEYS: [&str; 20] = [
    "larmor_hz",
    "sigma",
    "p0",
    "t2",
    "rate_r",
    "t_h",
    "fidelity_slope",
    "theta1",
    "theta2",
    "theta3",
    "tau1",
    "rep_time",
    "scan_span",
    "scan_points",
    "counts_scale",
    "drift_rate",
    "noise",
    "seed",
    "sweep_max",
    "sweep_points",
];

fn format_noise(noise: &NoiseModel) -> String {
    match noise {
        NoiseModel::None => "none".into(),
        NoiseModel::Poisson => "poisson".into(),
        NoiseModel::Gaussian { rel } => format!("gaussian:{rel}"),
    }
}

fn parse_noise(value: &str) -> Option<NoiseModel> {
    match value {
        "none" => Some(NoiseModel::None),
        "poisson" => Some(NoiseModel::Poisson),
        other => other
            .strip_prefix("gaussian:")
            .and_then(|r| r.trim().parse::<f64>().ok())
            .map(|rel| NoiseModel::Gaussian { rel }),
    }
}

/// Value of one config key, formatted as it would appear in a file.
pub fn config_value(cfg: &ExperimentConfig, key: &str) -> Option<String> {
    let span = cfg.scan.last().copied().unwrap_or(0.0) - cfg.scan.first().copied().unwrap_or(0.0);
    Some(match key {
        "larmor_hz" => (cfg.ensemble.omega0 / (2.0 * std::f64::consts::PI)).to_string(),
        "sigma" => cfg.ensemble.sigma.to_string(),
        "p0" => cfg.ensemble.p0.to_string(),
        "t2" => cfg.decoherence.t2.to_string(),
        "rate_r" => cfg.decoherence.rate_r.to_string(),
        "t_h" => cfg.decoherence.t_h.to_string(),
        "fidelity_slope" => cfg.fidelity.slope.to_string(),
        "theta1" => cfg.angles[0].to_string(),
        "theta2" => cfg.angles[1].to_string(),
        "theta3" => cfg.angles[2].to_string(),
        "tau1" => cfg.tau1.to_string(),
        "rep_time" => cfg.rep_time.to_string(),
        "scan_span" => span.to_string(),
        "scan_points" => cfg.scan.len().to_string(),
        "counts_scale" => cfg.counts_scale.to_string(),
        "drift_rate" => cfg.drift_rate.to_string(),
        "noise" => format_noise(&cfg.noise),
        "seed" => cfg.seed.to_string(),
        "sweep_max" => cfg.sweep_max.to_string(),
        "sweep_points" => cfg.sweep_points.to_string(),
        _ => return None,
    })
}

/// Sets one config key from its text form. Errors name the key.
pub fn set_config_value(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    let bad = |what: &str| EchoError::invalid(format!("config key '{key}': {what} '{value}'"));
    let float = || value.parse::<f64>().map_err(|_| bad("not a number"));
    let count = || {
        value
            .parse::<usize>()
            .map_err(|_| bad("not a non-negative integer"))
    };
    match key {
        "larmor_hz" => cfg.ensemble.omega0 = 2.0 * std::f64::consts::PI * float()?,
        "sigma" => cfg.ensemble.sigma = float()?,
        "p0" => cfg.ensemble.p0 = float()?,
        "t2" => cfg.decoherence.t2 = float()?,
        "rate_r" => cfg.decoherence.rate_r = float()?,
        "t_h" => cfg.decoherence.t_h = float()?,
        "fidelity_slope" => {
            let slope = float()?;
            if !(slope >= 0.0) {
                return Err(bad("must be >= 0, got"));
            }
            cfg.fidelity.slope = slope;
        }
        "theta1" => cfg.angles[0] = float()?,
        "theta2" => cfg.angles[1] = float()?,
        "theta3" => cfg.angles[2] = float()?,
        "tau1" => cfg.tau1 = float()?,
        "rep_time" => cfg.rep_time = float()?,
        "scan_span" => {
            let points = cfg.scan.len();
            cfg.scan = centered_scan(points, float()?);
        }
        "scan_points" => {
            let span =
                cfg.scan.last().copied().unwrap_or(0.0) - cfg.scan.first().copied().unwrap_or(0.0);
            cfg.scan = centered_scan(count()?, span);
        }
        "counts_scale" => cfg.counts_scale = float()?,
        "drift_rate" => cfg.drift_rate = float()?,
        "noise" => {
            cfg.noise = parse_noise(value)
                .ok_or_else(|| bad("expected none, poisson or gaussian:<rel>, got"))?
        }
        "seed" => {
            cfg.seed = value
                .parse::<u64>()
                .map_err(|_| bad("not a non-negative integer"))?
        }
        "sweep_max" => cfg.sweep_max = float()?,
        "sweep_points" => cfg.sweep_points = count()?,
        _ => return Err(EchoError::invalid(format!("unknown config key '{key}'"))),
    }
    Ok(())
}

pub fn format_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    for key in CONFIG_KEYS {
        writeln!(out, "{key} = {}", config_value(cfg, key).unwrap()).unwrap();
    }
    out
}

/// Parses `key = value` lines onto `base`. Unknown keys, repeated keys and
/// malformed lines are parse errors carrying the line number.
pub fn parse_config_onto(base: &ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let mut seen = std::collections::BTreeSet::new();
    // scan_points before scan_span would otherwise lose the span
    let mut span: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            EchoError::parse(line_no, format!("expected 'key = value', found '{line}'"))
        })?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(EchoError::parse(
                line_no,
                format!("config key '{key}' given twice"),
            ));
        }
        if key == "scan_span" {
            span = Some((line_no, value.trim().to_string()));
            continue;
        }
        set_config_value(&mut cfg, key, value)
            .map_err(|e| EchoError::parse(line_no, e.to_string()))?;
    }
    if let Some((line_no, value)) = span {
        set_config_value(&mut cfg, "scan_span", &value)
            .map_err(|e| EchoError::parse(line_no, e.to_string()))?;
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_onto(&ExperimentConfig::default(), text)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// First 16 hex digits of the SHA-256 of the canonical config text.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(format_config(cfg).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
