use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use spinecho::decay_fit::PARAMETER_NAMES;
use spinecho::experiment::snap_to_rep;
use spinecho::io::{
    config_hash, config_value, curve_to_csv, load_curve, load_scan, scan_to_csv, CONFIG_KEYS,
};
use spinecho::oracle::{triple_agreement, OracleOptions};
use spinecho::{
    echo_amplitude, fit_visibility_decay, simulate_echo_experiment, simulate_fringe_scan,
    visibility_from_fit, DecayGuess, ExperimentConfig,
};

use crate::{
    resolve_config, CliError, CliResult, CommonArgs, FitDecayArgs, FitFringeArgs, OracleArgs,
    SweepAnglesArgs,
};

const ERROR_MODEL_NOTE: &str =
    "uncertainties are first-order propagation from a single fit, scaled by reduced \
chi-squared; they approximate, and are not, a spread over repeated measurements";

/// Collects what a run wrote and warned about, then writes manifest.json.
struct Run<'a> {
    subcommand: &'static str,
    out: &'a Path,
    cfg: ExperimentConfig,
    outputs: Vec<String>,
    warnings: Vec<String>,
    details: Map<String, Value>,
}

impl<'a> Run<'a> {
    fn start(subcommand: &'static str, common: &'a CommonArgs) -> CliResult<Self> {
        let cfg = resolve_config(common)?;
        fs::create_dir_all(&common.out)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", common.out.display())))?;
        Ok(Run {
            subcommand,
            out: &common.out,
            cfg,
            outputs: Vec::new(),
            warnings: Vec::new(),
            details: Map::new(),
        })
    }

    fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.out.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json values always serialize");
        text.push('\n');
        self.write(name, &text)
    }

    fn finish(mut self) -> CliResult<()> {
        let config: Map<String, Value> = CONFIG_KEYS
            .iter()
            .map(|&k| {
                (
                    k.to_string(),
                    Value::String(config_value(&self.cfg, k).unwrap_or_default()),
                )
            })
            .collect();
        let manifest = json!({
            "tool": "spinecho",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "config": config,
            "config_hash": config_hash(&self.cfg),
            "outputs": self.outputs,
            "warnings": self.warnings,
            "details": self.details,
        });
        self.write_json("manifest.json", &manifest)
    }
}

fn snap_tau1(run: &mut Run) {
    let snapped = snap_to_rep(run.cfg.tau1, run.cfg.rep_time);
    if run.cfg.tau1.is_finite() && (snapped - run.cfg.tau1).abs() > 1e-9 * run.cfg.tau1.abs() {
        run.warn(format!(
            "tau1 {:e} s is not a multiple of rep_time {:e} s; using {:e} s",
            run.cfg.tau1, run.cfg.rep_time, snapped
        ));
        run.cfg.tau1 = snapped;
    }
}

pub fn simulate_fringe(args: &CommonArgs) -> CliResult<()> {
    let mut run = Run::start("simulate-fringe", args)?;
    snap_tau1(&mut run);
    let scan = simulate_fringe_scan(&run.cfg)?;
    let meta = [
        ("seed", run.cfg.seed.to_string()),
        ("config_hash", config_hash(&run.cfg)),
    ];
    let csv = scan_to_csv(&scan, &meta);
    run.write("scan.csv", &csv)?;
    run.details
        .insert("points".into(), json!(scan.delays.len()));
    println!(
        "wrote {} points to {}",
        scan.delays.len(),
        run.out.join("scan.csv").display()
    );
    run.finish()
}

pub fn simulate_echo(args: &CommonArgs) -> CliResult<()> {
    let mut run = Run::start("simulate-echo", args)?;
    run.cfg.validate()?;
    let seps = run.cfg.sweep_separations()?;
    let sweep = simulate_echo_experiment(&run.cfg, &seps)?;
    for f in &sweep.failures {
        run.warn(format!(
            "separation {:e} s dropped: {}",
            f.separation, f.reason
        ));
    }
    run.write("curve.csv", &curve_to_csv(&sweep.curve))?;
    run.details.insert("separations".into(), json!(seps.len()));
    run.details
        .insert("points_written".into(), json!(sweep.curve.len()));
    run.details
        .insert("error_model".into(), json!(ERROR_MODEL_NOTE));
    println!(
        "wrote {} of {} separations to {}",
        sweep.curve.len(),
        seps.len(),
        run.out.join("curve.csv").display()
    );
    run.finish()
}

pub fn fit_fringe(args: &FitFringeArgs) -> CliResult<()> {
    let mut run = Run::start("fit-fringe", &args.common)?;
    let scan = load_scan(&args.input)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let guess = args.freq_guess.unwrap_or(run.cfg.ensemble.omega0);
    run.details
        .insert("input".into(), json!(args.input.display().to_string()));
    run.details.insert("freq_guess".into(), json!(guess));
    let fit = match spinecho::fit_fringe(&scan, guess) {
        Ok(f) => f,
        Err(e) => {
            run.details.insert("error".into(), json!(e.to_string()));
            run.finish()?;
            return Err(e.into());
        }
    };
    let visibility = visibility_from_fit(&fit);
    let (v, v_err) = match &visibility {
        Ok((v, s)) => (json!(v), json!(s)),
        Err(_) => (Value::Null, Value::Null),
    };
    let result = json!({
        "separation": scan.separation,
        "offset": fit.offset,
        "drift": fit.drift,
        "amplitude": fit.amplitude,
        "phase": fit.phase,
        "frequency": fit.frequency,
        "residual_rms": fit.residual_rms,
        "n_points": fit.n_points,
        "linear_covariance": fit.covariance,
        "visibility": v,
        "visibility_err": v_err,
        "error_model": ERROR_MODEL_NOTE,
    });
    run.write_json("fringe_fit.json", &result)?;
    run.finish()?;
    let (v, s) = visibility?;
    println!("visibility {v:.6} ± {s:.6}");
    Ok(())
}

pub fn fit_decay(args: &FitDecayArgs) -> CliResult<()> {
    let mut run = Run::start("fit-decay", &args.common)?;
    let curve = load_curve(&args.input)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let d = DecayGuess::default();
    let guess = DecayGuess {
        v0: args.guess_v0.unwrap_or(d.v0),
        t2: args.guess_t2.unwrap_or(d.t2),
        rate_r: args.guess_rate_r.unwrap_or(d.rate_r),
        t_h: args.guess_t_h.unwrap_or(d.t_h),
    };
    run.details
        .insert("input".into(), json!(args.input.display().to_string()));
    run.details.insert(
        "guess".into(),
        json!({"v0": guess.v0, "t2": guess.t2, "rate_r": guess.rate_r, "t_h": guess.t_h}),
    );
    let fit = match fit_visibility_decay(&curve, &guess) {
        Ok(f) => f,
        Err(e) => {
            run.details.insert("error".into(), json!(e.to_string()));
            run.finish()?;
            return Err(e.into());
        }
    };
    for w in &fit.warnings {
        run.warn(w.clone());
    }
    let uncertainties: Map<String, Value> = PARAMETER_NAMES
        .iter()
        .zip(fit.uncertainties())
        .map(|(k, e)| (k.to_string(), json!(e)))
        .collect();
    let result = json!({
        "v0": fit.v0,
        "t2": fit.t2,
        "rate_r": fit.rate_r,
        "t_h": fit.t_h,
        "uncertainties": uncertainties,
        "covariance": fit.covariance,
        "parameter_order": PARAMETER_NAMES,
        "chi_squared": fit.chi_squared,
        "reduced_chi_squared": fit.reduced_chi_squared,
        "dof": fit.dof,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "degenerate": fit.degenerate,
        "warnings": fit.warnings,
        "error_model": ERROR_MODEL_NOTE,
    });
    run.write_json("decay_fit.json", &result)?;
    run.finish()?;
    println!(
        "V0 {:.5} ± {:.5}, T2 {:.4e} ± {:.1e} s, 1/R {:.4e} s, T_h {:.4e} ± {:.1e} s",
        fit.v0,
        fit.v0_err,
        fit.t2,
        fit.t2_err,
        1.0 / fit.rate_r,
        fit.t_h,
        fit.t_h_err
    );
    if fit.converged {
        Ok(())
    } else {
        Err(CliError::failed(format!(
            "decay fit stopped after {} iterations without converging",
            fit.iterations
        )))
    }
}

pub fn sweep_angles(args: &SweepAnglesArgs) -> CliResult<()> {
    if args.steps == 0 || args.steps > 1000 {
        return Err(CliError::usage(format!(
            "--steps must lie in 1..=1000, got {}",
            args.steps
        )));
    }
    let mut run = Run::start("sweep-angles", &args.common)?;
    let n = args.steps;
    let step = PI / n as f64;
    let mut csv = String::from("theta1,theta2,theta3,echo_amplitude\n");
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let angles = [i as f64 * step, j as f64 * step, k as f64 * step];
                let a = echo_amplitude(angles);
                if a > best.0 {
                    best = (a, angles);
                }
                writeln!(csv, "{},{},{},{a}", angles[0], angles[1], angles[2]).unwrap();
            }
        }
    }
    run.write("angles.csv", &csv)?;
    run.details.insert("steps".into(), json!(n));
    run.details.insert("argmax".into(), json!(best.1));
    run.details
        .insert("max_echo_amplitude".into(), json!(best.0));
    println!(
        "max echo amplitude {} at ({:.6}, {:.6}, {:.6}) rad",
        best.0, best.1[0], best.1[1], best.1[2]
    );
    run.finish()
}

pub fn oracle_check(args: &OracleArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let mut run = Run::start("oracle-check", &args.common)?;
    let opts = OracleOptions {
        mc_samples: args.mc_samples,
        flip_echo_sign: args.forced_fault,
        ..OracleOptions::default()
    };
    let report = triple_agreement(args.n, run.cfg.seed, &opts)?;
    println!(
        "{} cases: worst quadrature deviation {:.3e} (tol {:.0e}), worst Monte-Carlo deviation {:.2} se (tol {}), {} failures",
        report.cases.len(),
        report.worst_quadrature_deviation,
        opts.quadrature_tol,
        report.worst_mc_deviation_sigmas,
        opts.mc_sigmas,
        report.failures
    );
    let value = serde_json::to_value(&report).expect("report serializes");
    run.write_json("oracle.json", &value)?;
    run.details
        .insert("forced_fault".into(), json!(args.forced_fault));
    run.details.insert("passed".into(), json!(report.passed));
    run.finish()?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::failed(format!(
            "{} of {} oracle cases disagree",
            report.failures,
            report.cases.len()
        )))
    }
}
