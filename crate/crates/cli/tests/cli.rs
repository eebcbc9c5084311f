use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spinecho::io::{save_curve, CONFIG_KEYS};
use spinecho::{visibility_model, DecoherenceParams, VisibilityCurve};

fn spinecho(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinecho"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(csv: &str) -> usize {
    csv.lines().filter(|l| !l.starts_with('#')).count() - 1
}

#[test]
fn help_documents_every_flag() {
    let o = spinecho(&["--help"]);
    assert_eq!(code(&o), 0);
    let o = spinecho(&["simulate-fringe", "--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in CONFIG_KEYS {
        let flag = format!("--{}", key.replace('_', "-"));
        assert!(text.contains(&flag), "missing {flag}");
    }
    for flag in ["--config", "--out", "--seed"] {
        assert!(text.contains(flag));
    }
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(code(&spinecho(&["frobnicate"])), 2);
    assert_eq!(code(&spinecho(&["simulate-fringe", "--larmor", "1"])), 2);
    assert_eq!(code(&spinecho(&[])), 2);
}

#[test]
fn default_fringe_scan_has_64_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = spinecho(&["simulate-fringe", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(data_rows(&csv), 64);
    assert!(csv.contains("# separation="));
    assert!(csv.contains("# seed=0"));
    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["subcommand"], "simulate-fringe");
    assert!(csv.contains(&format!(
        "# config_hash={}",
        manifest["config_hash"].as_str().unwrap()
    )));
    for key in CONFIG_KEYS {
        assert!(manifest["config"][key].is_string(), "manifest lacks {key}");
    }
}

#[test]
fn two_pulse_scan_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    let o = spinecho(&[
        "simulate-fringe",
        "--tau1",
        "26e-9",
        "--theta3",
        "0",
        "--noise",
        "none",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("tau1"), "expected a snapping warning");
    let fit_dir = dir.path().join("fit");
    let o = spinecho(&[
        "fit-fringe",
        "--input",
        s(&out.join("scan.csv")),
        "--out",
        s(&fit_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(fit_dir.join("fringe_fit.json"));
    let amp = fit["amplitude"].as_f64().unwrap();
    assert!(amp / 1e5 < 1e-8, "amplitude {amp}");
}

#[test]
fn bad_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sigma = 1e9\nlarmor_freq = 5e10\n").unwrap();
    let o = spinecho(&[
        "simulate-fringe",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("larmor_freq"), "{}", stderr(&o));

    let o = spinecho(&["simulate-fringe", "--sigma", "fast", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sigma"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 5\ncounts_scale = 20000\n").unwrap();
    let out = dir.path().join("out");
    let o = spinecho(&[
        "simulate-fringe",
        "--config",
        s(&cfg),
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(out.join("manifest.json"));
    assert_eq!(m["config"]["seed"], "7");
    assert_eq!(m["config"]["counts_scale"], "20000");
    assert_eq!(m["config"]["sigma"], "1000000000");
}

#[test]
fn echo_sweep_then_decay_fit_recovers_t2() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = spinecho(&["simulate-echo", "--seed", "11", "--out", s(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit_dir = dir.path().join("fit");
    let o = spinecho(&[
        "fit-decay",
        "--input",
        s(&sim.join("curve.csv")),
        "--out",
        s(&fit_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(fit_dir.join("decay_fit.json"));
    let t2 = fit["t2"].as_f64().unwrap();
    assert!((t2 - 6.7e-6).abs() < 2.5e-6, "t2 {t2}");
    assert_eq!(fit["converged"], true);
    assert_eq!(fit["covariance"].as_array().unwrap().len(), 4);
    assert!(fit["uncertainties"]["t_h"].as_f64().unwrap() > 0.0);
    assert!(fit["error_model"].is_string());
}

#[test]
fn malformed_curve_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    fs::write(
        &csv,
        "separation_s,visibility,error\n1e-7,0.04,0.001\n2e-7,oops,0.001\n",
    )
    .unwrap();
    let o = spinecho(&["fit-decay", "--input", s(&csv), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = spinecho(&[
        "fit-decay",
        "--input",
        s(&dir.path().join("missing.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pure_exponential_curve_flags_degenerate_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let dec = DecoherenceParams::new(6.7e-6, 0.0, 100e-9).unwrap();
    let seps: Vec<f64> = (0..20)
        .map(|i| 50e-9 * (320f64).powf(i as f64 / 19.0))
        .collect();
    let vis: Vec<f64> = seps
        .iter()
        .map(|&s| visibility_model(0.5 * s, 0.047, &dec).unwrap())
        .collect();
    let errs = vis.iter().map(|v| 0.01 * v).collect();
    let csv = dir.path().join("curve.csv");
    save_curve(&csv, &VisibilityCurve::new(seps, vis, Some(errs)).unwrap()).unwrap();
    let o = spinecho(&["fit-decay", "--input", s(&csv), "--out", s(dir.path())]);
    let fit = json(dir.path().join("decay_fit.json"));
    assert_eq!(fit["degenerate"], true, "{}", stderr(&o));
    let warnings = fit["warnings"].as_array().unwrap();
    assert!(
        warnings.iter().any(|w| w.as_str().unwrap().contains("t_h")),
        "{warnings:?}"
    );
    let t2 = fit["t2"].as_f64().unwrap();
    assert!((t2 / 6.7e-6 - 1.0).abs() < 0.01);
}

#[test]
fn oracle_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = spinecho(&[
        "oracle-check",
        "--n",
        "50",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("worst quadrature deviation"));
    let report = json(dir.path().join("oracle.json"));
    assert_eq!(report["passed"], true);

    let o = spinecho(&[
        "oracle-check",
        "--n",
        "5",
        "--forced-fault",
        "--mc-samples",
        "10000",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 1);
    let o = spinecho(&["oracle-check", "--n", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn angle_sweep_finds_hahn_condition() {
    let dir = tempfile::tempdir().unwrap();
    let o = spinecho(&["sweep-angles", "--steps", "4", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("angles.csv")).unwrap();
    assert_eq!(data_rows(&csv), 125);
    let m = json(dir.path().join("manifest.json"));
    let argmax: Vec<f64> = m["details"]["argmax"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let pi = std::f64::consts::PI;
    assert_eq!(argmax, vec![pi / 2.0, pi, pi / 2.0]);
    assert_eq!(m["details"]["max_echo_amplitude"], 1.0);
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_subcommand_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let scan = root.join("input-scan");
    let curve = root.join("input-curve");
    assert_eq!(
        code(&spinecho(&[
            "simulate-fringe",
            "--seed",
            "4",
            "--out",
            s(&scan)
        ])),
        0
    );
    assert_eq!(
        code(&spinecho(&[
            "simulate-echo",
            "--seed",
            "4",
            "--out",
            s(&curve)
        ])),
        0
    );
    let scan_csv = scan.join("scan.csv");
    let curve_csv = curve.join("curve.csv");
    let runs: Vec<Vec<&str>> = vec![
        vec!["simulate-fringe", "--seed", "9", "--noise", "gaussian:0.01"],
        vec!["simulate-echo", "--seed", "9", "--sweep-points", "16"],
        vec!["fit-fringe", "--input", s(&scan_csv)],
        vec!["fit-decay", "--input", s(&curve_csv)],
        vec!["sweep-angles", "--steps", "6"],
        vec![
            "oracle-check",
            "--n",
            "3",
            "--mc-samples",
            "5000",
            "--seed",
            "2",
        ],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = root.join(format!("a{i}"));
        let b = root.join(format!("b{i}"));
        for out in [&a, &b] {
            let mut full = args.clone();
            full.extend(["--out", s(out)]);
            let o = spinecho(&full);
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        }
        assert_eq!(files(&a), files(&b), "{args:?} differs between runs");
    }
}
