//! End-to-end runs of the `dnls` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use dnls_cli::artifacts::{sha256_hex, Manifest, RunStatus};
use std::f64::consts::PI;

use dnls_core::functionals::{galilean_boost, report, FunctionalReport};
use dnls_core::ground_state::GroundState;
use dnls_core::kernel::classify_regime;
use serde_json::{json, Value};

fn dnls(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dnls"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn run_config(dir: &Path, cmd: &str, v: &Value, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, v);
    let out = dir.join("out");
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (dnls(&args, &[]), out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn report_of(summary: &Value, key: &str) -> FunctionalReport {
    serde_json::from_value(summary[key].clone()).unwrap()
}

fn evolve_config(init: Value) -> Value {
    json!({
        "grid": {"n": 16, "box_length": 24},
        "evolution": {"dt": 0.01, "t_final": 0.2, "output_stride": 5, "snapshot_stride": 10},
        "init": init,
    })
}

fn gaussian() -> Value {
    json!({"kind": "gaussian", "amp": 0.4, "widths": [2.0, 2.5, 3.0]})
}

/// A coarse ground state shared by the tests that read one.
fn shared_ground_state() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("shared_ground_state");
        let cfg = json!({
            "grid": {"n": 32, "box_length": 56},
            "ground_state": {"options": {"boundary_tol": 1e-3}, "probe_trials": 0},
        });
        let (o, out) = run_config(&dir, "ground-state", &cfg, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    })
}

#[test]
fn missing_dt_is_a_config_error_naming_the_field() {
    let dir = scratch("missing_dt");
    let mut cfg = evolve_config(gaussian());
    cfg["evolution"].as_object_mut().unwrap().remove("dt");
    let (o, out) = run_config(&dir, "evolve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("evolution") && err.contains("`dt`"), "{err}");
    assert!(!out.exists(), "no artifacts on a config error");
}

#[test]
fn config_errors_exit_2() {
    let dir = scratch("config_errors");
    let cases = [
        (json!({"grid": {"n": 16, "box_length": 24}, "colour": 1}), "colour"),
        (json!({"command": "evolve", "grid": {"n": 16, "box_length": 24}}), "command"),
        (json!({"grid": {"n": 15, "box_length": 24}}), "grid"),
        (json!({}), "grid"),
        (json!({"grid": {"n": 16, "box_length": 24}, "lambda1": 1.0}), "unstable"),
        (json!({"grid": {"n": 16, "box_length": 24}, "ground_state": {"alpha": -1.0}}), "ground_state.alpha"),
    ];
    for (cfg, needle) in cases {
        let (o, _) = run_config(&dir, "ground-state", &cfg, &[]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        assert!(stderr(&o).contains(needle), "{cfg}: {}", stderr(&o));
    }
    let (o, _) = run_config(&dir, "evolve", &evolve_config(json!({"kind": "gaussian", "widths": [1, 0, 1]})), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("init.widths"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = dnls(&["verify"], &[("DNLS_THREADS", "many")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DNLS_THREADS"));
}

#[test]
fn non_empty_output_directory_is_refused() {
    let dir = scratch("non_empty");
    let out = dir.join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    let (o, _) = run_config(&dir, "evolve", &evolve_config(gaussian()), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not empty"));
    assert_eq!(std::fs::read_to_string(out.join("keep.txt")).unwrap(), "x");
}

#[test]
fn evolve_writes_a_hashed_manifest() {
    let dir = scratch("evolve_manifest");
    let (o, out) = run_config(&dir, "evolve", &evolve_config(gaussian()), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, RunStatus::Ok);
    assert!(m.complete);
    let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    for want in [
        "resolved_config.json",
        "snapshots/step_000000.snap",
        "snapshots/step_000010.snap",
        "snapshots/step_000020.snap",
        "summary.json",
        "trajectory.csv",
    ] {
        assert!(paths.contains(&want), "{want} missing from {paths:?}");
    }
    for f in &m.files {
        let bytes = std::fs::read(out.join(&f.path)).unwrap();
        assert_eq!(f.sha256, sha256_hex(&bytes));
        assert_eq!(f.bytes, bytes.len() as u64);
    }
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["command"], "evolve");
    assert_eq!(resolved["evolution"]["dt"], 0.01);
}

#[test]
fn repeated_runs_have_identical_hashes() {
    let dir = scratch("determinism");
    let cfg = evolve_config(json!({"kind": "boost", "xi": [0.3, 0, 0], "of": gaussian()}));
    let (a, out_a) = run_config(&dir, "evolve", &cfg, &["--seed", "7"]);
    let second = dir.join("second");
    std::fs::create_dir_all(&second).unwrap();
    let (b, out_b) = run_config(&second, "evolve", &cfg, &["--seed", "7"]);
    assert!(a.status.success() && b.status.success());
    let (ma, mb) = (Manifest::load(&out_a).unwrap(), Manifest::load(&out_b).unwrap());
    assert_eq!(ma.files, mb.files);
}

#[test]
fn override_and_seed_take_precedence_over_the_file() {
    let dir = scratch("precedence");
    let mut cfg = evolve_config(gaussian());
    cfg["seed"] = json!(3);
    let (o, out) = run_config(
        &dir,
        "evolve",
        &cfg,
        &["--override", "evolution.t_final=0.1", "--override", "seed=4", "--seed", "5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = read_json(&out.join("resolved_config.json"));
    assert_eq!(resolved["evolution"]["t_final"], 0.1);
    assert_eq!(resolved["seed"], 5);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["steps"], 10);
}

#[test]
fn snapshot_grid_mismatch_names_both_grids() {
    let dir = scratch("snapshot_mismatch");
    let (o, out) = run_config(&dir, "evolve", &evolve_config(gaussian()), &[]);
    assert!(o.status.success());
    let snap = out.join("snapshots/step_000010.snap");
    let next = dir.join("next");
    std::fs::create_dir_all(&next).unwrap();
    let mut cfg = evolve_config(json!({"kind": "snapshot", "path": snap}));
    cfg["grid"] = json!({"n": 8, "box_length": 24});
    let (o, _) = run_config(&next, "evolve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("N=16") && err.contains("N=8"), "{err}");

    // Without a grid the snapshot defines it.
    let own = dir.join("own");
    std::fs::create_dir_all(&own).unwrap();
    let mut cfg = evolve_config(json!({"kind": "snapshot", "path": snap}));
    cfg.as_object_mut().unwrap().remove("grid");
    let (o, out) = run_config(&own, "evolve", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("summary.json"))["grid"]["n"], 16);
}

#[test]
fn numerical_failure_keeps_partial_artifacts() {
    let dir = scratch("numerical_failure");
    let cfg = json!({
        "grid": {"n": 16, "box_length": 40},
        "ground_state": {"options": {"max_iterations": 2, "box_retries": 0}},
    });
    let (o, out) = run_config(&dir, "ground-state", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, RunStatus::NumericalFailure);
    assert!(!m.complete);
    assert!(m.error.unwrap().contains("convergence"));
    assert_eq!(m.files[0].path, "resolved_config.json");
}

#[test]
fn ground_state_run_writes_a_converged_profile() {
    let out = shared_ground_state();
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["elliptic_residual"].as_f64().unwrap() < 1e-7);
    let r = report_of(&summary, "report");
    assert!((r.mass - 240.337).abs() < 0.01, "{}", r.mass);
    let m = Manifest::load(out).unwrap();
    let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(
        paths,
        [
            "ground_state.json",
            "ground_state.snap",
            "ground_state_descent.csv",
            "resolved_config.json",
            "summary.json"
        ]
    );
}

fn initial_report(name: &str, init: Value) -> FunctionalReport {
    let dir = scratch(name);
    let cfg = json!({
        "evolution": {"dt": 0.01, "t_final": 0.0},
        "init": init,
    });
    let (o, out) = run_config(&dir, "evolve", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    report_of(&read_json(&out.join("summary.json")), "initial")
}

fn ground_state_leaf() -> Value {
    json!({"kind": "ground_state", "path": shared_ground_state().join("ground_state")})
}

#[test]
fn boosted_ground_state_carries_momentum() {
    let q = initial_report("boost_plain", ground_state_leaf());
    let gs = GroundState::load(shared_ground_state(), "ground_state").unwrap();
    // One box mode keeps the phase periodic; the spectral shift loses
    // ~1e-5 of the momentum past Nyquist on this 32^3 grid.
    let xi = 2.0 * PI / gs.field.grid().box_length();
    let b = initial_report("boost", json!({"kind": "boost", "xi": [0, 0, xi], "of": ground_state_leaf()}));
    assert!((b.mass - q.mass).abs() < 1e-9 * q.mass);
    let want = 2.0 * xi * q.mass;
    assert!((b.momentum[2] - want).abs() < 1e-4 * want, "{:?} vs {want}", b.momentum);
    let direct = report(&galilean_boost(&gs.field, [0.0, 0.0, xi]), &classify_regime(-1.0, 0.0));
    assert!((b.momentum[2] - direct.momentum[2]).abs() < 1e-10 * want);
    assert!(b.momentum[0].abs() < 1e-9 * want && b.momentum[1].abs() < 1e-9 * want);
    assert!((b.kinetic - q.kinetic - xi * xi * q.mass).abs() < 1e-4 * b.kinetic);

    let dir = scratch("boost_nyquist");
    let cfg = json!({
        "evolution": {"dt": 0.01, "t_final": 0.0},
        "init": {"kind": "boost", "xi": [2.0, 0, 0], "of": ground_state_leaf()},
    });
    let (o, _) = run_config(&dir, "evolve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Nyquist"), "{}", stderr(&o));
}

#[test]
fn boosted_gaussian_has_momentum_four_times_its_mass() {
    // L = 4 pi makes xi = 2 a box mode, well below Nyquist at N = 32.
    let init = json!({"kind": "boost", "xi": [0, 0, 2], "of": {"kind": "gaussian", "widths": [1, 1, 1]}});
    let dir = scratch("boost_gaussian");
    let cfg = json!({
        "grid": {"n": 32, "box_length": 4.0 * PI},
        "evolution": {"dt": 0.01, "t_final": 0.0},
        "init": init,
    });
    let (o, out) = run_config(&dir, "evolve", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report_of(&read_json(&out.join("summary.json")), "initial");
    let want = 4.0 * r.mass;
    assert!((r.momentum[2] - want).abs() < 1e-10 * want, "{:?} vs {want}", r.momentum);
    assert!(r.momentum[0].abs() < 1e-10 * want && r.momentum[1].abs() < 1e-10 * want);
}

#[test]
fn scaled_ground_state_follows_the_scale_polynomials() {
    let p = classify_regime(-1.0, 0.0);
    let gs = GroundState::load(shared_ground_state(), "ground_state").unwrap();
    let q = gs.report;
    let polys = q.scale_polys();
    for s in [0.5, 0.8, 0.9] {
        let u = initial_report(&format!("scaled_{s}"), json!({"kind": "scaled", "s": s, "of": ground_state_leaf()}));
        let direct = report(&gs.field.l2_dilation(s), &p);
        for (a, b) in u.csv_values().iter().zip(direct.csv_values()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-6), "{u:?} vs {direct:?}");
        }
        // On this 32^3 grid the resampled dilation is accurate to ~1e-4 of
        // G; at s = 0.5 the spread profile loses ~4e-4 of its mass to the box.
        let tol = 1e-3 * q.kinetic;
        assert!((u.mass - q.mass).abs() < 1e-3 * q.mass, "{} vs {}", u.mass, q.mass);
        assert!((u.kinetic - s * s * q.kinetic).abs() < tol);
        assert!((u.i_value - polys.i_at(s)).abs() < tol, "{} vs {}", u.i_value, polys.i_at(s));
        assert!((u.energy - polys.e_at(s)).abs() < tol, "{} vs {}", u.energy, polys.e_at(s));
    }
}

#[test]
fn threshold_curve_from_a_saved_ground_state() {
    let dir = scratch("threshold_curve");
    let cfg = json!({
        "threshold": {
            "ground_state_file": shared_ground_state().join("ground_state"),
            "options": {"samples": 2, "restarts": 1, "infeasibility_restarts": 1, "max_iterations": 60},
        },
    });
    let (o, out) = run_config(&dir, "threshold-curve", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("threshold_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let meta = read_json(&out.join("threshold_curve.json"));
    assert!((meta["mass_q1"].as_f64().unwrap() - 240.337).abs() < 0.01);
    assert!(Manifest::load(&out).unwrap().complete);
}

#[test]
fn virial_run_records_the_series() {
    let dir = scratch("virial");
    let mut cfg = evolve_config(gaussian());
    cfg["evolution"].as_object_mut().unwrap().remove("snapshot_stride");
    cfg["virial"] = json!({"weight": {"kind": "localized", "radius": 6.0}});
    let (o, out) = run_config(&dir, "virial", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let series = std::fs::read_to_string(out.join("virial.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 5);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["weight"]["kind"], "localized");
    assert!(summary["i_positivity"]["i_initial"].is_number());
}

#[test]
fn verify_runs_selected_criteria() {
    let dir = scratch("verify");
    let cfg = json!({"verify": {"only": ["kernel-symbol-range"]}});
    let (o, out) = run_config(&dir, "verify", &cfg, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS kernel-symbol-range"), "{stdout}");
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["passed"], 1);
    let (o, _) = run_config(&scratch("verify_none"), "verify", &json!({"verify": {"only": ["nothing"]}}), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("verify.only"));
}
