use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use ion_photon::emission::DetectionWindow;
use ion_photon::experiment::{run_experiment, NoiseToggles, Prepared, RunConfig};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ion-photon");

/// 6 µs of dynamics keeps the CLI tests quick.
fn short_config(extra: &str) -> String {
    format!(
        r#"{{"t_end_us": 6, "grid_points": 241, "windows": [{{"start_us": 2, "end_us": 4}}],
            "sweep_ends_us": [1, 2, 4, 6], "shots": 2400, "bootstrap_resamples": 100{extra}}}"#
    )
}

fn run_cli(dir: &Path, config: &str, out: &str, args: &[&str]) -> (i32, String) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let output = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .args(args)
        .output()
        .unwrap();
    (
        output.status.code().unwrap(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn cli_writes_all_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config("");
    assert_eq!(run_cli(dir.path(), &cfg, "a", &["--seed", "7"]).0, 0);
    assert_eq!(run_cli(dir.path(), &cfg, "b", &["--seed", "7"]).0, 0);
    assert_eq!(run_cli(dir.path(), &cfg, "c", &["--seed", "8"]).0, 0);
    let a = read_tree(&dir.path().join("a"));
    let b = read_tree(&dir.path().join("b"));
    let c = read_tree(&dir.path().join("c"));
    assert_eq!(a, b);
    assert_ne!(a.get("report.json"), c.get("report.json"));

    for name in ["report.json", "sweep.csv", "shapes_S_HV.csv", "shapes_SpiSp_RL.csv", "shapes_SmSp_DA.csv"] {
        assert!(a.contains_key(name), "missing {name}");
    }
    assert_eq!(a.keys().filter(|k| k.starts_with("shapes_")).count(), 12);
    assert!(a.keys().any(|k| k.starts_with("matrices/") && k.ends_with("_chi_mle.json")));

    let sweep = String::from_utf8(a["sweep.csv"].clone()).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(
        lines.next().unwrap(),
        "window_end_us,fidelity,fidelity_sd,eff_detected,eff_internal"
    );
    let ends: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ends, vec![1.0, 2.0, 4.0, 6.0]);

    let shape = String::from_utf8(a["shapes_S_HV.csv"].clone()).unwrap();
    assert!(shape.starts_with("time_us,rate1,rate2,basis"));
    assert_eq!(shape.lines().count(), 1 + 6);
}

#[test]
fn report_contents() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_cli(dir.path(), &short_config(""), "out", &[]).0, 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let w = &report["windows"][0];
    assert_eq!(w["start_us"], 2.0);
    assert_eq!(w["end_us"], 4.0);
    assert_eq!(w["states"].as_array().unwrap().len(), 4);
    for key in ["process_fidelity", "mean_state_fidelity", "mean_state_fidelity_from_process"] {
        assert!(w[key]["value"].is_f64(), "{key}");
        assert!(w[key]["sd"].as_f64().unwrap() > 0.0, "{key}");
    }
    for s in w["states"].as_array().unwrap() {
        assert!(s["mle_state"].is_object());
        assert!(s["mle_fidelity"]["value"].as_f64().unwrap() > 0.5);
    }
    assert_eq!(report["warnings"].as_array().unwrap().len(), 0);
}

#[test]
fn zero_shots_exit_with_warning_and_keep_dynamics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config("").replace("\"shots\": 2400", "\"shots\": 0");
    let (code, stderr) = run_cli(dir.path(), &cfg, "out", &[]);
    assert_eq!(code, 1);
    assert!(stderr.contains("warning"));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["shapes"].as_array().unwrap().len(), 12);
    assert!(report["dynamics"]["stats"]["accepted_steps"].as_u64().unwrap() > 0);
    let w = &report["windows"][0];
    assert!(w["process_fidelity"].is_null());
    assert!(w["states"][0]["mle_state"].is_null());
    assert!(w["process_fidelity_model"].is_f64());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_cli(dir.path(), "{not json", "out", &[]).0, 2);
    assert_eq!(run_cli(dir.path(), r#"{"input_states": ["X"]}"#, "out", &[]).0, 2);
    assert_eq!(run_cli(dir.path(), r#"{"params": {"Delta1": 0.0}}"#, "out", &[]).0, 2);
    let (code, _) = run_cli(dir.path(), &short_config(""), "out", &["--windows", "1:9"]);
    assert_eq!(code, 2);
    let (code, _) = run_cli(dir.path(), &short_config(""), "out", &["--windows", "a"]);
    assert_eq!(code, 2);
    let missing = Command::new(BIN)
        .args(["run", "--config", "/nonexistent/config.json", "--out"])
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));
}

#[test]
fn integrator_failure_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(r#", "tolerances": {"rel": 1e-30, "abs": 1e-30}"#);
    let (code, stderr) = run_cli(dir.path(), &cfg, "out", &[]);
    assert_eq!(code, 3);
    assert!(stderr.contains("dynamics"));
}

#[test]
fn window_override_and_no_noise_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_cli(dir.path(), &short_config(""), "out", &["--windows", "1:3,2,5", "--no-noise"]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["windows"].as_array().unwrap().len(), 1);
    assert_eq!(report["windows"][0]["start_us"], 1.0);
    assert_eq!(report["sweep"].as_array().unwrap().len(), 2);
    assert_eq!(report["noise"]["dark_counts"], false);
    for s in report["windows"][0]["states"].as_array().unwrap() {
        assert_eq!(s["dark_fraction"], 0.0);
    }
}

#[test]
fn relative_scheme_path_resolves_against_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("scheme.json"),
        ion_photon::system::LevelScheme::default().to_json_string().unwrap(),
    )
    .unwrap();
    let cfg = short_config(r#", "scheme": "scheme.json""#).replace("\"shots\": 2400", "\"shots\": 0");
    assert_eq!(run_cli(dir.path(), &cfg, "out", &[]).0, 1);
    let bad = short_config(r#", "scheme": "missing.json""#);
    assert_eq!(run_cli(dir.path(), &bad, "out2", &[]).0, 2);
}

#[test]
fn stage_is_attached_to_errors() {
    let mut cfg = RunConfig::default();
    cfg.t_end_us = 2.0;
    cfg.grid_points = 41;
    cfg.windows.clear();
    cfg.sweep_ends_us = vec![2.0];
    cfg.tolerances.rel = 1e-30;
    cfg.tolerances.abs = 1e-30;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("dynamics:"), "{err}");
    assert!(matches!(err.root(), ion_photon::Error::Stiffness { .. }));
}

#[test]
fn two_fidelity_routes_agree_for_a_near_unitary_map() {
    let mut cfg = RunConfig::default();
    cfg.noise = NoiseToggles::all(false);
    cfg.t_end_us = 6.0;
    cfg.grid_points = 241;
    cfg.windows.clear();
    cfg.sweep_ends_us = vec![4.0];
    let prepared = Prepared::new(&cfg).unwrap();
    let w = prepared
        .analyze_window(&DetectionWindow::from_us(2.0, 4.0).unwrap(), 0)
        .unwrap();
    let direct = w.mean_state_fidelity.unwrap();
    let converted = w.mean_state_fidelity_from_process.unwrap();
    assert!(
        (direct.value - converted.value).abs() <= direct.sd + converted.sd,
        "{direct:?} vs {converted:?}"
    );
    let model_converted = ion_photon::tomography::mean_state_fidelity_from_process(w.process_fidelity_model.unwrap());
    assert!((w.mean_state_fidelity_model - model_converted).abs() < 5e-3);
}

#[test]
fn every_reported_matrix_is_physical() {
    let mut cfg = RunConfig::default();
    cfg.t_end_us = 6.0;
    cfg.grid_points = 241;
    cfg.windows = vec![ion_photon::experiment::WindowSpec { start_us: 0.0, end_us: 6.0 }];
    cfg.sweep_ends_us = vec![];
    cfg.shots = 2400;
    cfg.bootstrap_resamples = 100;
    cfg.input_states.push(ion_photon::experiment::InputSpec::Angles { alpha: 0.4, phi: 2.0 });
    let report = run_experiment(&cfg).unwrap();
    let w = &report.windows[0];
    let mut matrices = vec![w.chi_model.clone().unwrap(), w.chi_mle.clone().unwrap()];
    for s in &w.states {
        matrices.push(s.model_state.clone());
        matrices.push(s.mle_state.clone().unwrap());
    }
    for m in &matrices {
        let m = ion_photon::experiment::matrix_from_json(m).unwrap();
        assert!(ion_photon::linalg::Physicality::of(&m).within(1e-10, 1e-9, -1e-9));
    }
}

#[test]
fn noise_ordering_and_sweep_shape() {
    let mut cfg = RunConfig::default();
    cfg.windows.clear();
    cfg.sweep_ends_us = vec![0.1, 4.0, 55.0];
    cfg.shots = 0;
    let mut prepared = Prepared::new(&cfg).unwrap();
    let full = DetectionWindow::from_us(0.0, 55.0).unwrap();
    let fidelity = |p: &Prepared| p.analyze_window(&full, 0).unwrap().process_fidelity_model.unwrap();
    let all_on = fidelity(&prepared);
    let base = prepared.noise_params.clone();
    let toggles = [
        NoiseToggles { dark_counts: false, ..NoiseToggles::all(true) },
        NoiseToggles { init_error: false, ..NoiseToggles::all(true) },
        NoiseToggles { dephasing: false, ..NoiseToggles::all(true) },
    ];
    for t in toggles {
        prepared.noise_params = t.apply(&base);
        let f = fidelity(&prepared);
        assert!(f >= all_on, "{t:?}: {f} < {all_on}");
    }
    prepared.noise_params = base;

    let rows = ion_photon::experiment::cumulative_sweep(&prepared).unwrap();
    assert!(rows[0].fidelity < rows[1].fidelity, "{rows:?}");
    assert!(rows[2].eff_detected > 0.01);
    assert!(rows.windows(2).all(|w| w[1].eff_detected > w[0].eff_detected));
}
