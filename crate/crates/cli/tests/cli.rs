use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn superpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superpose"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records()
        .map(|r| r.unwrap()[idx].parse().unwrap())
        .collect()
}

const PUBLISHED_STATE: &str = "populations = [0.838, 0.051, 0.111]\nlambda = 0.734\n";

#[test]
fn invert_reproduces_published_state() {
    let tmp = TempDir::new().unwrap();
    let o = superpose(tmp.path(), &["invert", "0.192", "0.452", "2.98", "--out", "inv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("inv/report.json"));
    let p: Vec<f64> = r["p"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((p[0] - 0.838).abs() < 1e-3 && (p[1] - 0.051).abs() < 1e-3 && (p[2] - 0.111).abs() < 1e-3);
    assert!((r["lambda"].as_f64().unwrap() - 0.734).abs() < 1e-3);
    for key in ["purity", "g2", "cat_fidelity", "residual", "errors"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    let stdout: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, r);
}

#[test]
fn infeasible_inversion_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let o = superpose(tmp.path(), &["invert", "0.5", "0.9", "0.1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.toml"), "areas_pi = []\n").unwrap();
    let o = superpose(tmp.path(), &["rabi", "--config", "empty.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty pulse-area list"));

    fs::write(tmp.path().join("typo.toml"), "fwhm_fs = 40\n").unwrap();
    assert_eq!(code(&superpose(tmp.path(), &["rabi", "--config", "typo.toml"])), 2);
    assert_eq!(code(&superpose(tmp.path(), &["rabi", "--preset", "qd9"])), 2);
    assert_eq!(code(&superpose(tmp.path(), &["invert", "0.1"])), 2);
    assert_eq!(code(&superpose(tmp.path(), &["fringe"])), 2);
}

#[test]
fn rabi_sweep_peaks_near_pi_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("r.toml"), "area_step_pi = 0.02\n").unwrap();
    for out in ["a", "b"] {
        let o = superpose(tmp.path(), &["rabi", "--config", "r.toml", "--preset", "qd1", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(tmp.path().join("a/rabi.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/rabi.csv")).unwrap());

    let csv = tmp.path().join("a/rabi.csv");
    let areas = column(&csv, "area_pi");
    let p1 = column(&csv, "p1");
    assert_eq!(areas.len(), 101);
    let peak = (0..areas.len()).max_by(|&i, &j| p1[i].total_cmp(&p1[j])).unwrap();
    assert!((areas[peak] - 1.0).abs() <= 0.15, "single-photon peak at {}", areas[peak]);
}

#[test]
fn fringe_extrema_and_flat_mixture() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("published.toml"), PUBLISHED_STATE).unwrap();
    let o = superpose(tmp.path(), &["fringe", "--config", "published.toml", "--out", "published"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&tmp.path().join("published/fringe.json"));
    assert!(s["cbar_min_phi"].as_f64().unwrap().abs() < 1e-12);
    assert!((s["cbar_max_phi"].as_f64().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

    fs::write(
        tmp.path().join("mixed.toml"),
        "populations = [0.838, 0.051, 0.111]\nlambda = 0.0\n",
    )
    .unwrap();
    let o = superpose(tmp.path(), &["fringe", "--config", "mixed.toml", "--out", "mixed"]);
    assert_eq!(code(&o), 0);
    let cbar = column(&tmp.path().join("mixed/fringe.csv"), "Cbar");
    assert!(cbar.iter().all(|c| (c - cbar[0]).abs() < 1e-12));
}

#[test]
fn vacuum_one_singles_visibility() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("f.toml"),
        "populations = [0.86, 0.14]\nlambda = 0.9\noverlap = 0.8\n",
    )
    .unwrap();
    assert_eq!(code(&superpose(tmp.path(), &["fringe", "--config", "f.toml"])), 0);
    let s = json(&tmp.path().join("out/fringe.json"));
    let v1 = s["v1"].as_f64().unwrap();
    assert!((v1 - 0.81 * 0.86 * 0.8f64.sqrt()).abs() < 1e-12, "{v1}");
}

#[test]
fn synth_then_analyze_recovers_the_state() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("s.toml"),
        format!("{PUBLISHED_STATE}n_bins = 100\nefficiency = 0.01\n"),
    )
    .unwrap();
    fs::write(tmp.path().join("a.toml"), "bootstrap_resamples = 30\n").unwrap();
    let o = superpose(tmp.path(), &["synth", "--config", "s.toml", "--seed", "5", "--out", "rec"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = superpose(tmp.path(), &["analyze", "rec", "--config", "a.toml", "--seed", "9", "--out", "ana"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("ana/report.json"));
    let truth = [0.838, 0.051, 0.111];
    for (k, t) in truth.iter().enumerate() {
        let est = r["p"][k].as_f64().unwrap();
        let err = r["errors"][format!("p{k}")].as_f64().unwrap();
        assert!((est - t).abs() <= 3.0 * err, "p{k}: {est} ± {err}");
    }
    let lambda = r["lambda"].as_f64().unwrap();
    let err = r["errors"]["lambda"].as_f64().unwrap();
    assert!((lambda - 0.734).abs() <= 3.0 * err, "lambda {lambda} ± {err}");
    for f in ["phase_fringe.csv", "coincidence_curve.csv", "manifest.json"] {
        assert!(tmp.path().join("ana").join(f).exists(), "{f}");
    }
}

#[test]
fn malformed_csv_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("s.toml"), format!("{PUBLISHED_STATE}n_bins = 20\n")).unwrap();
    assert_eq!(code(&superpose(tmp.path(), &["synth", "--config", "s.toml", "--out", "rec"])), 0);
    let path = tmp.path().join("rec/singles.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = "4,3240,twelve,7,".into();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = superpose(tmp.path(), &["analyze", "rec"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("singles.csv:5"), "{err}");
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("s.toml"),
        format!("{PUBLISHED_STATE}n_bins = 40\nefficiency = 0.02\n"),
    )
    .unwrap();
    fs::write(tmp.path().join("a.toml"), "bootstrap_resamples = 8\n").unwrap();
    let run = |args: &[&str]| {
        let o = superpose(tmp.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--config", "s.toml", "--seed", "17", "--out", "rec"]);
    run(&["analyze", "rec", "--config", "a.toml", "--seed", "4", "--out", "ana"]);
    run(&["replay", "rec/manifest.json", "--out", "rec2"]);
    run(&["replay", "ana/manifest.json", "--out", "ana2"]);
    let same = |a: &str, b: &str, files: &[&str]| {
        for f in files {
            let x = fs::read(tmp.path().join(a).join(f)).unwrap();
            let y = fs::read(tmp.path().join(b).join(f)).unwrap();
            assert!(x == y, "{a}/{f} differs from {b}/{f}");
        }
    };
    same("rec", "rec2", &["singles.csv", "histogram.csv", "coincidences.csv", "experiment.json"]);
    same("ana", "ana2", &["report.json", "phase_fringe.csv", "coincidence_curve.csv"]);

    // replaying in place rewrites the manifest unchanged
    let before = fs::read(tmp.path().join("ana/manifest.json")).unwrap();
    run(&["replay", "ana/manifest.json"]);
    assert_eq!(before, fs::read(tmp.path().join("ana/manifest.json")).unwrap());
}
