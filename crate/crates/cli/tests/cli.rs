use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use shrinkflow::config::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shrinkflow"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn run_config(cfg: &Path, out: &Path) -> Output {
    bin().arg("run").arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ \"kind\": \"flow\", ").unwrap();
    let out = dir.path().join("out");
    let o = run_config(&cfg, &out);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn invalid_values_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("neg.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "flow", "base": {"shape": "circle", "radius": 1.0, "n_samples": 64},
            "numerics": {"converge_tol": -1.0}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&run_config(&cfg, &out)), 2);
    assert!(!out.exists());
    // too few samples is caught when the base is built, still before any output
    std::fs::write(&cfg, r#"{"kind": "spectrum", "base": {"shape": "circle", "radius": 1.0, "n_samples": 4}}"#).unwrap();
    assert_eq!(code(&run_config(&cfg, &out)), 2);
    assert!(!out.exists());
}

#[test]
fn shipped_configs_round_trip() {
    for entry in std::fs::read_dir(config("")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
    }
}

#[test]
fn tampered_tolerance_fails_the_named_check() {
    let o = bin().args(["verify", "geometry", "--tol", "A1.circle=1e-30"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("FAIL A1.circle"), "{stdout}");
    assert!(stdout.contains("failed: A1.circle"), "{stdout}");
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let o = bin().args(["verify", "nonsense"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn geometry_suite_reports_the_circle_area() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["verify", "geometry", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("A1.circle,") && l.ends_with(",true")));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn circle_decay_run_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run_config(&config("circle_decay.json"), &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let f = column(&traj, "F");
    assert!(f.len() > 100);
    assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs())));

    // every artifact is listed with the hash of its bytes
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed = manifest["artifacts"].as_array().unwrap();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut names: Vec<String> = listed.iter().map(|a| a["path"].as_str().unwrap().to_string()).collect();
    names.sort();
    assert_eq!(names, on_disk);
    for a in listed {
        let body = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&body)));
    }
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 0);

    let replay = dir.path().join("replay");
    let o = bin()
        .arg("replay")
        .arg("--traj")
        .arg(&out)
        .args(["--t1", "2.0", "--t2", "3.3", "--b", "0.9", "--y0", "0.1", "-0.05", "--out"])
        .arg(&replay)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sched: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(replay.join("schedule.json")).unwrap()).unwrap();
    assert!(sched["end_state_sup_error"].as_f64().unwrap() <= 1e-4);
    let t_bar = sched["schedule"]["t_bar"].as_f64().unwrap();
    // the replay clock starts at t2, so the window is (t1 - t2, 0)
    let want = -(1.0 + 0.81 * ((1.3f64).exp() - 1.0)).ln();
    assert!((t_bar - want).abs() < 1e-12);
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&run_config(&config("circle_spectrum.json"), out)), 0);
    }
    for name in ["spectrum.csv", "geometry.csv", "stability.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn returning_flow_exits_4() {
    // a stable circle pushed past delta2 comes back below delta1
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ret.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "noreturn",
            "base": {"shape": "circle", "radius": 1.4142135623730951, "n_samples": 64},
            "perturbation": {"type": "cosine", "k": 2, "amplitude": 0.3},
            "numerics": {"horizon": 10.0}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run_config(&cfg, &out);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let verdict = std::fs::read_to_string(out.join("verdict.json")).unwrap();
    assert!(verdict.contains("RETURNED"));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("verdict-negative"));
}

#[test]
fn batch_runs_each_config_in_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("run")
        .arg("--config")
        .arg(config("circle_spectrum.json"))
        .arg(config("torus_shoot.json"))
        .arg("--out")
        .arg(dir.path())
        .args(["--jobs", "2", "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for sub in ["circle_spectrum", "torus_shoot"] {
        let m = std::fs::read_to_string(dir.path().join(sub).join("manifest.json")).unwrap();
        assert!(m.contains("\"seed\": 7"));
    }
}
