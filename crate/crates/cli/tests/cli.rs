use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"samples": {"volume": 4096, "scalar": 1024, "suite": 5, "fiber_points": 10, "restarts": 20, "ball_check": 1000, "scan_points": 32, "scan_planes": 16}}"#;

fn isospec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isospec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

#[test]
fn gen_reports_excess_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = isospec(&["gen", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("commutant dimension 0"), "{text}");
    assert!(text.contains("tangent excess 2"), "{text}");
    let first = fs::read(dir.path().join("jmap.json")).unwrap();
    assert_eq!(isospec(&["gen", "--out", &out]).status.code(), Some(0));
    assert_eq!(first, fs::read(dir.path().join("jmap.json")).unwrap());
}

#[test]
fn excluded_dimension_reports_inapplicable_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m2.json");
    fs::write(&cfg, r#"{"m": 2}"#).unwrap();
    let o = isospec(&["gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(stdout(&o).contains("inapplicable"), "{}", stdout(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(isospec(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(isospec(&["gen", "--tol", "conjugator_identity=-1"]).status.code(), Some(2));
    assert_eq!(isospec(&["gen", "--tol", "bogus=1"]).status.code(), Some(2));
    assert_eq!(isospec(&["gen", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn missing_upstream_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = isospec(&["deform", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("jmap.json"));
}

#[test]
fn tampered_family_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = (small_config(dir.path()), dir.path().display().to_string());
    for stage in ["gen", "deform"] {
        assert_eq!(isospec(&[stage, "--config", &cfg, "--out", &out]).status.code(), Some(0));
    }
    let path = dir.path().join("family.json");
    let text = fs::read_to_string(&path).unwrap();
    let at = text.find("\"payload\"").unwrap();
    let tampered = format!("{}{}", &text[..at], text[at..].replacen("0.005", "0.006", 1));
    assert_ne!(tampered, text);
    fs::write(&path, tampered).unwrap();
    let o = isospec(&["verify", "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("digest"));

    fs::write(&path, text.replacen("\"h\": 0.005", "\"h\": 0.004", 1)).unwrap();
    assert_eq!(isospec(&["verify", "--config", &cfg, "--out", &out]).status.code(), Some(3));
}

#[test]
fn full_chain_is_deterministic_and_seed_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for d in [&a, &b] {
        let o = isospec(&["all", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    for f in ["jmap.json", "family.json", "verify.json", "invariants.json", "curvature.json", "curvature.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let o = isospec(&["all", "--config", &cfg, "--seed", "7", "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_ne!(fs::read(a.join("invariants.json")).unwrap(), fs::read(c.join("invariants.json")).unwrap());
}

#[test]
fn experimental_integrals_are_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = (small_config(dir.path()), dir.path().display().to_string());
    for stage in ["gen", "deform", "invariants"] {
        assert_eq!(isospec(&[stage, "--config", &cfg, "--out", &out]).status.code(), Some(0));
    }
    let plain = fs::read_to_string(dir.path().join("invariants.json")).unwrap();
    assert!(!plain.contains("\"experimental\": ["));
    let o = isospec(&["invariants", "--config", &cfg, "--out", &out, "--experimental", "--samples", "256"]);
    assert!(stdout(&o).contains("experimental"), "{}", stdout(&o));
    let text = fs::read_to_string(dir.path().join("invariants.json")).unwrap();
    assert!(text.contains("riemann-squared") || text.contains("ricci-squared"), "{text}");
}
