use std::path::Path;
use std::process::{Command, Output};

fn ratebal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratebal"))
        .args(args)
        .env_remove("RATEBAL_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn value(args: &[&str]) -> f64 {
    stdout(&ratebal(args)).trim().parse().unwrap()
}

#[test]
fn slopes_match_closed_form() {
    for (l, want) in [("6", 8.86), ("12", 4.43), ("21", 2.53)] {
        let got = value(&["eval", "prop1-slope", "--alpha", "4", "--q", "2", "--T", "180", "--L", l]);
        assert!((got - want).abs() < 0.005, "L={l}: {got}");
    }
}

#[test]
fn scalar_evaluations() {
    assert_eq!(value(&["eval", "coherence", "--doppler", "5.5", "--delay", "630e-9"]), 180.0);
    assert_eq!(value(&["eval", "th2", "--alpha", "4"]), 1.0);
    let c = value(&["eval", "residual-coeff", "--alpha", "4", "--horizon", "200"]);
    assert!((c - 0.027).abs() < 0.001, "{c}");
    let th1 = stdout(&ratebal(&["eval", "th1", "--L", "6"]));
    let field = |name: &str| -> f64 {
        let line = th1.lines().find(|l| l.starts_with(name)).unwrap();
        line[name.len()..].trim().parse().unwrap()
    };
    assert_eq!(field("exchange_ratio"), 30.0);
    assert!((field("multiplexing") - 0.9).abs() < 1e-12);
}

#[test]
fn bad_input_fails() {
    assert_eq!(ratebal(&["frobnicate"]).status.code(), Some(2));
    let out = ratebal(&["eval", "th2", "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = ratebal(&["tradeoff", "--trials", "5", "--out", "/nonexistent-dir/x"]);
    assert!(!out.status.success());
}

#[test]
fn validate_passes() {
    let out = stdout(&ratebal(&["validate", "--seed", "3"]));
    assert!(!out.contains("FAIL"), "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
}

const SMALL: &str = r#"
trials = 100
seed = 4

[tradeoff]
cooperation = [3, 6]
depth_db = [10.0, 20.0]
"#;

fn run_tradeoff(config: &Path, out: &Path) -> String {
    stdout(&ratebal(&[
        "tradeoff",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]))
}

#[test]
fn tradeoff_rerun_and_resume_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    let summary = run_tradeoff(&config, &a);
    assert!(summary.contains("no_cooperation") && summary.contains("crossing 3->6"));
    let csv = std::fs::read_to_string(a.join("tradeoff.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# ratebal-sweep version=1 kind=tradeoff config="));
    assert_eq!(
        lines.next().unwrap(),
        "scheme,L_fed,feedback_se_bps_hz,downlink_se_bps_hz,stderr,trials,seed,snr_db"
    );
    assert!(lines.count() >= 5);

    // A fresh directory reproduces the file byte for byte.
    assert_eq!(run_tradeoff(&config, &b), summary);
    assert_eq!(std::fs::read(b.join("tradeoff.csv")).unwrap(), csv.as_bytes());

    // Truncate mid-row; the resumed run recomputes only what is missing.
    let cut = csv.len() - csv.lines().last().unwrap().len() / 2 - 1;
    std::fs::write(b.join("tradeoff.csv"), &csv.as_bytes()[..cut]).unwrap();
    assert_eq!(run_tradeoff(&config, &b), summary);
    assert_eq!(std::fs::read_to_string(b.join("tradeoff.csv")).unwrap(), csv);

    // A different configuration starts the file over.
    std::fs::write(&config, SMALL.replace("seed = 4", "seed = 5")).unwrap();
    run_tradeoff(&config, &b);
    let fresh = std::fs::read_to_string(b.join("tradeoff.csv")).unwrap();
    assert_ne!(fresh.lines().next(), csv.lines().next());
    assert!(fresh.lines().skip(2).all(|l| l.ends_with(",100,5,30")), "{fresh}");
}

#[test]
fn topology_reports_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&ratebal(&["topology", "--out", dir.path().to_str().unwrap()]));
    assert!(out.contains("sites 55") && out.contains("mobiles 55"), "{out}");
    assert!(dir.path().join("gains.csv").exists() && dir.path().join("topology.toml").exists());
}
