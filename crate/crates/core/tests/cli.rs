//! Command-line behaviour: outputs, exit codes and error messages.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ctlp-adp");

const SMALL_SYSTEM: &str = r#"{
    "system": {"kind": "fourier", "period": 6.283185307179586,
               "a": {"constant": [[0.0, 1.0], [-1.0, -0.2]], "cos": [[[0.0, 0.0], [0.4, 0.0]]]},
               "b": {"constant": [[0.0], [1.0]]}},
    "adp": {"n_fourier": 4, "samples": 600, "dt": 0.1, "substeps": 20, "s_f": 30.0,
            "exploration": {"amplitude": 1.0, "num_sinusoids": 40, "freq_range": [-10.0, 10.0], "seed": 0}}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_pre_writes_the_steady_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYSTEM);
    let out = dir.path().join("out");
    let o = run(&["solve-pre", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["p_star.csv", "k_star.csv", "solve_pre.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("solve_pre.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn learned_gain_round_trips_through_stability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYSTEM);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = run(&["run-adp", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["w_bar_h.csv", "w_bar_k.csv", "vi_gains.csv", "gain_trajectory.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let gain = out.join("w_bar_k.csv");
    let o = run(&["stability", "--config", &cfg, "--out", out_s, "--gain", gain.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("stable"));
    assert!(out.join("stability.json").exists());

    // same seed, same coefficients
    let again = dir.path().join("again");
    let o = run(&["run-adp", "--config", &cfg, "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(gain).unwrap(), std::fs::read(again.join("w_bar_k.csv")).unwrap());
}

#[test]
fn collect_writes_the_data_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYSTEM);
    let out = dir.path().join("out");
    let o = run(&["collect", "--config", &cfg, "--out", out.to_str().unwrap(), "--samples", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trajectory.csv", "theta.csv", "gamma.csv", "collect.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn errors_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let bad = write_config(dir.path(), r#"{"bogus": true}"#);
    let o = run(&["solve-pre", "--config", &bad, "--out", out_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: [config]"), "{}", stderr(&o));

    let o = run(&["solve-pre", "--config", "/nonexistent/config.json", "--out", out_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: ["));

    let o = run(&["table1", "--zeta", "0.5", "--out", out_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: [config]"));

    // far fewer data rows than unknowns
    let cfg = write_config(dir.path(), SMALL_SYSTEM);
    let o = run(&["run-adp", "--config", &cfg, "--out", out_s, "--n-fourier", "40", "--samples", "100"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: [data-matrices]"), "{}", stderr(&o));

    let o = run(&["run-adp", "--config", &cfg, "--out", out_s, "--dt=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: [config]"), "{}", stderr(&o));
}
