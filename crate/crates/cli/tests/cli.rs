use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grasp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp")).args(args).current_dir(dir).output().expect("spawn grasp")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// Deterministic calibrated data without pulling a RNG into the test.
fn write_eval(dir: &Path, name: &str, n: usize) {
    let mut s = String::from("y,eta_hat,x0\n");
    for i in 0..n {
        let x = (i as f64 * 0.618_034).fract() * 4.0 - 2.0;
        let eta = 1.0 / (1.0 + (-x).exp());
        let u = (i as f64 * 0.414_213_5 + 0.1).fract();
        s.push_str(&format!("{},{eta},{x}\n", u8::from(u < eta)));
    }
    fs::write(dir.join(name), s).unwrap();
}

#[test]
fn test_command_writes_json_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    write_eval(dir.path(), "eval.csv", 300);
    let o = grasp(&["test", "--input", "eval.csv", "--tau", "0", "--alpha", "0.1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["command"], "test");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["arguments"]["test"]["L"], 10);
    assert_eq!(v["arguments"]["test"]["seed"], 0);
    let res = v["result"].as_array().unwrap();
    assert_eq!(res.len(), 2);
    for r in res {
        for key in ["statistic", "p_value", "reject", "threshold"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        let stat = r["statistic"].as_f64().unwrap();
        let thr = r["threshold"].as_f64().unwrap();
        assert_eq!(r["reject"].as_bool().unwrap(), stat >= thr);
    }
}

#[test]
fn rejection_does_not_change_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::from("y,eta_hat\n");
    for i in 0..400 {
        s.push_str(&format!("{},0.05\n", u8::from(i % 2 == 0)));
    }
    fs::write(dir.path().join("bad.csv"), s).unwrap();
    let o = grasp(&["test", "--input", "bad.csv", "--variant", "asym", "--format", "csv"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains(",true,"), "{row}");
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("nocol.csv"), "y,x0\n1,0.5\n").unwrap();
    fs::write(dir.path().join("range.csv"), "y,eta_hat\n1,0.5\n0,1.3\n").unwrap();
    write_eval(dir.path(), "eval.csv", 50);

    let o = grasp(&["test", "--input", "nocol.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eta_hat"));

    let o = grasp(&["test", "--input", "range.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probability out of range"));
    assert!(stderr(&o).contains("line 3"));

    let o = grasp(&["ci", "--input", "eval.csv", "--alpha", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = grasp(&["test", "--input", "eval.csv", "--divergence", "chi2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kl, tv, hellinger"));

    let o = grasp(&["test", "--input", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = grasp(&["test", "--input", "eval.csv", "--score", "residual", "--K", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--score-theta"));
}

#[test]
fn ci_on_uniform_counts_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    // eta_hat = 1/2 and alternating labels put w exactly on bin centres
    let mut s = String::from("y,eta_hat\n");
    for i in 0..200 {
        s.push_str(&format!("{},0.5\n", i % 2));
    }
    fs::write(dir.path().join("u.csv"), s).unwrap();
    let o = grasp(&["ci", "--input", "u.csv", "--L", "2", "--variant", "asym"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let row = &v["result"][0];
    assert_eq!(row["variant"], "asym");
    assert_eq!(row["alpha"], 0.1);
    assert_eq!(row["tau_lower"], 0.0);
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("size.toml"), "n = 300\nd = 10\nL = 5\ntrials = 5\nseed = 4\n").unwrap();
    let run = |out: &str| {
        let o = grasp(&["simulate", "--config", "size.toml", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2);

    let o = grasp(&["simulate", "--config", "size.toml", "--seed", "5", "--out", "c.csv"], dir.path());
    assert!(o.status.success());

    fs::write(dir.path().join("bad.toml"), "n = 300\nL = 5\ntrials = 5\ndivergence = \"js\"\n").unwrap();
    let o = grasp(&["simulate", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kl, tv, hellinger"));
}

#[test]
fn simulate_emits_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("power.toml"),
        "n = 300\nd = 10\nL = 5\ntrials = 3\ntheta1_rule = \"negated\"\ntau_grid = [0.0, 0.5]\n",
    )
    .unwrap();
    let o = grasp(&["simulate", "--config", "power.toml", "--plot-data", "plot.json", "--format", "json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["result"]["rows"].as_array().unwrap().len(), 2);
    let series: Value = serde_json::from_slice(&fs::read(dir.path().join("plot.json")).unwrap()).unwrap();
    let series = series.as_array().unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0]["tau"].as_array().unwrap().len(), 2);
}

#[test]
fn modelx_and_perfect_fit_run() {
    let dir = tempfile::tempdir().unwrap();
    write_eval(dir.path(), "eval.csv", 200);
    let pool: String = std::iter::once("x0\n".to_string())
        .chain((0..100).map(|i| format!("{}\n", i as f64 / 25.0 - 2.0)))
        .collect();
    fs::write(dir.path().join("pool.csv"), pool).unwrap();
    fs::write(dir.path().join("theta.txt"), "1.0\n").unwrap();

    let o = grasp(
        &["modelx-test", "--input", "eval.csv", "--pool", "pool.csv", "--theta", "theta.txt", "--score", "agnostic"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"][0]["K"], 1);

    let o = grasp(&["modelx-test", "--input", "eval.csv", "--pool", "pool.csv", "--score", "agnostic"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = grasp(&["perfect-fit", "--input", "eval.csv", "--M", "50", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"][0]["variant"], "crt");
    let p = v["result"][0]["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
}

#[test]
fn tau0_for_a_perfect_fit_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("same.toml"), "n = 10\nL = 5\ntrials = 1\nd = 20\n").unwrap();
    let o = grasp(&["tau0", "--config", "same.toml", "--samples", "1000", "--format", "csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0.0")), "{text}");
}
