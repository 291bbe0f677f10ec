use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cavity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavity"))
        .args(args)
        .output()
        .unwrap()
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_reports_origin_bound_and_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = cavity(&[
        "--command",
        "solve",
        "--d",
        "2",
        "--lambda",
        "6",
        "--tol",
        "1e-8",
        "--output",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    let f0 = v["f_at_0"].as_f64().unwrap();
    assert!((1.0 / std::f64::consts::E..=1.0).contains(&f0), "{f0}");
    assert_eq!(v["solved"], true);
    assert!(v["energy"]["value"].as_f64().unwrap() > 1.1);
    assert!(dir.path().join("f_lambda.csv").exists());
    let saved: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(saved, v);
}

#[test]
fn solved_grid_round_trips_into_rde_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = cavity(&[
        "--command",
        "solve",
        "--d",
        "1",
        "--lambda",
        "8",
        "--output",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let grid = dir.path().join("f_lambda.csv");
    let e1 = json_stdout(&out)["energy"]["value"].as_f64().unwrap();
    let out = cavity(&["--command", "energy", "--d", "1", "--input", path(&grid)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_stdout(&out)["energy"]["value"].as_f64().unwrap(), e1);

    let out = cavity(&[
        "--command",
        "rde",
        "--d",
        "1",
        "--population",
        "20000",
        "--sweeps",
        "30",
        "--seed",
        "4",
        "--input",
        path(&grid),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert!(v["ks_vs_reference"].as_f64().unwrap() < 0.02);
    assert_eq!(v["seed"], 4);
    assert_eq!(v["seed_generated"], false);
}

#[test]
fn sweep_with_one_lambda_has_no_cauchy_field() {
    let out = cavity(&["--command", "sweep", "--d", "2", "--lambdas", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert!(v["cauchy_delta"].is_null());
}

#[test]
fn sweep_csv_lists_grid_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = cavity(&[
        "--command",
        "sweep",
        "--d",
        "2",
        "--lambdas",
        "2,3",
        "--output",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    let files = v["grid_files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    assert!(files
        .iter()
        .all(|f| Path::new(f.as_str().unwrap()).exists()));

    let out = cavity(&[
        "--command",
        "sweep",
        "--d",
        "2",
        "--lambdas",
        "2,3",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("lambda,energy,tail_bound,f_at_0,iterations,gap,converged\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn oracle_passes_with_defaults() {
    let out = cavity(&["--command", "oracle"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v = json_stdout(&out);
    assert_eq!(v["pass"], true);
    for c in v["checks"].as_array().unwrap() {
        assert_eq!(c["pass"], true, "{c}");
    }
}

#[test]
fn assign_is_reproducible_and_records_generated_seeds() {
    let args = [
        "--command",
        "assign",
        "--d",
        "1",
        "--law",
        "exponential",
        "--n",
        "30",
        "--samples",
        "40",
        "--seed",
        "9",
    ];
    let a = cavity(&args);
    let b = cavity(&[&args[..], &["--parallelism", "1"]].concat());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let out = cavity(&[
        "--command",
        "assign",
        "--d",
        "2",
        "--n",
        "10",
        "--samples",
        "5",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n,d,law,samples,mean,stderr\n10,2,power,5,"));
    let out = cavity(&[
        "--command",
        "assign",
        "--d",
        "2",
        "--n",
        "10",
        "--samples",
        "5",
    ]);
    let v = json_stdout(&out);
    assert_eq!(v["seed_generated"], true);
    assert!(v["seed"].is_u64());
}

#[test]
fn rde_outputs_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = cavity(&[
            "--command",
            "rde",
            "--d",
            "1.5",
            "--population",
            "3000",
            "--sweeps",
            "5",
            "--seed",
            "12",
            "--parallelism",
            threads,
            "--output",
            path(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["population.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "# small solve\ncommand = solve\nd = 2\nlambda = 3\ngrid_step = 0.05\n",
    )
    .unwrap();
    let out = cavity(&["--config", path(&conf), "--grid-step", "0.02"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["grid_step"], 0.02);
    assert_eq!(v["lambda"], 3.0);
}

#[test]
fn usage_errors_are_json_with_exit_2() {
    for args in [
        &["--command", "solve", "--d", "2"][..],
        &["--command", "solve", "--d", "0.5", "--lambda", "3"],
        &["--command", "frobnicate"],
        &["--command", "assign", "--d", "2", "--law", "exponential"],
        &["--command", "oracle", "--d", "2"],
    ] {
        let out = cavity(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let v: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(v["error"]["kind"], "usage");
    }
}

#[test]
fn non_convergence_has_its_own_exit_code() {
    let out = cavity(&[
        "--command",
        "solve",
        "--d",
        "1",
        "--lambda",
        "10",
        "--max-iter",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let v = json_stdout(&out);
    assert_eq!(v["solved"], false);
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let out = cavity(&[
        "--command",
        "energy",
        "--d",
        "1",
        "--input",
        "/nonexistent/f.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "runtime");
}

#[test]
fn crosscheck_reports_consistency() {
    let out = cavity(&[
        "--command",
        "crosscheck",
        "--d",
        "2",
        "--population",
        "20000",
        "--sweeps",
        "30",
        "--n",
        "50",
        "--samples",
        "40",
        "--seed",
        "3",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v = json_stdout(&out);
    assert_eq!(v["lambda"], 4.5);
    assert_eq!(v["rde"]["consistent"], true);
    assert!(v["assign"]["mean"].as_f64().unwrap() > 1.0);
}
