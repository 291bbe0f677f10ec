use std::f64::consts::{E, PI};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cavity_core::assign_mc::{estimate_limit, AssignmentEstimate, CostMatrixSpec};
use cavity_core::cavity::{solve_truncated, CavityParams, FixedPointResult};
use cavity_core::grid_fn::GridFunction;
use cavity_core::limit::{energy, lambda_sweep, window_distance, EnergyValue};
use cavity_core::rde_mc::{run_population_dynamics_with, PopulationSummary, Scheme};
use cavity_core::stats::dkw_epsilon;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, Format, RunConfig};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn record(&self) -> Value {
        let (kind, message) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Runtime(m) => ("runtime", m),
        };
        json!({ "error": { "kind": kind, "message": message, "exit_code": self.code() } })
    }
}

impl From<cavity_core::Error> for Failure {
    fn from(e: cavity_core::Error) -> Self {
        match e {
            cavity_core::Error::InvalidInput(m) | cavity_core::Error::Parse(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

pub fn run(cfg: &RunConfig) -> Outcome {
    if let Some(n) = cfg.parallelism {
        if n == 0 {
            return Err(Failure::Usage("--parallelism must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
    }
    match cfg.command {
        Command::Solve => solve(cfg),
        Command::Sweep => sweep(cfg),
        Command::Energy => energy_cmd(cfg),
        Command::Rde => rde(cfg),
        Command::Assign => assign(cfg),
        Command::Crosscheck => crosscheck(cfg),
        Command::Oracle => oracle(cfg),
    }
}

fn need<T: Copy>(v: Option<T>, name: &str, cmd: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("`{cmd}` needs --{name}")))
}

fn seed(cfg: &RunConfig) -> (u64, bool) {
    match cfg.seed {
        Some(s) => (s, false),
        None => {
            let nanos = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            (nanos ^ (u64::from(std::process::id()) << 32), true)
        }
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> Option<PathBuf> {
    cfg.output.as_ref().map(|d| d.join(name))
}

/// Prints the report and, with `--output`, writes it as `<stem>.json|csv`.
fn emit(
    cfg: &RunConfig,
    stem: &str,
    value: &Value,
    csv: impl FnOnce() -> String,
) -> Result<(), Failure> {
    let (text, ext) = match cfg.format {
        Format::Json => (
            serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?
                + "\n",
            "json",
        ),
        Format::Csv => (csv(), "csv"),
    };
    if let Some(p) = out_path(cfg, &format!("{stem}.{ext}")) {
        std::fs::write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::Runtime(e.to_string()))
}

/// `key,value` lines for a flat JSON object.
fn flat_csv(v: &Value) -> String {
    let mut s = String::from("key,value\n");
    fn walk(prefix: &str, v: &Value, s: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, x, s);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), x, s);
                }
            }
            Value::String(t) => {
                let _ = writeln!(s, "{prefix},{t}");
            }
            other => {
                let _ = writeln!(s, "{prefix},{other}");
            }
        }
    }
    walk("", v, &mut s);
    s
}

fn solve_params(cfg: &RunConfig, cmd: &str) -> Result<CavityParams, Failure> {
    let d = need(cfg.d, "d", cmd)?;
    let lambda = need(cfg.lambda, "lambda", cmd)?;
    Ok(CavityParams::with_grid_step(
        d,
        lambda,
        cfg.grid_step,
        cfg.tol,
        cfg.max_iter,
    )?)
}

#[derive(Serialize)]
struct SolveSummary {
    d: f64,
    lambda: f64,
    grid_step: f64,
    nodes: usize,
    tol: f64,
    energy: EnergyValue,
    f_at_0: f64,
    iterations: usize,
    gap: f64,
    residual: f64,
    converged: bool,
    solved: bool,
    sandwich_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_file: Option<String>,
}

fn summarize(
    p: &CavityParams,
    r: &FixedPointResult,
    grid_file: Option<String>,
) -> Result<SolveSummary, Failure> {
    Ok(SolveSummary {
        d: p.d,
        lambda: p.lambda,
        grid_step: p.step(),
        nodes: p.m,
        tol: p.tol,
        energy: energy(&r.f, p.d)?,
        f_at_0: r.f.eval(0.0)?,
        iterations: r.iterations,
        gap: r.envelope.gap,
        residual: r.residual,
        converged: r.converged,
        solved: r.solved,
        sandwich_violations: r.violations.total(),
        grid_file,
    })
}

fn summary_csv(s: &SolveSummary) -> String {
    format!(
        "d,lambda,grid_step,nodes,energy,tail_bound,f_at_0,iterations,gap,residual,converged,solved\n\
         {},{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{},{}\n",
        s.d,
        s.lambda,
        s.grid_step,
        s.nodes,
        s.energy.value,
        s.energy.tail_remainder_bound,
        s.f_at_0,
        s.iterations,
        s.gap,
        s.residual,
        s.converged,
        s.solved
    )
}

fn write_grid(cfg: &RunConfig, name: &str, f: &GridFunction) -> Result<Option<String>, Failure> {
    match out_path(cfg, name) {
        Some(p) => {
            f.write_csv(&p)?;
            Ok(Some(p.display().to_string()))
        }
        None => Ok(None),
    }
}

fn solve(cfg: &RunConfig) -> Outcome {
    let p = solve_params(cfg, "solve")?;
    let r = solve_truncated(&p)?;
    let grid_file = write_grid(cfg, "f_lambda.csv", &r.f)?;
    let s = summarize(&p, &r, grid_file)?;
    emit(cfg, "summary", &to_value(&s)?, || summary_csv(&s))?;
    Ok(if r.solved {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn sweep(cfg: &RunConfig) -> Outcome {
    let d = need(cfg.d, "d", "sweep")?;
    let lambdas = cfg
        .lambdas
        .clone()
        .ok_or_else(|| Failure::Usage("`sweep` needs --lambdas".into()))?;
    let report = lambda_sweep(d, &lambdas, cfg.grid_step, cfg.tol, cfg.max_iter)?;
    let mut files = Vec::new();
    for (row, sol) in report.rows.iter().zip(&report.solutions) {
        if let Some(f) = write_grid(cfg, &format!("f_lambda_{}.csv", row.lambda), &sol.f)? {
            files.push(f);
        }
    }
    let mut v = to_value(&report)?;
    if cfg.output.is_some() {
        v["grid_files"] = json!(files);
    }
    emit(cfg, "sweep", &v, || report.to_csv_string())?;
    Ok(if report.rows.iter().all(|r| r.solved) {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn energy_cmd(cfg: &RunConfig) -> Outcome {
    let (value, code) = match &cfg.input {
        Some(path) => {
            let d = need(cfg.d, "d", "energy")?;
            let f = GridFunction::read_csv(path)?;
            (energy(&f, d)?, EXIT_OK)
        }
        None => {
            let p = solve_params(cfg, "energy")?;
            let r = solve_truncated(&p)?;
            (
                energy(&r.f, p.d)?,
                if r.solved {
                    EXIT_OK
                } else {
                    EXIT_NOT_CONVERGED
                },
            )
        }
    };
    let v = json!({ "d": cfg.d, "energy": value });
    emit(cfg, "energy", &v, || {
        format!(
            "lambda,energy,tail_bound,quadrature_error\n{},{:.16e},{:.16e},{:.16e}\n",
            value.lambda.map(|l| l.to_string()).unwrap_or_default(),
            value.value,
            value.tail_remainder_bound,
            value.quadrature_error
        )
    })?;
    Ok(code)
}

fn read_reference(path: Option<&Path>) -> Result<Option<GridFunction>, Failure> {
    path.map(GridFunction::read_csv)
        .transpose()
        .map_err(Failure::from)
}

fn rde(cfg: &RunConfig) -> Outcome {
    let d = need(cfg.d, "d", "rde")?;
    let (seed, generated) = seed(cfg);
    let reference = read_reference(cfg.input.as_deref())?;
    let st = run_population_dynamics_with(d, cfg.population, cfg.sweeps, seed, cfg.scheme.into())?;
    if let Some(p) = out_path(cfg, "population.csv") {
        std::fs::write(p, st.samples_csv())?;
    }
    let summary = PopulationSummary::new(&st, reference.as_ref());
    let mut v = to_value(&summary)?;
    v["seed_generated"] = json!(generated);
    emit(cfg, "summary", &v, || {
        format!(
            "d,population,scheme,sweeps,seed,overflow_count,mean,median,dkw_99,ks_vs_reference\n\
             {},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{}\n",
            summary.d,
            summary.population,
            summary.scheme.name(),
            summary.sweeps,
            summary.seed,
            summary.overflow_count,
            summary.mean,
            summary.median,
            summary.dkw_99,
            summary
                .ks_vs_reference
                .map(|k| format!("{k:.16e}"))
                .unwrap_or_default()
        )
    })?;
    Ok(EXIT_OK)
}

fn assignment(
    cfg: &RunConfig,
    d: f64,
    seed: u64,
    keep: bool,
) -> Result<AssignmentEstimate, Failure> {
    let spec = CostMatrixSpec::new(cfg.n, d, cfg.law.into(), seed)?;
    Ok(estimate_limit(&spec, cfg.samples, keep)?)
}

fn assign(cfg: &RunConfig) -> Outcome {
    let d = need(cfg.d, "d", "assign")?;
    let (seed, generated) = seed(cfg);
    let est = assignment(cfg, d, seed, cfg.keep_values)?;
    if let (Some(p), Some(values)) = (out_path(cfg, "values.csv"), &est.values) {
        let mut s = String::from("value\n");
        for v in values {
            let _ = writeln!(s, "{v:.16e}");
        }
        std::fs::write(p, s)?;
    }
    let mut v = to_value(&est)?;
    if let Value::Object(m) = &mut v {
        m.remove("values");
    }
    v["seed"] = json!(seed);
    v["seed_generated"] = json!(generated);
    emit(cfg, "estimate", &v, || {
        format!("{}\n{}\n", AssignmentEstimate::CSV_HEADER, est.csv_row())
    })?;
    Ok(EXIT_OK)
}

/// Smallest λ (on a 0.5 grid) whose tail bound is at most 1e-3.
fn default_lambda(d: f64) -> f64 {
    let l = (E * 1000f64.ln()).powf(1.0 / d);
    (l * 2.0).ceil() / 2.0
}

fn crosscheck(cfg: &RunConfig) -> Outcome {
    let d = need(cfg.d, "d", "crosscheck")?;
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(d));
    let p = CavityParams::with_grid_step(d, lambda, cfg.grid_step, cfg.tol, cfg.max_iter)?;
    let (seed, generated) = seed(cfg);
    let r = solve_truncated(&p)?;
    let e = energy(&r.f, d)?;

    let st = run_population_dynamics_with(d, cfg.population, cfg.sweeps, seed, cfg.scheme.into())?;
    let ks = cavity_core::rde_mc::survival_ks(&st, &r.f);
    // sampling noise at this population size, floored at the usual 0.02
    let ks_threshold = (2.0 * dkw_epsilon(cfg.population, 0.01)).max(0.02);
    let rde_ok = ks < ks_threshold;

    let est = assignment(cfg, d, seed, false)?;
    let z = (est.mean - e.value) / est.stderr;

    let v = json!({
        "d": d,
        "lambda": lambda,
        "seed": seed,
        "seed_generated": generated,
        "solver": {
            "energy": e.value,
            "tail_bound": e.tail_remainder_bound,
            "f_at_0": r.f.eval(0.0)?,
            "gap": r.envelope.gap,
            "residual": r.residual,
            "solved": r.solved,
        },
        "rde": {
            "population": cfg.population,
            "sweeps": cfg.sweeps,
            "scheme": Scheme::from(cfg.scheme).name(),
            "ks_vs_solver": ks,
            "threshold": ks_threshold,
            "consistent": rde_ok,
        },
        "assign": {
            "n": est.n,
            "samples": est.samples,
            "law": est.law.name(),
            "mean": est.mean,
            "stderr": est.stderr,
            "z_vs_solver_energy": z,
            "within_3_stderr": z.abs() <= 3.0,
        },
        "consistent": rde_ok,
    });
    emit(cfg, "crosscheck", &v, || flat_csv(&v))?;
    Ok(if !r.solved {
        EXIT_NOT_CONVERGED
    } else if !rde_ok {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn oracle(cfg: &RunConfig) -> Outcome {
    if cfg.d.is_some_and(|d| d != 1.0) {
        return Err(Failure::Usage("`oracle` runs at d = 1 only".into()));
    }
    let lambda = cfg.lambda.unwrap_or(15.0);
    let lambdas = cfg
        .lambdas
        .clone()
        .unwrap_or_else(|| vec![4.0, 8.0, 12.0, 16.0]);
    let p = CavityParams::with_grid_step(1.0, lambda, cfg.grid_step, cfg.tol, cfg.max_iter)?;
    let r = solve_truncated(&p)?;
    let logistic = GridFunction::from_fn(lambda, r.f.len(), |x| 1.0 / (1.0 + x.exp()))?;
    let window = 6.0f64.min(lambda);
    let sup = window_distance(&r.f, &logistic, window);

    let report = lambda_sweep(1.0, &lambdas, cfg.grid_step, cfg.tol, cfg.max_iter)?;
    let last = report
        .rows
        .last()
        .map(|r| r.energy.value)
        .unwrap_or(f64::NAN);
    let pi2_6 = PI * PI / 6.0;
    let checks = [
        Check {
            name: "sup_norm_vs_logistic",
            value: sup,
            threshold: 5e-3,
            pass: sup <= 5e-3,
        },
        Check {
            name: "energy_vs_pi2_over_6",
            value: (last - pi2_6).abs(),
            threshold: 5e-3,
            pass: (last - pi2_6).abs() <= 5e-3,
        },
        Check {
            name: "energy_monotone_violations",
            value: report.monotonicity_violations.len() as f64,
            threshold: 0.0,
            pass: report.energies_monotone(),
        },
        Check {
            name: "solution_residual",
            value: r.residual,
            threshold: cfg.tol,
            pass: r.solved,
        },
    ];
    let all = checks.iter().all(|c| c.pass);
    let v = json!({
        "lambda": lambda,
        "lambdas": lambdas,
        "window": window,
        "certified_gap": r.envelope.gap,
        "energies": report.rows.iter().map(|r| r.energy.value).collect::<Vec<_>>(),
        "checks": to_value(&checks)?,
        "pass": all,
    });
    emit(cfg, "oracle", &v, || {
        let mut s = String::from("check,value,threshold,pass\n");
        for c in &checks {
            let _ = writeln!(
                s,
                "{},{:.16e},{:e},{}",
                c.name, c.value, c.threshold, c.pass
            );
        }
        s
    })?;
    Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lambda_meets_tail_target() {
        for d in [1.0, 1.5, 2.0, 3.0] {
            let l = default_lambda(d);
            assert!((-l.powf(d) / E).exp() <= 1e-3);
            assert!((-(l - 0.5).powf(d) / E).exp() > 1e-3);
        }
        assert_eq!(default_lambda(1.0), 19.0);
    }

    #[test]
    fn flat_csv_flattens_nested_objects() {
        let v = json!({"a": 1, "b": {"c": true, "d": "x"}});
        assert_eq!(flat_csv(&v), "key,value\na,1\nb.c,true\nb.d,x\n");
    }
}
