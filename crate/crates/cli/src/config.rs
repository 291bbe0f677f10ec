use std::ffi::OsString;
use std::path::PathBuf;

use cavity_core::assign_mc::CostLaw;
use cavity_core::rde_mc::Scheme;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Sweep,
    Energy,
    Rde,
    Assign,
    Crosscheck,
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Law {
    Power,
    Exponential,
}

impl From<Law> for CostLaw {
    fn from(l: Law) -> Self {
        match l {
            Law::Power => CostLaw::Power,
            Law::Exponential => CostLaw::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationScheme {
    Synchronous,
    Averaged,
}

impl From<PopulationScheme> for Scheme {
    fn from(s: PopulationScheme) -> Self {
        match s {
            PopulationScheme::Synchronous => Scheme::Synchronous,
            PopulationScheme::Averaged => Scheme::Averaged,
        }
    }
}

/// Cavity equation solver, population dynamics and random assignment runs.
///
/// Every option can also be given in a `--config` file as `key = value`
/// lines (`#` starts a comment); options on the command line win.
#[derive(Debug, Clone, Parser)]
#[command(name = "cavity", version, args_override_self = true)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub command: Command,
    /// Pseudo-dimension, at least 1.
    #[arg(long)]
    pub d: Option<f64>,
    /// Truncation level.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated increasing truncation levels for `sweep`.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 10_000)]
    pub population: usize,
    #[arg(long, default_value_t = 50)]
    pub sweeps: usize,
    /// `synchronous` replaces the whole generation; `averaged` keeps each
    /// member with probability 1/2.
    #[arg(long, value_enum, default_value_t = PopulationScheme::Averaged)]
    pub scheme: PopulationScheme,
    /// Assignment problem size.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Law::Power)]
    pub law: Law,
    /// Generated and recorded in the output when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver output (grid function CSV) to compare against or integrate.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory for the run's files; the report goes to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep per-instance assignment values (`assign`).
    #[arg(long)]
    pub keep_values: bool,
}

/// Turns `key = value` lines into `--key=value` arguments.
pub fn config_file_args(text: &str) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value, got {raw:?}", no + 1))?;
        let key = k.trim().replace('_', "-");
        if key == "config" {
            return Err(format!(
                "config line {}: nested config files are not supported",
                no + 1
            ));
        }
        let key = if key == "output-path" {
            "output".to_string()
        } else {
            key
        };
        let v = v.trim();
        if key == "keep-values" {
            match v {
                "true" => out.push(OsString::from("--keep-values")),
                "false" => {}
                _ => {
                    return Err(format!(
                        "config line {}: keep_values must be true or false",
                        no + 1
                    ))
                }
            }
            continue;
        }
        out.push(OsString::from(format!("--{key}={v}")));
    }
    Ok(out)
}

/// Parses the command line, splicing in the config file (if any) ahead of
/// the explicit flags so that the latter take precedence.
pub fn parse<I: IntoIterator<Item = OsString>>(args: I) -> Result<RunConfig, ParseFailure> {
    let args: Vec<OsString> = args.into_iter().collect();
    let first = RunConfig::try_parse_from(&args);
    let config_path = match &first {
        Ok(c) => c.config.clone(),
        // the command may live in the file, so look for --config by hand
        Err(_) => find_config_flag(&args),
    };
    let Some(path) = config_path else {
        return first.map_err(ParseFailure::Clap);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ParseFailure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut spliced = vec![args.first().cloned().unwrap_or_else(|| "cavity".into())];
    spliced.extend(config_file_args(&text).map_err(ParseFailure::Config)?);
    spliced.extend(args.into_iter().skip(1));
    RunConfig::try_parse_from(spliced).map_err(ParseFailure::Clap)
}

fn find_config_flag(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Config(String),
}
