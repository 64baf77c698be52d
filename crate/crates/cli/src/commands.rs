use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use margot::bench::{self, Experiment, ExperimentConfig};
use margot::eval;
use margot::tabular::{self, TableSchema};
use margot::train::{self, ConditioningSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{self, FileConfig};
use crate::data;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "margot",
    version,
    about = "Tabular data synthesis with marginally-penalized Wasserstein training"
)]
pub struct Cli {
    /// Seed for training, sampling and benchmark data.
    #[arg(long, global = true, env = "MARGOT_SEED")]
    pub seed: Option<u64>,

    /// TOML configuration file.
    #[arg(long, global = true, env = "MARGOT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output path (checkpoint for fit, CSV for sample, JSON report for eval and bench).
    #[arg(long, global = true, env = "MARGOT_OUT")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator on a CSV table and write a checkpoint.
    Fit(FitArgs),
    /// Draw rows from a checkpoint.
    Sample(SampleArgs),
    /// Compare a synthetic CSV against a real one.
    Eval(EvalArgs),
    /// Run a synthetic benchmark experiment.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, env = "MARGOT_DATA")]
    pub data: PathBuf,
    /// TOML schema declaring each column's kind.
    #[arg(long, env = "MARGOT_SCHEMA")]
    pub schema: PathBuf,
    /// Comma-separated columns to condition on (overrides the config file).
    #[arg(long, env = "MARGOT_CONDITION", value_delimiter = ',')]
    pub condition: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, env = "MARGOT_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Rows to draw; defaults to the number of conditioning rows, else 1000.
    #[arg(long, env = "MARGOT_COUNT")]
    pub count: Option<usize>,
    /// CSV of conditioning values, one row per sample.
    #[arg(long, env = "MARGOT_CONDITION")]
    pub condition: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Real data CSV.
    #[arg(long, env = "MARGOT_DATA")]
    pub data: PathBuf,
    /// Synthetic data CSV.
    #[arg(long, env = "MARGOT_SYNTH")]
    pub synth: PathBuf,
    /// Optional schema; when given both tables are compared in encoded space.
    #[arg(long, env = "MARGOT_SCHEMA")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// abc5d, gmm20, scurve, gauss3_coverage or gmm_modecollapse_2comp.
    pub experiment: String,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench_seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    /// SHA-256 of the input data bytes.
    pub input_digest: Option<String>,
    pub timings: Timings,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `<path>.manifest.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest<C: Serialize>(out: Option<&Path>, m: &RunManifest<C>) -> CliResult<()> {
    if let Some(p) = out {
        let path = manifest_path(p);
        let json = serde_json::to_vec_pretty(m).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("report serializes");
    b.push(b'\n');
    b
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(&cli, cfg, a),
        Command::Sample(a) => cmd_sample(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, cfg, a),
        Command::Bench(a) => cmd_bench(&cli, cfg, a),
    }
}

fn cmd_fit(cli: &Cli, mut cfg: FileConfig, a: &FitArgs) -> CliResult<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("fit needs --out for the checkpoint".into()))?;
    let schema = data::read_schema(&a.schema)?;
    let (table, raw) = data::read_table(&a.data, Some(&schema))?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(c) = &a.condition {
        cfg.condition = c.clone();
    }
    let started = Instant::now();
    let tr = tabular::fit(&schema, &table)?;
    let enc = tabular::encode(&tr, &table)?.matrix;
    let model = if cfg.condition.is_empty() {
        let chain = train::default_chain(&tr, &cfg.train, None, &cfg.arch);
        train::fit(&enc, &tr, &cfg.train, chain)?
    } else {
        let names: Vec<&str> = cfg.condition.iter().map(String::as_str).collect();
        let cond = ConditioningSpec::from_names(&tr, &names)?;
        let chain = train::default_chain(&tr, &cfg.train, Some(&cond), &cfg.arch);
        train::fit_conditional(&enc, &tr, &cond, &cfg.train, chain)?
    };
    let fit_seconds = started.elapsed().as_secs_f64();
    fs::write(out, checkpoint::encode(&model)).map_err(|e| CliError::io(out, e))?;
    write_manifest(
        Some(out),
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "fit",
            seed: cfg.train.seed,
            config: &cfg,
            input_digest: Some(digest(&raw)),
            timings: Timings {
                fit_seconds: Some(fit_seconds),
                sample_seconds: None,
                bench_seconds: None,
            },
        },
    )
}

pub const DEFAULT_SAMPLE_COUNT: usize = 1000;

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> CliResult<()> {
    let bytes = fs::read(&a.checkpoint).map_err(|e| CliError::io(&a.checkpoint, e))?;
    let model = checkpoint::decode(&bytes)?;
    let seed = cli.seed.unwrap_or(0);
    let cond = match (&a.condition, &model.conditioning) {
        (Some(path), Some(spec)) if !spec.is_empty() => {
            let sub = tabular::subset(&model.transformer, &spec.columns)?;
            Some(data::read_table(path, Some(&sub.schema))?)
        }
        (Some(_), _) => {
            return Err(CliError::Usage(
                "--condition given but the checkpoint is not conditional".into(),
            ))
        }
        (None, Some(spec)) if !spec.is_empty() => {
            return Err(CliError::Usage(
                "checkpoint is conditional; pass --condition with a CSV of conditioning values"
                    .into(),
            ))
        }
        (None, _) => None,
    };
    let count = match (a.count, &cond) {
        (Some(c), _) => c,
        (None, Some((t, _))) => t.n_rows(),
        (None, None) => DEFAULT_SAMPLE_COUNT,
    };
    let started = Instant::now();
    let table = train::sample(&model, count, seed, cond.as_ref().map(|c| &c.0))?;
    let sample_seconds = started.elapsed().as_secs_f64();
    data::write_output(cli.out.as_deref(), &data::table_to_csv(&table))?;
    write_manifest(
        cli.out.as_deref(),
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "sample",
            seed,
            config: serde_json::json!({ "count": count, "checkpoint_digest": digest(&bytes) }),
            input_digest: cond.as_ref().map(|c| digest(&c.1)),
            timings: Timings {
                fit_seconds: None,
                sample_seconds: Some(sample_seconds),
                bench_seconds: None,
            },
        },
    )
}

fn cmd_eval(cli: &Cli, cfg: FileConfig, a: &EvalArgs) -> CliResult<()> {
    let schema: Option<TableSchema> = a.schema.as_deref().map(data::read_schema).transpose()?;
    let (real_t, _) = data::read_table(&a.data, schema.as_ref())?;
    let (synth_t, _) = data::read_table(&a.synth, schema.as_ref())?;
    let (real, synth) = match &schema {
        Some(s) => {
            let tr = tabular::fit(s, &real_t)?;
            (
                tabular::encode(&tr, &real_t)?.matrix,
                tabular::encode(&tr, &synth_t)?.matrix,
            )
        }
        None => {
            if real_t.names != synth_t.names {
                return Err(CliError::Core(margot::Error::Validation(format!(
                    "real columns [{}] differ from synthetic columns [{}]",
                    real_t.names.join(", "),
                    synth_t.names.join(", ")
                ))));
            }
            (real_t.to_matrix()?, synth_t.to_matrix()?)
        }
    };
    let report = eval::evaluate(&real, &synth, &cfg.eval)?;
    data::write_output(cli.out.as_deref(), &json_bytes(&report))
}

fn cmd_bench(cli: &Cli, cfg: FileConfig, a: &BenchArgs) -> CliResult<()> {
    let exp = Experiment::parse(&a.experiment)?;
    let seed = cli.seed.unwrap_or(0);
    let mut ec = ExperimentConfig::new(exp, seed);
    cfg.bench.apply(&mut ec);
    ec.train.seed = seed;
    ec.coverage.seed = seed;
    let started = Instant::now();
    let report = bench::run_experiment(&ec)?;
    let bench_seconds = started.elapsed().as_secs_f64();
    data::write_output(cli.out.as_deref(), &json_bytes(&report))?;
    write_manifest(
        cli.out.as_deref(),
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "bench",
            seed,
            config: &ec,
            input_digest: None,
            timings: Timings {
                fit_seconds: None,
                sample_seconds: None,
                bench_seconds: Some(bench_seconds),
            },
        },
    )
}
