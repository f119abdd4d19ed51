//! `gmraim`: simulate traces, run detectors and evaluate them.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmraim::attacks::AttackMode;
use gmraim::fusion::ExclusionMode;
use gmraim::theory::{InfrastructureCount, InfrastructureCounts};

use commands::{CompareSource, DetectMethod, DetectOptions, Inputs, RocOptions};
use config::Preset;

#[derive(Parser)]
#[command(
    name = "gmraim",
    version,
    about = "GNSS spoofing detection by subset fusion with terrestrial ranging"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "GMRAIM_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for per-subset solving; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled trace, its anchor database and a truth sidecar.
    Simulate(SimulateArgs),
    /// Run one detector over a trace and stream per-epoch decisions.
    Detect(DetectArgs),
    /// ROC table and threshold-to-rate relation from a detections file.
    Roc(RocArgs),
    /// All four detectors at calibrated false-positive targets.
    Compare(CompareArgs),
    /// Detection and recovery guarantees for anchor and adversary counts.
    TheoryCheck(TheoryArgs),
    /// Check a config and, optionally, a trace with its anchors.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Directory holding trace.jsonl, anchors.csv and optionally truth.jsonl.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Truth sidecar written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

impl InputArgs {
    fn given(&self) -> bool {
        self.input.is_some() || self.trace.is_some() || self.anchors.is_some()
    }

    fn resolve(self) -> Result<Inputs> {
        Inputs::resolve(self.input.as_deref(), self.trace, self.anchors, self.truth)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// none, uncoordinated or coordinated.
    #[arg(long)]
    attack: Option<AttackMode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exclusion {
    Off,
    FromGnss,
    FromPeak,
}

impl From<Exclusion> for ExclusionMode {
    fn from(e: Exclusion) -> Self {
        match e {
            Exclusion::Off => ExclusionMode::Off,
            Exclusion::FromGnss => ExclusionMode::FromGnss,
            Exclusion::FromPeak => ExclusionMode::FromPeak,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "proposed")]
    method: DetectMethod,
    /// Density threshold Λ in m⁻².
    #[arg(long, conflicts_with = "target_fp")]
    lambda: Option<f64>,
    /// Calibrate Λ to this false-positive rate on the trace's negative epochs.
    #[arg(long)]
    target_fp: Option<f64>,
    #[arg(long, value_enum)]
    exclusion: Option<Exclusion>,
}

#[derive(Args)]
struct RocArgs {
    /// Detections file; defaults to detections.jsonl under --input.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Overrides the labels stored in the detections.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Explicit thresholds, comma separated; defaults to every distinct score.
    #[arg(long, value_delimiter = ',', num_args = 0.., conflicts_with = "targets")]
    lambdas: Option<Vec<f64>>,
    /// Thresholds calibrated to these false-positive rates.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    targets: Option<Vec<f64>>,
}

#[derive(Args)]
struct CompareArgs {
    /// Compare on an existing labeled trace instead of simulating.
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Scenario seeds, comma separated; results are averaged.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
}

#[derive(Args)]
struct TheoryArgs {
    /// TOML or JSON file with an `infrastructures` list.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Inline infrastructure as name:n_anc:n_adv:n_min; repeatable.
    #[arg(long = "infra", value_parser = commands::parse_infra)]
    infra: Vec<InfrastructureCount>,
    #[arg(long)]
    json: bool,
    /// Also write every adversary allocation with its verdicts to this CSV.
    #[arg(long)]
    frontier: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    inputs: InputArgs,
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => {
            let mut loaded = config::load(cfg_path, a.preset, a.seed)?;
            let c = &mut loaded.config;
            if let Some(n) = a.epochs {
                c.scenario.epochs = n;
            }
            if let Some(mode) = a.attack {
                commands::set_attack_mode(c, mode);
            }
            c.validate()?;
            commands::cmd_simulate(&loaded, &a.out)?;
        }
        Command::Detect(a) => {
            let mut loaded = config::load(cfg_path, None, None)?;
            let c = &mut loaded.config;
            if let Some(l) = a.lambda {
                c.pipeline.detector.lambda = l;
            }
            if let Some(e) = a.exclusion {
                c.pipeline.detector.exclusion = e.into();
            }
            if let Some(t) = a.target_fp {
                if !(0.0..=1.0).contains(&t) {
                    bail!("--target-fp {t} outside [0, 1]");
                }
            }
            c.validate()?;
            let inputs = a.inputs.resolve()?;
            let opts = DetectOptions {
                method: a.method,
                target_fp: a.target_fp,
            };
            commands::cmd_detect(&loaded, &inputs, &opts, &a.out)?;
        }
        Command::Roc(a) => {
            let loaded = config::load(cfg_path, None, None)?;
            let detections = match (a.detections, &a.input) {
                (Some(d), _) => d,
                (None, Some(dir)) => dir.join(commands::DETECTIONS_FILE),
                (None, None) => bail!("no detections given (use --detections or --input)"),
            };
            if a.lambdas.as_ref().is_some_and(Vec::is_empty) {
                bail!("empty lambda list");
            }
            if a.targets.as_ref().is_some_and(Vec::is_empty) {
                bail!("empty target list");
            }
            let opts = RocOptions {
                detections,
                truth: a.truth,
                lambdas: a.lambdas,
                targets: a.targets,
            };
            commands::cmd_roc(&loaded, &opts, &a.out)?;
        }
        Command::Compare(a) => {
            let mut loaded = config::load(cfg_path, a.preset, None)?;
            let c = &mut loaded.config;
            if let Some(t) = a.targets {
                c.evaluation.targets = t;
            }
            if let Some(s) = a.seeds {
                c.evaluation.seeds = s;
            }
            c.validate()?;
            let source = if a.inputs.given() {
                CompareSource::Files(a.inputs.resolve()?)
            } else {
                CompareSource::Seeds(c.evaluation.seeds.clone())
            };
            commands::cmd_compare(&loaded, &source, &a.out)?;
        }
        Command::TheoryCheck(a) => {
            let mut counts = match &a.counts {
                Some(p) => commands::parse_counts_file(p)?,
                None => InfrastructureCounts::default(),
            };
            counts.infrastructures.extend(a.infra);
            counts.validate()?;
            commands::cmd_theory_check(&counts, a.json, a.frontier.as_deref())?;
        }
        Command::Validate(a) => {
            let loaded = config::load(cfg_path, None, None)?;
            let inputs = if a.inputs.given() {
                Some(a.inputs.resolve()?)
            } else {
                None
            };
            if commands::cmd_validate(&loaded, inputs.as_ref())? > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
