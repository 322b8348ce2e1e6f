//! Command-line front end: `train`, `eval`, `transfer`, `analyze`, `validate`.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{export_head_matrix_csv, export_matrix_csv, export_series_csv, trace_attention};
use crate::env::EnvConfig;
use crate::model::{Checkpoint, ModelConfig};
use crate::morphology::{load_grid, load_morphology_set, EdgeScheme, VoxelGrid};
use crate::rl::{evaluate, train, transfer, PpoConfig, TrainRunConfig, TransferMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "heteromorpheus", version, about = "Heterogeneous graph transformer controllers for voxel soft robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a shared controller on a morphology set.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one morphology.
    Eval(EvalArgs),
    /// Zero-shot or fine-tuned transfer to unseen morphologies.
    Transfer(TransferArgs),
    /// Record attention and its stable rank over one episode.
    Analyze(AnalyzeArgs),
    /// Parse and check a morphology set.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file with optional `model`, `ppo` and `env` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    morphs: PathBuf,
    /// Edge scheme: n (node pair), d (direction) or homo.
    #[arg(long, value_parser = parse_scheme)]
    variant: Option<EdgeScheme>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Intermediate checkpoint cadence in updates (0: final only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    morph: PathBuf,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Sample actions instead of acting with the mean.
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file whose `env` section overrides the environment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    morphs: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: TransferMode,
    /// Fine-tuning updates.
    #[arg(long, default_value_t = 0)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Deterministic evaluation episodes per morphology.
    #[arg(long, default_value_t = 4)]
    episodes: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    morph: PathBuf,
    #[arg(long, default_value_t = 128)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export every head's attention matrix.
    #[arg(long)]
    per_head: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    morphs: PathBuf,
}

fn parse_scheme(s: &str) -> Result<EdgeScheme, String> {
    match s {
        "n" => Ok(EdgeScheme::NodePair),
        "d" => Ok(EdgeScheme::Direction),
        "homo" => Ok(EdgeScheme::Homogeneous),
        other => Err(format!("unknown variant `{other}` (expected n, d or homo)")),
    }
}

fn parse_mode(s: &str) -> Result<TransferMode, String> {
    s.parse()
}

/// Contents of a `--config` file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
}

impl RunConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))
            }
        }
    }
}

/// Provenance record written before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfigFile,
    pub morphology_set: String,
    pub morphology_set_sha256: String,
    pub morphologies: Vec<String>,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn load_set(path: &Path) -> Result<Vec<VoxelGrid>, String> {
    load_morphology_set(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_one(path: &Path) -> Result<VoxelGrid, String> {
    load_grid(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_train(args: TrainArgs) -> Result<(), String> {
    let mut config = RunConfigFile::load(args.config.as_deref())?;
    if let Some(v) = args.variant {
        config.model.scheme = v;
    }
    if let Some(u) = args.updates {
        config.ppo.updates = u;
    }
    let seed = args.seed.unwrap_or(0);
    config.model.validate().map_err(|e| e.to_string())?;
    let set_bytes = std::fs::read(&args.morphs).map_err(|e| format!("cannot read {}: {e}", args.morphs.display()))?;
    let grids = load_set(&args.morphs)?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest {
        command: "train".into(),
        config: config.clone(),
        morphology_set: args.morphs.display().to_string(),
        morphology_set_sha256: sha256_hex(&set_bytes),
        morphologies: grids.iter().map(|g| g.name().to_string()).collect(),
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: now_unix(),
        finished_unix: None,
    };
    let manifest_path = args.out.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let mut run = TrainRunConfig::new(grids, config.model, config.ppo, config.env, seed);
    run.out_dir = Some(args.out.clone());
    run.checkpoint_every = args.checkpoint_every.unwrap_or(0);
    let outcome = train(&run).map_err(|e| e.to_string())?;
    manifest.finished_unix = Some(now_unix());
    write_json(&manifest_path, &manifest)?;
    match outcome.metrics.last() {
        Some(m) => println!("trained {} updates; last mean return {:.6}", outcome.metrics.len(), m.mean_return_overall),
        None => println!("wrote initial checkpoint (0 updates)"),
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn load_checkpoint_file(path: &Path) -> Result<Checkpoint, String> {
    Checkpoint::load(path)
}

fn run_eval(args: EvalArgs) -> Result<(), String> {
    let env = RunConfigFile::load(args.config.as_deref())?.env;
    let ck = load_checkpoint_file(&args.checkpoint)?;
    let grid = load_one(&args.morph)?;
    let result = evaluate(&ck.params, &grid, &env, args.episodes, !args.stochastic, args.seed).map_err(|e| e.to_string())?;
    println!("mean_return {}", result.mean);
    for (i, r) in result.returns.iter().enumerate() {
        println!("episode {i} {r}");
    }
    Ok(())
}

fn run_transfer(args: TransferArgs) -> Result<(), String> {
    let config = RunConfigFile::load(args.config.as_deref())?;
    let ck = load_checkpoint_file(&args.checkpoint)?;
    let unseen = load_set(&args.morphs)?;
    create_dir(&args.out)?;
    let report = transfer(
        &ck,
        &unseen,
        args.mode,
        args.budget,
        args.seed,
        &config.ppo,
        &config.env,
        args.episodes,
        Some(&args.out),
    )
    .map_err(|e| e.to_string())?;
    for m in &report.per_morphology {
        match m.fine_tuned {
            Some(f) => println!("{}: zero-shot {:.6}, fine-tuned {:.6}", m.name, m.zero_shot, f),
            None => println!("{}: zero-shot {:.6}", m.name, m.zero_shot),
        }
    }
    println!("report written to {}", args.out.join("transfer_report.json").display());
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), String> {
    let env = RunConfigFile::load(args.config.as_deref())?.env;
    let ck = load_checkpoint_file(&args.checkpoint)?;
    let grid = load_one(&args.morph)?;
    let trace = trace_attention(&ck.params, &grid, &env, args.steps, args.layer, args.seed, args.per_head)
        .map_err(|e| e.to_string())?;
    create_dir(&args.out)?;
    export_series_csv(&trace, &args.out.join("stable_rank.csv")).map_err(|e| e.to_string())?;
    export_matrix_csv(&trace, &args.out.join("attention.csv")).map_err(|e| e.to_string())?;
    if args.per_head {
        export_head_matrix_csv(&trace, &args.out.join("attention_heads.csv")).map_err(|e| e.to_string())?;
    }
    let series = &trace.series[args.layer];
    let peaks = trace.records.iter().filter(|r| r.is_peak).count();
    let valleys = trace.records.iter().filter(|r| r.is_valley).count();
    let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
    println!("layer {} mean stable rank {mean:.6}; {peaks} peaks, {valleys} valleys", args.layer);
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Result<(), String> {
    let grids = load_set(&args.morphs)?;
    for g in &grids {
        println!("{}: {}x{}, {} voxels", g.name(), g.rows(), g.cols(), g.voxel_count());
    }
    println!("ok: {} morphologies", grids.len());
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status. Messages go to stdout, errors to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Transfer(a) => run_transfer(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}
