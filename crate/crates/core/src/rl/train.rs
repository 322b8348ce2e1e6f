use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rollout::observation_tensors;
use super::{collect_rollouts, ppo_update, stream_rng, thread_count, Adam, PpoConfig, Result, RlError, Sample, Worker};
use crate::env::{episode_return, EnvConfig, SoftBodyEnv};
use crate::model::{policy_value, sample_actions, Checkpoint, GraphPlan, ModelConfig, Parameters};
use crate::morphology::{build_graph, VoxelGrid};

const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct TrainRunConfig {
    pub morphologies: Vec<VoxelGrid>,
    pub model: ModelConfig,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub seed: u64,
    /// Where metrics and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Write an intermediate checkpoint every this many updates (0: final only).
    pub checkpoint_every: usize,
    /// Worker threads; defaults to [`thread_count`].
    pub threads: Option<usize>,
    /// Starting parameters (fine-tuning); fresh initialization when `None`.
    pub init: Option<Parameters>,
}

impl TrainRunConfig {
    pub fn new(morphologies: Vec<VoxelGrid>, model: ModelConfig, ppo: PpoConfig, env: EnvConfig, seed: u64) -> Self {
        Self {
            morphologies,
            model,
            ppo,
            env,
            seed,
            out_dir: None,
            checkpoint_every: 0,
            threads: None,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMetrics {
    pub update: usize,
    /// `(1/K) Σ_k` mean episode return of morphology `k`.
    pub mean_return_overall: f64,
    pub per_morphology: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub metrics: Vec<UpdateMetrics>,
}

impl TrainOutcome {
    /// Mean of `mean_return_overall` over the last `n` updates.
    pub fn final_mean_return(&self, n: usize) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(n)..];
        tail.iter().map(|m| m.mean_return_overall).sum::<f64>() / tail.len().max(1) as f64
    }
}

struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    fn create(path: &Path, run: &TrainRunConfig) -> Result<Self> {
        let file = File::create(path).map_err(|e| RlError::Io(format!("cannot create {}: {e}", path.display())))?;
        let mut log = Self {
            out: BufWriter::new(file),
        };
        let ppo = serde_json::to_string(&run.ppo).expect("config serializes");
        let names: Vec<String> = run.morphologies.iter().map(|g| format!("mean_return_{}", g.name())).collect();
        log.line(&format!("# ppo {ppo}"))?;
        log.line(&format!(
            "update,mean_return_overall,{},policy_loss,value_loss,kl,clip_frac",
            names.join(",")
        ))?;
        Ok(log)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| RlError::Io(format!("cannot write metrics: {e}")))
    }

    fn row(&mut self, m: &UpdateMetrics) -> Result<()> {
        let mut fields = vec![m.update.to_string(), fmt(m.mean_return_overall)];
        fields.extend(m.per_morphology.iter().map(|&v| fmt(v)));
        fields.extend([m.policy_loss, m.value_loss, m.kl, m.clip_frac].map(fmt));
        self.line(&fields.join(","))
    }
}

fn fmt(v: f64) -> String {
    crate::analysis::format_real(v)
}

fn plans_for(grids: &[VoxelGrid], config: &ModelConfig) -> Result<Vec<GraphPlan>> {
    grids
        .iter()
        .map(|g| Ok(GraphPlan::new(&build_graph(g, config.scheme), config)?))
        .collect()
}

fn write_checkpoint(dir: &Path, file: &str, params: &Parameters, names: &[String]) -> Result<()> {
    let path = dir.join(file);
    Checkpoint::new(params.clone(), names.to_vec())
        .save(&path)
        .map_err(|e| RlError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Collect, estimate advantages, update; repeated `run.ppo.updates` times.
/// With an output directory it writes `metrics.csv` (flushed every row) and
/// `checkpoint_final.bin`, plus `checkpoint_NNNNN.bin` at the configured
/// cadence.
pub fn train(run: &TrainRunConfig) -> Result<TrainOutcome> {
    run.ppo.validate()?;
    run.env.validate()?;
    if run.morphologies.is_empty() {
        return Err(RlError::Config("at least one morphology is required".into()));
    }
    let mut names = BTreeSet::new();
    for g in &run.morphologies {
        if !names.insert(g.name()) {
            return Err(RlError::Config(format!("duplicate morphology name `{}`", g.name())));
        }
    }
    let mut params = match &run.init {
        Some(p) => p.clone(),
        None => Parameters::init(&run.model, run.seed)?,
    };
    let config = params.config().clone();
    let plans = plans_for(&run.morphologies, &config)?;
    let names: Vec<String> = run.morphologies.iter().map(|g| g.name().to_string()).collect();

    let mut log = match &run.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| RlError::Io(format!("cannot create {}: {e}", dir.display())))?;
            Some(MetricsLog::create(&dir.join("metrics.csv"), run)?)
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.threads.unwrap_or_else(thread_count))
        .build()
        .map_err(|e| RlError::Config(format!("cannot start worker pool: {e}")))?;

    let metrics = pool.install(|| -> Result<Vec<UpdateMetrics>> {
        let mut workers = Worker::population(&run.morphologies, run.ppo.envs_per_morphology, &run.env, run.seed)?;
        let mut adam = Adam::new(params.layout().scalar_count(), &run.ppo);
        let mut metrics = Vec::with_capacity(run.ppo.updates);
        for update in 0..run.ppo.updates {
            let mut batches = collect_rollouts(&params, &plans, &mut workers, run.ppo.horizon)?;
            for b in &mut batches {
                for e in &mut b.envs {
                    e.compute_advantages(run.ppo.gamma, run.ppo.lambda);
                }
            }
            let per_morphology: Vec<f64> = batches.iter().map(|b| b.mean_return()).collect();
            let samples = Sample::from_batches(&batches);
            let stats = ppo_update(&mut params, &mut adam, &plans, &samples, &run.ppo, run.seed, update)?;
            let m = UpdateMetrics {
                update,
                mean_return_overall: per_morphology.iter().sum::<f64>() / per_morphology.len() as f64,
                per_morphology,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                kl: stats.approx_kl,
                clip_frac: stats.clip_frac,
            };
            if let Some(log) = &mut log {
                log.row(&m)?;
            }
            if let Some(dir) = &run.out_dir {
                if run.checkpoint_every > 0 && (update + 1) % run.checkpoint_every == 0 {
                    write_checkpoint(dir, &format!("checkpoint_{:05}.bin", update + 1), &params, &names)?;
                }
            }
            metrics.push(m);
        }
        Ok(metrics)
    })?;

    if let Some(dir) = &run.out_dir {
        write_checkpoint(dir, "checkpoint_final.bin", &params, &names)?;
    }
    Ok(TrainOutcome { params, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mean: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` full episodes, acting with the mean (`deterministic`) or
/// with samples. Episode `i` uses environment and sampling streams derived
/// from `(seed, i)`.
pub fn evaluate(
    params: &Parameters,
    grid: &VoxelGrid,
    env_config: &EnvConfig,
    episodes: usize,
    deterministic: bool,
    seed: u64,
) -> Result<EvalResult> {
    let config = params.config();
    let plan = GraphPlan::new(&build_graph(grid, config.scheme), config)?;
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = stream_rng(seed, EVAL_STREAM, ep as u64, 0);
        let mut env = SoftBodyEnv::new(grid, env_config.clone(), rng.gen())?;
        let mut obs = env.observe();
        let mut rewards = Vec::with_capacity(env_config.horizon);
        loop {
            let (local, global) = observation_tensors(&obs);
            let (mean, _) = policy_value(params, &plan, &local, &global)?;
            let action = sample_actions(&mean, config.log_std, &mut rng, deterministic)?;
            let out = env.step(&action)?;
            rewards.push(out.reward);
            obs = out.observation;
            if out.done {
                break;
            }
        }
        returns.push(episode_return(&rewards));
    }
    let mean = returns.iter().sum::<f64>() / episodes.max(1) as f64;
    Ok(EvalResult { mean, returns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    ZeroShot,
    FineTune,
}

impl std::str::FromStr for TransferMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero-shot" => Ok(Self::ZeroShot),
            "fine-tune" => Ok(Self::FineTune),
            other => Err(format!("unknown transfer mode `{other}` (expected zero-shot or fine-tune)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorphologyTransfer {
    pub name: String,
    pub zero_shot: f64,
    pub fine_tuned: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub mode: TransferMode,
    pub per_morphology: Vec<MorphologyTransfer>,
    pub seed: u64,
    /// `mean_return_overall` per fine-tuning update.
    pub fine_tune_curve: Vec<f64>,
}

impl TransferReport {
    pub fn mean_zero_shot(&self) -> f64 {
        self.per_morphology.iter().map(|m| m.zero_shot).sum::<f64>() / self.per_morphology.len() as f64
    }

    pub fn mean_fine_tuned(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.per_morphology.iter().map(|m| m.fine_tuned).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluates `checkpoint` on `unseen` morphologies and, for
/// [`TransferMode::FineTune`], continues training on them for `budget`
/// updates before evaluating again. Evaluation is deterministic over
/// `eval_episodes` episodes. The checkpoint is never modified.
#[allow(clippy::too_many_arguments)]
pub fn transfer(
    checkpoint: &Checkpoint,
    unseen: &[VoxelGrid],
    mode: TransferMode,
    budget: usize,
    seed: u64,
    ppo: &PpoConfig,
    env: &EnvConfig,
    eval_episodes: usize,
    out_dir: Option<&Path>,
) -> Result<TransferReport> {
    let trained: BTreeSet<&str> = checkpoint.train_morphologies.iter().map(String::as_str).collect();
    let overlap: Vec<String> = unseen.iter().map(|g| g.name()).filter(|n| trained.contains(n)).map(String::from).collect();
    if !overlap.is_empty() {
        return Err(RlError::Overlap(overlap));
    }
    if unseen.is_empty() {
        return Err(RlError::Config("the unseen set is empty".into()));
    }
    let params = &checkpoint.params;
    let zero_shot = unseen
        .iter()
        .map(|g| Ok(evaluate(params, g, env, eval_episodes, true, seed)?.mean))
        .collect::<Result<Vec<f64>>>()?;

    let (fine_tuned, curve) = match mode {
        TransferMode::ZeroShot => (vec![None; unseen.len()], Vec::new()),
        TransferMode::FineTune => {
            let mut run = TrainRunConfig::new(
                unseen.to_vec(),
                params.config().clone(),
                PpoConfig {
                    updates: budget,
                    ..ppo.clone()
                },
                env.clone(),
                seed,
            );
            run.init = Some(params.clone());
            run.out_dir = out_dir.map(Path::to_path_buf);
            let outcome = train(&run)?;
            let after = unseen
                .iter()
                .map(|g| Ok(Some(evaluate(&outcome.params, g, env, eval_episodes, true, seed)?.mean)))
                .collect::<Result<Vec<_>>>()?;
            (after, outcome.metrics.iter().map(|m| m.mean_return_overall).collect())
        }
    };

    let report = TransferReport {
        mode,
        per_morphology: unseen
            .iter()
            .zip(zero_shot)
            .zip(fine_tuned)
            .map(|((g, z), f)| MorphologyTransfer {
                name: g.name().to_string(),
                zero_shot: z,
                fine_tuned: f,
            })
            .collect(),
        seed,
        fine_tune_curve: curve,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| RlError::Io(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join("transfer_report.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&path, json).map_err(|e| RlError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(report)
}
