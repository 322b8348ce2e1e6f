use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{compute_gae, stream_rng, Result};
use crate::env::{EnvConfig, Observation, SoftBodyEnv, GLOBAL_OBS_DIM, LOCAL_OBS_DIM};
use crate::model::{log_prob, policy_value, sample_actions, GraphPlan, Parameters};
use crate::morphology::VoxelGrid;
use crate::tensor::Tensor;

const COLLECT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub local: Tensor,
    pub global: Tensor,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// One environment's slice of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRollout {
    pub morphology: usize,
    pub env: usize,
    pub transitions: Vec<Transition>,
    /// Critic estimate for the state after the last transition.
    pub bootstrap_value: f64,
    /// Returns of episodes that finished during this rollout.
    pub finished_returns: Vec<f64>,
    /// Reward collected so far by the episode still running at the end.
    pub open_return: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EnvRollout {
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, self.bootstrap_value, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// All environments of one morphology, in environment order.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub morphology: usize,
    pub envs: Vec<EnvRollout>,
}

impl RolloutBatch {
    pub fn transition_count(&self) -> usize {
        self.envs.iter().map(|e| e.transitions.len()).sum()
    }

    /// Mean return of episodes finished in this rollout; falls back to the
    /// running returns when no episode finished.
    pub fn mean_return(&self) -> f64 {
        let finished: Vec<f64> = self.envs.iter().flat_map(|e| e.finished_returns.iter().copied()).collect();
        if finished.is_empty() {
            self.envs.iter().map(|e| e.open_return).sum::<f64>() / self.envs.len() as f64
        } else {
            finished.iter().sum::<f64>() / finished.len() as f64
        }
    }
}

/// A persistent environment with its own random stream.
#[derive(Debug, Clone)]
pub struct Worker {
    morphology: usize,
    index: usize,
    env: SoftBodyEnv,
    rng: ChaCha8Rng,
    observation: Observation,
    running_return: f64,
}

impl Worker {
    pub fn new(grid: &VoxelGrid, morphology: usize, index: usize, config: &EnvConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, COLLECT_STREAM, morphology as u64, index as u64);
        let env = SoftBodyEnv::new(grid, config.clone(), rng.gen())?;
        let observation = env.observe();
        Ok(Self {
            morphology,
            index,
            env,
            rng,
            observation,
            running_return: 0.0,
        })
    }

    /// One worker per (morphology, env) pair, morphology-major.
    pub fn population(grids: &[VoxelGrid], envs_per_morphology: usize, config: &EnvConfig, seed: u64) -> Result<Vec<Self>> {
        let mut workers = Vec::with_capacity(grids.len() * envs_per_morphology);
        for (k, g) in grids.iter().enumerate() {
            for e in 0..envs_per_morphology {
                workers.push(Self::new(g, k, e, config, seed)?);
            }
        }
        Ok(workers)
    }

    pub fn morphology(&self) -> usize {
        self.morphology
    }

    fn run(&mut self, params: &Parameters, plan: &GraphPlan, horizon: usize) -> Result<EnvRollout> {
        let log_std = params.config().log_std;
        let mut transitions = Vec::with_capacity(horizon);
        let mut finished_returns = Vec::new();
        for _ in 0..horizon {
            let (local, global) = observation_tensors(&self.observation);
            let (mean, value) = policy_value(params, plan, &local, &global)?;
            let action = sample_actions(&mean, log_std, &mut self.rng, false)?;
            let lp = log_prob(&mean, log_std, &action)?;
            let out = self.env.step(&action)?;
            self.running_return += out.reward;
            transitions.push(Transition {
                local,
                global,
                action,
                log_prob: lp,
                reward: out.reward,
                value,
                done: out.done,
            });
            if out.done {
                finished_returns.push(self.running_return);
                self.running_return = 0.0;
                self.observation = self.env.reset(self.rng.gen());
            } else {
                self.observation = out.observation;
            }
        }
        let (local, global) = observation_tensors(&self.observation);
        let bootstrap_value = policy_value(params, plan, &local, &global)?.1;
        Ok(EnvRollout {
            morphology: self.morphology,
            env: self.index,
            transitions,
            bootstrap_value,
            finished_returns,
            open_return: self.running_return,
            advantages: Vec::new(),
            returns: Vec::new(),
        })
    }
}

pub fn observation_tensors(obs: &Observation) -> (Tensor, Tensor) {
    let n = obs.local.len();
    let local = Tensor::matrix(n, LOCAL_OBS_DIM, obs.local_flat()).expect("observation rows have fixed width");
    let global = Tensor::matrix(1, GLOBAL_OBS_DIM, obs.global.to_vec()).expect("global observation has fixed width");
    (local, global)
}

/// Steps every worker `horizon` times in parallel and groups the results by
/// morphology. Output order depends only on (morphology, env) indices.
pub fn collect_rollouts(
    params: &Parameters,
    plans: &[GraphPlan],
    workers: &mut [Worker],
    horizon: usize,
) -> Result<Vec<RolloutBatch>> {
    let rollouts = workers
        .par_iter_mut()
        .map(|w| {
            let plan = &plans[w.morphology];
            w.run(params, plan, horizon)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut batches: Vec<RolloutBatch> = (0..plans.len())
        .map(|k| RolloutBatch {
            morphology: k,
            envs: Vec::new(),
        })
        .collect();
    for r in rollouts {
        batches[r.morphology].envs.push(r);
    }
    for b in &mut batches {
        b.envs.sort_by_key(|e| e.env);
    }
    Ok(batches)
}
