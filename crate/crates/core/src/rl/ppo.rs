use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{normalize_advantages, stream_rng, PpoConfig, Result, RlError, RolloutBatch};
use crate::model::{entropy, log_prob_on_tape, ForwardVars, GraphPlan, Parameters};
use crate::tensor::{Tape, Tensor};

const SHUFFLE_STREAM: u64 = 2;
/// Samples summed sequentially inside one parallel task. Fixed so the
/// reduction order, and hence the result, does not depend on thread count.
const CHUNK: usize = 8;

/// One optimization sample with its normalized advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub morphology: usize,
    pub local: Tensor,
    pub global: Tensor,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

impl Sample {
    /// Flattens rollouts (after advantages are computed) into samples and
    /// normalizes advantages jointly across all morphologies.
    pub fn from_batches(batches: &[RolloutBatch]) -> Vec<Sample> {
        let mut samples = Vec::new();
        for b in batches {
            for e in &b.envs {
                for ((t, &adv), &ret) in e.transitions.iter().zip(&e.advantages).zip(&e.returns) {
                    samples.push(Sample {
                        morphology: b.morphology,
                        local: t.local.clone(),
                        global: t.global.clone(),
                        action: t.action.clone(),
                        log_prob: t.log_prob,
                        advantage: adv,
                        ret,
                    });
                }
            }
        }
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
        samples
    }
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Mean loss gradient (flattened, layout order) and diagnostics of a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchResult {
    pub grad: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

#[derive(Default)]
struct Partial {
    grad: Vec<f64>,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    approx_kl: f64,
    clipped: usize,
}

impl Partial {
    fn absorb(&mut self, other: Partial) {
        if self.grad.is_empty() {
            self.grad = other.grad;
        } else {
            for (a, b) in self.grad.iter_mut().zip(&other.grad) {
                *a += b;
            }
        }
        self.policy_loss += other.policy_loss;
        self.value_loss += other.value_loss;
        self.entropy += other.entropy;
        self.approx_kl += other.approx_kl;
        self.clipped += other.clipped;
    }
}

fn sample_gradient(params: &Parameters, plan: &GraphPlan, s: &Sample, config: &PpoConfig) -> Result<Partial> {
    let log_std = params.config().log_std;
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, true);
    let vars = ForwardVars::build(&mut tape, &pv, params, plan, &s.local, &s.global)?;
    let logp = log_prob_on_tape(&mut tape, vars.mean, log_std, &s.action)?;
    let log_ratio = tape.value(logp).data()[0] - s.log_prob;
    let ratio = log_ratio.exp();
    let objective = clipped_objective(ratio, s.advantage, config.clip);
    let clipped = (ratio - 1.0).abs() > config.clip;

    let ret = tape.constant(Tensor::scalar(s.ret));
    let diff = tape.sub(vars.value, ret)?;
    let sq = tape.mul(diff, diff)?;
    let value_loss = 0.5 * tape.value(sq).data()[0];
    let mut loss = tape.scale(sq, 0.5 * config.value_coef)?;
    // On the clipped branch the objective is constant in θ.
    if ratio * s.advantage <= objective {
        let old = tape.constant(Tensor::scalar(-s.log_prob));
        let shifted = tape.add(logp, old)?;
        let r = tape.exp(shifted)?;
        let policy = tape.scale(r, -s.advantage)?;
        loss = tape.add(loss, policy)?;
    }
    let g = tape.backward(loss)?;
    let mut grad = Vec::with_capacity(params.layout().scalar_count());
    for &v in &pv {
        grad.extend_from_slice(g.get(v).expect("every parameter is a tracked leaf").data());
    }
    Ok(Partial {
        grad,
        policy_loss: -objective,
        value_loss,
        entropy: entropy(s.action.len(), log_std),
        approx_kl: (ratio - 1.0) - log_ratio,
        clipped: clipped as usize,
    })
}

/// Loss gradient over `samples`: clipped surrogate plus weighted value loss.
/// The entropy bonus is reported but carries no gradient because the policy
/// standard deviation is fixed.
pub fn minibatch_gradient(
    params: &Parameters,
    plans: &[GraphPlan],
    samples: &[&Sample],
    config: &PpoConfig,
) -> Result<MinibatchResult> {
    if samples.is_empty() {
        return Err(RlError::Config("empty minibatch".into()));
    }
    let partials = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial::default();
            for s in chunk {
                acc.absorb(sample_gradient(params, &plans[s.morphology], s, config)?);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Partial::default();
    for p in partials {
        total.absorb(p);
    }
    let n = samples.len() as f64;
    for g in &mut total.grad {
        *g /= n;
    }
    Ok(MinibatchResult {
        grad: total.grad,
        policy_loss: total.policy_loss / n,
        value_loss: total.value_loss / n,
        entropy: total.entropy / n,
        approx_kl: total.approx_kl / n,
        clip_frac: total.clipped as f64 / n,
    })
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(size: usize, config: &PpoConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    /// Parameter delta for a descent step on `grad`.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                -self.lr * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect()
    }
}

/// Averages of the per-minibatch diagnostics over one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub steps: usize,
}

/// Runs `epochs × minibatches` clipped, norm-limited Adam steps.
pub fn ppo_update(
    params: &mut Parameters,
    adam: &mut Adam,
    plans: &[GraphPlan],
    samples: &[Sample],
    config: &PpoConfig,
    seed: u64,
    update: usize,
) -> Result<UpdateStats> {
    if samples.is_empty() {
        return Err(RlError::Config("no samples to optimize".into()));
    }
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let chunks = config.minibatches.min(samples.len());
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(seed, SHUFFLE_STREAM, update as u64, epoch as u64));
        for mb in 0..chunks {
            let lo = mb * samples.len() / chunks;
            let hi = (mb + 1) * samples.len() / chunks;
            let batch: Vec<&Sample> = order[lo..hi].iter().map(|&i| &samples[i]).collect();
            let mut r = minibatch_gradient(params, plans, &batch, config)?;
            let norm = r.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let losses = [r.policy_loss, r.value_loss];
            if !norm.is_finite() || losses.iter().any(|l| !l.is_finite()) {
                return Err(RlError::NonFiniteLoss {
                    update,
                    epoch,
                    minibatch: mb,
                    detail: format!(
                        "policy loss {}, value loss {}, gradient norm {norm}",
                        r.policy_loss, r.value_loss
                    ),
                });
            }
            if norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                for g in &mut r.grad {
                    *g *= s;
                }
            }
            let delta = adam.step(&r.grad);
            params.apply_delta(&delta)?;
            stats.policy_loss += r.policy_loss;
            stats.value_loss += r.value_loss;
            stats.entropy += r.entropy;
            stats.approx_kl += r.approx_kl;
            stats.clip_frac += r.clip_frac;
            stats.grad_norm += norm;
            stats.steps += 1;
        }
    }
    let n = stats.steps as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.approx_kl /= n;
    stats.clip_frac /= n;
    stats.grad_norm /= n;
    Ok(stats)
}
