//! Diagonal Gaussian action distribution with a fixed standard deviation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelError, Result};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// `0.5 · ln(2π)`.
pub const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn check_mean(mean: &[f64]) -> Result<()> {
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(ModelError::Tensor(TensorError::NonFinite { op: "gaussian policy" }));
    }
    Ok(())
}

/// `Σ_t [−½((a_t − μ_t)/s)² − ln s − ½ ln 2π]` with `s = exp(log_std)`.
pub fn log_prob(mean: &[f64], log_std: f64, action: &[f64]) -> Result<f64> {
    check_mean(mean)?;
    if mean.len() != action.len() {
        return Err(ModelError::Shape(format!("{} actions for {} means", action.len(), mean.len())));
    }
    let inv_std = (-log_std).exp();
    Ok(mean
        .iter()
        .zip(action)
        .map(|(m, a)| {
            let z = (a - m) * inv_std;
            -0.5 * z * z - log_std - LOG_SQRT_2PI
        })
        .sum())
}

/// Independent per-node samples, or the mean itself when `deterministic`.
pub fn sample_actions<R: Rng + ?Sized>(mean: &[f64], log_std: f64, rng: &mut R, deterministic: bool) -> Result<Vec<f64>> {
    check_mean(mean)?;
    if deterministic {
        return Ok(mean.to_vec());
    }
    let std = log_std.exp();
    Ok(mean
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            m + std * z
        })
        .collect())
}

/// Samples (unless `action` is given) and scores an action.
pub fn log_prob_and_sample<R: Rng + ?Sized>(
    mean: &[f64],
    log_std: f64,
    action: Option<&[f64]>,
    rng: &mut R,
    deterministic: bool,
) -> Result<(Vec<f64>, f64)> {
    let action = match action {
        Some(a) => a.to_vec(),
        None => sample_actions(mean, log_std, rng, deterministic)?,
    };
    let lp = log_prob(mean, log_std, &action)?;
    Ok((action, lp))
}

/// Differential entropy of the joint distribution over `nodes` actions.
pub fn entropy(nodes: usize, log_std: f64) -> f64 {
    nodes as f64 * (0.5 + LOG_SQRT_2PI + log_std)
}

/// [`log_prob`] recorded on a tape, differentiable in `mean` (`n × 1`).
pub fn log_prob_on_tape(tape: &mut Tape, mean: Var, log_std: f64, action: &[f64]) -> Result<Var> {
    let n = action.len();
    let a = tape.constant(Tensor::matrix(n, 1, action.to_vec())?);
    let diff = tape.sub(a, mean)?;
    let z = tape.scale(diff, (-log_std).exp())?;
    let sq = tape.mul(z, z)?;
    let total = tape.sum(sq, None)?;
    let quad = tape.scale(total, -0.5)?;
    let offset = tape.constant(Tensor::scalar(-(n as f64) * (log_std + LOG_SQRT_2PI)));
    Ok(tape.add(quad, offset)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn log_prob_at_mean_unit_std() {
        let lp = log_prob(&[0.3], 0.0, &[0.3]).unwrap();
        assert!((lp + 0.918939).abs() < 1e-6);
        assert!((LOG_SQRT_2PI - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn doubling_std_costs_ln2_per_node() {
        let mean = [0.1, -0.4, 0.9];
        let a = log_prob(&mean, 0.0, &mean).unwrap();
        let b = log_prob(&mean, 2f64.ln(), &mean).unwrap();
        assert!((a - b - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_returns_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_actions(&[0.5, -0.5], -0.7, &mut rng, true).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn non_finite_mean_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(sample_actions(&[f64::NAN], -0.7, &mut rng, false).is_err());
        assert!(log_prob(&[f64::INFINITY], -0.7, &[0.0]).is_err());
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mu = [0.7, -0.2];
        let log_std = -0.7;
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let a = sample_actions(&mu, log_std, &mut rng, false).unwrap();
            sums[0] += a[0];
            sums[1] += a[1];
        }
        let se = log_std.exp() / (n as f64).sqrt();
        for k in 0..2 {
            assert!((sums[k] / n as f64 - mu[k]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn tape_version_matches_closed_form() {
        let mean = [0.2, -1.0, 0.4];
        let action = [0.0, -0.5, 1.0];
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(3, 1, mean.to_vec()).unwrap());
        let lp = log_prob_on_tape(&mut tape, m, -0.7, &action).unwrap();
        let expected = log_prob(&mean, -0.7, &action).unwrap();
        assert!((tape.value(lp).data()[0] - expected).abs() < 1e-12);
        let g = tape.backward(lp).unwrap();
        let inv_var = (1.4f64).exp();
        for k in 0..3 {
            assert!((g.get(m).unwrap().data()[k] - (action[k] - mean[k]) * inv_var).abs() < 1e-12);
        }
    }
}
