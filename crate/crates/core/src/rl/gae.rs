/// Generalized advantage estimation over one trajectory. A `done` at step
/// `t` cuts both the bootstrap and the trace there.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(
        rewards.len() == values.len() && values.len() == dones.len(),
        "rewards, values and dones must be aligned"
    );
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_advantage = delta + gamma * lambda * live * next_advantage;
        advantages[t] = next_advantage;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// A constant batch is only centered.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for a in advantages.iter_mut() {
        *a = (*a - mean) * scale;
    }
}
