/// Generalized advantage estimates for one agent over one episode.
///
/// `bootstrap` is the value after the last step (zero at true termination).
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let t_max = rewards.len();
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let next = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Multi-episode form: `dones[t]` marks the last step of an episode, after
/// which no value is bootstrapped. `last_value` follows the final step when
/// it is not done.
pub fn compute_gae_masked(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(rewards.len() == values.len() && values.len() == dones.len());
    let t_max = rewards.len();
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let (next, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < t_max {
            (values[t + 1], acc)
        } else {
            (last_value, 0.0)
        };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * carry;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}
