//! Multi-step value targets and generalized advantages.
//!
//! Targets average k-step bootstrapped returns with lambda-power weights and
//! are normalized by the accumulated powers of lambda, so the lambda = 0 edge
//! degenerates to the one-step target rather than 0/0. Advantages follow the
//! discounted-sum-of-residuals form with a zero bootstrap at episode end.

use crate::error::{Error, Result};

/// Lambda-averaged multi-step targets.
///
/// `rewards[t]` is the reward at step t; `values` has one more entry than
/// `rewards`, with `values[t] = V(s_t)` and the final entry the bootstrap
/// value of the post-episode state (zero when the episode terminates).
/// `horizon` caps the lookahead: g_{t,k} for k = 1..=min(horizon, L - t),
///
/// g_{t,k} = sum_{j<k} gamma^j r_{t+j} + gamma^k values[t+k]
///
/// target_t = sum_k lambda^k g_{t,k} / sum_k lambda^k.
pub fn multi_step_targets(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
    horizon: usize,
) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("need at least one reward"));
    }
    if values.len() != rewards.len() + 1 {
        return Err(Error::shape(format!(
            "values length {} != rewards length {} + 1",
            values.len(),
            rewards.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} not in [0,1]")));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let len = rewards.len();
    let mut targets = Vec::with_capacity(len);
    for t in 0..len {
        let kmax = horizon.min(len - t);
        // one factor of lambda cancels against the normalizer, so weights are
        // lambda^(k-1); exact at lambda = 0 where only k = 1 survives
        let mut weight = 1.0;
        let mut weight_sum = 0.0;
        let mut num = 0.0;
        let mut disc_reward = 0.0;
        let mut disc = 1.0;
        for k in 1..=kmax {
            disc_reward += disc * rewards[t + k - 1];
            disc *= gamma;
            let g = disc_reward + disc * values[t + k];
            num += weight * g;
            weight_sum += weight;
            weight *= lambda;
        }
        targets.push(num / weight_sum);
    }
    Ok(targets)
}

/// Generalized advantages: A_t = sum_k (gamma lambda)^k delta_{t+k} with
/// delta_t = r_t + gamma q_next[t] - values[t].
///
/// `values[t] = V(s_t)` and `q_next[t]` is the critic value of the next
/// state-action actually taken; the final `q_next` entry must be the terminal
/// bootstrap (zero for an episode that ends).
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    q_next: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let len = rewards.len();
    if len == 0 {
        return Err(Error::invalid("need at least one reward"));
    }
    if values.len() != len || q_next.len() != len {
        return Err(Error::shape("values and q_next must match rewards length"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} not in [0,1]")));
    }
    let mut advantages = vec![0.0; len];
    let mut acc = 0.0;
    for t in (0..len).rev() {
        let delta = rewards[t] + gamma * q_next[t] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}
