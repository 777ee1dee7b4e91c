//! Pessimistic value iteration for linear MDPs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Space};
use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, LinearMdp, ValueTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PessimismConfig {
    /// The constant `c` in `β = c·d·H·√ι`.
    pub bonus_scale: f64,
    pub ridge_lambda: f64,
    pub delta: f64,
    /// Size of the reward class entering `ι = ln(d·N·|Z|/δ)`.
    pub reward_class_size: usize,
}

impl Default for PessimismConfig {
    fn default() -> Self {
        Self {
            bonus_scale: 1.0,
            ridge_lambda: 1.0,
            delta: 0.1,
            reward_class_size: 1,
        }
    }
}

impl PessimismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bonus_scale >= 0.0) {
            return Err(Error::config("offline.pessimism.bonus_scale", "must be ≥ 0"));
        }
        if !(self.ridge_lambda > 0.0) {
            return Err(Error::config("offline.pessimism.ridge_lambda", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("offline.pessimism.delta", "must lie in (0, 1)"));
        }
        if self.reward_class_size == 0 {
            return Err(Error::config("offline.pessimism.reward_class_size", "must be ≥ 1"));
        }
        Ok(())
    }

    /// Bonus multiplier for `num_episodes` episodes of data.
    pub fn beta(&self, feature_dim: usize, horizon: usize, num_episodes: usize) -> f64 {
        let iota = ((feature_dim * num_episodes.max(1) * self.reward_class_size) as f64 / self.delta).ln();
        self.bonus_scale * (feature_dim * horizon) as f64 * iota.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeviOutput {
    /// Pessimistic values with the greedy policy; layout as the exact oracle.
    pub values: ValueTables,
    /// `Γ_h(s, a)`, laid out `[h][s][a]`.
    pub bonus: Vec<Vec<Vec<f64>>>,
    pub beta: f64,
}

impl PeviOutput {
    pub fn policy(&self) -> &DeterministicPolicy {
        &self.values.greedy
    }
}

/// Backward induction with ridge-regressed Bellman targets minus an
/// uncertainty bonus, clipped to `[0, H − h + 1]`. Rewards are the dataset's
/// labels; features come from `mdp`.
pub fn pevi_train(dataset: &Dataset, mdp: &LinearMdp, config: &PessimismConfig) -> Result<PeviOutput> {
    config.validate()?;
    if !dataset.labeled {
        return Err(Error::input("pessimistic value iteration needs reward labels"));
    }
    let (n_s, n_a, horizon, d) = (mdp.num_states(), mdp.num_actions(), mdp.horizon(), mdp.feature_dim());
    if dataset.state_space != (Space::Discrete { n: n_s }) || dataset.action_space != (Space::Discrete { n: n_a }) {
        return Err(Error::input("dataset spaces do not match the linear MDP's feature table"));
    }
    if dataset.horizon != horizon {
        return Err(Error::input("dataset horizon does not match the linear MDP"));
    }
    let beta = config.beta(d, horizon, dataset.num_episodes());
    let mut by_step: Vec<Vec<(usize, usize, f64, usize)>> = vec![Vec::new(); horizon];
    for t in &dataset.transitions {
        let (s, a, s2) = (t.state[0] as usize, t.action[0] as usize, t.next_state[0] as usize);
        by_step[t.step - 1].push((s, a, t.reward.unwrap_or(0.0), s2));
    }

    let mut v = vec![vec![0.0; n_s]; horizon + 1];
    let mut q = vec![vec![vec![0.0; n_a]; n_s]; horizon];
    let mut bonus = vec![vec![vec![0.0; n_a]; n_s]; horizon];
    let mut actions = vec![0; horizon * n_s];
    for h in (0..horizon).rev() {
        let mut gram = DMatrix::identity(d, d) * config.ridge_lambda;
        let mut rhs = DVector::zeros(d);
        for &(s, a, r, s2) in &by_step[h] {
            let phi = DVector::from_column_slice(mdp.feature(s, a));
            gram.ger(1.0, &phi, &phi, 1.0);
            rhs.axpy(r + v[h + 1][s2], &phi, 1.0);
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularized covariance is not positive definite".into()))?;
        let w = chol.solve(&rhs);
        let cap = (horizon - h) as f64;
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_a {
                let phi = DVector::from_column_slice(mdp.feature(s, a));
                let width = phi.dot(&chol.solve(&phi)).max(0.0).sqrt();
                let g = beta * width;
                let value = (phi.dot(&w) - g).clamp(0.0, cap);
                bonus[h][s][a] = g;
                q[h][s][a] = value;
                if value > best {
                    best = value;
                    actions[h * n_s + s] = a;
                }
            }
            v[h][s] = best;
        }
    }
    let greedy = DeterministicPolicy::new(horizon, n_s, actions)?;
    Ok(PeviOutput {
        values: ValueTables { v, q, greedy },
        bonus,
        beta,
    })
}
