use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::tabular::{sample_simplex, RewardTable, TabularMdp};

const MAX_ATTEMPTS: usize = 100;
const VALID_TOL: f64 = 1e-10;

/// Linear MDP: `P_h(s'|s,a) = ⟨φ(s,a), μ_h(s')⟩` and `r_h(s,a) = ⟨φ(s,a), z_h⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdp {
    feature_dim: usize,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    // [s][a][k]
    features: Vec<f64>,
    // per step, [k][s']
    measures: Vec<Vec<f64>>,
    reward_vecs: Vec<Vec<f64>>,
    start_state: usize,
}

impl LinearMdp {
    pub fn new(
        feature_dim: usize,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        features: Vec<f64>,
        measures: Vec<Vec<f64>>,
        reward_vecs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mdp = Self {
            feature_dim,
            num_states,
            num_actions,
            horizon,
            features,
            measures,
            reward_vecs,
            start_state: 0,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim;
        if self.features.len() != self.num_states * self.num_actions * d
            || self.measures.len() != self.horizon
            || self.reward_vecs.len() != self.horizon
        {
            return Err(Error::input("linear MDP tensors have inconsistent sizes"));
        }
        let sqrt_d = (d as f64).sqrt();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                if norm(self.feature(s, a)) > 1.0 + VALID_TOL {
                    return Err(Error::Validation(format!("‖φ({s},{a})‖ exceeds 1")));
                }
            }
        }
        for h in 0..self.horizon {
            if self.measures[h].len() != d * self.num_states || self.reward_vecs[h].len() != d {
                return Err(Error::input("linear MDP step tensors have inconsistent sizes"));
            }
            if norm(&self.reward_vecs[h]) > sqrt_d + VALID_TOL {
                return Err(Error::Validation(format!("‖z_{h}‖ exceeds √d")));
            }
            let totals: Vec<f64> = self.measures[h].chunks(self.num_states).map(|m| m.iter().sum()).collect();
            if norm(&totals) > sqrt_d + VALID_TOL {
                return Err(Error::Validation(format!("‖μ_{h}(S)‖ exceeds √d")));
            }
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let row = self.transition_row(h, s, a);
                    if row.iter().any(|p| *p < -VALID_TOL) {
                        return Err(Error::Validation("induced transition has negative mass".into()));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > VALID_TOL {
                        return Err(Error::Validation(format!("induced transition sums to {total}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    #[inline]
    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    pub fn reward_vec(&self, h: usize) -> &[f64] {
        &self.reward_vecs[h]
    }

    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let phi = self.feature(s, a);
        let mu = &self.measures[h];
        (0..self.num_states)
            .map(|next| phi.iter().enumerate().map(|(k, f)| f * mu[k * self.num_states + next]).sum())
            .collect()
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        dot(self.feature(s, a), &self.reward_vecs[h])
    }

    /// Reward table of a linear reward with per-step weights `z`.
    pub fn linear_reward(&self, z: &[Vec<f64>]) -> RewardTable {
        RewardTable::from_fn(self.horizon, self.num_states, self.num_actions, |h, s, a| {
            dot(self.feature(s, a), &z[h])
        })
    }

    /// The induced tabular MDP, used by the exact oracles.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        let mut transition = Vec::with_capacity(self.horizon * self.num_states * self.num_actions * self.num_states);
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let mut row = self.transition_row(h, s, a);
                    // remove sub-tolerance rounding so the tabular checks hold exactly
                    row.iter_mut().for_each(|p| *p = p.max(0.0));
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                    transition.extend(row);
                }
            }
        }
        let reward = RewardTable::from_fn(self.horizon, self.num_states, self.num_actions, |h, s, a| {
            self.reward(h, s, a).clamp(0.0, 1.0)
        });
        let mut initial = vec![0.0; self.num_states];
        initial[self.start_state] = 1.0;
        TabularMdp::new(self.num_states, self.num_actions, self.horizon, transition, reward, initial)
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "linear_mdp:d{}:S{}:A{}:H{}:{}",
            self.feature_dim,
            self.num_states,
            self.num_actions,
            self.horizon,
            &crate::hash_f64s(&self.features)[..12]
        )
    }
}

/// Random linear MDP. Features are points on the probability simplex (so
/// `‖φ‖₂ ≤ 1`), each latent factor of `μ_h` is a distribution over next
/// states, and `z_h ∈ [0,1]^d`, which keeps induced rewards in `[0, 1]`.
pub fn make_linear_mdp(d: usize, num_states: usize, num_actions: usize, horizon: usize, seed: u64) -> Result<LinearMdp> {
    if d < 2 {
        return Err(Error::input("linear MDP needs feature dimension ≥ 2"));
    }
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::input("linear MDP sizes must be ≥ 1"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng::stream(seed, "linear_mdp", attempt as u64);
        if let Ok(mdp) = sample_instance(d, num_states, num_actions, horizon, &mut r) {
            return Ok(mdp);
        }
    }
    Err(Error::Generation(format!("no valid linear MDP after {MAX_ATTEMPTS} attempts")))
}

fn sample_instance(d: usize, num_states: usize, num_actions: usize, horizon: usize, r: &mut Rng) -> Result<LinearMdp> {
    let mut features = Vec::with_capacity(num_states * num_actions * d);
    for _ in 0..num_states * num_actions {
        // sparse-ish Dirichlet draws give well-separated feature vectors
        let mut phi: Vec<f64> = (0..d).map(|_| gamma_half(r)).collect();
        let total: f64 = phi.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Generation("degenerate feature draw".into()));
        }
        phi.iter_mut().for_each(|x| *x /= total);
        features.extend(phi);
    }
    let measures = (0..horizon)
        .map(|_| (0..d).flat_map(|_| sample_simplex(num_states, r)).collect())
        .collect();
    let sqrt_d = (d as f64).sqrt();
    let reward_vecs = (0..horizon)
        .map(|_| {
            let mut z: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
            let n = norm(&z);
            if n > sqrt_d {
                z.iter_mut().for_each(|x| *x *= sqrt_d / n);
            }
            z
        })
        .collect();
    LinearMdp::new(d, num_states, num_actions, horizon, features, measures, reward_vecs)
}

// Gamma(1/2) via the square of a standard normal: χ²₁ / 2.
fn gamma_half(r: &mut Rng) -> f64 {
    let n: f64 = r.sample(rand_distr::StandardNormal);
    0.5 * n * n
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instances_satisfy_invariants() {
        for seed in 0..10 {
            let mdp = make_linear_mdp(4, 12, 3, 4, seed).unwrap();
            mdp.validate().unwrap();
            for h in 0..4 {
                for s in 0..12 {
                    for a in 0..3 {
                        let total: f64 = mdp.transition_row(h, s, a).iter().sum();
                        assert!((total - 1.0).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_instance() {
        assert_eq!(make_linear_mdp(3, 5, 2, 3, 42).unwrap(), make_linear_mdp(3, 5, 2, 3, 42).unwrap());
        assert_ne!(make_linear_mdp(3, 5, 2, 3, 42).unwrap(), make_linear_mdp(3, 5, 2, 3, 43).unwrap());
    }

    #[test]
    fn induced_rewards_respect_cauchy_schwarz() {
        let mdp = make_linear_mdp(5, 8, 3, 3, 1).unwrap();
        let bound = 5f64.sqrt();
        for h in 0..3 {
            for s in 0..8 {
                for a in 0..3 {
                    let r = mdp.reward(h, s, a);
                    assert!((-bound..=bound).contains(&r));
                    assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }

    #[test]
    fn rejects_small_feature_dimension() {
        assert!(matches!(make_linear_mdp(1, 4, 2, 2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn tabular_view_is_valid() {
        let mdp = make_linear_mdp(4, 20, 4, 4, 3).unwrap();
        let tab = mdp.to_tabular().unwrap();
        assert_eq!(tab.num_states(), 20);
        assert_eq!(tab.true_reward().get(1, 3, 2), mdp.reward(1, 3, 2));
    }
}
