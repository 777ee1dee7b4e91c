//! Exact backward-induction oracles over tabular MDPs.

use crate::error::{Error, Result};

use super::tabular::{DeterministicPolicy, RewardTable, TabularMdp, TabularPolicy};

/// Optimal values. `v[h]` holds `V_{h+1}` for zero-based `h`; `v[horizon]` is
/// the all-zero terminal table.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub greedy: DeterministicPolicy,
}

impl ValueTables {
    pub fn initial_value(&self, initial: &[f64]) -> f64 {
        self.v[0].iter().zip(initial).map(|(v, p)| v * p).sum()
    }
}

fn check_reward(mdp: &TabularMdp, reward: &RewardTable) -> Result<()> {
    if reward.shape() != (mdp.horizon(), mdp.num_states(), mdp.num_actions()) {
        return Err(Error::input("reward table shape does not match the MDP"));
    }
    Ok(())
}

#[inline]
fn backup(mdp: &TabularMdp, reward: &RewardTable, next_v: &[f64], h: usize, s: usize, a: usize) -> f64 {
    let expected: f64 = mdp.transition_row(h, s, a).iter().zip(next_v).map(|(p, v)| p * v).sum();
    reward.get(h, s, a) + expected
}

/// Exact optimal values and greedy policy. Argmax ties go to the lowest action.
pub fn value_iteration(mdp: &TabularMdp, reward: &RewardTable) -> Result<ValueTables> {
    check_reward(mdp, reward)?;
    let (n_s, n_a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut v = vec![vec![0.0; n_s]; horizon + 1];
    let mut q = vec![vec![vec![0.0; n_a]; n_s]; horizon];
    let mut actions = vec![0; horizon * n_s];
    for h in (0..horizon).rev() {
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..n_a {
                let value = backup(mdp, reward, &v[h + 1], h, s, a);
                q[h][s][a] = value;
                if value > best {
                    best = value;
                    best_a = a;
                }
            }
            v[h][s] = best;
            actions[h * n_s + s] = best_a;
        }
    }
    let greedy = DeterministicPolicy::new(horizon, n_s, actions)?;
    Ok(ValueTables { v, q, greedy })
}

/// Exact `V^π` by backward induction; same layout as [`ValueTables::v`].
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, reward: &RewardTable) -> Result<Vec<Vec<f64>>> {
    check_reward(mdp, reward)?;
    policy.check_shape(mdp)?;
    let (n_s, n_a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut v = vec![vec![0.0; n_s]; horizon + 1];
    for h in (0..horizon).rev() {
        for s in 0..n_s {
            let mut total = 0.0;
            for a in 0..n_a {
                let p = policy.prob(h, s, a);
                if p > 0.0 {
                    total += p * backup(mdp, reward, &v[h + 1], h, s, a);
                }
            }
            v[h][s] = total;
        }
    }
    Ok(v)
}

/// `V*_1(s₁) − V^π_1(s₁)`.
pub fn suboptimality(mdp: &TabularMdp, policy: &TabularPolicy, reward: &RewardTable, initial_state: usize) -> Result<f64> {
    if initial_state >= mdp.num_states() {
        return Err(Error::input("initial state out of range"));
    }
    let optimal = value_iteration(mdp, reward)?;
    let value = policy_evaluation(mdp, policy, reward)?;
    Ok(optimal.v[0][initial_state] - value[0][initial_state])
}

/// State-action occupancy `d_{π,h}(s, a)` from the MDP's initial distribution,
/// laid out `[h][s][a]`.
pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<Vec<Vec<f64>>>> {
    policy.check_shape(mdp)?;
    let (n_s, n_a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut state_dist = mdp.initial_distribution().to_vec();
    let mut out = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let mut sa = vec![vec![0.0; n_a]; n_s];
        let mut next = vec![0.0; n_s];
        for s in 0..n_s {
            if state_dist[s] == 0.0 {
                continue;
            }
            for a in 0..n_a {
                let mass = state_dist[s] * policy.prob(h, s, a);
                if mass == 0.0 {
                    continue;
                }
                sa[s][a] = mass;
                for (n, p) in next.iter_mut().zip(mdp.transition_row(h, s, a)) {
                    *n += mass * p;
                }
            }
        }
        out.push(sa);
        state_dist = next;
    }
    Ok(out)
}

/// Indicator reward that makes `policy` optimal: `r_h(s, a) = 1` exactly on
/// the action the policy takes. Only deterministic policies are accepted.
pub fn indicator_reward_for_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<RewardTable> {
    policy.check_shape(mdp)?;
    let det = policy
        .to_deterministic()
        .ok_or_else(|| Error::input("indicator reward requires a deterministic policy"))?;
    Ok(RewardTable::from_fn(
        mdp.horizon(),
        mdp.num_states(),
        mdp.num_actions(),
        |h, s, a| {
            if det.action(h, s) == a {
                1.0
            } else {
                0.0
            }
        },
    ))
}
