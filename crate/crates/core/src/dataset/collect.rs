use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{run_episode, value_iteration, ControlEnv, TabularMdp};
use crate::rng::{self, Rng};

use super::{Dataset, Space, Transition};

/// Logging policy used to generate offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorPolicySpec {
    Optimal,
    EpsilonGreedy {
        epsilon: f64,
    },
    Random,
    /// One component is drawn per episode.
    Mixture {
        weights: Vec<f64>,
        components: Vec<BehaviorPolicySpec>,
    },
}

impl BehaviorPolicySpec {
    /// Named data tiers: expert, medium and random are ε-greedy around the
    /// optimal policy with ε = 0, 0.3 and 1.
    pub fn tier(name: &str) -> Option<Self> {
        let epsilon = match name {
            "expert" => 0.0,
            "medium" => 0.3,
            "random" => 1.0,
            _ => return None,
        };
        Some(BehaviorPolicySpec::EpsilonGreedy { epsilon })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BehaviorPolicySpec::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(epsilon) => {
                Err(Error::input(format!("epsilon {epsilon} outside [0, 1]")))
            }
            BehaviorPolicySpec::Mixture { weights, components } => {
                if weights.len() != components.len() || components.is_empty() {
                    return Err(Error::input("mixture needs one weight per component"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::input("mixture weights must be non-negative and sum to 1"));
                }
                components.iter().try_for_each(|c| c.validate())
            }
            _ => Ok(()),
        }
    }

    /// Exploration rate for one episode; mixtures draw their component first.
    fn episode_epsilon(&self, r: &mut Rng) -> f64 {
        match self {
            BehaviorPolicySpec::Optimal => 0.0,
            BehaviorPolicySpec::EpsilonGreedy { epsilon } => *epsilon,
            BehaviorPolicySpec::Random => 1.0,
            BehaviorPolicySpec::Mixture { weights, components } => {
                let idx = crate::mdp::tabular::sample_index(weights, r);
                components[idx].episode_epsilon(r)
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            BehaviorPolicySpec::Optimal => "optimal".into(),
            BehaviorPolicySpec::EpsilonGreedy { epsilon } => format!("epsilon_greedy({epsilon})"),
            BehaviorPolicySpec::Random => "random".into(),
            BehaviorPolicySpec::Mixture { weights, components } => {
                let parts: Vec<String> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| format!("{w}*{}", c.describe()))
                    .collect();
                format!("mixture({})", parts.join(", "))
            }
        }
    }
}

/// Collects labeled episodes from a continuous-action environment. Episode
/// `k` uses its own random stream, so the result does not depend on the
/// order episodes are generated in.
pub fn collect_control(env: &dyn ControlEnv, spec: &BehaviorPolicySpec, num_episodes: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if num_episodes == 0 {
        return Err(Error::input("num_episodes must be ≥ 1"));
    }
    let mut data = Dataset::empty(
        env.fingerprint(),
        env.horizon(),
        Space::Box {
            dim: env.obs_dim(),
            bound: 1.0,
        },
        Space::Box {
            dim: env.action_dim(),
            bound: env.action_bound(),
        },
        true,
    );
    for ep in 0..num_episodes {
        let mut r = rng::stream(seed, "collect", ep as u64);
        let epsilon = spec.episode_epsilon(&mut r);
        let episode = run_episode(env, &mut r, |step, obs, r| {
            Ok(if epsilon > 0.0 && r.random::<f64>() < epsilon {
                env.random_action(r)
            } else {
                env.expert_action(step, obs)
            })
        })?;
        for (k, s) in episode.steps.into_iter().enumerate() {
            data.transitions.push(Transition {
                episode_id: ep as u64,
                step: k + 1,
                state: s.obs,
                action: s.action,
                reward: Some(s.reward),
                next_state: s.next_obs,
                done: k + 1 == env.horizon(),
            });
        }
    }
    data.provenance = format!("collect({}, episodes={num_episodes}, seed={seed})", spec.describe());
    Ok(data)
}

/// Collects labeled episodes from a tabular MDP; the optimal policy is the
/// greedy policy of exact value iteration on the true reward.
pub fn collect_tabular(mdp: &TabularMdp, fingerprint: &str, spec: &BehaviorPolicySpec, num_episodes: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if num_episodes == 0 {
        return Err(Error::input("num_episodes must be ≥ 1"));
    }
    let optimal = value_iteration(mdp, mdp.true_reward())?.greedy;
    let mut data = Dataset::empty(
        fingerprint,
        mdp.horizon(),
        Space::Discrete { n: mdp.num_states() },
        Space::Discrete { n: mdp.num_actions() },
        true,
    );
    for ep in 0..num_episodes {
        let mut r = rng::stream(seed, "collect", ep as u64);
        let epsilon = spec.episode_epsilon(&mut r);
        let mut s = mdp.sample_initial(&mut r);
        for step in 1..=mdp.horizon() {
            let a = if epsilon > 0.0 && r.random::<f64>() < epsilon {
                r.random_range(0..mdp.num_actions())
            } else {
                optimal.action(step - 1, s)
            };
            let (next, reward, done) = mdp.step(step, s, a, &mut r)?;
            data.transitions.push(Transition {
                episode_id: ep as u64,
                step,
                state: vec![s as f64],
                action: vec![a as f64],
                reward: Some(reward),
                next_state: vec![next as f64],
                done,
            });
            s = next;
        }
    }
    data.provenance = format!("collect({}, episodes={num_episodes}, seed={seed})", spec.describe());
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{occupancy, GridWorld, PointReach, PointReachKind, StochasticPolicy};

    #[test]
    fn optimal_on_deterministic_env_repeats_trajectory() {
        let env = PointReach::new(PointReachKind::PointReach1D, 6, vec![0.5], vec![-0.5], 0.2, 0.0).unwrap();
        let d = collect_control(&env, &BehaviorPolicySpec::Optimal, 2, 4).unwrap();
        let eps: Vec<_> = d.episodes().collect();
        assert_eq!(eps.len(), 2);
        for (a, b) in eps[0].iter().zip(eps[1]) {
            assert_eq!((&a.state, &a.action, a.reward), (&b.state, &b.action, b.reward));
        }
        d.validate().unwrap();
    }

    #[test]
    fn size_is_episodes_times_horizon() {
        let env = PointReach::new(PointReachKind::PointReach1D, 5, vec![0.5], vec![-0.5], 0.2, 0.01).unwrap();
        let d = collect_control(&env, &BehaviorPolicySpec::tier("medium").unwrap(), 3, 0).unwrap();
        assert_eq!(d.len(), 15);
    }

    #[test]
    fn collection_is_deterministic() {
        let grid = GridWorld::new(4, 4, (3, 3), 0.1, 8).unwrap();
        let spec = BehaviorPolicySpec::tier("medium").unwrap();
        let a = collect_tabular(grid.tabular(), "g", &spec, 20, 9).unwrap();
        let b = collect_tabular(grid.tabular(), "g", &spec, 20, 9).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn random_tier_matches_uniform_occupancy() {
        let grid = GridWorld::new(3, 3, (2, 2), 0.0, 6).unwrap();
        let mdp = grid.tabular();
        let episodes = 10_000;
        let d = collect_tabular(mdp, "g", &BehaviorPolicySpec::tier("random").unwrap(), episodes, 1).unwrap();
        let occ = occupancy(mdp, &StochasticPolicy::uniform(6, 9, 5).into()).unwrap();
        let mut visits = vec![vec![0.0; 9]; 6];
        for t in &d.transitions {
            visits[t.step - 1][t.state[0] as usize] += 1.0 / episodes as f64;
        }
        for h in 0..6 {
            let exact: Vec<f64> = occ[h].iter().map(|row| row.iter().sum()).collect();
            let tv: f64 = 0.5 * exact.iter().zip(&visits[h]).map(|(p, q)| (p - q).abs()).sum::<f64>();
            assert!(tv < 0.05, "step {h}: tv {tv}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(BehaviorPolicySpec::EpsilonGreedy { epsilon: 1.5 }.validate().is_err());
        let m = BehaviorPolicySpec::Mixture {
            weights: vec![0.5, 0.6],
            components: vec![BehaviorPolicySpec::Optimal, BehaviorPolicySpec::Random],
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn mixture_draws_per_episode() {
        let grid = GridWorld::new(3, 3, (2, 2), 0.0, 4).unwrap();
        let m = BehaviorPolicySpec::Mixture {
            weights: vec![0.5, 0.5],
            components: vec![BehaviorPolicySpec::Optimal, BehaviorPolicySpec::Random],
        };
        let d = collect_tabular(grid.tabular(), "g", &m, 50, 2).unwrap();
        assert_eq!(d.num_episodes(), 50);
        d.validate().unwrap();
    }
}
