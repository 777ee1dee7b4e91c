use crate::error::{Error, Result};
use crate::mdp::{
    policy_evaluation, run_episode, value_iteration, ControlEnv, DeterministicPolicy, Environment, StochasticPolicy, TabularMdp,
};
use crate::offline::BehaviorPolicy;
use crate::rng::{self, Rng};

/// Mean true-reward return of each evaluated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDistribution {
    pub means: Vec<f64>,
    pub eval_episodes: usize,
    pub env_fingerprint: String,
}

fn episode_stream(seed: u64, policy: usize, episode: usize) -> Rng {
    rng::stream(seed, "return-eval", ((policy as u64) << 32) | episode as u64)
}

fn rollout_tabular(mdp: &TabularMdp, policy: &DeterministicPolicy, r: &mut Rng) -> Result<f64> {
    let mut s = mdp.sample_initial(r);
    let mut total = 0.0;
    for step in 1..=mdp.horizon() {
        let (next, reward, _) = mdp.step(step, s, policy.action(step - 1, s), r)?;
        total += reward;
        s = next;
    }
    Ok(total)
}

/// Mean return of one policy over `episodes` rollouts under the true reward.
pub fn evaluate_policy(env: &Environment, policy: &BehaviorPolicy, episodes: usize, seed: u64, index: usize) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::input("eval_episodes must be ≥ 1"));
    }
    let mut total = 0.0;
    match policy {
        BehaviorPolicy::Actor(actor) => {
            let ctl = env
                .control()
                .ok_or_else(|| Error::input("actor policies need a continuous-control environment"))?;
            if actor.input_dim() != ctl.obs_dim() || actor.output_dim() != ctl.action_dim() {
                return Err(Error::input("actor shape does not match the environment"));
            }
            for ep in 0..episodes {
                let mut r = episode_stream(seed, index, ep);
                total += run_episode(ctl, &mut r, |_, obs, _| actor.forward_one(obs))?.total_return();
            }
        }
        BehaviorPolicy::Tabular(p) => {
            let mdp = env
                .tabular()
                .ok_or_else(|| Error::input("tabular policies need a tabular environment"))?;
            if p.num_states() != mdp.num_states() || p.horizon() != mdp.horizon() {
                return Err(Error::input("policy shape does not match the environment"));
            }
            for ep in 0..episodes {
                let mut r = episode_stream(seed, index, ep);
                total += rollout_tabular(&mdp, p, &mut r)?;
            }
        }
    }
    Ok(total / episodes as f64)
}

pub fn return_distribution(env: &Environment, policies: &[&BehaviorPolicy], eval_episodes: usize, seed: u64) -> Result<ReturnDistribution> {
    let means = policies
        .iter()
        .enumerate()
        .map(|(i, p)| evaluate_policy(env, p, eval_episodes, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReturnDistribution {
        means,
        eval_episodes,
        env_fingerprint: env.fingerprint(),
    })
}

/// Random-policy and expert returns used to normalize scores. Tabular
/// environments (and the grid world) use exact dynamic programming; the
/// continuous point task uses Monte-Carlo rollouts of the uniform-random
/// and expert controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    pub random: f64,
    pub expert: f64,
}

pub fn reference_returns(env: &Environment, episodes: usize, seed: u64) -> Result<References> {
    if let Some(mdp) = env.tabular() {
        let star = value_iteration(&mdp, mdp.true_reward())?;
        let uniform = StochasticPolicy::uniform(mdp.horizon(), mdp.num_states(), mdp.num_actions());
        let v = policy_evaluation(&mdp, &uniform.into(), mdp.true_reward())?;
        let init = mdp.initial_distribution();
        let random: f64 = v[0].iter().zip(init).map(|(v, p)| v * p).sum();
        return Ok(References {
            random,
            expert: star.initial_value(init),
        });
    }
    let ctl = env.control().ok_or_else(|| Error::input("environment has no reference policies"))?;
    if episodes == 0 {
        return Err(Error::input("reference episodes must be ≥ 1"));
    }
    let mut random = 0.0;
    let mut expert = 0.0;
    for ep in 0..episodes {
        let mut r = rng::stream(seed, "reference-random", ep as u64);
        random += run_episode(ctl, &mut r, |_, _, r| Ok(ctl.random_action(r)))?.total_return();
        let mut r = rng::stream(seed, "reference-expert", ep as u64);
        expert += run_episode(ctl, &mut r, |step, obs, _| Ok(ctl.expert_action(step, obs)))?.total_return();
    }
    Ok(References {
        random: random / episodes as f64,
        expert: expert / episodes as f64,
    })
}

/// Mean return of a closure-driven controller; used for dataset-free
/// comparisons in tests and diagnostics.
pub fn mean_control_return(
    env: &dyn ControlEnv,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(usize, &[f64], &mut Rng) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut r = rng::stream(seed, "control-return", ep as u64);
        total += run_episode(env, &mut r, &mut act)?.total_return();
    }
    Ok(total / episodes as f64)
}
