use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Continuous-action view of an environment. Implementations are stateless:
/// the caller threads the observation and the one-based step counter, so a
/// single instance can be shared across rollouts.
pub trait ControlEnv: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bound(&self) -> f64;
    fn horizon(&self) -> usize;
    fn fingerprint(&self) -> String;

    fn initial_obs(&self, rng: &mut Rng) -> Vec<f64>;

    /// True reward of `(obs, action)`. The action is clipped first.
    fn reward(&self, obs: &[f64], action: &[f64]) -> f64;

    /// Samples the next observation; the action is clipped first.
    fn next_obs(&self, obs: &[f64], action: &[f64], rng: &mut Rng) -> Vec<f64>;

    /// Optimal action at one-based `step`.
    fn expert_action(&self, step: usize, obs: &[f64]) -> Vec<f64>;

    fn random_action(&self, rng: &mut Rng) -> Vec<f64>;

    fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        let b = self.action_bound();
        action.iter().map(|a| a.clamp(-b, b)).collect()
    }

    fn step(&self, step: usize, obs: &[f64], action: &[f64], rng: &mut Rng) -> Result<StepOutcome> {
        if step == 0 || step > self.horizon() {
            return Err(Error::input(format!("step {step} outside 1..={}", self.horizon())));
        }
        if obs.len() != self.obs_dim() || action.len() != self.action_dim() {
            return Err(Error::input("observation or action has the wrong dimension"));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::input("non-finite action"));
        }
        let action = self.clip_action(action);
        let reward = self.reward(obs, &action);
        let next_obs = self.next_obs(obs, &action, rng);
        Ok(StepOutcome {
            next_obs,
            reward,
            done: step == self.horizon(),
        })
    }
}

/// One logged step of a rollout; the action is the clipped, executed one.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<RolloutStep>,
}

impl Episode {
    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Runs one full-horizon episode with `act(step, obs, rng)` choosing actions.
pub fn run_episode(
    env: &dyn ControlEnv,
    rng: &mut Rng,
    mut act: impl FnMut(usize, &[f64], &mut Rng) -> Result<Vec<f64>>,
) -> Result<Episode> {
    let mut obs = env.initial_obs(rng);
    let mut steps = Vec::with_capacity(env.horizon());
    for step in 1..=env.horizon() {
        let action = env.clip_action(&act(step, &obs, rng)?);
        let outcome = env.step(step, &obs, &action, rng)?;
        let next = outcome.next_obs.clone();
        steps.push(RolloutStep {
            obs,
            action,
            reward: outcome.reward,
            next_obs: outcome.next_obs,
        });
        obs = next;
        if outcome.done {
            break;
        }
    }
    Ok(Episode { steps })
}
