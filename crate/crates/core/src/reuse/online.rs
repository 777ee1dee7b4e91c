//! Online training of a trainable policy alongside frozen behaviors.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{run_episode, ControlEnv};
use crate::neural::{AdamConfig, Mlp};
use crate::offline::agent::{hstack, ActorCritic, ActorObjective, Batch, TdSettings};
use crate::offline::BehaviorSet;
use crate::rng::{self, Rng};

use super::replay::ReplayBuffer;
use super::selector::{cup_index, cup_select, sample_categorical, select_policy, softmax_probs, ExpandedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Pex,
    Cup,
    Scratch,
}

impl SelectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Pex => "pex",
            SelectorKind::Cup => "cup",
            SelectorKind::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub total_env_steps: usize,
    /// Critic updates per environment step.
    pub utd_ratio: usize,
    pub replay_capacity: usize,
    /// Steps collected before gradient updates begin.
    pub warmup_steps: usize,
    /// Gaussian exploration noise std as a fraction of the action bound.
    pub exploration_noise: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub target_tau: f64,
    pub policy_delay: usize,
    pub twin_critics: bool,
    /// Selector temperature.
    pub alpha: f64,
    pub cup_margin: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Evaluate the whole expanded policy (soft selection, no noise) rather
    /// than the trainable policy alone.
    pub eval_with_selector: bool,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 20_000,
            utd_ratio: 1,
            replay_capacity: 100_000,
            warmup_steps: 1_000,
            exploration_noise: 0.1,
            discount: 0.99,
            batch_size: 256,
            hidden_dims: vec![64, 64],
            learning_rate: 3e-4,
            policy_noise: 0.2,
            noise_clip: 0.5,
            target_tau: 5e-3,
            policy_delay: 2,
            twin_critics: true,
            alpha: 10.0,
            cup_margin: 0.0,
            eval_interval: 1_000,
            eval_episodes: 10,
            eval_with_selector: true,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("online.agent.{key}"), msg));
        if self.total_env_steps == 0 {
            return bad("total_env_steps", "must be ≥ 1");
        }
        if self.utd_ratio == 0 {
            return bad("utd_ratio", "must be ≥ 1");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity", "must be ≥ 1");
        }
        if self.warmup_steps > self.total_env_steps {
            return bad("warmup_steps", "must not exceed total_env_steps");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims", "must be a non-empty list of positive widths");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.exploration_noise >= 0.0 && self.policy_noise >= 0.0 && self.noise_clip >= 0.0) {
            return bad("exploration_noise", "noise parameters must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.target_tau) {
            return bad("target_tau", "must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay", "must be ≥ 1");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha", "must be finite and ≥ 0");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("eval_interval", "evaluation interval and episode count must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub env_step: usize,
    pub eval_return: f64,
    /// Cumulative per-candidate selection counts up to `env_step`.
    pub usage_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub seed: u64,
    pub selector_kind: SelectorKind,
    pub points: Vec<CurvePoint>,
}

pub const CURVE_COLUMNS: &str = "env_step,eval_return,seed,selector_kind,candidate_usage_counts";

impl LearningCurve {
    /// CSV rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let usage: Vec<String> = p.usage_counts.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{:.16e},{},{},{}",
                p.env_step,
                p.eval_return,
                self.seed,
                self.selector_kind.name(),
                usage.join(";")
            );
        }
        out
    }

    pub fn to_csv(curves: &[LearningCurve], config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\n{CURVE_COLUMNS}\n");
        for c in curves {
            out.push_str(&c.csv_rows());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutput {
    pub policy: Mlp,
    pub critics: [Mlp; 2],
    pub curve: LearningCurve,
    pub usage_counts: Vec<u64>,
}

fn gaussian(r: &mut Rng) -> f64 {
    r.sample(StandardNormal)
}

struct Runner<'a> {
    env: &'a dyn ControlEnv,
    frozen: &'a [Mlp],
    cfg: &'a OnlineConfig,
    kind: SelectorKind,
    td: TdSettings,
}

impl Runner<'_> {
    fn expanded<'b>(&'b self, trainable: &'b Mlp) -> ExpandedPolicy<'b> {
        ExpandedPolicy {
            frozen: self.frozen,
            trainable,
            alpha: self.cfg.alpha,
        }
    }

    fn choose(&self, ac: &ActorCritic, obs: &[f64], r: &mut Rng) -> Result<(usize, Vec<f64>)> {
        let e = self.expanded(&ac.actor);
        let sel = match self.kind {
            SelectorKind::Scratch => {
                return Ok((e.trainable_index(), ac.actor.forward_one(obs)?));
            }
            SelectorKind::Pex => select_policy(&e, &ac.critics[0], obs, r)?,
            SelectorKind::Cup => cup_select(&e, &ac.critics[0], obs, self.cfg.cup_margin)?,
        };
        Ok((sel.index, sel.action))
    }

    /// Next-state actions for the critic target: the expanded policy with
    /// the target actor as its trainable member, then smoothing noise.
    fn target_actions(&self, ac: &ActorCritic, batch: &Batch, r: &mut Rng) -> Result<DMatrix<f64>> {
        let own = ac.actor_target.forward(&batch.next_states)?;
        if self.kind == SelectorKind::Scratch || self.frozen.is_empty() {
            return Ok(ActorCritic::smooth(&own, &self.td, r));
        }
        let (b, da) = own.shape();
        let mut proposals: Vec<DMatrix<f64>> = self.frozen.iter().map(|m| m.forward(&batch.next_states)).collect::<Result<_>>()?;
        proposals.push(own);
        let n = proposals.len();
        let stacked_s = DMatrix::from_fn(n * b, batch.next_states.ncols(), |i, j| batch.next_states[(i % b, j)]);
        let stacked_a = DMatrix::from_fn(n * b, da, |i, j| proposals[i / b][(i % b, j)]);
        let q = ac.critic_targets[0].forward(&hstack(&stacked_s, &stacked_a))?;
        let mut chosen = DMatrix::zeros(b, da);
        for row in 0..b {
            let values: Vec<f64> = (0..n).map(|c| q[(c * b + row, 0)]).collect();
            let idx = match self.kind {
                SelectorKind::Pex => sample_categorical(&softmax_probs(&values, self.cfg.alpha)?, r),
                _ => cup_index(&values, self.cfg.cup_margin)?,
            };
            chosen.row_mut(row).copy_from(&proposals[idx].row(row));
        }
        Ok(ActorCritic::smooth(&chosen, &self.td, r))
    }

    fn evaluate(&self, ac: &ActorCritic, eval_index: u64) -> Result<f64> {
        let mut total = 0.0;
        for ep in 0..self.cfg.eval_episodes {
            let mut r = rng::stream(self.cfg.seed, "online-eval", eval_index * 1_000_003 + ep as u64);
            let episode = run_episode(self.env, &mut r, |_, obs, r| {
                if self.cfg.eval_with_selector && self.kind != SelectorKind::Scratch {
                    Ok(self.choose(ac, obs, r)?.1)
                } else {
                    ac.actor.forward_one(obs)
                }
            })?;
            total += episode.total_return();
        }
        Ok(total / self.cfg.eval_episodes as f64)
    }
}

/// Runs the online phase. `behaviors` must come from the same environment;
/// the scratch selector ignores them.
pub fn online_train(
    env: &dyn ControlEnv,
    behaviors: Option<&BehaviorSet>,
    config: &OnlineConfig,
    kind: SelectorKind,
) -> Result<OnlineOutput> {
    config.validate()?;
    let frozen: Vec<Mlp> = match (kind, behaviors) {
        (SelectorKind::Scratch, _) | (_, None) => Vec::new(),
        (_, Some(set)) => {
            if set.env_fingerprint != env.fingerprint() {
                return Err(Error::input(format!(
                    "behavior set was extracted on `{}`, not `{}`",
                    set.env_fingerprint,
                    env.fingerprint()
                )));
            }
            set.actors().into_iter().cloned().collect()
        }
    };
    if behaviors.is_some_and(|s| s.actors().len() != s.len()) && kind != SelectorKind::Scratch {
        return Err(Error::input("online reuse needs actor-network behaviors"));
    }
    let bound = env.action_bound();
    let runner = Runner {
        env,
        frozen: &frozen,
        cfg: config,
        kind,
        td: TdSettings {
            discount: config.discount,
            policy_noise: config.policy_noise * bound,
            noise_clip: config.noise_clip * bound,
            action_bound: bound,
            twin: config.twin_critics,
            terminal_mask: true,
        },
    };
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut init = rng::stream(config.seed, "online-init", 0);
    let mut ac = ActorCritic::new(env.obs_dim(), env.action_dim(), bound, &config.hidden_dims, adam, &mut init)?;
    let mut buffer = ReplayBuffer::new(env.obs_dim(), env.action_dim(), config.replay_capacity);
    let mut r_env = rng::stream(config.seed, "online-env", 0);
    let mut r_act = rng::stream(config.seed, "online-act", 0);
    let mut r_upd = rng::stream(config.seed, "online-update", 0);

    let mut usage = vec![0u64; frozen.len() + 1];
    let mut points = Vec::new();
    let mut obs = env.initial_obs(&mut r_env);
    let mut step_in_episode = 1;
    let mut rounds = 0usize;
    for t in 1..=config.total_env_steps {
        // Before learning starts the scratch learner acts uniformly at random;
        // the expanded policy acts through its selector from the first step.
        let random_warmup = t <= config.warmup_steps && frozen.is_empty();
        let (idx, proposed) = if random_warmup {
            (frozen.len(), env.random_action(&mut r_act))
        } else {
            runner.choose(&ac, &obs, &mut r_act)?
        };
        usage[idx] += 1;
        let action: Vec<f64> = if random_warmup {
            proposed
        } else {
            proposed
                .iter()
                .map(|a| a + config.exploration_noise * bound * gaussian(&mut r_act))
                .collect()
        };
        let action = env.clip_action(&action);
        let outcome = env.step(step_in_episode, &obs, &action, &mut r_env)?;
        buffer.push(&obs, &action, outcome.reward, &outcome.next_obs, outcome.done);
        if outcome.done {
            obs = env.initial_obs(&mut r_env);
            step_in_episode = 1;
        } else {
            obs = outcome.next_obs;
            step_in_episode += 1;
        }

        if t > config.warmup_steps {
            for _ in 0..config.utd_ratio {
                let batch = buffer.sample(config.batch_size, &mut r_upd);
                let next = runner.target_actions(&ac, &batch, &mut r_upd)?;
                ac.critic_update(&batch, &next, &runner.td, t)?;
            }
            rounds += 1;
            if rounds.is_multiple_of(config.policy_delay) {
                let batch = buffer.sample(config.batch_size, &mut r_upd);
                ac.actor_update(&batch, ActorObjective::Greedy, t)?;
                ac.update_targets(config.target_tau)?;
            }
        }

        if t % config.eval_interval == 0 {
            let eval_return = runner.evaluate(&ac, (t / config.eval_interval) as u64)?;
            log::debug!("step {t}: eval return {eval_return:.4}");
            points.push(CurvePoint {
                env_step: t,
                eval_return,
                usage_counts: usage.clone(),
            });
        }
    }
    Ok(OnlineOutput {
        policy: ac.actor,
        critics: ac.critics,
        curve: LearningCurve {
            seed: config.seed,
            selector_kind: kind,
            points,
        },
        usage_counts: usage,
    })
}

/// First evaluated step whose return reaches `threshold`, if any.
pub fn steps_to_threshold(curve: &LearningCurve, threshold: f64) -> Option<usize> {
    curve.points.iter().find(|p| p.eval_return >= threshold).map(|p| p.env_step)
}
