//! Behavior-regularized actor-critic training and plain behavior cloning on
//! fixed datasets.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Space};
use crate::error::{Error, Result};
use crate::neural::{Adam, AdamConfig, InitScheme, Mlp, OutputActivation};
use crate::rng;

use super::agent::{ActorCritic, ActorObjective, TdSettings, TransitionTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    pub discount: f64,
    pub batch_size: usize,
    pub bc_alpha: f64,
    /// When set, the actor uses this fixed weight instead of `bc_alpha / mean |Q|`.
    pub fixed_lambda: Option<f64>,
    /// Smoothing noise std as a fraction of the action bound.
    pub policy_noise: f64,
    /// Smoothing noise is clipped to `±noise_clip` times the action bound.
    pub noise_clip: f64,
    pub target_tau: f64,
    pub gradient_steps: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub policy_delay: usize,
    pub twin_critics: bool,
    pub terminal_mask: bool,
    pub seed: u64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            batch_size: 256,
            bc_alpha: 2.5,
            fixed_lambda: None,
            policy_noise: 0.2,
            noise_clip: 0.5,
            target_tau: 5e-3,
            gradient_steps: 20_000,
            hidden_dims: vec![64, 64],
            learning_rate: 3e-4,
            policy_delay: 2,
            twin_critics: true,
            terminal_mask: true,
            seed: 0,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("offline.td3bc.{key}"), msg));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if !(self.bc_alpha >= 0.0) {
            return bad("bc_alpha", "must be ≥ 0");
        }
        if self.fixed_lambda.is_some_and(|l| !(l >= 0.0)) {
            return bad("fixed_lambda", "must be ≥ 0");
        }
        if !(self.policy_noise >= 0.0) || !(self.noise_clip >= 0.0) {
            return bad("policy_noise", "noise parameters must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.target_tau) {
            return bad("target_tau", "must lie in [0, 1]");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims", "must be a non-empty list of positive widths");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay", "must be ≥ 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    fn objective(&self) -> ActorObjective {
        match self.fixed_lambda {
            Some(lambda) => ActorObjective::FixedBc { lambda },
            None => ActorObjective::AdaptiveBc { alpha: self.bc_alpha },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Td3bcOutput {
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    /// Summed twin-critic loss at every gradient step.
    pub critic_losses: Vec<f64>,
}

fn continuous_dims(dataset: &Dataset) -> Result<(usize, usize, f64)> {
    match (dataset.state_space, dataset.action_space) {
        (Space::Box { dim: ds, .. }, Space::Box { dim: da, bound }) => Ok((ds, da, bound)),
        _ => Err(Error::input("actor-critic training needs continuous states and actions")),
    }
}

fn table_from(dataset: &Dataset, labeled: bool) -> Result<TransitionTable> {
    if dataset.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    let (ds, da, _) = continuous_dims(dataset)?;
    let mut table = TransitionTable::new(ds, da);
    for t in &dataset.transitions {
        let r = if labeled { t.reward.unwrap_or(0.0) } else { 0.0 };
        table.push(&t.state, &t.action, r, &t.next_state, t.done);
    }
    Ok(table)
}

/// Trains a twin-critic actor with a behavior-cloning penalty on a labeled
/// dataset. Deterministic in `config.seed`.
pub fn td3bc_train(dataset: &Dataset, config: &OfflineConfig) -> Result<Td3bcOutput> {
    config.validate()?;
    if !dataset.labeled {
        return Err(Error::input("offline actor-critic training needs a labeled dataset"));
    }
    let (ds, da, bound) = continuous_dims(dataset)?;
    let table = table_from(dataset, true)?;
    let mut r = rng::stream(config.seed, "td3bc", 0);
    let mut ac = ActorCritic::new(ds, da, bound, &config.hidden_dims, config.adam(), &mut r)?;
    let td = TdSettings {
        discount: config.discount,
        policy_noise: config.policy_noise * bound,
        noise_clip: config.noise_clip * bound,
        action_bound: bound,
        twin: config.twin_critics,
        terminal_mask: config.terminal_mask,
    };
    let mut critic_losses = Vec::with_capacity(config.gradient_steps);
    for step in 0..config.gradient_steps {
        let batch = table.sample(config.batch_size, &mut r);
        let next = ac.actor_target.forward(&batch.next_states)?;
        let next = ActorCritic::smooth(&next, &td, &mut r);
        critic_losses.push(ac.critic_update(&batch, &next, &td, step)?);
        if (step + 1) % config.policy_delay == 0 {
            ac.actor_update(&batch, config.objective(), step)?;
            ac.update_targets(config.target_tau)?;
        }
    }
    Ok(Td3bcOutput {
        actor: ac.actor,
        critics: ac.critics,
        critic_losses,
    })
}

/// Mean-squared regression of logged actions on states; rewards are ignored.
pub fn bc_train(dataset: &Dataset, config: &OfflineConfig) -> Result<Mlp> {
    config.validate()?;
    let (ds, da, bound) = continuous_dims(dataset)?;
    let table = table_from(dataset, false)?;
    let mut r = rng::stream(config.seed, "bc", 0);
    let mut dims = vec![ds];
    dims.extend(&config.hidden_dims);
    dims.push(da);
    let mut actor = Mlp::new(&dims, OutputActivation::Tanh, bound, InitScheme::GlorotUniform, &mut r)?;
    let mut opt = Adam::new(&actor, config.adam());
    for step in 0..config.gradient_steps {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| r.random_range(0..table.len())).collect();
        let batch = table.gather(&idx);
        let cache = actor.forward_cached(&batch.states)?;
        let diff: DMatrix<f64> = cache.output() - &batch.actions;
        let n = diff.len() as f64;
        if !diff.iter().all(|v| v.is_finite()) {
            return Err(Error::Training {
                step,
                message: "behavior cloning loss is not finite".into(),
            });
        }
        let (grads, _) = actor.backward(&cache, &(diff * (2.0 / n)))?;
        opt.step(&mut actor, &grads).map_err(|e| match e {
            Error::Training { message, .. } => Error::Training { step, message },
            other => other,
        })?;
    }
    Ok(actor)
}

/// Greedy action of a deterministic actor.
pub fn act(actor: &Mlp, state: &[f64]) -> Result<Vec<f64>> {
    actor.forward_one(state)
}
