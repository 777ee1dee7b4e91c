//! Twin-critic actor-critic machinery shared by the offline and online
//! trainers.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::neural::{soft_update, Adam, AdamConfig, InitScheme, Mlp, OutputActivation};
use crate::rng::Rng;

/// A minibatch of transitions, one row per sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
    pub next_states: DMatrix<f64>,
    pub not_done: DVector<f64>,
}

/// Row-major transition storage with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub state_dim: usize,
    pub action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    not_done: Vec<f64>,
}

impl TransitionTable {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            not_done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) {
        self.states.extend_from_slice(state);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_states.extend_from_slice(next_state);
        self.not_done.push(if done { 0.0 } else { 1.0 });
    }

    /// Replaces row `i` in place.
    pub fn overwrite(&mut self, i: usize, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) {
        let (ds, da) = (self.state_dim, self.action_dim);
        self.states[i * ds..(i + 1) * ds].copy_from_slice(state);
        self.actions[i * da..(i + 1) * da].copy_from_slice(action);
        self.rewards[i] = reward;
        self.next_states[i * ds..(i + 1) * ds].copy_from_slice(next_state);
        self.not_done[i] = if done { 0.0 } else { 1.0 };
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (ds, da) = (self.state_dim, self.action_dim);
        Batch {
            states: DMatrix::from_fn(idx.len(), ds, |i, j| self.states[idx[i] * ds + j]),
            actions: DMatrix::from_fn(idx.len(), da, |i, j| self.actions[idx[i] * da + j]),
            rewards: DVector::from_fn(idx.len(), |i, _| self.rewards[idx[i]]),
            next_states: DMatrix::from_fn(idx.len(), ds, |i, j| self.next_states[idx[i] * ds + j]),
            not_done: DVector::from_fn(idx.len(), |i, _| self.not_done[idx[i]]),
        }
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&idx)
    }
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, ca) = a.shape();
    DMatrix::from_fn(n, ca + b.ncols(), |i, j| if j < ca { a[(i, j)] } else { b[(i, j - ca)] })
}

/// Hyperparameters of one temporal-difference update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdSettings {
    pub discount: f64,
    /// Smoothing noise standard deviation, absolute units.
    pub policy_noise: f64,
    /// Smoothing noise is clipped to `±noise_clip`, absolute units.
    pub noise_clip: f64,
    pub action_bound: f64,
    pub twin: bool,
    pub terminal_mask: bool,
}

/// How the actor objective weights the critic term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActorObjective {
    /// `−mean Q(s, π(s))`.
    Greedy,
    /// `−λ·mean Q + mean (π(s) − a)²` with `λ = alpha / mean |Q|`.
    AdaptiveBc { alpha: f64 },
    /// Same with a fixed `λ`.
    FixedBc { lambda: f64 },
}

#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
}

impl ActorCritic {
    pub fn new(state_dim: usize, action_dim: usize, action_bound: f64, hidden: &[usize], adam: AdamConfig, rng: &mut Rng) -> Result<Self> {
        let mut actor_dims = vec![state_dim];
        actor_dims.extend(hidden);
        actor_dims.push(action_dim);
        let mut critic_dims = vec![state_dim + action_dim];
        critic_dims.extend(hidden);
        critic_dims.push(1);
        let actor = Mlp::new(&actor_dims, OutputActivation::Tanh, action_bound, InitScheme::GlorotUniform, rng)?;
        let q1 = Mlp::new(&critic_dims, OutputActivation::None, 1.0, InitScheme::GlorotUniform, rng)?;
        let q2 = Mlp::new(&critic_dims, OutputActivation::None, 1.0, InitScheme::GlorotUniform, rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor, adam),
            critic_opts: [Adam::new(&q1, adam), Adam::new(&q2, adam)],
            actor_target: actor.clone(),
            critic_targets: [q1.clone(), q2.clone()],
            actor,
            critics: [q1, q2],
        })
    }

    pub fn q_values(critic: &Mlp, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(critic.forward(&hstack(states, actions))?.column(0).into_owned())
    }

    /// Smoothed target actions: `clip(a + clip(σ·ξ, ±c), ±bound)`.
    pub fn smooth(actions: &DMatrix<f64>, td: &TdSettings, rng: &mut Rng) -> DMatrix<f64> {
        actions.map(|a| {
            let xi: f64 = rng.sample(StandardNormal);
            let noise = (td.policy_noise * xi).clamp(-td.noise_clip, td.noise_clip);
            (a + noise).clamp(-td.action_bound, td.action_bound)
        })
    }

    /// One gradient step on both critics toward the bootstrapped target
    /// computed at `next_actions` (already smoothed). Returns the summed loss.
    pub fn critic_update(&mut self, batch: &Batch, next_actions: &DMatrix<f64>, td: &TdSettings, step: usize) -> Result<f64> {
        let b = batch.rewards.len() as f64;
        let sa_next = hstack(&batch.next_states, next_actions);
        let mut next_q = self.critic_targets[0].forward(&sa_next)?.column(0).into_owned();
        if td.twin {
            let q2 = self.critic_targets[1].forward(&sa_next)?;
            next_q.zip_apply(&q2.column(0), |a, b| *a = a.min(b));
        }
        let mut target = batch.rewards.clone();
        for i in 0..target.len() {
            let mask = if td.terminal_mask { batch.not_done[i] } else { 1.0 };
            target[i] += td.discount * mask * next_q[i];
        }
        let sa = hstack(&batch.states, &batch.actions);
        let mut total = 0.0;
        let n_critics = if td.twin { 2 } else { 1 };
        for k in 0..n_critics {
            let cache = self.critics[k].forward_cached(&sa)?;
            let diff = cache.output().column(0) - &target;
            let loss = diff.norm_squared() / b;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("critic {k} loss is not finite"),
                });
            }
            total += loss;
            let upstream = DMatrix::from_column_slice(diff.len(), 1, (diff * (2.0 / b)).as_slice());
            let (grads, _) = self.critics[k].backward(&cache, &upstream)?;
            self.critic_opts[k]
                .step(&mut self.critics[k], &grads)
                .map_err(|e| at_step(e, step))?;
        }
        Ok(total)
    }

    /// One gradient step on the actor. Returns the actor loss.
    pub fn actor_update(&mut self, batch: &Batch, objective: ActorObjective, step: usize) -> Result<f64> {
        let b = batch.rewards.len() as f64;
        let ds = batch.states.ncols();
        let cache = self.actor.forward_cached(&batch.states)?;
        let pi = cache.output().clone();
        let qc = self.critics[0].forward_cached(&hstack(&batch.states, &pi))?;
        let q = qc.output().column(0).into_owned();
        let (lambda, bc) = match objective {
            ActorObjective::Greedy => (1.0, false),
            ActorObjective::AdaptiveBc { alpha } => {
                let mean_abs = q.iter().map(|v| v.abs()).sum::<f64>() / b;
                (alpha / mean_abs.max(1e-8), true)
            }
            ActorObjective::FixedBc { lambda } => (lambda, true),
        };
        let upstream = DMatrix::from_element(q.len(), 1, -lambda / b);
        let (_, input_grad) = self.critics[0].backward(&qc, &upstream)?;
        let mut d_pi = input_grad.columns(ds, pi.ncols()).into_owned();
        let mut loss = -lambda * q.sum() / b;
        if bc {
            let n = (pi.nrows() * pi.ncols()) as f64;
            let diff = &pi - &batch.actions;
            loss += diff.norm_squared() / n;
            d_pi += diff * (2.0 / n);
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: "actor loss is not finite".into(),
            });
        }
        let (grads, _) = self.actor.backward(&cache, &d_pi)?;
        self.actor_opt.step(&mut self.actor, &grads).map_err(|e| at_step(e, step))?;
        Ok(loss)
    }

    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        for k in 0..2 {
            soft_update(&mut self.critic_targets[k], &self.critics[k], tau)?;
        }
        Ok(())
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Training { message, .. } => Error::Training { step, message },
        other => other,
    }
}
