use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::control::ControlEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointReachKind {
    PointReach1D,
    PointReach2D,
}

/// A point mass in `[-1, 1]^k` moved by bounded velocity commands:
/// `s' = clip(s + a·Δt + noise)` with `Δt = 1`. The reward is the negative
/// squared distance of the commanded position to the goal, divided by the
/// largest possible squared distance `4k`, so it lies in `[-1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReach {
    kind: PointReachKind,
    horizon: usize,
    goal: Vec<f64>,
    start: Vec<f64>,
    action_bound: f64,
    noise_std: f64,
}

impl PointReach {
    pub fn new(kind: PointReachKind, horizon: usize, goal: Vec<f64>, start: Vec<f64>, action_bound: f64, noise_std: f64) -> Result<Self> {
        let dim = match kind {
            PointReachKind::PointReach1D => 1,
            PointReachKind::PointReach2D => 2,
        };
        if goal.len() != dim || start.len() != dim {
            return Err(Error::input(format!("point-reach goal and start need {dim} coordinates")));
        }
        if horizon == 0 {
            return Err(Error::input("horizon must be ≥ 1"));
        }
        if !(action_bound > 0.0) || !(noise_std >= 0.0) {
            return Err(Error::input("action bound must be positive and noise std non-negative"));
        }
        if goal.iter().chain(&start).any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::input("goal and start must lie in [-1, 1]"));
        }
        Ok(Self {
            kind,
            horizon,
            goal,
            start,
            action_bound,
            noise_std,
        })
    }

    pub fn kind(&self) -> PointReachKind {
        self.kind
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    fn dim(&self) -> usize {
        self.goal.len()
    }

    fn commanded(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let b = self.action_bound;
        obs.iter().zip(action).map(|(s, a)| (s + a.clamp(-b, b)).clamp(-1.0, 1.0)).collect()
    }
}

impl ControlEnv for PointReach {
    fn obs_dim(&self) -> usize {
        self.dim()
    }

    fn action_dim(&self) -> usize {
        self.dim()
    }

    fn action_bound(&self) -> f64 {
        self.action_bound
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn fingerprint(&self) -> String {
        let kind = match self.kind {
            PointReachKind::PointReach1D => "point_reach_1d",
            PointReachKind::PointReach2D => "point_reach_2d",
        };
        format!(
            "{kind}:H{}:goal{:?}:start{:?}:b{}:noise{}",
            self.horizon, self.goal, self.start, self.action_bound, self.noise_std
        )
    }

    fn initial_obs(&self, _rng: &mut Rng) -> Vec<f64> {
        self.start.clone()
    }

    fn reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        let pos = self.commanded(obs, action);
        let dist2: f64 = pos.iter().zip(&self.goal).map(|(p, g)| (p - g) * (p - g)).sum();
        -dist2 / (4 * self.dim()) as f64
    }

    fn next_obs(&self, obs: &[f64], action: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut pos = self.commanded(obs, action);
        if self.noise_std > 0.0 {
            for p in pos.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *p = (*p + self.noise_std * n).clamp(-1.0, 1.0);
            }
        }
        pos
    }

    fn expert_action(&self, _step: usize, obs: &[f64]) -> Vec<f64> {
        let b = self.action_bound;
        obs.iter().zip(&self.goal).map(|(s, g)| (g - s).clamp(-b, b)).collect()
    }

    fn random_action(&self, rng: &mut Rng) -> Vec<f64> {
        let b = self.action_bound;
        (0..self.dim()).map(|_| rng.random_range(-b..=b)).collect()
    }
}
