use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

const ROW_TOL: f64 = 1e-12;

/// Per-step reward table `r_h(s, a)`, indexed with a zero-based step `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self::constant(horizon, num_states, num_actions, 0.0)
    }

    pub fn constant(horizon: usize, num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            values: vec![value; horizon * num_states * num_actions],
        }
    }

    pub fn from_fn(horizon: usize, num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(horizon * num_states * num_actions);
        for h in 0..horizon {
            for s in 0..num_states {
                for a in 0..num_actions {
                    values.push(f(h, s, a));
                }
            }
        }
        Self {
            horizon,
            num_states,
            num_actions,
            values,
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize, value: f64) {
        self.values[(h * self.num_states + s) * self.num_actions + a] = value;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.num_states, self.num_actions)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Finite-horizon episodic MDP with explicit per-step dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    // [h][s][a][s']
    transition: Vec<f64>,
    reward: RewardTable,
    initial: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Vec<f64>,
        reward: RewardTable,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::input("tabular MDP needs at least one state, action and step"));
        }
        if transition.len() != horizon * num_states * num_actions * num_states {
            return Err(Error::input("transition tensor has the wrong size"));
        }
        if reward.shape() != (horizon, num_states, num_actions) {
            return Err(Error::input("reward table shape does not match the MDP"));
        }
        if reward.values.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::input("true rewards must lie in [0, 1]"));
        }
        if initial.len() != num_states {
            return Err(Error::input("initial distribution has the wrong length"));
        }
        check_distribution(&initial, "initial distribution")?;
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transition,
            reward,
            initial,
        })
    }

    /// Random instance: Dirichlet(1) transition rows, uniform rewards in [0, 1],
    /// fixed start state 0.
    pub fn random(num_states: usize, num_actions: usize, horizon: usize, rng: &mut Rng) -> Result<Self> {
        let mut transition = Vec::with_capacity(horizon * num_states * num_actions * num_states);
        for _ in 0..horizon * num_states * num_actions {
            transition.extend(sample_simplex(num_states, rng));
        }
        let reward = RewardTable::from_fn(horizon, num_states, num_actions, |_, _, _| rng.random::<f64>());
        let mut initial = vec![0.0; num_states];
        initial[0] = 1.0;
        Self::new(num_states, num_actions, horizon, transition, reward, initial)
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

    pub fn true_reward(&self) -> &RewardTable {
        &self.reward
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = ((h * self.num_states + s) * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> usize {
        sample_index(&self.initial, rng)
    }

    /// Simulates one transition. `step` is the one-based step counter; the
    /// episode is done exactly when it reaches the horizon.
    pub fn step(&self, step: usize, state: usize, action: usize, rng: &mut Rng) -> Result<(usize, f64, bool)> {
        if step == 0 || step > self.horizon {
            return Err(Error::input(format!("step {step} outside 1..={}", self.horizon)));
        }
        if state >= self.num_states {
            return Err(Error::input(format!("state {state} out of range")));
        }
        if action >= self.num_actions {
            return Err(Error::input(format!("action {action} out of range")));
        }
        let h = step - 1;
        let next = sample_index(self.transition_row(h, state, action), rng);
        Ok((next, self.reward.get(h, state, action), step == self.horizon))
    }

    /// Stable identifier of the environment's shape and dynamics.
    pub fn fingerprint(&self, kind: &str) -> String {
        format!(
            "{kind}:S{}:A{}:H{}:{}",
            self.num_states,
            self.num_actions,
            self.horizon,
            &crate::hash_f64s(&self.transition)[..12]
        )
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::input(format!("{what} has a negative or NaN entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::input(format!("{what} sums to {total}")));
    }
    Ok(())
}

pub(crate) fn sample_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    // exact renormalisation of the last entry keeps row sums at 1 to rounding
    let head: f64 = v[..n - 1].iter().sum();
    v[n - 1] = (1.0 - head).max(0.0);
    v
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack lands on the last state with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// A policy that picks exactly one action per (step, state).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    horizon: usize,
    num_states: usize,
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(horizon: usize, num_states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(Error::input("deterministic policy table has the wrong size"));
        }
        Ok(Self {
            horizon,
            num_states,
            actions,
        })
    }

    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    pub fn random(horizon: usize, num_states: usize, num_actions: usize, rng: &mut Rng) -> Self {
        let actions = (0..horizon * num_states).map(|_| rng.random_range(0..num_actions)).collect();
        Self {
            horizon,
            num_states,
            actions,
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(Error::input("stochastic policy table has the wrong size"));
        }
        for row in probs.chunks(num_actions) {
            check_distribution(row, "policy row")?;
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; horizon * num_states * num_actions],
        }
    }

    pub fn random(horizon: usize, num_states: usize, num_actions: usize, rng: &mut Rng) -> Self {
        let mut probs = Vec::with_capacity(horizon * num_states * num_actions);
        for _ in 0..horizon * num_states {
            probs.extend(sample_simplex(num_actions, rng));
        }
        Self {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.num_states + s) * self.num_actions;
        &self.probs[start..start + self.num_actions]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabularPolicy {
    Deterministic(DeterministicPolicy),
    Stochastic(StochasticPolicy),
}

impl TabularPolicy {
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match self {
            TabularPolicy::Deterministic(p) => {
                if p.action(h, s) == a {
                    1.0
                } else {
                    0.0
                }
            }
            TabularPolicy::Stochastic(p) => p.row(h, s)[a],
        }
    }

    pub fn sample(&self, h: usize, s: usize, rng: &mut Rng) -> usize {
        match self {
            TabularPolicy::Deterministic(p) => p.action(h, s),
            TabularPolicy::Stochastic(p) => sample_index(p.row(h, s), rng),
        }
    }

    /// Returns the deterministic form when every row is one-hot.
    pub fn to_deterministic(&self) -> Option<DeterministicPolicy> {
        match self {
            TabularPolicy::Deterministic(p) => Some(p.clone()),
            TabularPolicy::Stochastic(p) => {
                let mut actions = Vec::with_capacity(p.horizon * p.num_states);
                for row in p.probs.chunks(p.num_actions) {
                    let hot = row.iter().position(|x| *x == 1.0)?;
                    if row.iter().enumerate().any(|(i, x)| i != hot && *x != 0.0) {
                        return None;
                    }
                    actions.push(hot);
                }
                Some(DeterministicPolicy {
                    horizon: p.horizon,
                    num_states: p.num_states,
                    actions,
                })
            }
        }
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        let (h, s) = match self {
            TabularPolicy::Deterministic(p) => {
                if p.actions.iter().any(|a| *a >= mdp.num_actions) {
                    return Err(Error::input("policy action index out of range"));
                }
                (p.horizon, p.num_states)
            }
            TabularPolicy::Stochastic(p) => {
                if p.num_actions != mdp.num_actions {
                    return Err(Error::input("policy action count does not match the MDP"));
                }
                (p.horizon, p.num_states)
            }
        };
        if h != mdp.horizon || s != mdp.num_states {
            return Err(Error::input("policy shape does not match the MDP"));
        }
        Ok(())
    }
}

impl From<DeterministicPolicy> for TabularPolicy {
    fn from(p: DeterministicPolicy) -> Self {
        TabularPolicy::Deterministic(p)
    }
}

impl From<StochasticPolicy> for TabularPolicy {
    fn from(p: StochasticPolicy) -> Self {
        TabularPolicy::Stochastic(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn one_hot_chain() -> TabularMdp {
        // every action sends the agent to state 2
        let (s, a, h) = (3, 2, 2);
        let mut transition = vec![0.0; h * s * a * s];
        for row in transition.chunks_mut(s) {
            row[2] = 1.0;
        }
        TabularMdp::new(s, a, h, transition, RewardTable::zeros(h, s, a), vec![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn deterministic_row_always_lands_on_its_target() {
        let mdp = one_hot_chain();
        let mut r = rng::stream(1, "t", 0);
        for _ in 0..50 {
            assert_eq!(mdp.step(1, 0, 1, &mut r).unwrap().0, 2);
        }
    }

    #[test]
    fn single_state_unit_reward_terminates_at_horizon() {
        let h = 4;
        let mdp = TabularMdp::new(1, 2, h, vec![1.0; h * 2], RewardTable::constant(h, 1, 2, 1.0), vec![1.0]).unwrap();
        let mut r = rng::stream(0, "t", 0);
        for step in 1..=h {
            let (next, reward, done) = mdp.step(step, 0, 1, &mut r).unwrap();
            assert_eq!(next, 0);
            assert_eq!(reward, 1.0);
            assert_eq!(done, step == h);
        }
        assert!(mdp.step(h + 1, 0, 0, &mut r).is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let mut r0 = rng::stream(3, "mdp", 0);
        let mdp = TabularMdp::random(6, 3, 4, &mut r0).unwrap();
        let draw = |seed| {
            let mut r = rng::stream(seed, "step", 0);
            (0..20).map(|_| mdp.step(1, 2, 1, &mut r).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let mdp = one_hot_chain();
        let mut r = rng::stream(0, "t", 0);
        assert!(matches!(mdp.step(1, 3, 0, &mut r), Err(Error::Input(_))));
        assert!(matches!(mdp.step(1, 0, 2, &mut r), Err(Error::Input(_))));
    }

    #[test]
    fn construction_validates_rows_and_rewards() {
        let bad_rows = TabularMdp::new(2, 1, 1, vec![0.5, 0.6, 1.0, 0.0], RewardTable::zeros(1, 2, 1), vec![1.0, 0.0]);
        assert!(bad_rows.is_err());
        let bad_reward = TabularMdp::new(1, 1, 1, vec![1.0], RewardTable::constant(1, 1, 1, 1.5), vec![1.0]);
        assert!(bad_reward.is_err());
    }

    #[test]
    fn random_instances_are_valid_distributions() {
        let mut r = rng::stream(11, "mdp", 0);
        for _ in 0..20 {
            let mdp = TabularMdp::random(7, 3, 5, &mut r).unwrap();
            for h in 0..5 {
                for s in 0..7 {
                    for a in 0..3 {
                        let total: f64 = mdp.transition_row(h, s, a).iter().sum();
                        assert!((total - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
