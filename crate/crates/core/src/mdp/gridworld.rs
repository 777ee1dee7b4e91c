use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::control::ControlEnv;
use super::dp::value_iteration;
use super::tabular::{DeterministicPolicy, RewardTable, TabularMdp};

pub const RIGHT: usize = 0;
pub const UP: usize = 1;
pub const LEFT: usize = 2;
pub const DOWN: usize = 3;
pub const STAY: usize = 4;
pub const NUM_MOVES: usize = 5;

/// Continuous stand-ins for the five moves, used when the grid is driven by
/// continuous-action learners.
pub const MOVE_VECTORS: [[f64; 2]; NUM_MOVES] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]];

const DEAD_ZONE: f64 = 1.0 / 3.0;

/// Grid of `width × height` cells. Reward is 1 for every step spent on the
/// goal cell. With probability `slip_prob` the agent lands on a uniformly
/// random cell instead of following its move.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    goal: (usize, usize),
    start: (usize, usize),
    slip_prob: f64,
    horizon: usize,
    mdp: TabularMdp,
    expert: DeterministicPolicy,
}

impl GridWorld {
    pub fn new(width: usize, height: usize, goal: (usize, usize), slip_prob: f64, horizon: usize) -> Result<Self> {
        if width == 0 || height == 0 || horizon == 0 {
            return Err(Error::input("gridworld dimensions and horizon must be ≥ 1"));
        }
        if goal.0 >= width || goal.1 >= height {
            return Err(Error::input("goal cell lies outside the grid"));
        }
        if !(0.0..=1.0).contains(&slip_prob) {
            return Err(Error::input("slip probability must lie in [0, 1]"));
        }
        let start = (0, 0);
        let n = width * height;
        let uniform = 1.0 / n as f64;
        let mut transition = Vec::with_capacity(horizon * n * NUM_MOVES * n);
        for _ in 0..horizon {
            for s in 0..n {
                for a in 0..NUM_MOVES {
                    let target = move_cell(width, height, s, a);
                    transition.extend((0..n).map(|next| {
                        let hit = if next == target { 1.0 - slip_prob } else { 0.0 };
                        hit + slip_prob * uniform
                    }));
                }
            }
        }
        let goal_index = goal.1 * width + goal.0;
        let reward = RewardTable::from_fn(horizon, n, NUM_MOVES, |_, s, _| if s == goal_index { 1.0 } else { 0.0 });
        let mut initial = vec![0.0; n];
        initial[start.1 * width + start.0] = 1.0;
        let mdp = TabularMdp::new(n, NUM_MOVES, horizon, transition, reward, initial)?;
        let expert = value_iteration(&mdp, mdp.true_reward())?.greedy;
        Ok(Self {
            width,
            height,
            goal,
            start,
            slip_prob,
            horizon,
            mdp,
            expert,
        })
    }

    pub fn tabular(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn goal_index(&self) -> usize {
        self.cell_index(self.goal.0, self.goal.1)
    }

    pub fn start_index(&self) -> usize {
        self.cell_index(self.start.0, self.start.1)
    }

    /// Observation of a cell: coordinates rescaled to `[-1, 1]`.
    pub fn observation(&self, cell: usize) -> Vec<f64> {
        let (x, y) = (cell % self.width, cell / self.width);
        vec![scale(x, self.width), scale(y, self.height)]
    }

    pub fn cell_of(&self, obs: &[f64]) -> usize {
        let x = unscale(obs[0], self.width);
        let y = unscale(obs[1], self.height);
        self.cell_index(x, y)
    }

    /// Maps a continuous command to a move: a small command means stay,
    /// otherwise the dominant axis decides (ties favour the horizontal axis).
    pub fn discretize(action: &[f64]) -> usize {
        let (ax, ay) = (action[0], action[1]);
        if ax.abs() < DEAD_ZONE && ay.abs() < DEAD_ZONE {
            STAY
        } else if ax.abs() >= ay.abs() {
            if ax > 0.0 {
                RIGHT
            } else {
                LEFT
            }
        } else if ay > 0.0 {
            UP
        } else {
            DOWN
        }
    }
}

fn move_cell(width: usize, height: usize, s: usize, a: usize) -> usize {
    let (x, y) = (s % width, s / width);
    let (nx, ny) = match a {
        RIGHT => ((x + 1).min(width - 1), y),
        UP => (x, (y + 1).min(height - 1)),
        LEFT => (x.saturating_sub(1), y),
        DOWN => (x, y.saturating_sub(1)),
        _ => (x, y),
    };
    ny * width + nx
}

fn scale(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

fn unscale(v: f64, n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (((v + 1.0) / 2.0 * (n - 1) as f64).round().max(0.0) as usize).min(n - 1)
    }
}

impl ControlEnv for GridWorld {
    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        1.0
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn fingerprint(&self) -> String {
        format!(
            "gridworld:{}x{}:goal{:?}:slip{}:H{}",
            self.width, self.height, self.goal, self.slip_prob, self.horizon
        )
    }

    fn initial_obs(&self, _rng: &mut Rng) -> Vec<f64> {
        self.observation(self.start_index())
    }

    fn reward(&self, obs: &[f64], _action: &[f64]) -> f64 {
        if self.cell_of(obs) == self.goal_index() {
            1.0
        } else {
            0.0
        }
    }

    fn next_obs(&self, obs: &[f64], action: &[f64], rng: &mut Rng) -> Vec<f64> {
        let cell = self.cell_of(obs);
        let n = self.width * self.height;
        let next = if self.slip_prob > 0.0 && rng.random::<f64>() < self.slip_prob {
            rng.random_range(0..n)
        } else {
            move_cell(self.width, self.height, cell, Self::discretize(action))
        };
        self.observation(next)
    }

    fn expert_action(&self, step: usize, obs: &[f64]) -> Vec<f64> {
        let a = self.expert.action(step - 1, self.cell_of(obs));
        MOVE_VECTORS[a].to_vec()
    }

    fn random_action(&self, rng: &mut Rng) -> Vec<f64> {
        MOVE_VECTORS[rng.random_range(0..NUM_MOVES)].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::control::run_episode;
    use crate::rng;

    /// Best return from the start by enumerating all move sequences.
    fn enumerate_best(grid: &GridWorld) -> f64 {
        let horizon = grid.horizon;
        let mut best = 0.0f64;
        for code in 0..NUM_MOVES.pow(horizon as u32) {
            let mut c = code;
            let mut s = grid.start_index();
            let mut total = 0.0;
            for _ in 0..horizon {
                if s == grid.goal_index() {
                    total += 1.0;
                }
                s = move_cell(grid.width, grid.height, s, c % NUM_MOVES);
                c /= NUM_MOVES;
            }
            best = best.max(total);
        }
        best
    }

    #[test]
    fn two_by_two_grid_has_positive_start_value() {
        let grid = GridWorld::new(2, 2, (1, 1), 0.0, 4).unwrap();
        assert_eq!(grid.tabular().num_states(), 4);
        let vt = value_iteration(grid.tabular(), grid.tabular().true_reward()).unwrap();
        let v = vt.v[0][grid.start_index()];
        assert!(v > 0.0);
        assert_eq!(v, enumerate_best(&grid));
        assert_eq!(v, 2.0);
    }

    #[test]
    fn full_slip_gives_uniform_rows() {
        let grid = GridWorld::new(3, 2, (2, 1), 1.0, 2).unwrap();
        for s in 0..6 {
            for a in 0..NUM_MOVES {
                for p in grid.tabular().transition_row(1, s, a) {
                    assert!((p - 1.0 / 6.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn observation_round_trips_to_cell() {
        let grid = GridWorld::new(8, 8, (7, 7), 0.0, 24).unwrap();
        for cell in 0..64 {
            assert_eq!(grid.cell_of(&grid.observation(cell)), cell);
        }
    }

    #[test]
    fn discretize_follows_dominant_axis() {
        assert_eq!(GridWorld::discretize(&[0.1, -0.2]), STAY);
        assert_eq!(GridWorld::discretize(&[0.9, 0.5]), RIGHT);
        assert_eq!(GridWorld::discretize(&[-0.9, 0.5]), LEFT);
        assert_eq!(GridWorld::discretize(&[0.2, 0.7]), UP);
        assert_eq!(GridWorld::discretize(&[0.2, -0.7]), DOWN);
        for (a, v) in MOVE_VECTORS.iter().enumerate() {
            assert_eq!(GridWorld::discretize(v), a);
        }
    }

    #[test]
    fn expert_rollout_attains_dp_value() {
        let grid = GridWorld::new(8, 8, (7, 7), 0.0, 24).unwrap();
        let vt = value_iteration(grid.tabular(), grid.tabular().true_reward()).unwrap();
        let mut r = rng::stream(0, "t", 0);
        let ep = run_episode(&grid, &mut r, |step, obs, _| Ok(grid.expert_action(step, obs))).unwrap();
        assert_eq!(ep.total_return(), vt.v[0][grid.start_index()]);
        assert_eq!(ep.total_return(), 10.0);
    }
}
