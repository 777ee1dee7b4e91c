use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::control::ControlEnv;
use super::gridworld::GridWorld;
use super::linear::{make_linear_mdp, LinearMdp};
use super::point_reach::{PointReach, PointReachKind};
use super::tabular::TabularMdp;

/// Declarative environment description, as found in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        width: usize,
        height: usize,
        goal: [usize; 2],
        #[serde(default)]
        slip_prob: f64,
        horizon: usize,
    },
    PointReach1d {
        horizon: usize,
        goal: f64,
        start: f64,
        action_bound: f64,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    PointReach2d {
        horizon: usize,
        goal: [f64; 2],
        start: [f64; 2],
        action_bound: f64,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    LinearMdp {
        feature_dim: usize,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        seed: u64,
    },
    RandomTabular {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        seed: u64,
    },
}

fn default_noise() -> f64 {
    0.01
}

impl EnvSpec {
    pub fn gridworld(width: usize, height: usize, goal: (usize, usize), slip_prob: f64, horizon: usize) -> Self {
        EnvSpec::Gridworld {
            width,
            height,
            goal: [goal.0, goal.1],
            slip_prob,
            horizon,
        }
    }

    pub fn point_reach_1d() -> Self {
        EnvSpec::PointReach1d {
            horizon: 20,
            goal: 0.6,
            start: -0.8,
            action_bound: 0.1,
            noise_std: default_noise(),
        }
    }

    pub fn point_reach_2d() -> Self {
        EnvSpec::PointReach2d {
            horizon: 20,
            goal: [0.6, 0.6],
            start: [-0.8, -0.8],
            action_bound: 0.1,
            noise_std: default_noise(),
        }
    }
}

/// A constructed environment.
#[derive(Debug, Clone)]
pub enum Environment {
    Grid(GridWorld),
    Point(PointReach),
    Linear(LinearMdp),
    Tabular(TabularMdp),
}

impl Environment {
    /// Continuous-action interface, when the environment has one.
    pub fn control(&self) -> Option<&dyn ControlEnv> {
        match self {
            Environment::Grid(g) => Some(g),
            Environment::Point(p) => Some(p),
            Environment::Linear(_) | Environment::Tabular(_) => None,
        }
    }

    /// Exact tabular model, when the environment has one.
    pub fn tabular(&self) -> Option<TabularMdp> {
        match self {
            Environment::Grid(g) => Some(g.tabular().clone()),
            Environment::Tabular(t) => Some(t.clone()),
            Environment::Linear(l) => l.to_tabular().ok(),
            Environment::Point(_) => None,
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Environment::Grid(g) => g.fingerprint(),
            Environment::Point(p) => p.fingerprint(),
            Environment::Linear(l) => l.fingerprint(),
            Environment::Tabular(t) => t.fingerprint("tabular"),
        }
    }
}

pub fn make_env(spec: &EnvSpec) -> Result<Environment> {
    let env = match spec {
        EnvSpec::Gridworld {
            width,
            height,
            goal,
            slip_prob,
            horizon,
        } => Environment::Grid(GridWorld::new(*width, *height, (goal[0], goal[1]), *slip_prob, *horizon)?),
        EnvSpec::PointReach1d {
            horizon,
            goal,
            start,
            action_bound,
            noise_std,
        } => Environment::Point(PointReach::new(
            PointReachKind::PointReach1D,
            *horizon,
            vec![*goal],
            vec![*start],
            *action_bound,
            *noise_std,
        )?),
        EnvSpec::PointReach2d {
            horizon,
            goal,
            start,
            action_bound,
            noise_std,
        } => Environment::Point(PointReach::new(
            PointReachKind::PointReach2D,
            *horizon,
            goal.to_vec(),
            start.to_vec(),
            *action_bound,
            *noise_std,
        )?),
        EnvSpec::LinearMdp {
            feature_dim,
            num_states,
            num_actions,
            horizon,
            seed,
        } => Environment::Linear(make_linear_mdp(*feature_dim, *num_states, *num_actions, *horizon, *seed)?),
        EnvSpec::RandomTabular {
            num_states,
            num_actions,
            horizon,
            seed,
        } => {
            let mut r = rng::stream(*seed, "random_tabular", 0);
            Environment::Tabular(TabularMdp::random(*num_states, *num_actions, *horizon, &mut r)?)
        }
    };
    Ok(env)
}

/// Parses an environment spec from TOML; unknown kinds are config errors.
pub fn parse_env_spec(text: &str) -> Result<EnvSpec> {
    toml::from_str(text).map_err(|e| Error::config("env", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_a_config_error() {
        let err = parse_env_spec("kind = \"mujoco_hopper\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = "kind = \"gridworld\"\nwidth = 2\nheight = 2\ngoal = [1, 1]\nhorizon = 3\ncolour = 4\n";
        assert!(parse_env_spec(text).is_err());
    }

    #[test]
    fn specs_build_their_environments() {
        let grid = make_env(&EnvSpec::gridworld(2, 2, (1, 1), 0.0, 3)).unwrap();
        assert_eq!(grid.tabular().unwrap().num_states(), 4);
        assert!(grid.control().is_some());
        let point = make_env(&EnvSpec::point_reach_1d()).unwrap();
        assert!(point.tabular().is_none());
        assert_eq!(point.control().unwrap().obs_dim(), 1);
        let spec =
            parse_env_spec("kind = \"linear_mdp\"\nfeature_dim = 3\nnum_states = 5\nnum_actions = 2\nhorizon = 3\nseed = 1\n").unwrap();
        assert!(matches!(make_env(&spec).unwrap(), Environment::Linear(_)));
    }
}
