//! Environment models and exact dynamic-programming oracles.

pub mod control;
pub mod dp;
pub mod env;
pub mod gridworld;
pub mod linear;
pub mod point_reach;
pub mod tabular;

pub use control::{run_episode, ControlEnv, Episode, RolloutStep, StepOutcome};
pub use dp::{indicator_reward_for_policy, occupancy, policy_evaluation, suboptimality, value_iteration, ValueTables};
pub use env::{make_env, EnvSpec, Environment};
pub use gridworld::GridWorld;
pub use linear::{make_linear_mdp, LinearMdp};
pub use point_reach::{PointReach, PointReachKind};
pub use tabular::{DeterministicPolicy, RewardTable, StochasticPolicy, TabularMdp, TabularPolicy};
