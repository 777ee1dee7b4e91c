//! Offline training: behavior-regularized actor-critic, behavior cloning,
//! pessimistic value iteration, and per-intent behavior extraction.

pub mod agent;
mod behavior;
mod pevi;
mod td3bc;

pub use behavior::{
    extract_behavior_set, extract_behavior_set_with, extract_one, extract_to_dir, Backend, Behavior, BehaviorPolicy, BehaviorSet,
    ExtractionSpec, RewardMode,
};
pub use pevi::{pevi_train, PessimismConfig, PeviOutput};
pub use td3bc::{act, bc_train, td3bc_train, OfflineConfig, Td3bcOutput};
