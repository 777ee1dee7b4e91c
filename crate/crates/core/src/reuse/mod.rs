//! Online reuse of extracted behaviors: critic-guided selection, replay, and
//! the online actor-critic loop.

mod online;
mod replay;
mod selector;

pub use online::{online_train, steps_to_threshold, CurvePoint, LearningCurve, OnlineConfig, OnlineOutput, SelectorKind, CURVE_COLUMNS};
pub use replay::ReplayBuffer;
pub use selector::{cup_index, cup_select, sample_categorical, select_policy, softmax_probs, ExpandedPolicy, Selection};
