//! Diagnostics: return distributions, entropy, normalized scores, coverage
//! coefficients, and suboptimality scaling.

mod coverage;
mod metrics;
mod returns;
mod scaling;

pub use coverage::{coverage_linear, coverage_tabular, empirical_distribution, Coverage};
pub use metrics::{csv_document, entropy, median, metrics_jsonl, normalized_score, quantile, MetricsRecord};
pub use returns::{evaluate_policy, mean_control_return, reference_returns, return_distribution, References, ReturnDistribution};
pub use scaling::{ls_slope, suboptimality_scaling, ScalingStudy};
