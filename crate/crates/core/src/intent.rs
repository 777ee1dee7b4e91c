//! Random intent priors: randomly initialised reward networks, dataset
//! relabeling, and diagnostics of how well the random rewards span the true
//! reward on a dataset.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{append_provenance, Dataset};
use crate::error::{Error, Result};
use crate::mdp::{ControlEnv, Environment, TabularMdp};
use crate::neural::{batch_from_rows, InitScheme, Mlp, OutputActivation};
use crate::rng;

const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    Tanh,
    None,
}

/// Distribution over reward networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub num_intents: usize,
    pub hidden_dims: Vec<usize>,
    pub init_scheme: InitScheme,
    pub output_squash: Squash,
    pub master_seed: u64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            num_intents: 256,
            hidden_dims: vec![256, 256],
            init_scheme: InitScheme::GlorotUniform,
            output_squash: Squash::Tanh,
            master_seed: 0,
        }
    }
}

impl PriorSpec {
    pub fn desk() -> Self {
        Self {
            num_intents: 16,
            hidden_dims: vec![64, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_intents == 0 {
            return Err(Error::config("intent.num_intents", "must be ≥ 1"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::config("intent.hidden_dims", "must be a non-empty list of positive widths"));
        }
        Ok(())
    }
}

/// One sampled intent: a frozen reward network over encoded `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentReward {
    pub intent_id: usize,
    net: Mlp,
}

impl IntentReward {
    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn evaluate(&self, input: &[f64]) -> Result<f64> {
        Ok(self.net.forward_one(input)?[0])
    }

    pub fn evaluate_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_CHUNK) {
            let y = self.net.forward(&batch_from_rows(chunk))?;
            out.extend(y.column(0).iter());
        }
        Ok(out)
    }
}

/// Intent `i`, drawn from its own stream of the master seed.
pub fn sample_intent(prior: &PriorSpec, input_dim: usize, intent_id: usize) -> Result<IntentReward> {
    let mut dims = Vec::with_capacity(prior.hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend(&prior.hidden_dims);
    dims.push(1);
    let output = match prior.output_squash {
        Squash::Tanh => OutputActivation::Tanh,
        Squash::None => OutputActivation::None,
    };
    let mut r = rng::stream(prior.master_seed, "intent", intent_id as u64);
    let net = Mlp::new(&dims, output, 1.0, prior.init_scheme, &mut r)?;
    Ok(IntentReward { intent_id, net })
}

pub fn sample_intents(prior: &PriorSpec, input_dim: usize) -> Result<Vec<IntentReward>> {
    prior.validate()?;
    (0..prior.num_intents).map(|i| sample_intent(prior, input_dim, i)).collect()
}

/// Ground-truth reward as a function of `(one-based step, state, action)`.
pub trait TrueReward {
    fn true_reward(&self, step: usize, state: &[f64], action: &[f64]) -> f64;
}

impl TrueReward for TabularMdp {
    fn true_reward(&self, step: usize, state: &[f64], action: &[f64]) -> f64 {
        self.true_reward().get(step - 1, state[0] as usize, action[0] as usize)
    }
}

impl TrueReward for Environment {
    fn true_reward(&self, step: usize, state: &[f64], action: &[f64]) -> f64 {
        match self {
            Environment::Grid(g) => g.reward(state, action),
            Environment::Point(p) => p.reward(state, action),
            Environment::Tabular(t) => TrueReward::true_reward(t, step, state, action),
            Environment::Linear(l) => l.reward(step - 1, state[0] as usize, action[0] as usize).clamp(0.0, 1.0),
        }
    }
}

/// Where relabeled rewards come from.
pub enum RewardSource<'a> {
    Intent(&'a IntentReward),
    Zero,
    /// Mean reward of a labeled source dataset, applied to every transition.
    ConstantAvg(&'a Dataset),
    TrueEnv(&'a dyn TrueReward),
}

/// Returns a labeled copy of `dataset` with rewards from `source`; every
/// other field and the transition order are unchanged.
pub fn relabel(dataset: &Dataset, source: &RewardSource) -> Result<Dataset> {
    let (rewards, note): (Vec<f64>, String) = match source {
        RewardSource::Intent(intent) => {
            let pairs = dataset.encoded_pairs();
            if pairs.first().is_some_and(|p| p.len() != intent.input_dim()) {
                return Err(Error::input("intent input width does not match the dataset encoding"));
            }
            (intent.evaluate_rows(&pairs)?, format!("relabel(intent {})", intent.intent_id))
        }
        RewardSource::Zero => (vec![0.0; dataset.len()], "relabel(zero)".into()),
        RewardSource::ConstantAvg(source) => {
            if !source.labeled || source.is_empty() {
                return Err(Error::input("average-reward relabeling needs a non-empty labeled source"));
            }
            let r = source.rewards()?;
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            (vec![mean; dataset.len()], format!("relabel(constant_avg {mean:e})"))
        }
        RewardSource::TrueEnv(env) => (
            dataset
                .transitions
                .iter()
                .map(|t| env.true_reward(t.step, &t.state, &t.action))
                .collect(),
            "relabel(true_env)".into(),
        ),
    };
    let mut out = dataset.clone();
    out.labeled = true;
    for (t, r) in out.transitions.iter_mut().zip(rewards) {
        t.reward = Some(r);
    }
    out.provenance = append_provenance(&dataset.provenance, &note);
    Ok(out)
}

/// Optional z-score transform of a labeled dataset's rewards.
pub fn standardize_rewards(dataset: &Dataset) -> Result<Dataset> {
    let r = dataset.rewards()?;
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let std = (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let mut out = dataset.clone();
    for t in out.transitions.iter_mut() {
        let x = t.reward.unwrap();
        t.reward = Some(if std > 0.0 { (x - mean) / std } else { 0.0 });
    }
    out.provenance = append_provenance(&dataset.provenance, "standardized");
    Ok(out)
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageReport {
    pub correlations: Vec<f64>,
    pub max_correlation: f64,
    pub min_correlation: f64,
    pub projection_error: Option<f64>,
    pub ridge_weights: Vec<f64>,
    pub ridge_lambda: Option<f64>,
}

impl CoverageReport {
    /// Flat CSV: one row per intent, then a summary row.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\nintent_id,correlation,max_correlation,min_correlation,epsilon,lambda\n");
        for (i, c) in self.correlations.iter().enumerate() {
            let _ = writeln!(out, "{i},{c:.16e},,,,");
        }
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "summary,,{:.16e},{:.16e},{},{}",
            self.max_correlation,
            self.min_correlation,
            opt(self.projection_error),
            opt(self.ridge_lambda)
        );
        out
    }
}

/// `M × N` matrix of intent rewards on every dataset `(s, a)` pair.
pub fn intent_feature_matrix(intents: &[IntentReward], dataset: &Dataset) -> Result<DMatrix<f64>> {
    let pairs = dataset.encoded_pairs();
    let mut m = DMatrix::zeros(pairs.len(), intents.len());
    for (j, intent) in intents.iter().enumerate() {
        let col = intent.evaluate_rows(&pairs)?;
        m.column_mut(j).copy_from_slice(&col);
    }
    Ok(m)
}

fn true_rewards_checked(dataset: &Dataset) -> Result<Vec<f64>> {
    if dataset.len() < 2 {
        return Err(Error::input("coverage diagnostics need at least two transitions"));
    }
    let r = dataset.rewards()?;
    let first = r[0];
    if r.iter().all(|x| *x == first) {
        return Err(Error::input("true reward has zero variance on the dataset"));
    }
    Ok(r)
}

pub fn correlations_from_features(features: &DMatrix<f64>, target: &[f64]) -> CoverageReport {
    let correlations: Vec<f64> = features.column_iter().map(|c| pearson(c.as_slice(), target)).collect();
    let max_correlation = correlations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_correlation = correlations.iter().cloned().fold(f64::INFINITY, f64::min);
    CoverageReport {
        correlations,
        max_correlation,
        min_correlation,
        ..Default::default()
    }
}

/// Per-intent Pearson correlation with the true reward over the dataset.
pub fn reward_correlation(intents: &[IntentReward], true_labeled: &Dataset) -> Result<CoverageReport> {
    let target = true_rewards_checked(true_labeled)?;
    let features = intent_feature_matrix(intents, true_labeled)?;
    Ok(correlations_from_features(&features, &target))
}

/// Ridge fit of `target` on the columns of `features`. Returns the weights
/// and the relative residual `‖r − r̂‖ / ‖r‖`.
pub fn ridge_fit(features: &DMatrix<f64>, target: &[f64], lambda: f64) -> Result<(DVector<f64>, f64)> {
    let gram = features.transpose() * features;
    let rhs = features.transpose() * DVector::from_column_slice(target);
    let w = solve_ridge(&gram, &rhs, lambda)?;
    Ok((w.clone(), relative_residual(features, &w, target)))
}

fn solve_ridge(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::input("ridge lambda must be positive"));
    }
    let n = gram.nrows();
    let system = gram + DMatrix::identity(n, n) * lambda;
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge normal equations are not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

fn relative_residual(features: &DMatrix<f64>, w: &DVector<f64>, target: &[f64]) -> f64 {
    let fitted = features * w;
    let num: f64 = fitted.iter().zip(target).map(|(f, r)| (r - f) * (r - f)).sum();
    let den: f64 = target.iter().map(|r| r * r).sum();
    (num / den).sqrt()
}

/// Projection error of the true reward onto the span of the intent rewards.
pub fn ridge_projection_error(intents: &[IntentReward], true_labeled: &Dataset, ridge_lambda: f64) -> Result<CoverageReport> {
    let target = true_rewards_checked(true_labeled)?;
    let features = intent_feature_matrix(intents, true_labeled)?;
    let mut report = correlations_from_features(&features, &target);
    let (w, eps) = ridge_fit(&features, &target, ridge_lambda)?;
    report.projection_error = Some(eps);
    report.ridge_weights = w.iter().copied().collect();
    report.ridge_lambda = Some(ridge_lambda);
    Ok(report)
}

/// Projection errors for nested intent sets given by the first `n` columns
/// of `features`, for each `n` in `sizes`. The Gram matrix is formed once.
pub fn nested_projection_errors(features: &DMatrix<f64>, target: &[f64], lambda: f64, sizes: &[usize]) -> Result<Vec<f64>> {
    let gram = features.transpose() * features;
    let rhs = features.transpose() * DVector::from_column_slice(target);
    sizes
        .iter()
        .map(|&n| {
            if n == 0 || n > features.ncols() {
                return Err(Error::input(format!("nested size {n} out of range")));
            }
            let g = gram.view((0, 0), (n, n)).into_owned();
            let b = rhs.rows(0, n).into_owned();
            let w = solve_ridge(&g, &b, lambda)?;
            Ok(relative_residual(&features.columns(0, n).into_owned(), &w, target))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_control, strip_rewards, BehaviorPolicySpec};
    use crate::mdp::{PointReach, PointReachKind};

    fn point_data(episodes: usize) -> (PointReach, Dataset) {
        let env = PointReach::new(PointReachKind::PointReach1D, 20, vec![0.6], vec![-0.8], 0.1, 0.01).unwrap();
        let d = collect_control(&env, &BehaviorPolicySpec::tier("medium").unwrap(), episodes, 7).unwrap();
        (env, d)
    }

    fn small_prior(n: usize, seed: u64) -> PriorSpec {
        PriorSpec {
            num_intents: n,
            hidden_dims: vec![16, 16],
            master_seed: seed,
            ..PriorSpec::default()
        }
    }

    #[test]
    fn sampling_is_reproducible_and_prefix_stable() {
        let a = sample_intents(&small_prior(16, 3), 2).unwrap();
        let b = sample_intents(&small_prior(16, 3), 2).unwrap();
        assert_eq!(a, b);
        let one = sample_intents(&small_prior(1, 3), 2).unwrap();
        assert_eq!(one[0], a[0]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn relabel_modes() {
        let (env, d) = point_data(5);
        let (stripped, _) = strip_rewards(&d);
        let zero = relabel(&stripped, &RewardSource::Zero).unwrap();
        assert!(zero.transitions.iter().all(|t| t.reward == Some(0.0)));

        let intent = sample_intent(&small_prior(1, 0), 2, 0).unwrap();
        let rel = relabel(&stripped, &RewardSource::Intent(&intent)).unwrap();
        assert!(rel.transitions.iter().all(|t| t.reward.unwrap().abs() < 1.0));
        for (a, b) in rel.transitions.iter().zip(&d.transitions) {
            assert_eq!(
                (a.episode_id, a.step, &a.state, &a.action, &a.next_state, a.done),
                (b.episode_id, b.step, &b.state, &b.action, &b.next_state, b.done)
            );
        }

        let env = Environment::Point(env);
        let back = relabel(&stripped, &RewardSource::TrueEnv(&env)).unwrap();
        assert_eq!(back.transitions, d.transitions);
        assert!(back.labeled);

        let avg = relabel(&stripped, &RewardSource::ConstantAvg(&d)).unwrap();
        let mean = d.rewards().unwrap().iter().sum::<f64>() / d.len() as f64;
        assert!(avg.transitions.iter().all(|t| t.reward == Some(mean)));
        assert!(matches!(
            relabel(&stripped, &RewardSource::ConstantAvg(&stripped)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn standardized_rewards_have_unit_scale() {
        let (_, d) = point_data(5);
        let s = standardize_rewards(&d).unwrap();
        let r = s.rewards().unwrap();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negated_true_reward_has_correlation_minus_one() {
        let (_, d) = point_data(4);
        let r = d.rewards().unwrap();
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        assert!((pearson(&neg, &r) + 1.0).abs() < 1e-12);
        let features = DMatrix::from_column_slice(r.len(), 1, &neg);
        let report = correlations_from_features(&features, &r);
        assert!((report.min_correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_with_true_reward_in_span_is_exact() {
        let (_, d) = point_data(10);
        let r = d.rewards().unwrap();
        let intents = sample_intents(&small_prior(4, 1), 2).unwrap();
        let mut f = intent_feature_matrix(&intents, &d).unwrap();
        f = f.insert_column(2, 0.0);
        f.column_mut(2).copy_from_slice(&r);
        let (_, eps) = ridge_fit(&f, &r, 1e-12).unwrap();
        assert!(eps <= 1e-6, "{eps}");
    }

    #[test]
    fn zero_intent_leaves_full_error() {
        let (_, d) = point_data(3);
        let r = d.rewards().unwrap();
        let f = DMatrix::zeros(r.len(), 1);
        let (w, eps) = ridge_fit(&f, &r, 1e-3).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(eps, 1.0);
    }

    /// Plain gradient descent on the ridge objective, independent of the
    /// normal-equation solver.
    fn gradient_descent_ridge(f: &DMatrix<f64>, r: &[f64], lambda: f64) -> f64 {
        let n = f.ncols();
        let target = DVector::from_column_slice(r);
        let gram = f.transpose() * f;
        // step size from a power-iteration bound on the largest eigenvalue
        let mut v = DVector::from_element(n, 1.0);
        for _ in 0..200 {
            v = &gram * &v;
            v /= v.norm();
        }
        let l = (v.transpose() * &gram * &v)[(0, 0)] + lambda;
        let mut w = DVector::zeros(n);
        for _ in 0..200_000 {
            let grad = f.transpose() * (f * &w - &target) + &w * lambda;
            w -= grad / l;
        }
        let fitted = f * &w;
        ((fitted - &target).norm_squared() / target.norm_squared()).sqrt()
    }

    #[test]
    fn normal_equations_match_gradient_descent() {
        let (_, d) = point_data(10);
        let r = d.rewards().unwrap();
        let intents = sample_intents(&small_prior(4, 2), 2).unwrap();
        let f = intent_feature_matrix(&intents, &d).unwrap();
        let lambda = 1e-3 * d.len() as f64;
        let (_, eps) = ridge_fit(&f, &r, lambda).unwrap();
        let oracle = gradient_descent_ridge(&f, &r, lambda);
        assert!((eps - oracle).abs() < 1e-6, "{eps} vs {oracle}");
    }

    #[test]
    fn nested_errors_agree_with_direct_fits() {
        let (_, d) = point_data(10);
        let r = d.rewards().unwrap();
        let intents = sample_intents(&small_prior(8, 4), 2).unwrap();
        let f = intent_feature_matrix(&intents, &d).unwrap();
        let nested = nested_projection_errors(&f, &r, 0.2, &[2, 4, 8]).unwrap();
        for (k, n) in [2usize, 4, 8].iter().enumerate() {
            let direct = ridge_fit(&f.columns(0, *n).into_owned(), &r, 0.2).unwrap().1;
            assert!((nested[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_true_reward_is_rejected() {
        let (_, d) = point_data(2);
        let zero = relabel(&d, &RewardSource::Zero).unwrap();
        let intents = sample_intents(&small_prior(2, 0), 2).unwrap();
        assert!(reward_correlation(&intents, &zero).is_err());
    }

    #[test]
    fn csv_has_summary_row() {
        let report = CoverageReport {
            correlations: vec![0.5, -0.25],
            max_correlation: 0.5,
            min_correlation: -0.25,
            projection_error: Some(0.1),
            ridge_weights: vec![],
            ridge_lambda: Some(2.0),
        };
        let csv = report.to_csv("h");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("summary,,5.0"));
    }
}
