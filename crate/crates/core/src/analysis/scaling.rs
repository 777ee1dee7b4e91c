use rayon::prelude::*;

use crate::dataset::{collect_tabular, BehaviorPolicySpec};
use crate::error::{Error, Result};
use crate::mdp::{suboptimality, LinearMdp, RewardTable};
use crate::offline::{pevi_train, PessimismConfig};
use crate::rng;

use super::metrics::median;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingStudy {
    pub ns: Vec<usize>,
    /// `suboptimality[i][j]` for `ns[i]` and seed index `j`.
    pub suboptimality: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    /// Least-squares slope of `ln median` against `ln N`; `None` when some
    /// median is zero.
    pub slope: Option<f64>,
}

impl ScalingStudy {
    pub fn medians_non_increasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Runs pessimistic value iteration on `N` episodes of `behavior` data for
/// every `N` in `ns` and every seed, labeling data with `reward`, and
/// measures exact suboptimality under `reward` from the start state.
pub fn suboptimality_scaling(
    mdp: &LinearMdp,
    reward: &RewardTable,
    behavior: &BehaviorPolicySpec,
    ns: &[usize],
    seeds: &[u64],
    pessimism: &PessimismConfig,
) -> Result<ScalingStudy> {
    if ns.len() < 3 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("scaling study needs at least three increasing dataset sizes"));
    }
    if seeds.is_empty() {
        return Err(Error::input("scaling study needs at least one seed"));
    }
    let tab = mdp.to_tabular()?;
    let fingerprint = mdp.fingerprint();
    let jobs: Vec<(usize, u64)> = ns.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let gaps: Vec<f64> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let data_seed = rng::child_seed(seed, "scaling-data", n as u64);
            let mut data = collect_tabular(&tab, &fingerprint, behavior, n, data_seed)?;
            for t in data.transitions.iter_mut() {
                t.reward = Some(reward.get(t.step - 1, t.state[0] as usize, t.action[0] as usize));
            }
            let out = pevi_train(&data, mdp, pessimism)?;
            suboptimality(&tab, &out.values.greedy.clone().into(), reward, mdp.start_state())
        })
        .collect::<Result<_>>()?;
    let suboptimality: Vec<Vec<f64>> = gaps.chunks(seeds.len()).map(|c| c.to_vec()).collect();
    let medians: Vec<f64> = suboptimality.iter().map(|row| median(row)).collect();
    let slope = if medians.iter().all(|m| *m > 0.0) {
        let lx: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
        let ly: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
        Some(ls_slope(&lx, &ly))
    } else {
        None
    };
    Ok(ScalingStudy {
        ns: ns.to_vec(),
        suboptimality,
        medians,
        slope,
    })
}
