use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::{Dataset, Space};
use crate::error::{Error, Result};
use crate::mdp::{occupancy, LinearMdp, TabularMdp, TabularPolicy};

/// A coverage coefficient, or the flag that the target visits a step-state-
/// action triple absent from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coverage {
    Finite(f64),
    Uncovered,
}

impl Coverage {
    pub fn value(&self) -> f64 {
        match self {
            Coverage::Finite(v) => *v,
            Coverage::Uncovered => f64::INFINITY,
        }
    }

    pub fn value_if_finite(&self) -> Option<f64> {
        match self {
            Coverage::Finite(v) => Some(*v),
            Coverage::Uncovered => None,
        }
    }
}

fn discrete_sizes(dataset: &Dataset, num_states: usize, num_actions: usize, horizon: usize) -> Result<()> {
    if dataset.state_space != (Space::Discrete { n: num_states }) || dataset.action_space != (Space::Discrete { n: num_actions }) {
        return Err(Error::input("dataset spaces do not match the MDP"));
    }
    if dataset.horizon != horizon {
        return Err(Error::input("dataset horizon does not match the MDP"));
    }
    Ok(())
}

/// Per-step empirical distribution `ρ̂_h(s, a)`, laid out `[h][s][a]`.
pub fn empirical_distribution(dataset: &Dataset, num_states: usize, num_actions: usize) -> Vec<Vec<Vec<f64>>> {
    let mut counts = vec![vec![vec![0.0; num_actions]; num_states]; dataset.horizon];
    let mut totals = vec![0.0; dataset.horizon];
    for t in &dataset.transitions {
        counts[t.step - 1][t.state[0] as usize][t.action[0] as usize] += 1.0;
        totals[t.step - 1] += 1.0;
    }
    for (h, step) in counts.iter_mut().enumerate() {
        if totals[h] > 0.0 {
            step.iter_mut().flatten().for_each(|c| *c /= totals[h]);
        }
    }
    counts
}

/// `max_{h,s,a: d_π > 0} d_{π,h}(s,a) / ρ̂_h(s,a)`.
pub fn coverage_tabular(mdp: &TabularMdp, target: &TabularPolicy, dataset: &Dataset) -> Result<Coverage> {
    discrete_sizes(dataset, mdp.num_states(), mdp.num_actions(), mdp.horizon())?;
    let d = occupancy(mdp, target)?;
    let rho = empirical_distribution(dataset, mdp.num_states(), mdp.num_actions());
    let mut worst: f64 = 0.0;
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                if d[h][s][a] > 0.0 {
                    if rho[h][s][a] == 0.0 {
                        return Ok(Coverage::Uncovered);
                    }
                    worst = worst.max(d[h][s][a] / rho[h][s][a]);
                }
            }
        }
    }
    Ok(Coverage::Finite(worst))
}

/// Largest generalized eigenvalue of `(Σ_{π,h}, Σ_{ρ̂,h} + 1e-9·I)`,
/// maximized over steps. Both covariances are second moments of `φ(s, a)`.
pub fn coverage_linear(mdp: &LinearMdp, target: &TabularPolicy, dataset: &Dataset) -> Result<Coverage> {
    let (n_s, n_a, horizon, dim) = (mdp.num_states(), mdp.num_actions(), mdp.horizon(), mdp.feature_dim());
    discrete_sizes(dataset, n_s, n_a, horizon)?;
    let tab = mdp.to_tabular()?;
    let d = occupancy(&tab, target)?;
    let rho = empirical_distribution(dataset, n_s, n_a);
    let mut worst: f64 = 0.0;
    for h in 0..horizon {
        let mut sigma_pi = DMatrix::zeros(dim, dim);
        let mut sigma_rho = DMatrix::identity(dim, dim) * 1e-9;
        for s in 0..n_s {
            for a in 0..n_a {
                let phi = DVector::from_column_slice(mdp.feature(s, a));
                if d[h][s][a] > 0.0 {
                    sigma_pi.ger(d[h][s][a], &phi, &phi, 1.0);
                }
                if rho[h][s][a] > 0.0 {
                    sigma_rho.ger(rho[h][s][a], &phi, &phi, 1.0);
                }
            }
        }
        let l = sigma_rho
            .cholesky()
            .ok_or_else(|| Error::Numerical("data covariance is not positive definite".into()))?
            .l();
        let l_inv = l
            .try_inverse()
            .ok_or_else(|| Error::Numerical("data covariance factor is singular".into()))?;
        let m = &l_inv * sigma_pi * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let top = SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(top);
    }
    Ok(Coverage::Finite(worst))
}
