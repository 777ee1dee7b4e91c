//! Critic-guided selection over an expanded policy set.

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::offline::agent::hstack;
use crate::rng::Rng;

/// Frozen behaviors followed by the single trainable policy.
#[derive(Debug, Clone, Copy)]
pub struct ExpandedPolicy<'a> {
    pub frozen: &'a [Mlp],
    pub trainable: &'a Mlp,
    /// Softmax temperature applied to critic values.
    pub alpha: f64,
}

impl ExpandedPolicy<'_> {
    pub fn len(&self) -> usize {
        self.frozen.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn trainable_index(&self) -> usize {
        self.frozen.len()
    }

    pub fn candidate(&self, i: usize) -> &Mlp {
        if i < self.frozen.len() {
            &self.frozen[i]
        } else {
            self.trainable
        }
    }

    /// Proposed actions of every candidate at `state`, one row each.
    pub fn candidate_actions(&self, state: &[f64]) -> Result<DMatrix<f64>> {
        let s = DMatrix::from_row_slice(1, state.len(), state);
        let rows: Vec<DMatrix<f64>> = (0..self.len()).map(|i| self.candidate(i).forward(&s)).collect::<Result<_>>()?;
        let da = rows[0].ncols();
        Ok(DMatrix::from_fn(rows.len(), da, |i, j| rows[i][(0, j)]))
    }

    /// Candidate actions and their critic values at `state`.
    pub fn evaluate(&self, critic: &Mlp, state: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let actions = self.candidate_actions(state)?;
        let states = DMatrix::from_fn(actions.nrows(), state.len(), |_, j| state[j]);
        let q = critic.forward(&hstack(&states, &actions))?;
        Ok((actions, q.column(0).iter().copied().collect()))
    }
}

/// `P[i] ∝ exp(α·q[i])`, computed after subtracting the maximum.
pub fn softmax_probs(q: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(Error::Selection("no candidates".into()));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Selection(format!("temperature {alpha} must be finite and ≥ 0")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Selection("non-finite critic value".into()));
    }
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|v| (alpha * (v - m)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub action: Vec<f64>,
}

/// Samples a candidate from the critic softmax.
pub fn select_policy(expanded: &ExpandedPolicy, critic: &Mlp, state: &[f64], rng: &mut Rng) -> Result<Selection> {
    let (actions, q) = expanded.evaluate(critic, state)?;
    let probs = softmax_probs(&q, expanded.alpha)?;
    let index = sample_categorical(&probs, rng);
    Ok(Selection {
        index,
        action: actions.row(index).iter().copied().collect(),
    })
}

/// Hard selection on precomputed values: the best candidate (lowest index on
/// ties) when it beats the trainable one by strictly more than `margin`,
/// otherwise the trainable one.
pub fn cup_index(q: &[f64], margin: f64) -> Result<usize> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Selection("non-finite critic value".into()));
    }
    let trainable = q.len() - 1;
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    Ok(if q[best] - q[trainable] > margin { best } else { trainable })
}

pub fn cup_select(expanded: &ExpandedPolicy, critic: &Mlp, state: &[f64], margin: f64) -> Result<Selection> {
    let (actions, q) = expanded.evaluate(critic, state)?;
    let index = cup_index(&q, margin)?;
    Ok(Selection {
        index,
        action: actions.row(index).iter().copied().collect(),
    })
}
