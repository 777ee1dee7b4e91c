//! Logged transitions, data collection and the line-delimited file format.

mod collect;
pub mod io;

pub use collect::{collect_control, collect_tabular, BehaviorPolicySpec};
pub use io::{load, load_expecting, save};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Shape of a state or action field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Space {
    /// A single index stored as a one-element vector.
    Discrete {
        n: usize,
    },
    Box {
        dim: usize,
        bound: f64,
    },
}

impl Space {
    /// Width of the raw stored vector.
    pub fn stored_dim(&self) -> usize {
        match self {
            Space::Discrete { .. } => 1,
            Space::Box { dim, .. } => *dim,
        }
    }

    /// Width of the network-facing encoding (one-hot for discrete spaces).
    pub fn encoded_dim(&self) -> usize {
        match self {
            Space::Discrete { n } => *n,
            Space::Box { dim, .. } => *dim,
        }
    }

    pub fn encode_into(&self, value: &[f64], out: &mut Vec<f64>) {
        match self {
            Space::Discrete { n } => {
                let idx = value[0] as usize;
                out.extend((0..*n).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
            Space::Box { .. } => out.extend_from_slice(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode_id: u64,
    /// One-based step within the episode.
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: Option<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env_fingerprint: String,
    pub labeled: bool,
    pub horizon: usize,
    pub state_space: Space,
    pub action_space: Space,
    pub provenance: String,
    pub config_hash: Option<String>,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn empty(env_fingerprint: impl Into<String>, horizon: usize, state_space: Space, action_space: Space, labeled: bool) -> Self {
        Self {
            env_fingerprint: env_fingerprint.into(),
            labeled,
            horizon,
            state_space,
            action_space,
            provenance: String::new(),
            config_hash: None,
            transitions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes().count()
    }

    /// Consecutive runs of transitions sharing an episode id.
    pub fn episodes(&self) -> impl Iterator<Item = &[Transition]> {
        self.transitions.chunk_by(|a, b| a.episode_id == b.episode_id)
    }

    pub fn rewards(&self) -> Result<Vec<f64>> {
        self.transitions
            .iter()
            .map(|t| t.reward.ok_or_else(|| Error::input("dataset is not labeled")))
            .collect()
    }

    /// Sum of rewards per episode, in episode order.
    pub fn episode_returns(&self) -> Result<Vec<f64>> {
        if !self.labeled {
            return Err(Error::input("dataset is not labeled"));
        }
        Ok(self.episodes().map(|ep| ep.iter().map(|t| t.reward.unwrap_or(0.0)).sum()).collect())
    }

    /// Network-facing encoding of `(state, action)` for every transition.
    pub fn encoded_pairs(&self) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .map(|t| {
                let mut v = Vec::with_capacity(self.state_space.encoded_dim() + self.action_space.encoded_dim());
                self.state_space.encode_into(&t.state, &mut v);
                self.action_space.encode_into(&t.action, &mut v);
                v
            })
            .collect()
    }

    /// Checks labeling consistency, shapes and episode integrity: steps run
    /// 1..=H in order, `done` marks the last one, and consecutive steps chain.
    pub fn validate(&self) -> Result<()> {
        let (sd, ad) = (self.state_space.stored_dim(), self.action_space.stored_dim());
        for (i, t) in self.transitions.iter().enumerate() {
            if t.reward.is_some() != self.labeled {
                return Err(Error::Validation(format!(
                    "transition {i}: reward presence disagrees with labeled flag"
                )));
            }
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::Validation(format!("transition {i}: field shape mismatch")));
            }
            let finite = t
                .state
                .iter()
                .chain(&t.action)
                .chain(&t.next_state)
                .chain(t.reward.iter())
                .all(|x| x.is_finite());
            if !finite {
                return Err(Error::Validation(format!("transition {i}: non-finite value")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for ep in self.episodes() {
            let id = ep[0].episode_id;
            if !seen.insert(id) {
                return Err(Error::Validation(format!("episode {id} is split")));
            }
            if ep.len() != self.horizon {
                return Err(Error::Validation(format!(
                    "episode {id} has {} steps, expected {}",
                    ep.len(),
                    self.horizon
                )));
            }
            for (k, t) in ep.iter().enumerate() {
                if t.step != k + 1 || t.done != (t.step == self.horizon) {
                    return Err(Error::Validation(format!("episode {id}: bad step/done at position {k}")));
                }
                if k + 1 < ep.len() && t.next_state != ep[k + 1].state {
                    return Err(Error::Validation(format!("episode {id}: step {} does not chain", t.step)));
                }
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &Dataset) -> bool {
        self.env_fingerprint == other.env_fingerprint
            && self.horizon == other.horizon
            && self.state_space == other.state_space
            && self.action_space == other.action_space
    }
}

/// Removes reward labels. The flag is `true` when the input was already
/// unlabeled, in which case the dataset is returned unchanged.
pub fn strip_rewards(dataset: &Dataset) -> (Dataset, bool) {
    if !dataset.labeled {
        log::warn!("strip_rewards called on an unlabeled dataset");
        return (dataset.clone(), true);
    }
    let mut out = dataset.clone();
    out.labeled = false;
    out.transitions.iter_mut().for_each(|t| t.reward = None);
    out.provenance = append_provenance(&dataset.provenance, "stripped");
    (out, false)
}

pub(crate) fn append_provenance(base: &str, note: &str) -> String {
    if base.is_empty() {
        note.to_string()
    } else {
        format!("{base}; {note}")
    }
}

/// Episode-granular subsample-and-concatenate. From dataset `i`,
/// `round(floor(p_i·|D_i|) / H)` whole episodes are drawn without replacement
/// and kept in their original order; episode ids are renumbered from 0.
pub fn mix(datasets: &[Dataset], proportions: &[f64], seed: u64) -> Result<Dataset> {
    let first = datasets.first().ok_or_else(|| Error::input("mix needs at least one dataset"))?;
    if datasets.len() != proportions.len() {
        return Err(Error::input("one proportion per dataset is required"));
    }
    if proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::input("mix proportions must lie in [0, 1]"));
    }
    if let Some(d) = datasets.iter().find(|d| !first.same_shape(d)) {
        return Err(Error::input(format!(
            "fingerprint mismatch: {} vs {}",
            first.env_fingerprint, d.env_fingerprint
        )));
    }
    if datasets.iter().any(|d| d.labeled != first.labeled) {
        return Err(Error::input("cannot mix labeled and unlabeled datasets"));
    }
    let mut out = Dataset::empty(
        first.env_fingerprint.clone(),
        first.horizon,
        first.state_space,
        first.action_space,
        first.labeled,
    );
    out.config_hash = first.config_hash.clone();
    let mut parts = Vec::new();
    let mut next_id = 0u64;
    for (i, (d, p)) in datasets.iter().zip(proportions).enumerate() {
        let episodes: Vec<&[Transition]> = d.episodes().collect();
        let wanted = ((p * d.len() as f64).floor() / d.horizon as f64).round() as usize;
        let take = wanted.min(episodes.len());
        let mut r = rng::stream(seed, "mix", i as u64);
        let mut chosen = rand::seq::index::sample(&mut r, episodes.len(), take).into_vec();
        chosen.sort_unstable();
        for idx in chosen {
            for t in episodes[idx] {
                let mut t = t.clone();
                t.episode_id = next_id;
                out.transitions.push(t);
            }
            next_id += 1;
        }
        parts.push(format!("{p}*[{}]", d.provenance));
    }
    out.provenance = format!("mix({})", parts.join(", "));
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn toy_dataset(episodes: u64, horizon: usize, labeled: bool) -> Dataset {
        let mut d = Dataset::empty(
            "toy",
            horizon,
            Space::Box { dim: 1, bound: 1.0 },
            Space::Box { dim: 1, bound: 1.0 },
            labeled,
        );
        for e in 0..episodes {
            for step in 1..=horizon {
                let s = (e * 10) as f64 + step as f64;
                d.transitions.push(Transition {
                    episode_id: e,
                    step,
                    state: vec![s],
                    action: vec![0.5 - step as f64 / 10.0],
                    reward: labeled.then_some(-(s / 100.0)),
                    next_state: vec![s + 1.0],
                    done: step == horizon,
                });
            }
        }
        d.provenance = "toy".into();
        d
    }

    #[test]
    fn toy_is_valid() {
        toy_dataset(3, 5, true).validate().unwrap();
    }

    #[test]
    fn broken_chain_is_detected() {
        let mut d = toy_dataset(2, 3, true);
        d.transitions[1].state = vec![42.0];
        assert!(d.validate().is_err());
    }

    #[test]
    fn strip_clears_rewards_and_records_provenance() {
        let d = toy_dataset(3, 4, true);
        let (s, warned) = strip_rewards(&d);
        assert!(!warned);
        assert!(!s.labeled);
        assert_eq!(s.len(), d.len());
        assert!(s.transitions.iter().all(|t| t.reward.is_none()));
        assert!(s.provenance.contains("stripped"));
        let (again, warned) = strip_rewards(&s);
        assert!(warned);
        assert_eq!(again, s);
    }

    #[test]
    fn mix_single_full_is_identity() {
        let d = toy_dataset(6, 3, true);
        let m = mix(std::slice::from_ref(&d), &[1.0], 1).unwrap();
        assert_eq!(m.transitions, d.transitions);
    }

    #[test]
    fn mix_halves_within_one_episode() {
        let a = toy_dataset(10, 4, true);
        let b = toy_dataset(7, 4, true);
        let m = mix(&[a.clone(), b.clone()], &[0.5, 0.5], 3).unwrap();
        let target = (a.len() + b.len()) as f64 / 2.0;
        assert!((m.len() as f64 - target).abs() <= 4.0);
        m.validate().unwrap();
        assert_eq!(m, mix(&[a, b], &[0.5, 0.5], 3).unwrap());
    }

    #[test]
    fn mix_rejects_fingerprint_mismatch() {
        let a = toy_dataset(2, 3, true);
        let mut b = toy_dataset(2, 3, true);
        b.env_fingerprint = "other".into();
        assert!(matches!(mix(&[a, b], &[1.0, 1.0], 0), Err(Error::Input(_))));
    }

    #[test]
    fn discrete_encoding_is_one_hot() {
        let mut v = Vec::new();
        Space::Discrete { n: 4 }.encode_into(&[2.0], &mut v);
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
