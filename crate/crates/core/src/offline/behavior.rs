//! Behavior extraction over many random intents, and the on-disk behavior set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::io::{atomic_write, read_to_string};
use crate::dataset::{strip_rewards, Dataset};
use crate::error::{Error, Result};
use crate::intent::{relabel, sample_intent, PriorSpec, RewardSource};
use crate::mdp::{DeterministicPolicy, LinearMdp};
use crate::neural::checkpoint::{self, CheckpointMeta};
use crate::neural::Mlp;
use crate::rng;

use super::pevi::{pevi_train, PessimismConfig};
use super::td3bc::{td3bc_train, OfflineConfig};

pub const MANIFEST_FORMAT: &str = "intent-forge/behavior-set/v1";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Td3bc,
    Pevi,
}

/// Reward used to relabel the reward-free data before each training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    RandomIntent,
    Zero,
    /// Mean reward of a labeled reference dataset.
    ConstantAvg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorPolicy {
    Actor(Mlp),
    Tabular(DeterministicPolicy),
}

impl BehaviorPolicy {
    pub fn actor(&self) -> Option<&Mlp> {
        match self {
            BehaviorPolicy::Actor(m) => Some(m),
            BehaviorPolicy::Tabular(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    pub intent_id: usize,
    pub training_seed: u64,
    pub policy: BehaviorPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSet {
    pub env_fingerprint: String,
    pub config_hash: String,
    pub backend: Backend,
    pub reward_mode: RewardMode,
    pub intent_master_seed: u64,
    pub members: Vec<Behavior>,
}

impl BehaviorSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn actors(&self) -> Vec<&Mlp> {
        self.members.iter().filter_map(|m| m.policy.actor()).collect()
    }
}

/// Everything extraction needs besides the reward-free dataset.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionSpec<'a> {
    pub prior: &'a PriorSpec,
    pub offline: &'a OfflineConfig,
    pub pessimism: &'a PessimismConfig,
    pub backend: Backend,
    pub reward_mode: RewardMode,
    /// Feature table for the pessimistic backend.
    pub linear_mdp: Option<&'a LinearMdp>,
    /// Labeled reference for [`RewardMode::ConstantAvg`].
    pub reward_reference: Option<&'a Dataset>,
    pub config_hash: &'a str,
    pub workers: usize,
}

fn training_seed(spec: &ExtractionSpec, intent_id: usize) -> u64 {
    rng::child_seed(spec.offline.seed, "behavior", intent_id as u64)
}

/// Trains the behavior for one intent.
pub fn extract_one(reward_free: &Dataset, spec: &ExtractionSpec, intent_id: usize) -> Result<Behavior> {
    let input_dim = reward_free.state_space.encoded_dim() + reward_free.action_space.encoded_dim();
    let labeled = match spec.reward_mode {
        RewardMode::RandomIntent => {
            let intent = sample_intent(spec.prior, input_dim, intent_id)?;
            relabel(reward_free, &RewardSource::Intent(&intent))?
        }
        RewardMode::Zero => relabel(reward_free, &RewardSource::Zero)?,
        RewardMode::ConstantAvg => {
            let reference = spec
                .reward_reference
                .ok_or_else(|| Error::input("average-reward relabeling needs a labeled reference dataset"))?;
            relabel(reward_free, &RewardSource::ConstantAvg(reference))?
        }
    };
    let seed = training_seed(spec, intent_id);
    let policy = match spec.backend {
        Backend::Td3bc => {
            let cfg = OfflineConfig {
                seed,
                ..spec.offline.clone()
            };
            BehaviorPolicy::Actor(td3bc_train(&labeled, &cfg)?.actor)
        }
        Backend::Pevi => {
            let mdp = spec
                .linear_mdp
                .ok_or_else(|| Error::input("the pessimistic backend needs a linear MDP environment"))?;
            BehaviorPolicy::Tabular(pevi_train(&labeled, mdp, spec.pessimism)?.values.greedy)
        }
    };
    Ok(Behavior {
        intent_id,
        training_seed: seed,
        policy,
    })
}

/// Trains one behavior per intent in parallel. Members already present in
/// `done` are kept as is; `on_complete` is invoked after each new member.
pub fn extract_behavior_set_with(
    reward_free: &Dataset,
    spec: &ExtractionSpec,
    done: &BTreeMap<usize, Behavior>,
    on_complete: &(dyn Fn(&Behavior) -> Result<()> + Sync),
) -> Result<BehaviorSet> {
    spec.prior.validate()?;
    let reward_free = if reward_free.labeled {
        log::warn!("extraction input is labeled; rewards are discarded");
        strip_rewards(reward_free).0
    } else {
        reward_free.clone()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::input(format!("thread pool: {e}")))?;
    let members: Result<Vec<Behavior>> = pool.install(|| {
        (0..spec.prior.num_intents)
            .into_par_iter()
            .map(|i| {
                if let Some(b) = done.get(&i) {
                    return Ok(b.clone());
                }
                log::info!("extracting behavior {i}");
                let b = extract_one(&reward_free, spec, i).map_err(|e| Error::Intent {
                    intent_id: i,
                    source: Box::new(e),
                })?;
                on_complete(&b)?;
                Ok(b)
            })
            .collect()
    });
    Ok(BehaviorSet {
        env_fingerprint: reward_free.env_fingerprint.clone(),
        config_hash: spec.config_hash.to_string(),
        backend: spec.backend,
        reward_mode: spec.reward_mode,
        intent_master_seed: spec.prior.master_seed,
        members: members?,
    })
}

pub fn extract_behavior_set(reward_free: &Dataset, spec: &ExtractionSpec) -> Result<BehaviorSet> {
    extract_behavior_set_with(reward_free, spec, &BTreeMap::new(), &|_| Ok(()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    intent_id: usize,
    training_seed: u64,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    env_fingerprint: String,
    config_hash: String,
    backend: Backend,
    reward_mode: RewardMode,
    intent_master_seed: u64,
    num_behaviors: usize,
    complete: bool,
    members: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularPolicyFile {
    format: String,
    intent_id: usize,
    config_hash: String,
    horizon: usize,
    num_states: usize,
    actions: Vec<usize>,
}

const TABULAR_FORMAT: &str = "intent-forge/tabular-policy/v1";

fn member_file(backend: Backend, intent_id: usize) -> String {
    match backend {
        Backend::Td3bc => format!("actor_{intent_id:04}.params"),
        Backend::Pevi => format!("policy_{intent_id:04}.json"),
    }
}

fn write_member(dir: &Path, backend: Backend, config_hash: &str, b: &Behavior) -> Result<()> {
    let path = dir.join(member_file(backend, b.intent_id));
    match &b.policy {
        BehaviorPolicy::Actor(net) => {
            let meta = CheckpointMeta {
                role: "actor".into(),
                intent_id: Some(b.intent_id),
                config_hash: Some(config_hash.to_string()),
            };
            checkpoint::save(net, &meta, &path)
        }
        BehaviorPolicy::Tabular(p) => {
            let file = TabularPolicyFile {
                format: TABULAR_FORMAT.into(),
                intent_id: b.intent_id,
                config_hash: config_hash.to_string(),
                horizon: p.horizon(),
                num_states: p.num_states(),
                actions: p.actions().to_vec(),
            };
            let mut text = serde_json::to_string(&file).expect("policy serializes");
            text.push('\n');
            atomic_write(&path, text.as_bytes())
        }
    }
}

fn read_member(dir: &Path, backend: Backend, entry: &ManifestEntry) -> Result<Behavior> {
    let path = dir.join(&entry.file);
    let policy = match backend {
        Backend::Td3bc => BehaviorPolicy::Actor(checkpoint::load(&path)?.0),
        Backend::Pevi => {
            let text = read_to_string(&path)?;
            let f: TabularPolicyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
            BehaviorPolicy::Tabular(DeterministicPolicy::new(f.horizon, f.num_states, f.actions)?)
        }
    };
    Ok(Behavior {
        intent_id: entry.intent_id,
        training_seed: entry.training_seed,
        policy,
    })
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_to_string(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Parse {
            path,
            line: 1,
            message: format!("unsupported format `{}`", m.format),
        });
    }
    Ok(m)
}

fn manifest_for(set_meta: &SetMeta, members: &BTreeMap<usize, u64>, complete: bool) -> Manifest {
    Manifest {
        format: MANIFEST_FORMAT.into(),
        env_fingerprint: set_meta.env_fingerprint.clone(),
        config_hash: set_meta.config_hash.clone(),
        backend: set_meta.backend,
        reward_mode: set_meta.reward_mode,
        intent_master_seed: set_meta.intent_master_seed,
        num_behaviors: set_meta.num_behaviors,
        complete,
        members: members
            .iter()
            .map(|(&intent_id, &training_seed)| ManifestEntry {
                intent_id,
                training_seed,
                file: member_file(set_meta.backend, intent_id),
            })
            .collect(),
    }
}

struct SetMeta {
    env_fingerprint: String,
    config_hash: String,
    backend: Backend,
    reward_mode: RewardMode,
    intent_master_seed: u64,
    num_behaviors: usize,
}

impl BehaviorSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for b in &self.members {
            write_member(dir, self.backend, &self.config_hash, b)?;
        }
        let meta = SetMeta {
            env_fingerprint: self.env_fingerprint.clone(),
            config_hash: self.config_hash.clone(),
            backend: self.backend,
            reward_mode: self.reward_mode,
            intent_master_seed: self.intent_master_seed,
            num_behaviors: self.members.len(),
        };
        let members = self.members.iter().map(|b| (b.intent_id, b.training_seed)).collect();
        write_manifest(dir, &manifest_for(&meta, &members, true))
    }

    /// Loads a complete behavior set.
    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir)?;
        if !m.complete || m.members.len() != m.num_behaviors {
            return Err(Error::Validation(format!("behavior set in {} is incomplete", dir.display())));
        }
        let members = m.members.iter().map(|e| read_member(dir, m.backend, e)).collect::<Result<_>>()?;
        Ok(Self {
            env_fingerprint: m.env_fingerprint,
            config_hash: m.config_hash,
            backend: m.backend,
            reward_mode: m.reward_mode,
            intent_master_seed: m.intent_master_seed,
            members,
        })
    }

    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }
}

/// Extracts into `dir`, updating the manifest after every finished member.
/// With `resume`, members recorded in an existing manifest with the same
/// config hash are loaded instead of retrained.
pub fn extract_to_dir(reward_free: &Dataset, spec: &ExtractionSpec, dir: &Path, resume: bool) -> Result<BehaviorSet> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = SetMeta {
        env_fingerprint: reward_free.env_fingerprint.clone(),
        config_hash: spec.config_hash.to_string(),
        backend: spec.backend,
        reward_mode: spec.reward_mode,
        intent_master_seed: spec.prior.master_seed,
        num_behaviors: spec.prior.num_intents,
    };
    let mut done = BTreeMap::new();
    if resume && BehaviorSet::manifest_path(dir).exists() {
        let m = read_manifest(dir)?;
        if m.config_hash != spec.config_hash || m.backend != spec.backend {
            return Err(Error::Validation(format!(
                "cannot resume: {} was produced by config {}",
                dir.display(),
                m.config_hash
            )));
        }
        for e in &m.members {
            if e.intent_id < spec.prior.num_intents {
                done.insert(e.intent_id, read_member(dir, m.backend, e)?);
            }
        }
        log::info!(
            "resuming with {} of {} behaviors already trained",
            done.len(),
            spec.prior.num_intents
        );
    }
    let recorded: Mutex<BTreeMap<usize, u64>> = Mutex::new(done.values().map(|b| (b.intent_id, b.training_seed)).collect());
    write_manifest(dir, &manifest_for(&meta, &recorded.lock().unwrap(), false))?;
    let on_complete = |b: &Behavior| -> Result<()> {
        write_member(dir, spec.backend, spec.config_hash, b)?;
        let mut rec = recorded.lock().unwrap();
        rec.insert(b.intent_id, b.training_seed);
        write_manifest(dir, &manifest_for(&meta, &rec, false))
    };
    let set = extract_behavior_set_with(reward_free, spec, &done, &on_complete)?;
    // every member is on disk by now; kept members are not rewritten
    write_manifest(dir, &manifest_for(&meta, &recorded.into_inner().unwrap(), true))?;
    Ok(set)
}
