//! Experiment configuration: one TOML file drives every pipeline stage.
//!
//! A file is merged over the defaults of its profile (`desk` or `paper`)
//! and must not contain unknown keys. Tables merge key by key; arrays and
//! the `env` table are replaced whole.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::BehaviorPolicySpec;
use crate::error::{Error, Result};
use crate::intent::PriorSpec;
use crate::mdp::EnvSpec;
use crate::offline::{Backend, OfflineConfig, PessimismConfig, RewardMode};
use crate::reuse::{OnlineConfig, SelectorKind};
use crate::{hash_bytes, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::config("profile", format!("unknown profile `{s}` (expected desk or paper)"))),
        }
    }
}

/// A named data tier collected ε-greedily around the expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub name: String,
    pub epsilon: f64,
}

impl TierSpec {
    fn new(name: &str, epsilon: f64) -> Self {
        Self {
            name: name.into(),
            epsilon,
        }
    }

    pub fn behavior(&self) -> BehaviorPolicySpec {
        BehaviorPolicySpec::EpsilonGreedy { epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub tiers: Vec<TierSpec>,
    /// Episodes collected per tier.
    pub episodes: usize,
    /// Tier whose reward-free copy feeds behavior extraction.
    pub extraction_tier: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            tiers: vec![
                TierSpec::new("expert", 0.0),
                TierSpec::new("medium", 0.3),
                TierSpec::new("random", 1.0),
            ],
            episodes: 250,
            extraction_tier: "medium".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSection {
    pub backend: Backend,
    pub reward_mode: RewardMode,
    pub td3bc: OfflineConfig,
    pub pessimism: PessimismConfig,
}

impl Default for OfflineSection {
    fn default() -> Self {
        Self {
            backend: Backend::Td3bc,
            reward_mode: RewardMode::RandomIntent,
            td3bc: OfflineConfig::default(),
            pessimism: PessimismConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSection {
    pub selectors: Vec<SelectorKind>,
    pub seeds: Vec<u64>,
    pub agent: OnlineConfig,
}

impl Default for OnlineSection {
    fn default() -> Self {
        Self {
            selectors: vec![SelectorKind::Pex, SelectorKind::Scratch],
            seeds: (0..5).collect(),
            agent: OnlineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub enabled: bool,
    pub feature_dim: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub mdp_seed: u64,
    pub dataset_sizes: Vec<usize>,
    pub num_seeds: usize,
    pub behavior: BehaviorPolicySpec,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            enabled: true,
            feature_dim: 4,
            num_states: 20,
            num_actions: 4,
            horizon: 4,
            mdp_seed: 0,
            dataset_sizes: vec![100, 400, 1600, 6400],
            num_seeds: 20,
            behavior: BehaviorPolicySpec::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub eval_episodes: usize,
    pub entropy_bins: usize,
    /// Intents sampled for the projection-error study.
    pub coverage_intents: usize,
    /// Nested intent-set sizes for the projection-error study.
    pub coverage_sizes: Vec<usize>,
    /// Ridge strength; defaults to `1e-3·M` for a dataset of `M` transitions.
    pub ridge_lambda: Option<f64>,
    /// Train a behavior-cloning baseline alongside the behavior set.
    pub bc_baseline: bool,
    pub scaling: ScalingSection,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            eval_episodes: 10,
            entropy_bins: 10,
            coverage_intents: 256,
            coverage_sizes: vec![4, 16, 64, 256],
            ridge_lambda: None,
            bc_baseline: true,
            scaling: ScalingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvSpec,
    pub dataset: DatasetSection,
    pub intent: PriorSpec,
    pub offline: OfflineSection,
    pub online: OnlineSection,
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Defaults for a laptop-sized run.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            master_seed: 0,
            output_dir: PathBuf::from("runs/desk"),
            env: EnvSpec::point_reach_1d(),
            dataset: DatasetSection::default(),
            intent: PriorSpec::desk(),
            offline: OfflineSection {
                pessimism: PessimismConfig {
                    bonus_scale: 0.3,
                    ..PessimismConfig::default()
                },
                ..OfflineSection::default()
            },
            online: OnlineSection::default(),
            analysis: AnalysisSection::default(),
        }
    }

    /// Defaults taken from the published hyperparameter tables.
    pub fn paper() -> Self {
        let td3bc = OfflineConfig {
            hidden_dims: vec![256, 256],
            gradient_steps: 1_000_000,
            ..OfflineConfig::default()
        };
        let agent = OnlineConfig {
            hidden_dims: vec![256, 256],
            total_env_steps: 1_000_000,
            warmup_steps: 10_000,
            eval_interval: 10_000,
            ..OnlineConfig::default()
        };
        Self {
            profile: Profile::Paper,
            output_dir: PathBuf::from("runs/paper"),
            intent: PriorSpec::default(),
            dataset: DatasetSection {
                episodes: 5_000,
                ..DatasetSection::default()
            },
            offline: OfflineSection {
                td3bc,
                ..OfflineSection::default()
            },
            online: OnlineSection {
                agent,
                ..OnlineSection::default()
            },
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Parses `text` over the defaults of its profile. `profile` overrides
    /// the file's own `profile` key.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let profile = match (profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(_)) => return Err(Error::config("profile", "must be a string")),
            (None, None) => Profile::Desk,
        };
        let mut base = match toml::Value::try_from(Self::for_profile(profile)) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        merge(&mut base, user, "");
        base.insert("profile".into(), toml::Value::String(profile_name(profile).into()));
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(base)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        crate::mdp::make_env(&self.env)?;
        if self.dataset.tiers.is_empty() {
            return Err(Error::config("dataset.tiers", "at least one tier is required"));
        }
        for (i, t) in self.dataset.tiers.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.epsilon) {
                return Err(Error::config(
                    format!("dataset.tiers[{i}].epsilon"),
                    format!("{} outside [0, 1]", t.epsilon),
                ));
            }
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::config(
                    format!("dataset.tiers[{i}].name"),
                    "must be a non-empty file-name-safe word",
                ));
            }
            if self.dataset.tiers[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::config(
                    format!("dataset.tiers[{i}].name"),
                    format!("duplicate tier `{}`", t.name),
                ));
            }
        }
        if self.dataset.episodes == 0 {
            return Err(Error::config("dataset.episodes", "must be ≥ 1"));
        }
        if !self.dataset.tiers.iter().any(|t| t.name == self.dataset.extraction_tier) {
            return Err(Error::config(
                "dataset.extraction_tier",
                format!("`{}` is not a configured tier", self.dataset.extraction_tier),
            ));
        }
        self.intent.validate()?;
        self.offline.td3bc.validate()?;
        self.offline.pessimism.validate()?;
        if self.offline.backend == Backend::Pevi && !matches!(self.env, EnvSpec::LinearMdp { .. }) {
            return Err(Error::config(
                "offline.backend",
                "the pessimistic backend needs a linear_mdp environment",
            ));
        }
        if self.offline.backend == Backend::Td3bc && matches!(self.env, EnvSpec::LinearMdp { .. } | EnvSpec::RandomTabular { .. }) {
            return Err(Error::config("offline.backend", "td3bc needs a continuous-action environment"));
        }
        self.online.agent.validate()?;
        if self.online.seeds.is_empty() {
            return Err(Error::config("online.seeds", "at least one seed is required"));
        }
        let a = &self.analysis;
        if a.eval_episodes == 0 {
            return Err(Error::config("analysis.eval_episodes", "must be ≥ 1"));
        }
        if a.entropy_bins == 0 {
            return Err(Error::config("analysis.entropy_bins", "must be ≥ 1"));
        }
        if a.coverage_sizes.is_empty() || a.coverage_sizes.windows(2).any(|w| w[1] <= w[0]) || a.coverage_sizes[0] == 0 {
            return Err(Error::config(
                "analysis.coverage_sizes",
                "must be a non-empty increasing list of positive sizes",
            ));
        }
        if a.coverage_sizes.last().is_some_and(|&n| n > a.coverage_intents) {
            return Err(Error::config(
                "analysis.coverage_sizes",
                "sizes must not exceed analysis.coverage_intents",
            ));
        }
        if a.ridge_lambda.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::config("analysis.ridge_lambda", "must be positive"));
        }
        let s = &a.scaling;
        if s.enabled {
            if s.dataset_sizes.len() < 3 || s.dataset_sizes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config(
                    "analysis.scaling.dataset_sizes",
                    "needs at least three increasing sizes",
                ));
            }
            if s.num_seeds == 0 {
                return Err(Error::config("analysis.scaling.num_seeds", "must be ≥ 1"));
            }
            s.behavior
                .validate()
                .map_err(|e| Error::config("analysis.scaling.behavior", e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration. The output directory is
    /// excluded so that relocated runs keep their identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        hash_bytes(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }

    pub fn dataset_seed(&self, tier: &str) -> u64 {
        rng::child_seed(self.master_seed, &format!("dataset/{tier}"), 0)
    }

    /// Prior with its seed derived from the master seed.
    pub fn effective_prior(&self) -> PriorSpec {
        PriorSpec {
            master_seed: rng::child_seed(self.master_seed, "intent", self.intent.master_seed),
            ..self.intent.clone()
        }
    }

    pub fn effective_offline(&self) -> OfflineConfig {
        OfflineConfig {
            seed: rng::child_seed(self.master_seed, "offline", self.offline.td3bc.seed),
            ..self.offline.td3bc.clone()
        }
    }

    pub fn effective_online(&self, seed: u64) -> OnlineConfig {
        OnlineConfig {
            seed: rng::child_seed(self.master_seed, "online", seed),
            ..self.online.agent.clone()
        }
    }

    pub fn analysis_seed(&self, label: &str) -> u64 {
        rng::child_seed(self.master_seed, &format!("analysis/{label}"), 0)
    }
}

fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    }
}

/// Tables whose variant is chosen by a tag; they are replaced, not merged.
const REPLACED: &[&str] = &["env", "analysis.scaling.behavior"];

fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !REPLACED.contains(&path.as_str()) => merge(b, u, &path),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
