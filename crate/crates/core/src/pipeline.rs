//! The experiment pipeline: dataset generation, behavior extraction, online
//! reuse and analysis, each reading and writing files under the output
//! directory. Every artifact records the config hash, and inputs written
//! under a different hash are refused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    coverage_linear, coverage_tabular, csv_document, entropy, median, metrics_jsonl, normalized_score, reference_returns,
    return_distribution, suboptimality_scaling, Coverage, MetricsRecord, References,
};
use crate::config::ExperimentConfig;
use crate::dataset::io::{atomic_write, fmt_f64, read_to_string};
use crate::dataset::{self, collect_control, collect_tabular, strip_rewards, Dataset, Space, Transition};
use crate::error::{Error, Result};
use crate::intent::{correlations_from_features, intent_feature_matrix, nested_projection_errors, sample_intents};
use crate::mdp::{make_env, make_linear_mdp, DeterministicPolicy, Environment, GridWorld};
use crate::neural::checkpoint::{self, CheckpointMeta};
use crate::offline::{bc_train, extract_to_dir, Backend, BehaviorPolicy, BehaviorSet, ExtractionSpec, RewardMode};
use crate::reuse::{online_train, LearningCurve, SelectorKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenDataset,
    Extract,
    Online,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::GenDataset, Stage::Extract, Stage::Online, Stage::Analyze];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenDataset => "gen-dataset",
            Stage::Extract => "extract",
            Stage::Online => "online",
            Stage::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub status: String,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<PathBuf>,
}

/// Run record kept at `run_manifest.json`. It is the only output carrying
/// wall-clock timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub workers: usize,
    pub resume: bool,
    hash: String,
    env: Environment,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, workers: usize, resume: bool) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env)?;
        Ok(Self {
            hash: config.hash(),
            config,
            workers: workers.max(1),
            resume,
            env,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn dataset_path(&self, tier: &str, reward_free: bool) -> PathBuf {
        let name = if reward_free {
            format!("{tier}.reward_free.jsonl")
        } else {
            format!("{tier}.jsonl")
        };
        self.out().join("datasets").join(name)
    }

    pub fn behaviors_dir(&self) -> PathBuf {
        self.out().join("behaviors")
    }

    pub fn curves_path(&self) -> PathBuf {
        self.out().join("online").join("curves.csv")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.out().join("analysis")
    }

    fn manifest_path(&self) -> PathBuf {
        self.out().join("run_manifest.json")
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::input(format!("thread pool: {e}")))
    }

    fn refuse_foreign(&self, path: &Path, found: Option<&str>) -> Result<()> {
        if found == Some(self.hash.as_str()) {
            return Ok(());
        }
        Err(Error::Validation(format!(
            "refusing {}: written under config {}, current config is {}",
            path.display(),
            found.unwrap_or("<none>"),
            self.hash
        )))
    }

    fn load_dataset(&self, tier: &str, reward_free: bool) -> Result<Dataset> {
        let path = self.dataset_path(tier, reward_free);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let d = dataset::load_expecting(&path, &self.env.fingerprint())?;
        self.refuse_foreign(&path, d.config_hash.as_deref())?;
        Ok(d)
    }

    fn load_behaviors(&self) -> Result<BehaviorSet> {
        let dir = self.behaviors_dir();
        if !BehaviorSet::manifest_path(&dir).exists() {
            return Err(Error::MissingArtifact(BehaviorSet::manifest_path(&dir)));
        }
        let set = BehaviorSet::load(&dir)?;
        self.refuse_foreign(&dir, Some(&set.config_hash))?;
        Ok(set)
    }

    fn write(&self, path: &Path, contents: &str) -> Result<PathBuf> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        atomic_write(path, contents.as_bytes())?;
        Ok(path.to_path_buf())
    }

    /// Runs one stage and records it in the run manifest.
    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(self.out()).map_err(|e| Error::io(self.out(), e))?;
        self.write(&self.out().join("config.toml"), &self.config.to_toml())?;
        let started_at = now();
        log::info!("stage {} started (config {})", stage.name(), self.hash);
        let result = match stage {
            Stage::GenDataset => self.gen_dataset(),
            Stage::Extract => self.extract(),
            Stage::Online => self.online(),
            Stage::Analyze => self.analyze(),
        };
        let (status, artifacts) = match &result {
            Ok(a) => ("ok".to_string(), a.clone()),
            Err(e) => (format!("failed: {e}"), Vec::new()),
        };
        let record = StageRecord {
            status,
            started_at,
            finished_at: now(),
            artifacts: artifacts
                .iter()
                .map(|p| p.strip_prefix(self.out()).unwrap_or(p).to_path_buf())
                .collect(),
        };
        self.record_stage(stage, record)?;
        log::info!("stage {} finished", stage.name());
        result
    }

    pub fn run_all(&self) -> Result<Vec<PathBuf>> {
        let mut all = Vec::new();
        for stage in Stage::ALL {
            all.extend(self.run(stage)?);
        }
        Ok(all)
    }

    fn record_stage(&self, stage: Stage, record: StageRecord) -> Result<()> {
        let path = self.manifest_path();
        let mut manifest = match read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
        {
            Some(m) if m.config_hash == self.hash => m,
            _ => RunManifest {
                config_hash: self.hash.clone(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                stages: BTreeMap::new(),
            },
        };
        manifest.stages.insert(stage.name().to_string(), record);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        atomic_write(&path, text.as_bytes())
    }

    pub fn gen_dataset(&self) -> Result<Vec<PathBuf>> {
        let fingerprint = self.env.fingerprint();
        let mut written = Vec::new();
        for tier in &self.config.dataset.tiers {
            let seed = self.config.dataset_seed(&tier.name);
            let n = self.config.dataset.episodes;
            let mut data = match (&self.env, self.env.control()) {
                (_, Some(ctl)) => collect_control(ctl, &tier.behavior(), n, seed)?,
                (env, None) => {
                    let mdp = env.tabular().ok_or_else(|| Error::input("environment has no data collector"))?;
                    collect_tabular(&mdp, &fingerprint, &tier.behavior(), n, seed)?
                }
            };
            data.provenance = format!("{}; tier {}", data.provenance, tier.name);
            data.config_hash = Some(self.hash.clone());
            let (stripped, _) = strip_rewards(&data);
            for (d, free) in [(&data, false), (&stripped, true)] {
                let path = self.dataset_path(&tier.name, free);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                dataset::save(d, &path)?;
                written.push(path);
            }
            log::info!("tier {}: {} transitions", tier.name, data.len());
        }
        Ok(written)
    }

    pub fn extract(&self) -> Result<Vec<PathBuf>> {
        let tier = &self.config.dataset.extraction_tier;
        let reward_free = self.load_dataset(tier, true)?;
        let reference = match self.config.offline.reward_mode {
            RewardMode::ConstantAvg => Some(self.load_dataset(tier, false)?),
            _ => None,
        };
        let prior = self.config.effective_prior();
        let offline = self.config.effective_offline();
        let linear = match &self.env {
            Environment::Linear(l) => Some(l),
            _ => None,
        };
        let spec = ExtractionSpec {
            prior: &prior,
            offline: &offline,
            pessimism: &self.config.offline.pessimism,
            backend: self.config.offline.backend,
            reward_mode: self.config.offline.reward_mode,
            linear_mdp: linear,
            reward_reference: reference.as_ref(),
            config_hash: &self.hash,
            workers: self.workers,
        };
        let dir = self.behaviors_dir();
        extract_to_dir(&reward_free, &spec, &dir, self.resume)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn online(&self) -> Result<Vec<PathBuf>> {
        let ctl = self
            .env
            .control()
            .ok_or_else(|| Error::config("env", "online reuse needs a continuous-control environment"))?;
        let needs_set = self.config.online.selectors.iter().any(|k| *k != SelectorKind::Scratch);
        let set = if needs_set { Some(self.load_behaviors()?) } else { None };
        let jobs: Vec<(u64, SelectorKind)> = self
            .config
            .online
            .seeds
            .iter()
            .flat_map(|&s| self.config.online.selectors.iter().map(move |&k| (s, k)))
            .collect();
        let runs = self.pool()?.install(|| {
            jobs.par_iter()
                .map(|&(seed, kind)| {
                    log::info!("online run: selector {} seed {seed}", kind.name());
                    let mut out = online_train(ctl, set.as_ref(), &self.config.effective_online(seed), kind)?;
                    out.curve.seed = seed;
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut written = Vec::new();
        let curves: Vec<LearningCurve> = runs.iter().map(|r| r.curve.clone()).collect();
        written.push(self.write(&self.curves_path(), &LearningCurve::to_csv(&curves, &self.hash))?);
        for (run, (seed, kind)) in runs.iter().zip(&jobs) {
            let path = self.out().join("online").join(format!("policy_{}_seed{seed}.params", kind.name()));
            let meta = CheckpointMeta {
                role: format!("online_{}", kind.name()),
                intent_id: None,
                config_hash: Some(self.hash.clone()),
            };
            checkpoint::save(&run.policy, &meta, &path)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn analyze(&self) -> Result<Vec<PathBuf>> {
        let tier = &self.config.dataset.extraction_tier;
        let missing: Vec<PathBuf> = [self.dataset_path(tier, false), BehaviorSet::manifest_path(&self.behaviors_dir())]
            .into_iter()
            .filter(|p| !p.exists())
            .collect();
        if !missing.is_empty() {
            for p in &missing {
                log::error!("missing input {}", p.display());
            }
            return Err(Error::MissingArtifacts(missing));
        }
        let labeled = self.load_dataset(tier, false)?;
        let set = self.load_behaviors()?;
        let a = &self.config.analysis;
        let master = self.config.master_seed;
        let mut records = Vec::new();
        let mut written = Vec::new();

        // returns, entropy, normalized scores and coverage coefficients
        let refs = reference_returns(&self.env, a.eval_episodes, self.config.analysis_seed("references"))?;
        let policies: Vec<&BehaviorPolicy> = set.members.iter().map(|m| &m.policy).collect();
        let eval_seed = self.config.analysis_seed("returns");
        let dist = return_distribution(&self.env, &policies, a.eval_episodes, eval_seed)?;
        let coverage = self.coverage_coefficients(&set, &labeled)?;
        let mut rows = Vec::new();
        for (i, (m, ret)) in set.members.iter().zip(&dist.means).enumerate() {
            let score = normalized_score(*ret, refs.random, refs.expert)?;
            let cov = match coverage.as_ref().map(|c| c[i]) {
                Some(Coverage::Finite(v)) => fmt_f64(v),
                Some(Coverage::Uncovered) => "uncovered".into(),
                None => String::new(),
            };
            rows.push(vec!["behavior".into(), m.intent_id.to_string(), fmt_f64(*ret), fmt_f64(score), cov]);
        }
        let uber_entropy = entropy(&dist.means, a.entropy_bins)?;
        records.push(MetricsRecord::new(
            "entropy_nats",
            uber_entropy,
            "behavior_set",
            master,
            &self.hash,
        )?);
        let scores: Vec<f64> = dist
            .means
            .iter()
            .map(|r| normalized_score(*r, refs.random, refs.expert))
            .collect::<Result<_>>()?;
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        records.push(MetricsRecord::new(
            "normalized_score",
            best,
            "behavior_set_max",
            master,
            &self.hash,
        )?);
        records.push(MetricsRecord::new(
            "normalized_score",
            median(&scores),
            "behavior_set_median",
            master,
            &self.hash,
        )?);
        if let Some(cov) = &coverage {
            let finite: Vec<f64> = cov.iter().filter_map(|c| c.value_if_finite()).collect();
            if !finite.is_empty() {
                records.push(MetricsRecord::new(
                    "coverage_coefficient",
                    median(&finite),
                    "behavior_set_median",
                    master,
                    &self.hash,
                )?);
            }
            let uncovered = cov.len() - finite.len();
            records.push(MetricsRecord::new(
                "uncovered_behaviors",
                uncovered as f64,
                "behavior_set",
                master,
                &self.hash,
            )?);
        }
        if a.bc_baseline && set.backend == Backend::Td3bc {
            let bc = BehaviorPolicy::Actor(bc_train(&labeled, &self.config.effective_offline())?);
            let bc_dist = return_distribution(&self.env, &[&bc], a.eval_episodes, eval_seed)?;
            let bc_score = normalized_score(bc_dist.means[0], refs.random, refs.expert)?;
            rows.push(vec![
                "bc".into(),
                String::new(),
                fmt_f64(bc_dist.means[0]),
                fmt_f64(bc_score),
                String::new(),
            ]);
            records.push(MetricsRecord::new(
                "entropy_nats",
                entropy(&bc_dist.means, a.entropy_bins)?,
                "bc_baseline",
                master,
                &self.hash,
            )?);
            records.push(MetricsRecord::new("normalized_score", bc_score, "bc_baseline", master, &self.hash)?);
        }
        written.push(self.write(
            &self.analysis_dir().join("returns.csv"),
            &csv_document(
                &self.hash,
                &["policy", "intent_id", "mean_return", "normalized_score", "coverage_coefficient"],
                &rows,
            ),
        )?);
        written.push(self.write(&self.analysis_dir().join("references.csv"), &references_csv(&refs, &self.hash))?);

        // projection error of the true reward onto nested intent sets
        let mut prior = self.config.effective_prior();
        prior.num_intents = a.coverage_intents;
        let input_dim = labeled.state_space.encoded_dim() + labeled.action_space.encoded_dim();
        let intents = sample_intents(&prior, input_dim)?;
        let features = intent_feature_matrix(&intents, &labeled)?;
        let target = labeled.rewards()?;
        let lambda = a.ridge_lambda.unwrap_or(1e-3 * labeled.len() as f64);
        let eps = nested_projection_errors(&features, &target, lambda, &a.coverage_sizes)?;
        let mut report = correlations_from_features(&features, &target);
        report.projection_error = eps.last().copied();
        report.ridge_lambda = Some(lambda);
        written.push(self.write(&self.analysis_dir().join("coverage.csv"), &report.to_csv(&self.hash))?);
        let eps_rows: Vec<Vec<String>> = a
            .coverage_sizes
            .iter()
            .zip(&eps)
            .map(|(n, e)| vec![n.to_string(), fmt_f64(*e)])
            .collect();
        written.push(self.write(
            &self.analysis_dir().join("projection_error.csv"),
            &csv_document(&self.hash, &["num_intents", "epsilon"], &eps_rows),
        )?);
        for (n, e) in a.coverage_sizes.iter().zip(&eps) {
            records.push(MetricsRecord::new(
                "projection_error",
                *e,
                format!("num_intents={n}"),
                master,
                &self.hash,
            )?);
        }

        // suboptimality scaling of pessimistic value iteration
        if a.scaling.enabled {
            let s = &a.scaling;
            let mdp = make_linear_mdp(s.feature_dim, s.num_states, s.num_actions, s.horizon, s.mdp_seed)?;
            let reward = mdp.to_tabular()?.true_reward().clone();
            let seeds: Vec<u64> = (0..s.num_seeds as u64).map(|i| rng::child_seed(master, "scaling", i)).collect();
            let study = self
                .pool()?
                .install(|| suboptimality_scaling(&mdp, &reward, &s.behavior, &s.dataset_sizes, &seeds, &self.config.offline.pessimism))?;
            let mut rows = Vec::new();
            for (n, gaps) in study.ns.iter().zip(&study.suboptimality) {
                for (j, g) in gaps.iter().enumerate() {
                    rows.push(vec![n.to_string(), j.to_string(), fmt_f64(*g)]);
                }
            }
            written.push(self.write(
                &self.analysis_dir().join("scaling.csv"),
                &csv_document(&self.hash, &["dataset_size", "seed_index", "suboptimality"], &rows),
            )?);
            for (n, m) in study.ns.iter().zip(&study.medians) {
                records.push(MetricsRecord::new(
                    "suboptimality",
                    *m,
                    format!("median_at_n={n}"),
                    master,
                    &self.hash,
                )?);
            }
            match study.slope {
                Some(slope) => records.push(MetricsRecord::new(
                    "slope",
                    slope,
                    "log_suboptimality_vs_log_n",
                    master,
                    &self.hash,
                )?),
                None => log::warn!("scaling slope undefined: some median suboptimality is zero"),
            }
        }
        written.push(self.write(&self.analysis_dir().join("metrics.jsonl"), &metrics_jsonl(&records))?);
        Ok(written)
    }

    /// Coverage coefficient of each behavior with respect to the extraction
    /// data, where the environment has a finite model.
    fn coverage_coefficients(&self, set: &BehaviorSet, labeled: &Dataset) -> Result<Option<Vec<Coverage>>> {
        match &self.env {
            Environment::Linear(mdp) => set
                .members
                .iter()
                .map(|m| match &m.policy {
                    BehaviorPolicy::Tabular(p) => coverage_linear(mdp, &p.clone().into(), labeled),
                    BehaviorPolicy::Actor(_) => Err(Error::input("actor behavior on a linear MDP")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Environment::Grid(grid) => {
                let data = discretize_grid_dataset(grid, labeled);
                set.members
                    .iter()
                    .map(|m| match &m.policy {
                        BehaviorPolicy::Actor(actor) => {
                            let actions = (0..grid.tabular().num_states())
                                .map(|s| actor.forward_one(&grid.observation(s)).map(|a| GridWorld::discretize(&a)))
                                .collect::<Result<Vec<_>>>()?;
                            let horizon = grid.tabular().horizon();
                            let p = DeterministicPolicy::new(horizon, actions.len(), actions.repeat(horizon))?;
                            coverage_tabular(grid.tabular(), &p.into(), &data)
                        }
                        BehaviorPolicy::Tabular(p) => coverage_tabular(grid.tabular(), &p.clone().into(), &data),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
            Environment::Tabular(mdp) => set
                .members
                .iter()
                .map(|m| match &m.policy {
                    BehaviorPolicy::Tabular(p) => coverage_tabular(mdp, &p.clone().into(), labeled),
                    BehaviorPolicy::Actor(_) => Err(Error::input("actor behavior on a tabular MDP")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Environment::Point(_) => Ok(None),
        }
    }
}

/// Grid data stored as continuous observations and commands, mapped to
/// cell and move indices.
fn discretize_grid_dataset(grid: &GridWorld, data: &Dataset) -> Dataset {
    let mdp = grid.tabular();
    let mut out = Dataset::empty(
        data.env_fingerprint.clone(),
        data.horizon,
        Space::Discrete { n: mdp.num_states() },
        Space::Discrete { n: mdp.num_actions() },
        data.labeled,
    );
    out.transitions = data
        .transitions
        .iter()
        .map(|t| Transition {
            state: vec![grid.cell_of(&t.state) as f64],
            action: vec![GridWorld::discretize(&t.action) as f64],
            next_state: vec![grid.cell_of(&t.next_state) as f64],
            ..t.clone()
        })
        .collect();
    out
}

fn references_csv(refs: &References, hash: &str) -> String {
    csv_document(
        hash,
        &["reference", "return"],
        &[
            vec!["random".into(), fmt_f64(refs.random)],
            vec!["expert".into(), fmt_f64(refs.expert)],
        ],
    )
}
