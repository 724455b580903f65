//! Four-stage orchestration (pareto, boundary, train, finalize) plus the
//! baseline and evaluation stages, with digest-checked resumable manifests.
//!
//! Every stage seed is `derive_seed(master, stage_name)`; the seed fields of
//! the nested stage configs are overwritten with it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{decode_talents, fit_surface, BoundaryConfig, TalentBoundaryModel, UnitTalentSample};
use crate::error::{Error, Result};
use crate::finalize::{finalize_morphology, talent_scales, FinalizeReport, PsoConfig};
use crate::morphology::{MorphologyConfig, TalentVector};
use crate::pareto::{nsga2_run, ArchiveMetadata, GaConfig, ParetoArchive};
use crate::seed::{derive_seed, digest_bytes};
use crate::sim::EnvConfig;
use crate::train::{
    evaluate, read_history, train, write_history, EvalPolicy, HistoryRow, RunControl, ScaleStats, ScenarioSource,
    TalentMode, TrainConfig, TrainState, TrainedPolicy,
};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub scales: Vec<(usize, usize)>,
    pub episodes: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            scales: vec![(50, 5), (100, 10), (150, 15)],
            episodes: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrtaConfig {
    /// Task-count multipliers of the base scenario.
    pub task_multipliers: Vec<usize>,
    pub episodes: usize,
}

impl Default for SrtaConfig {
    fn default() -> Self {
        SrtaConfig {
            task_multipliers: vec![1, 2, 3],
            episodes: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub morphology: MorphologyConfig,
    pub pareto: GaConfig,
    pub boundary: BoundaryConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub finalize: PsoConfig,
    pub srta: SrtaConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            e => e,
        };
        self.morphology.bounds.validate().map_err(as_config)?;
        self.pareto.validate()?;
        self.env.validate().map_err(as_config)?;
        self.train.validate()?;
        self.finalize.validate()?;
        let b = &self.boundary;
        if !(0.0 < b.low_quantile && b.low_quantile < b.high_quantile && b.high_quantile < 1.0) {
            return Err(Error::Config("quantiles must satisfy 0 < low < high < 1".into()));
        }
        if self.evaluation.episodes == 0 || self.evaluation.scales.is_empty() {
            return Err(Error::Config("evaluation needs scales and episodes".into()));
        }
        if self.evaluation.scales.iter().any(|&(t, r)| t == 0 || r == 0) {
            return Err(Error::Config("evaluation scales need tasks and robots".into()));
        }
        if self.srta.task_multipliers.contains(&0) || self.srta.episodes == 0 {
            return Err(Error::Config("srta multipliers and episodes must be positive".into()));
        }
        Ok(())
    }

    /// 10 tasks, 2 robots, 20k episodes with a 32-wide network; evaluation
    /// adds the training scale to the three standard scales.
    pub fn desk() -> PipelineConfig {
        let env = EnvConfig::default().with_scale(10, 2);
        PipelineConfig {
            env,
            train: TrainConfig {
                net: crate::neural::NetConfig {
                    hidden: 32,
                    ..Default::default()
                },
                ..Default::default()
            },
            evaluation: EvaluationConfig {
                scales: vec![(10, 2), (50, 5), (100, 10), (150, 15)],
                episodes: 100,
            },
            ..Default::default()
        }
    }

    /// Copy with every stage seed derived from the master seed.
    pub fn seeded(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.pareto.seed = derive_seed(self.seed, "pareto");
        c.train.seed = derive_seed(self.seed, "train");
        c.finalize.seed = derive_seed(self.seed, "finalize");
        c
    }

    /// Single-robot variant: enlarged upper bounds and one robot.
    pub fn srta_variant(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.morphology.bounds = self.morphology.bounds.srta();
        c.env.n_robots = 1;
        c.seed = derive_seed(self.seed, "srta");
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pareto,
    Boundary,
    Train,
    Finalize,
    Baselines,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Pareto,
        Stage::Boundary,
        Stage::Train,
        Stage::Finalize,
        Stage::Baselines,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pareto => "pareto",
            Stage::Boundary => "boundary",
            Stage::Train => "train",
            Stage::Finalize => "finalize",
            Stage::Baselines => "baselines",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Pareto => &[],
            Stage::Boundary => &[Stage::Pareto],
            Stage::Train => &[Stage::Boundary],
            Stage::Finalize => &[Stage::Pareto, Stage::Train],
            Stage::Baselines => &[Stage::Pareto],
            Stage::Evaluate => &[Stage::Train, Stage::Baselines],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Pending,
    Complete,
    Failed,
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seed: Option<u64>,
    /// Digest of the stage's own configuration slice.
    pub config_digest: String,
    /// Upstream artifacts (relative path to digest) this stage consumed.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub diagnostics: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&s)?;
        if m.schema_version != MANIFEST_SCHEMA {
            return Err(Error::Schema {
                found: m.schema_version,
                expected: MANIFEST_SCHEMA,
            });
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.record(stage).is_some_and(|r| r.status == StageStatus::Complete)
    }

    /// Whether every recorded artifact of `stage` still hashes to its digest.
    pub fn verify(&self, dir: &Path, stage: Stage) -> bool {
        match self.record(stage) {
            Some(r) if r.status == StageStatus::Complete => r
                .artifacts
                .iter()
                .all(|(p, d)| file_digest(&dir.join(p)).is_ok_and(|x| x == *d)),
            _ => false,
        }
    }

    fn upsert(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|r| r.stage == rec.stage) {
            Some(r) => *r = rec,
            None => self.stages.push(rec),
        }
        self.stages.sort_by_key(|r| r.stage);
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

fn json_digest<T: Serialize>(v: &T) -> Result<String> {
    Ok(digest_bytes(serde_json::to_string(v)?.as_bytes()))
}

/// Relative artifact paths.
pub mod paths {
    pub const ARCHIVE: &str = "pareto/archive.csv";
    pub const ARCHIVE_META: &str = "pareto/metadata.json";
    pub const BOUNDARY: &str = "boundary/model.json";
    pub const CHECKPOINT: &str = "train/checkpoint.json";
    pub const POLICY: &str = "train/policy.json";
    pub const HISTORY: &str = "train/history.csv";
    pub const FINAL: &str = "finalize/report.json";
    pub const BASELINE_A: &str = "baselines/a/policy.json";
    pub const BASELINE_A_HISTORY: &str = "baselines/a/history.csv";
    pub const BASELINE_B: &str = "baselines/b/policy.json";
    pub const BASELINE_B_HISTORY: &str = "baselines/b/history.csv";
    pub const EVALUATION: &str = "evaluate/evaluation.json";
    pub const SRTA_DIR: &str = "srta";
    pub const SRTA_REPORT: &str = "srta/comparison.json";
}

/// Per-talent lexicographic extremes among designs carrying at least one
/// package: A maximizes capacity then speed, B maximizes range then capacity.
pub fn select_baselines(archive: &ParetoArchive) -> Result<(TalentVector, TalentVector)> {
    let carriers = ParetoArchive::from_candidates(
        archive
            .entries
            .iter()
            .copied()
            .filter(|e| e.talents.whole_packages() >= 1),
    );
    let pick = |order: &[usize]| {
        carriers
            .lexicographic_extreme(order)
            .map(|e| e.talents)
            .ok_or_else(|| Error::Degenerate("no archive design carries a whole package".into()))
    };
    Ok((pick(&[2, 1, 0])?, pick(&[0, 2, 1])?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy: String,
    pub talents: TalentVector,
    pub scales: Vec<ScaleStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub episodes: usize,
    pub policies: Vec<PolicyEvaluation>,
}

impl EvaluationReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyEvaluation> {
        self.policies.iter().find(|p| p.policy == name)
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(dir: &Path, rel: &str, stage: Stage) -> Result<T> {
    let path = dir.join(rel);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: stage.name().into(),
            path,
        });
    }
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn load_archive(dir: &Path) -> Result<ParetoArchive> {
    let path = dir.join(paths::ARCHIVE);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: Stage::Pareto.name().into(),
            path,
        });
    }
    ParetoArchive::load(&path)
}

pub fn load_boundary(dir: &Path) -> Result<TalentBoundaryModel> {
    let path = dir.join(paths::BOUNDARY);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: Stage::Boundary.name().into(),
            path,
        });
    }
    TalentBoundaryModel::load(&path)
}

pub fn load_history(dir: &Path, rel: &str, stage: Stage) -> Result<Vec<HistoryRow>> {
    let path = dir.join(rel);
    let f = std::fs::File::open(&path).map_err(|_| Error::MissingArtifact {
        stage: stage.name().into(),
        path: path.clone(),
    })?;
    read_history(f)
}

#[derive(Clone, Copy, Debug)]
pub struct PipelineOptions {
    /// Last stage to run.
    pub until: Stage,
    /// Reuse digest-matching stages, including `until`, and resume training
    /// from its checkpoint.
    pub resume: bool,
    /// Reuse digest-matching stages before `until` even without `resume`.
    pub reuse_upstream: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            until: Stage::Evaluate,
            resume: false,
            reuse_upstream: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub executed: Vec<Stage>,
    pub reused: Vec<Stage>,
}

struct StageOutput {
    artifacts: Vec<&'static str>,
}

fn stage_config_digest(cfg: &PipelineConfig, stage: Stage) -> Result<String> {
    match stage {
        Stage::Pareto => json_digest(&(&cfg.morphology, &cfg.pareto)),
        Stage::Boundary => json_digest(&cfg.boundary),
        Stage::Train => json_digest(&(&cfg.env, &cfg.train)),
        Stage::Finalize => json_digest(&(&cfg.morphology, &cfg.finalize)),
        Stage::Baselines => json_digest(&(&cfg.env, &cfg.train, cfg.seed)),
        Stage::Evaluate => json_digest(&(&cfg.env, &cfg.evaluation, cfg.seed)),
    }
}

fn stage_seed(cfg: &PipelineConfig, stage: Stage) -> Option<u64> {
    match stage {
        Stage::Pareto => Some(cfg.pareto.seed),
        Stage::Boundary => None,
        Stage::Train => Some(cfg.train.seed),
        Stage::Finalize => Some(cfg.finalize.seed),
        Stage::Baselines => Some(derive_seed(cfg.seed, "baselines")),
        Stage::Evaluate => Some(derive_seed(cfg.seed, "evaluate")),
    }
}

fn baseline_config(cfg: &PipelineConfig, label: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, &format!("baseline-{label}")),
        ..cfg.train.clone()
    }
}

fn write_json<T: Serialize>(dir: &Path, rel: &str, v: &T) -> Result<()> {
    write_atomic(&dir.join(rel), serde_json::to_string_pretty(v)?.as_bytes())
}

fn write_history_file(dir: &Path, rel: &str, rows: &[HistoryRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_history(rows, &mut buf)?;
    write_atomic(&dir.join(rel), &buf)
}

fn run_training(
    config: &TrainConfig,
    mode: &TalentMode,
    env: &EnvConfig,
    checkpoint: &Path,
    resume: bool,
) -> Result<TrainState> {
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let usable = resume && TrainState::load(checkpoint).is_ok_and(|st| st.config == *config);
    if !usable && checkpoint.exists() {
        std::fs::remove_file(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    }
    train(
        config,
        mode,
        &ScenarioSource::Random(env.clone()),
        &RunControl {
            checkpoint: Some(checkpoint),
            resume: usable,
            stop_after: None,
        },
    )
}

fn execute_stage(cfg: &PipelineConfig, dir: &Path, stage: Stage, resume: bool) -> Result<StageOutput> {
    let b = &cfg.morphology.bounds;
    let p = &cfg.morphology.physics;
    match stage {
        Stage::Pareto => {
            let archive = nsga2_run(&cfg.pareto, b, p)?;
            let mut buf = Vec::new();
            archive.write_csv(&mut buf)?;
            write_atomic(&dir.join(paths::ARCHIVE), &buf)?;
            write_json(
                dir,
                paths::ARCHIVE_META,
                &ArchiveMetadata::new(&cfg.pareto, b, &archive),
            )?;
            Ok(StageOutput {
                artifacts: vec![paths::ARCHIVE, paths::ARCHIVE_META],
            })
        }
        Stage::Boundary => {
            let model = fit_surface(&load_archive(dir)?, &cfg.boundary)?;
            write_atomic(&dir.join(paths::BOUNDARY), model.to_json()?.as_bytes())?;
            Ok(StageOutput {
                artifacts: vec![paths::BOUNDARY],
            })
        }
        Stage::Train => {
            let mode = TalentMode::Learned(load_boundary(dir)?);
            let st = run_training(&cfg.train, &mode, &cfg.env, &dir.join(paths::CHECKPOINT), resume)?;
            write_json(
                dir,
                paths::POLICY,
                &TrainedPolicy {
                    actor: st.learner.actor.clone(),
                    mode,
                },
            )?;
            write_history_file(dir, paths::HISTORY, &st.history)?;
            Ok(StageOutput {
                artifacts: vec![paths::CHECKPOINT, paths::POLICY, paths::HISTORY],
            })
        }
        Stage::Finalize => {
            let archive = load_archive(dir)?;
            let policy: TrainedPolicy = load_json(dir, paths::POLICY, Stage::Train)?;
            let scales = talent_scales(&archive.talent_rows())?;
            let report = finalize_morphology(&policy.talents(), b, p, &scales, &cfg.finalize)?;
            write_json(dir, paths::FINAL, &report)?;
            Ok(StageOutput {
                artifacts: vec![paths::FINAL],
            })
        }
        Stage::Baselines => {
            let (ta, tb) = select_baselines(&load_archive(dir)?)?;
            for (label, talents, policy_path, history_path) in [
                ("a", ta, paths::BASELINE_A, paths::BASELINE_A_HISTORY),
                ("b", tb, paths::BASELINE_B, paths::BASELINE_B_HISTORY),
            ] {
                let mode = TalentMode::Fixed(talents);
                let ckpt = dir.join(format!("baselines/{label}/checkpoint.json"));
                let st = run_training(&baseline_config(cfg, label), &mode, &cfg.env, &ckpt, resume)?;
                write_json(
                    dir,
                    policy_path,
                    &TrainedPolicy {
                        actor: st.learner.actor.clone(),
                        mode,
                    },
                )?;
                write_history_file(dir, history_path, &st.history)?;
            }
            Ok(StageOutput {
                artifacts: vec![
                    paths::BASELINE_A,
                    paths::BASELINE_A_HISTORY,
                    paths::BASELINE_B,
                    paths::BASELINE_B_HISTORY,
                ],
            })
        }
        Stage::Evaluate => {
            let seed = derive_seed(cfg.seed, "evaluate");
            let mut policies = Vec::new();
            for (name, rel, owner) in [
                ("co-design", paths::POLICY, Stage::Train),
                ("baseline-a", paths::BASELINE_A, Stage::Baselines),
                ("baseline-b", paths::BASELINE_B, Stage::Baselines),
            ] {
                let policy: TrainedPolicy = load_json(dir, rel, owner)?;
                let scales = evaluate(
                    &EvalPolicy::Trained(&policy),
                    &cfg.env,
                    &cfg.evaluation.scales,
                    cfg.evaluation.episodes,
                    seed,
                )?;
                policies.push(PolicyEvaluation {
                    policy: name.into(),
                    talents: policy.talents(),
                    scales,
                });
            }
            write_json(
                dir,
                paths::EVALUATION,
                &EvaluationReport {
                    seed,
                    episodes: cfg.evaluation.episodes,
                    policies,
                },
            )?;
            Ok(StageOutput {
                artifacts: vec![paths::EVALUATION],
            })
        }
    }
}

/// Runs stages in order up to `options.until`, skipping stages whose
/// configuration, inputs and artifacts are unchanged when reuse is allowed.
/// A failing stage is recorded with its diagnostic and blocks the rest.
pub fn run_pipeline(config: &PipelineConfig, dir: &Path, options: &PipelineOptions) -> Result<PipelineOutcome> {
    config.validate()?;
    let cfg = config.seeded();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let previous = RunManifest::load(dir).ok();
    let mut manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        master_seed: cfg.seed,
        config_digest: json_digest(&cfg)?,
        stages: previous.as_ref().map(|m| m.stages.clone()).unwrap_or_default(),
    };
    let mut executed = Vec::new();
    let mut reused = Vec::new();
    let last = Stage::ALL
        .iter()
        .position(|s| *s == options.until)
        .expect("stage listed");
    for (k, &stage) in Stage::ALL.iter().enumerate().take(last + 1) {
        let config_digest = stage_config_digest(&cfg, stage)?;
        let mut inputs = BTreeMap::new();
        for up in stage.upstream() {
            let rec = manifest.record(*up).filter(|r| r.status == StageStatus::Complete);
            let Some(rec) = rec else {
                return Err(Error::MissingArtifact {
                    stage: up.name().into(),
                    path: dir.join(MANIFEST_FILE),
                });
            };
            inputs.extend(rec.artifacts.clone());
        }
        let may_reuse = if stage == options.until {
            options.resume
        } else {
            options.resume || options.reuse_upstream
        };
        let unchanged = manifest.record(stage).is_some_and(|r| {
            r.status == StageStatus::Complete && r.config_digest == config_digest && r.inputs == inputs
        }) && manifest.verify(dir, stage);
        if may_reuse && unchanged {
            reused.push(stage);
            continue;
        }
        let seed = stage_seed(&cfg, stage);
        match execute_stage(&cfg, dir, stage, options.resume) {
            Ok(out) => {
                let artifacts = out
                    .artifacts
                    .iter()
                    .map(|rel| Ok((rel.to_string(), file_digest(&dir.join(rel))?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                manifest.upsert(StageRecord {
                    stage,
                    status: StageStatus::Complete,
                    seed,
                    config_digest,
                    inputs,
                    artifacts,
                    diagnostics: None,
                });
                executed.push(stage);
                for later in &Stage::ALL[k + 1..] {
                    if let Some(r) = manifest.stages.iter_mut().find(|r| r.stage == *later) {
                        if r.status == StageStatus::Blocked {
                            r.status = StageStatus::Pending;
                        }
                    }
                }
            }
            Err(e) => {
                manifest.upsert(StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    seed,
                    config_digest,
                    inputs,
                    artifacts: BTreeMap::new(),
                    diagnostics: Some(e.to_string()),
                });
                for later in &Stage::ALL[k + 1..] {
                    let blocked = manifest.record(*later).cloned().map(|mut r| {
                        r.status = StageStatus::Blocked;
                        r
                    });
                    if let Some(r) = blocked {
                        manifest.upsert(r);
                    }
                }
                manifest.save(dir)?;
                return Err(Error::Stage {
                    stage: stage.name().into(),
                    message: e.to_string(),
                });
            }
        }
        manifest.save(dir)?;
    }
    manifest.save(dir)?;
    Ok(PipelineOutcome {
        manifest,
        executed,
        reused,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrtaReport {
    pub mrta_talents: TalentVector,
    pub srta_talents: TalentVector,
    pub srta_final: FinalizeReport,
    pub mrta_archive_size: usize,
    pub srta_archive_size: usize,
    pub archives_differ: bool,
    /// Single robot, task count scaled by each multiplier.
    pub single_robot: Vec<ScaleStats>,
    /// Fleet and task count scaled together.
    pub multi_robot: Vec<ScaleStats>,
    pub single_decreasing: bool,
    pub multi_within_10_points: bool,
    pub srta_faster: bool,
}

/// Runs the multi-robot pipeline through training, the single-robot
/// pipeline through finalization in `dir/srta`, and compares both across
/// task scales.
pub fn srta_study(config: &PipelineConfig, dir: &Path, resume: bool) -> Result<SrtaReport> {
    config.validate()?;
    let upstream = PipelineOptions {
        until: Stage::Train,
        resume: true,
        reuse_upstream: true,
    };
    run_pipeline(config, dir, &upstream)?;
    let srta_cfg = config.srta_variant();
    let srta_dir = dir.join(paths::SRTA_DIR);
    run_pipeline(
        &srta_cfg,
        &srta_dir,
        &PipelineOptions {
            until: Stage::Finalize,
            resume,
            reuse_upstream: true,
        },
    )?;
    let mrta: TrainedPolicy = load_json(dir, paths::POLICY, Stage::Train)?;
    let srta: TrainedPolicy = load_json(&srta_dir, paths::POLICY, Stage::Train)?;
    let mrta_archive = load_archive(dir)?;
    let srta_archive = load_archive(&srta_dir)?;
    let srta_final: FinalizeReport = load_json(&srta_dir, paths::FINAL, Stage::Finalize)?;
    let seed = derive_seed(config.seed, "srta-evaluate");
    let (nt, nr) = (config.env.n_tasks, config.env.n_robots);
    let m = &config.srta.task_multipliers;
    let single_scales: Vec<_> = m.iter().map(|k| (k * nt, 1)).collect();
    let multi_scales: Vec<_> = m.iter().map(|k| (k * nt, k * nr)).collect();
    let eps = config.srta.episodes;
    let single_robot = evaluate(&EvalPolicy::Trained(&srta), &srta_cfg.env, &single_scales, eps, seed)?;
    let multi_robot = evaluate(&EvalPolicy::Trained(&mrta), &config.env, &multi_scales, eps, seed)?;
    let med = |s: &[ScaleStats]| s.iter().map(|x| x.mean).collect::<Vec<_>>();
    let single = med(&single_robot);
    let multi = med(&multi_robot);
    let report = SrtaReport {
        mrta_talents: mrta.talents(),
        srta_talents: srta.talents(),
        srta_final,
        mrta_archive_size: mrta_archive.len(),
        srta_archive_size: srta_archive.len(),
        archives_differ: mrta_archive.talent_rows() != srta_archive.talent_rows(),
        single_decreasing: single.windows(2).all(|w| w[1] < w[0]),
        multi_within_10_points: multi.iter().all(|r| (r - multi[0]).abs() <= 0.10),
        srta_faster: srta.talents().nominal_speed > mrta.talents().nominal_speed,
        single_robot,
        multi_robot,
    };
    write_json(dir, paths::SRTA_REPORT, &report)?;
    Ok(report)
}

/// Files written by [`report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub completion: PathBuf,
    pub talent_series: PathBuf,
    pub pareto_scatter: PathBuf,
    pub surface_samples: PathBuf,
    pub summary: PathBuf,
}

pub const SURFACE_GRID: usize = 21;

/// Plot-ready tables from a completed run directory.
pub fn report(dir: &Path) -> Result<ReportFiles> {
    let manifest = RunManifest::load(dir).map_err(|_| Error::MissingArtifact {
        stage: Stage::Pareto.name().into(),
        path: dir.join(MANIFEST_FILE),
    })?;
    for stage in [Stage::Pareto, Stage::Boundary, Stage::Train, Stage::Evaluate] {
        if !manifest.is_complete(stage) {
            return Err(Error::Stage {
                stage: stage.name().into(),
                message: format!("stage `{stage}` must complete before reporting"),
            });
        }
    }
    let out = dir.join("report");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let eval: EvaluationReport = load_json(dir, paths::EVALUATION, Stage::Evaluate)?;
    let srta: Option<SrtaReport> = load_json(dir, paths::SRTA_REPORT, Stage::Train).ok();

    let mut rows: Vec<(String, &ScaleStats)> = eval
        .policies
        .iter()
        .flat_map(|p| p.scales.iter().map(move |s| (p.policy.clone(), s)))
        .collect();
    if let Some(s) = &srta {
        rows.extend(s.single_robot.iter().map(|x| ("srta".to_string(), x)));
        rows.extend(s.multi_robot.iter().map(|x| ("mrta-fleet".to_string(), x)));
    }
    let completion = out.join("completion.csv");
    let mut w = csv::Writer::from_path(&completion)?;
    w.write_record([
        "policy", "n_tasks", "n_robots", "episodes", "median", "q1", "q3", "mean",
    ])?;
    for (name, s) in &rows {
        w.write_record([
            name.clone(),
            s.n_tasks.to_string(),
            s.n_robots.to_string(),
            s.episodes.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&completion, e))?;

    let history = load_history(dir, paths::HISTORY, Stage::Train)?;
    let talent_series = out.join("talent_series.csv");
    let mut w = csv::Writer::from_path(&talent_series)?;
    w.write_record(["episode", "range", "speed", "capacity", "std"])?;
    for r in &history {
        w.write_record([
            r.episode.to_string(),
            r.range.to_string(),
            r.speed.to_string(),
            r.capacity.to_string(),
            r.std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&talent_series, e))?;

    let archive = load_archive(dir)?;
    let pareto_scatter = out.join("pareto_scatter.csv");
    let mut w = csv::Writer::from_path(&pareto_scatter)?;
    w.write_record(["range", "speed", "capacity"])?;
    for t in archive.talent_rows() {
        w.write_record(t.map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&pareto_scatter, e))?;

    let model = load_boundary(dir)?;
    let surface_samples = out.join("surface_samples.csv");
    let mut w = csv::Writer::from_path(&surface_samples)?;
    w.write_record(["u_range", "u_speed", "range", "speed", "capacity"])?;
    let step = 1.0 / (SURFACE_GRID - 1) as f64;
    for i in 0..SURFACE_GRID {
        for j in 0..SURFACE_GRID {
            let u = vec![i as f64 * step, j as f64 * step];
            let t = decode_talents(&UnitTalentSample::new(u.clone())?, &model);
            w.write_record([
                u[0].to_string(),
                u[1].to_string(),
                t.flight_range.to_string(),
                t.nominal_speed.to_string(),
                t.package_capacity.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&surface_samples, e))?;

    let summary = out.join("summary.md");
    write_atomic(&summary, summary_markdown(&eval, srta.as_ref(), &history).as_bytes())?;
    Ok(ReportFiles {
        completion,
        talent_series,
        pareto_scatter,
        surface_samples,
        summary,
    })
}

fn summary_markdown(eval: &EvaluationReport, srta: Option<&SrtaReport>, history: &[HistoryRow]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "# Completion rate (greedy, {} episodes per scale)\n", eval.episodes);
    let _ = writeln!(
        s,
        "| policy | range km | speed m/s | capacity | tasks | robots | median | q1 | q3 |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for p in &eval.policies {
        for x in &p.scales {
            let _ = writeln!(
                s,
                "| {} | {:.2} | {:.2} | {} | {} | {} | {:.3} | {:.3} | {:.3} |",
                p.policy,
                p.talents.flight_range,
                p.talents.nominal_speed,
                p.talents.whole_packages(),
                x.n_tasks,
                x.n_robots,
                x.median,
                x.q1,
                x.q3
            );
        }
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        let _ = writeln!(
            s,
            "\nTalent std {:.4} -> {:.4} over {} episodes; final talents ({:.3} km, {:.3} m/s, {:.3} packages).",
            first.std, last.std, last.episode, last.range, last.speed, last.capacity
        );
    }
    if let Some(r) = srta {
        let _ = writeln!(s, "\n# Single robot vs fleet\n");
        let _ = writeln!(s, "| tasks | single-robot mean | fleet robots | fleet mean |");
        let _ = writeln!(s, "|---|---|---|---|");
        for (a, b) in r.single_robot.iter().zip(&r.multi_robot) {
            let _ = writeln!(s, "| {} | {:.3} | {} | {:.3} |", a.n_tasks, a.mean, b.n_robots, b.mean);
        }
        let _ = writeln!(
            s,
            "\nsingle-robot talents ({:.3} km, {:.3} m/s, {:.3}), fleet talents ({:.3} km, {:.3} m/s, {:.3}); single robot faster: {}",
            r.srta_talents.flight_range,
            r.srta_talents.nominal_speed,
            r.srta_talents.package_capacity,
            r.mrta_talents.flight_range,
            r.mrta_talents.nominal_speed,
            r.mrta_talents.package_capacity,
            r.srta_faster
        );
    }
    s
}
