//! Talent-infused PPO, fixed-talent baselines and greedy evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{decode_talents, TalentBoundaryModel, UnitTalentSample};
use crate::error::{Error, Result};
use crate::morphology::TalentVector;
use crate::neural::autodiff::{Graph, Var};
use crate::neural::policy::{argmax, sample_index};
use crate::neural::{clip_grad_norm, sample_talents, Actor, Adam, Critic, NetConfig, ObsVars, TalentDraw};
use crate::seed::derive_seed;
use crate::sim::{generate_scenario, EnvConfig, MissionState, Observation, Scenario, ScriptedPolicy};

pub const TRAIN_STATE_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// Discounted terminal return minus value.
    MonteCarlo,
    /// One-step temporal-difference error.
    Td0,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes_per_batch: usize,
    pub epochs_per_batch: usize,
    pub minibatches: usize,
    pub clip_ratio: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub total_episodes: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub advantage: AdvantageMode,
    /// Batches between checkpoints; 0 disables checkpointing.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes_per_batch: 64,
            epochs_per_batch: 4,
            minibatches: 4,
            clip_ratio: 0.2,
            gamma: 0.99,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            total_episodes: 20_000,
            entropy_coef: 0.01,
            max_grad_norm: 1.0,
            normalize_advantages: true,
            advantage: AdvantageMode::MonteCarlo,
            checkpoint_every: 10,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_batch == 0 || self.epochs_per_batch == 0 || self.minibatches == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.minibatches > self.episodes_per_batch {
            return Err(Error::Config("more minibatches than episodes per batch".into()));
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(Error::Config("clip_ratio must lie in (0, 1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("entropy_coef must be >= 0 and max_grad_norm > 0".into()));
        }
        self.net.validate()
    }

    pub fn n_batches(&self) -> usize {
        self.total_episodes.div_ceil(self.episodes_per_batch)
    }
}

/// Where talents come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TalentMode {
    /// Sampled from the talent head once per episode and decoded.
    Learned(TalentBoundaryModel),
    /// Fixed design; the talent head is frozen.
    Fixed(TalentVector),
}

impl TalentMode {
    pub fn is_learned(&self) -> bool {
        matches!(self, TalentMode::Learned(_))
    }
}

/// Scenario generator for rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScenarioSource {
    Random(EnvConfig),
    Fixed(Scenario),
}

impl ScenarioSource {
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Random(cfg) => generate_scenario(cfg, seed),
            ScenarioSource::Fixed(s) => Ok(s.clone()),
        }
    }

    pub fn env(&self) -> &EnvConfig {
        match self {
            ScenarioSource::Random(cfg) => cfg,
            ScenarioSource::Fixed(s) => &s.config,
        }
    }
}

/// One stored decision. Steps with a single legal action are dropped except
/// the first step of an episode, which carries the talent term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    /// `None` when the episode ended before any decision.
    pub action: Option<usize>,
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scenario_seed: u64,
    pub talent: Option<TalentDraw>,
    pub talents: TalentVector,
    pub talent_features: [f64; 3],
    pub steps: Vec<Step>,
    pub reward: f64,
    pub completion: f64,
    /// Advantage of the talent draw: discounted return minus the batch mean.
    /// The critic sees the drawn talents, so it cannot serve as this baseline.
    #[serde(default)]
    pub talent_advantage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn mean_reward(&self) -> f64 {
        self.episodes.iter().map(|e| e.reward).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// Plays one episode. With `Greedy`, actions are argmax and talents are
/// the decoded talent mean.
pub fn rollout_episode(
    actor: &Actor,
    critic: Option<&Critic>,
    mode: &TalentMode,
    source: &ScenarioSource,
    seed: u64,
    selection: ActionSelection,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario_seed = derive_seed(seed, "scenario");
    let scenario = source.scenario(scenario_seed)?;
    let (talent, talents) = match mode {
        TalentMode::Fixed(t) => (None, *t),
        TalentMode::Learned(boundary) => {
            let (mean, std) = actor.talent_distribution();
            match selection {
                ActionSelection::Sample => {
                    let draw = sample_talents(&mean, &std, &mut rng);
                    let t = decode_talents(&draw.unit, boundary);
                    (Some(draw), t)
                }
                ActionSelection::Greedy => {
                    let u = UnitTalentSample::new(mean.iter().map(|m| m.clamp(0.0, 1.0)).collect())?;
                    (None, decode_talents(&u, boundary))
                }
            }
        }
    };
    let env = &scenario.config;
    let talent_features = env.talent_features(&talents);
    let mut state = MissionState::new(&scenario, talents)?;
    let value = |obs: &Observation| critic.map_or(0.0, |c| c.value(obs, &talent_features));
    let mut steps = Vec::new();
    if state.next_robot().is_none() {
        let obs = state.observe(0);
        steps.push(Step {
            value: value(&obs),
            obs,
            action: None,
            log_prob: 0.0,
            advantage: 0.0,
            target: 0.0,
        });
    }
    while let Some(robot) = state.next_robot() {
        let obs = state.observe(robot);
        let lp = actor.action_log_probs(&obs)?;
        let action = match selection {
            ActionSelection::Sample => sample_index(&lp, &mut rng),
            ActionSelection::Greedy => argmax(&lp),
        };
        if steps.is_empty() || obs.feasible_count() > 1 {
            steps.push(Step {
                value: value(&obs),
                log_prob: lp[action],
                obs,
                action: Some(action),
                advantage: 0.0,
                target: 0.0,
            });
        }
        state.step(robot, action)?;
    }
    let reward = state.episode_reward()?;
    Ok(Episode {
        scenario_seed,
        talent,
        talents,
        talent_features,
        steps,
        reward,
        completion: state.completion_rate(),
        talent_advantage: 0.0,
    })
}

/// `n` sampled episodes with per-episode seeds derived from `seed`.
pub fn rollout(
    actor: &Actor,
    critic: &Critic,
    mode: &TalentMode,
    source: &ScenarioSource,
    n: usize,
    seed: u64,
) -> Result<EpisodeBatch> {
    let seeds: Vec<u64> = (0..n).map(|k| derive_seed(seed, &format!("episode-{k}"))).collect();
    let run = |s: &u64| rollout_episode(actor, Some(critic), mode, source, *s, ActionSelection::Sample);
    #[cfg(feature = "parallel")]
    let episodes: Result<Vec<Episode>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let episodes: Result<Vec<Episode>> = seeds.iter().map(run).collect();
    Ok(EpisodeBatch { episodes: episodes? })
}

/// Fills advantages and value targets from the stored critic values.
/// The reward is paid once, after the last stored step.
pub fn compute_advantages(batch: &mut EpisodeBatch, gamma: f64, mode: AdvantageMode) {
    for ep in &mut batch.episodes {
        let n = ep.steps.len();
        for t in 0..n {
            let (target, adv) = match mode {
                AdvantageMode::MonteCarlo => {
                    let g = gamma.powi((n - 1 - t) as i32) * ep.reward;
                    (g, g - ep.steps[t].value)
                }
                AdvantageMode::Td0 => {
                    let next = if t + 1 < n {
                        gamma * ep.steps[t + 1].value
                    } else {
                        ep.reward
                    };
                    (next, next - ep.steps[t].value)
                }
            };
            ep.steps[t].target = target;
            ep.steps[t].advantage = adv;
        }
    }
    let first_return = |ep: &Episode| gamma.powi(ep.steps.len().saturating_sub(1) as i32) * ep.reward;
    let n = batch.episodes.len().max(1) as f64;
    let mean = batch.episodes.iter().map(first_return).sum::<f64>() / n;
    for ep in &mut batch.episodes {
        ep.talent_advantage = first_return(ep) - mean;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub talent_std: f64,
}

/// Clipped surrogate for one ratio: returns the objective contribution
/// `min(r A, clip(r) A)` and its derivative with respect to `r`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage, false)
    } else {
        (clipped, 0.0, true)
    }
}

/// Optimizer state for a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub frozen_talent: bool,
}

impl Learner {
    pub fn new(actor: Actor, critic: Critic, config: &TrainConfig, frozen_talent: bool) -> Self {
        Learner {
            actor_opt: Adam::new(&actor.params, config.actor_lr),
            critic_opt: Adam::new(&critic.params, config.critic_lr),
            actor,
            critic,
            frozen_talent,
        }
    }

    fn frozen(&self) -> Vec<usize> {
        if !self.frozen_talent {
            return Vec::new();
        }
        let p = &self.actor.params;
        p.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("talent."))
            .map(|(i, _)| i)
            .collect()
    }

    /// Several epochs of clipped PPO over the batch. Advantages must have
    /// been computed.
    pub fn ppo_update(&mut self, batch: &EpisodeBatch, config: &TrainConfig, seed: u64) -> Result<UpdateStats> {
        if batch.episodes.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (mean, sd) = if config.normalize_advantages {
            let advs: Vec<f64> = batch
                .episodes
                .iter()
                .flat_map(|e| e.steps.iter().map(|s| s.advantage))
                .collect();
            let m = advs.iter().sum::<f64>() / advs.len() as f64;
            let v = advs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / advs.len() as f64;
            (m, v.sqrt())
        } else {
            (0.0, 1.0)
        };
        let norm = |a: f64| if sd > 1e-8 { (a - mean) / sd } else { a - mean };
        let talent_sd = if config.normalize_advantages {
            let n = batch.episodes.len() as f64;
            (batch.episodes.iter().map(|e| e.talent_advantage.powi(2)).sum::<f64>() / n).sqrt()
        } else {
            1.0
        };
        let talent_norm = |a: f64| if talent_sd > 1e-8 { a / talent_sd } else { a };
        let frozen = self.frozen();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..batch.episodes.len()).collect();
        let mut stats = UpdateStats::default();
        let mut n_updates = 0usize;
        for _ in 0..config.epochs_per_batch {
            order.shuffle(&mut rng);
            let chunk = order.len().div_ceil(config.minibatches);
            for mb in order.chunks(chunk) {
                let n_steps: usize = mb.iter().map(|&i| batch.episodes[i].steps.len()).sum();
                let scale = 1.0 / n_steps.max(1) as f64;
                let mut actor_grad = self.actor.params.zeros_like();
                let mut critic_grad = self.critic.params.zeros_like();
                let mut s = UpdateStats::default();
                let mut clipped = 0usize;
                for &i in mb {
                    let ep = &batch.episodes[i];
                    let ep_stats = self.episode_gradients(
                        ep,
                        config,
                        (&norm, &talent_norm),
                        scale,
                        &mut actor_grad,
                        &mut critic_grad,
                    )?;
                    s.policy_loss += ep_stats.policy_loss;
                    s.value_loss += ep_stats.value_loss;
                    s.entropy += ep_stats.entropy;
                    s.approx_kl += ep_stats.approx_kl;
                    clipped += ep_stats.clip_fraction as usize;
                }
                s.clip_fraction = clipped as f64 * scale;
                if !(s.policy_loss.is_finite() && s.value_loss.is_finite()) {
                    return Err(Error::NonFiniteLoss(format!(
                        "policy loss {}, value loss {}, entropy {}, talent std {:?}",
                        s.policy_loss,
                        s.value_loss,
                        s.entropy,
                        self.actor.talent_distribution().1
                    )));
                }
                s.grad_norm = clip_grad_norm(&mut actor_grad, config.max_grad_norm);
                clip_grad_norm(&mut critic_grad, config.max_grad_norm);
                self.actor_opt.step(&mut self.actor.params, &actor_grad, &frozen);
                self.critic_opt.step(&mut self.critic.params, &critic_grad, &[]);
                if !(self.actor.params.is_finite() && self.critic.params.is_finite()) {
                    return Err(Error::NonFiniteLoss(format!("parameters diverged after update: {s:?}")));
                }
                stats.policy_loss += s.policy_loss;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.clip_fraction += s.clip_fraction;
                stats.approx_kl += s.approx_kl * scale;
                stats.grad_norm += s.grad_norm;
                n_updates += 1;
            }
        }
        let k = n_updates as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_fraction /= k;
        stats.approx_kl /= k;
        stats.grad_norm /= k;
        let std = self.actor.talent_distribution().1;
        stats.talent_std = std.iter().sum::<f64>() / std.len() as f64;
        Ok(stats)
    }

    /// Accumulates scaled gradients of the negated PPO objective for one
    /// episode. The returned `clip_fraction` is a raw clipped-step count.
    fn episode_gradients(
        &self,
        ep: &Episode,
        config: &TrainConfig,
        (norm, talent_norm): (&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64),
        scale: f64,
        actor_grad: &mut crate::neural::ParamSet,
        critic_grad: &mut crate::neural::ParamSet,
    ) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        let mut clipped = 0usize;

        let mut g = Graph::new();
        let p = self.actor.params.bind(&mut g);
        let mut terms = Vec::new();
        let mut surrogate = |v: Var, new_lp: f64, old_lp: f64, adv: f64| {
            let ratio = (new_lp - old_lp).exp();
            let (obj, d_ratio, was_clipped) = clipped_objective(ratio, adv, config.clip_ratio);
            clipped += was_clipped as usize;
            stats.policy_loss -= obj * scale;
            stats.approx_kl += old_lp - new_lp;
            let coef = -d_ratio * ratio * scale;
            (coef != 0.0).then_some((v, coef))
        };
        if let (Some(draw), false) = (&ep.talent, self.frozen_talent) {
            let (m, s) = self.actor.talent_vars(&mut g, &p);
            let v = g.gaussian_log_prob(m, s, &draw.raw);
            let new_lp = g.scalar(v);
            terms.extend(surrogate(v, new_lp, draw.log_prob, talent_norm(ep.talent_advantage)));
        }
        let mut entropy = Vec::new();
        for step in &ep.steps {
            let Some(a) = step.action else { continue };
            let ov = ObsVars::bind(&mut g, &step.obs);
            let lp = self.actor.action_log_probs_var(&mut g, &p, &step.obs, &ov)?;
            let pick = g.pick(lp, a);
            let new_lp = g.scalar(pick);
            terms.extend(surrogate(pick, new_lp, step.log_prob, norm(step.advantage)));
            if config.entropy_coef > 0.0 {
                entropy.push(g.masked_entropy(lp, &step.obs.mask));
            }
        }
        for h in entropy {
            stats.entropy += g.scalar(h) * scale;
            terms.push((h, -config.entropy_coef * scale));
        }
        if !terms.is_empty() {
            let root = g.weighted_sum(&terms);
            let grads = g.backward(root);
            actor_grad.accumulate(&grads, &p, 1.0);
        }

        let mut g = Graph::new();
        let p = self.critic.params.bind(&mut g);
        let mut terms = Vec::new();
        for step in &ep.steps {
            let ov = ObsVars::bind(&mut g, &step.obs);
            let v = self.critic.value_var(&mut g, &p, &ov, &ep.talent_features);
            let err = g.scalar(v) - step.target;
            stats.value_loss += err * err * scale;
            terms.push((v, 2.0 * err * scale));
        }
        let root = g.weighted_sum(&terms);
        let grads = g.backward(root);
        critic_grad.accumulate(&grads, &p, 1.0);

        stats.clip_fraction = clipped as f64;
        Ok(stats)
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub batch: usize,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_completion: f64,
    /// Talents decoded from the talent-head mean.
    pub range: f64,
    pub speed: f64,
    pub capacity: f64,
    pub unit_range: f64,
    pub unit_speed: f64,
    pub std: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

pub fn write_history<W: std::io::Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<history>"), e))?;
    Ok(())
}

pub fn read_history<R: std::io::Read>(input: R) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Resumable training state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub learner: Learner,
    pub next_batch: usize,
    pub history: Vec<HistoryRow>,
}

impl TrainState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let st: TrainState = serde_json::from_str(&s)?;
        if st.schema_version != TRAIN_STATE_SCHEMA {
            return Err(Error::Schema {
                found: st.schema_version,
                expected: TRAIN_STATE_SCHEMA,
            });
        }
        Ok(st)
    }

    pub fn is_complete(&self) -> bool {
        self.next_batch >= self.config.n_batches()
    }
}

/// Options controlling persistence of a training run.
#[derive(Clone, Debug, Default)]
pub struct RunControl<'a> {
    /// Checkpoint file; loaded when present and `resume` is set.
    pub checkpoint: Option<&'a Path>,
    pub resume: bool,
    /// Stop after this many batches in this call (for interruption tests).
    pub stop_after: Option<usize>,
}

pub fn new_train_state(config: &TrainConfig, mode: &TalentMode) -> Result<TrainState> {
    config.validate()?;
    let actor = Actor::new(config.net.clone(), derive_seed(config.seed, "actor-init"))?;
    let critic = Critic::new(config.net.clone(), derive_seed(config.seed, "critic-init"))?;
    Ok(TrainState {
        schema_version: TRAIN_STATE_SCHEMA,
        config: config.clone(),
        learner: Learner::new(actor, critic, config, !mode.is_learned()),
        next_batch: 0,
        history: Vec::new(),
    })
}

/// Trains (or resumes) until `total_episodes` are consumed.
pub fn train(
    config: &TrainConfig,
    mode: &TalentMode,
    source: &ScenarioSource,
    control: &RunControl,
) -> Result<TrainState> {
    config.validate()?;
    let mut state = match control.checkpoint {
        Some(path) if control.resume && path.exists() => {
            let st = TrainState::load(path)?;
            if st.config != *config {
                return Err(Error::Config(format!(
                    "checkpoint {} was written with a different training config",
                    path.display()
                )));
            }
            st
        }
        _ => new_train_state(config, mode)?,
    };
    let mut done_here = 0usize;
    while !state.is_complete() {
        if control.stop_after.is_some_and(|k| done_here >= k) {
            break;
        }
        let b = state.next_batch;
        let row = train_batch(&mut state, mode, source, b)?;
        state.history.push(row);
        state.next_batch += 1;
        done_here += 1;
        if let Some(path) = control.checkpoint {
            let every = config.checkpoint_every;
            if (every > 0 && state.next_batch % every == 0) || state.is_complete() {
                state.save(path)?;
            }
        }
    }
    if let (Some(path), Some(_)) = (control.checkpoint, control.stop_after) {
        state.save(path)?;
    }
    Ok(state)
}

fn train_batch(state: &mut TrainState, mode: &TalentMode, source: &ScenarioSource, b: usize) -> Result<HistoryRow> {
    let config = state.config.clone();
    let seed = derive_seed(config.seed, &format!("batch-{b}"));
    let remaining = config.total_episodes - b * config.episodes_per_batch;
    let n = remaining.min(config.episodes_per_batch);
    let learner = &mut state.learner;
    let mut batch = rollout(
        &learner.actor,
        &learner.critic,
        mode,
        source,
        n,
        derive_seed(seed, "rollout"),
    )?;
    compute_advantages(&mut batch, config.gamma, config.advantage);
    let stats = learner.ppo_update(&batch, &config, derive_seed(seed, "update"))?;
    let (mean, std) = learner.actor.talent_distribution();
    let talents = talent_summary(mode, &mean);
    Ok(HistoryRow {
        batch: b,
        episode: b * config.episodes_per_batch + n,
        mean_reward: batch.mean_reward(),
        mean_completion: batch.episodes.iter().map(|e| e.completion).sum::<f64>() / n as f64,
        range: talents.flight_range,
        speed: talents.nominal_speed,
        capacity: talents.package_capacity,
        unit_range: mean[0],
        unit_speed: mean.get(1).copied().unwrap_or(0.0),
        std: if mode.is_learned() {
            std.iter().sum::<f64>() / std.len() as f64
        } else {
            0.0
        },
        policy_loss: stats.policy_loss,
        value_loss: stats.value_loss,
        entropy: stats.entropy,
        clip_fraction: stats.clip_fraction,
    })
}

fn talent_summary(mode: &TalentMode, mean: &[f64]) -> TalentVector {
    match mode {
        TalentMode::Fixed(t) => *t,
        TalentMode::Learned(b) => {
            let u = UnitTalentSample::new(mean.iter().map(|m| m.clamp(0.0, 1.0)).collect())
                .expect("sigmoid outputs lie in the unit box");
            decode_talents(&u, b)
        }
    }
}

/// A trained policy ready for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub actor: Actor,
    pub mode: TalentMode,
}

impl TrainedPolicy {
    /// Talents the policy deploys: decoded mean or the fixed design.
    pub fn talents(&self) -> TalentVector {
        talent_summary(&self.mode, &self.actor.talent_distribution().0)
    }

    /// Greedy episode on a given scenario; the returned state holds the log.
    pub fn play(&self, scenario: &Scenario) -> Result<MissionState> {
        let mut state = MissionState::new(scenario, self.talents())?;
        while let Some(robot) = state.next_robot() {
            let lp = self.actor.action_log_probs(&state.observe(robot))?;
            state.step(robot, argmax(&lp))?;
        }
        Ok(state)
    }
}

/// Policy under evaluation.
#[derive(Clone, Debug)]
pub enum EvalPolicy<'a> {
    Trained(&'a TrainedPolicy),
    Scripted(ScriptedPolicy, TalentVector),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub n_tasks: usize,
    pub n_robots: usize,
    pub episodes: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub rates: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ScaleStats {
    pub fn from_rates(n_tasks: usize, n_robots: usize, rates: Vec<f64>) -> Self {
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
        ScaleStats {
            n_tasks,
            n_robots,
            episodes: rates.len(),
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
            mean: rates.iter().sum::<f64>() / rates.len().max(1) as f64,
            rates,
        }
    }
}

/// Evaluation scenario seed, shared by every policy for fair comparison.
pub fn eval_seed(seed: u64, n_tasks: usize, n_robots: usize, k: usize) -> u64 {
    derive_seed(seed, &format!("eval-{n_tasks}x{n_robots}-{k}"))
}

/// Greedy completion-rate statistics at each `(n_tasks, n_robots)` scale.
pub fn evaluate(
    policy: &EvalPolicy,
    env: &EnvConfig,
    scales: &[(usize, usize)],
    episodes: usize,
    seed: u64,
) -> Result<Vec<ScaleStats>> {
    let mut out = Vec::with_capacity(scales.len());
    for &(nt, nr) in scales {
        let cfg = env.with_scale(nt, nr);
        cfg.validate()?;
        let run = |k: usize| -> Result<f64> {
            let s = eval_seed(seed, nt, nr, k);
            match policy {
                EvalPolicy::Trained(p) => {
                    let source = ScenarioSource::Random(cfg.clone());
                    Ok(rollout_episode(&p.actor, None, &p.mode, &source, s, ActionSelection::Greedy)?.completion)
                }
                EvalPolicy::Scripted(sp, t) => {
                    let sc = generate_scenario(&cfg, derive_seed(s, "scenario"))?;
                    Ok(sp.play(&sc, *t, s)?.completion_rate())
                }
            }
        };
        #[cfg(feature = "parallel")]
        let rates: Result<Vec<f64>> = {
            use rayon::prelude::*;
            (0..episodes).into_par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let rates: Result<Vec<f64>> = (0..episodes).map(run).collect();
        out.push(ScaleStats::from_rates(nt, nr, rates?));
    }
    Ok(out)
}

/// Mean reward of uniformly random talents and uniformly random feasible
/// actions.
pub fn random_policy_reward(
    boundary: &TalentBoundaryModel,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..episodes {
        let s = derive_seed(seed, &format!("random-{k}"));
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let u: Vec<f64> = (0..boundary.n_talents() - 1)
            .map(|_| rand::Rng::random(&mut rng))
            .collect();
        let t = decode_talents(&UnitTalentSample::new(u)?, boundary);
        let sc = generate_scenario(env, derive_seed(s, "scenario"))?;
        total += ScriptedPolicy::Random.play(&sc, t, s)?.episode_reward()?;
    }
    Ok(total / episodes as f64)
}

/// Two tasks, one robot: the near task expires unless served first, so
/// the only full-reward plan is near task, then far task.
pub fn toy_scenario() -> Scenario {
    use crate::sim::{Task, TaskGraph};
    let config = EnvConfig {
        n_tasks: 2,
        n_robots: 1,
        area_km2: 4.0,
        ..Default::default()
    };
    let tasks = vec![
        Task {
            x: 1.0,
            y: 0.0,
            deadline: 3.0,
        },
        Task {
            x: 0.0,
            y: 2.0,
            deadline: 100.0,
        },
    ];
    Scenario {
        config,
        seed: 0,
        graph: TaskGraph::new(tasks, (0.0, 0.0)),
    }
}

pub fn toy_talents() -> TalentVector {
    TalentVector::new(20.0, 10.0, 2.0)
}
