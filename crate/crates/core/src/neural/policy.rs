//! Actor and critic networks.
//!
//! The encoder is a graph-capsule-style stack: each layer aggregates node
//! embeddings and their element-wise powers over a row-normalized weighted
//! adjacency that only draws from feasible nodes, concatenates the moments
//! with the node's own embedding and applies a linear map and `tanh`.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::autodiff::{Gradients, Graph, Tensor, Var};
use crate::boundary::UnitTalentSample;
use crate::error::{Error, Result};
use crate::sim::{Observation, CONTEXT_FEATURES, NODE_FEATURES};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: usize,
    pub layers: usize,
    pub moments: usize,
    pub heads: usize,
    pub talent_hidden: usize,
    pub n_unit_talents: usize,
    pub talent_features: usize,
    pub init_log_std: f64,
    pub std_floor: f64,
    pub logit_clip: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 64,
            layers: 2,
            moments: 2,
            heads: 4,
            talent_hidden: 16,
            n_unit_talents: 2,
            talent_features: 3,
            init_log_std: 0.3f64.ln(),
            std_floor: 0.02,
            logit_clip: 10.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.moments == 0 || self.heads == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.talent_hidden == 0 || self.n_unit_talents == 0 {
            return Err(Error::Config("talent network sizes must be positive".into()));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config("std_floor must be positive".into()));
        }
        Ok(())
    }

    fn encoder_shapes(&self, prefix: &str) -> Vec<(String, usize, usize)> {
        let mut v = Vec::new();
        for l in 0..self.layers {
            let d_in = if l == 0 { NODE_FEATURES } else { self.hidden };
            v.push((format!("{prefix}.{l}.w"), (1 + self.moments) * d_in, self.hidden));
            v.push((format!("{prefix}.{l}.b"), 1, self.hidden));
        }
        v
    }

    fn actor_shapes(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden;
        let mut v = self.encoder_shapes("enc");
        let more = [
            ("ctx.w", CONTEXT_FEATURES, h),
            ("ctx.b", 1, h),
            ("dec.wq", h, h),
            ("dec.wk", h, h),
            ("dec.wv", h, h),
            ("dec.wo", h, h),
            ("dec.pq", h, h),
            ("dec.pk", h, h),
            ("talent.b1", 1, self.talent_hidden),
            ("talent.w2", self.talent_hidden, self.n_unit_talents),
            ("talent.b2", 1, self.n_unit_talents),
            ("talent.log_std", 1, self.n_unit_talents),
        ];
        v.extend(more.iter().map(|(n, r, c)| (n.to_string(), *r, *c)));
        v
    }

    fn critic_shapes(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden;
        let mut v = self.encoder_shapes("enc");
        let input = h + CONTEXT_FEATURES + self.talent_features;
        let more = [("v1.w", input, h), ("v1.b", 1, h), ("v2.w", h, 1), ("v2.b", 1, 1)];
        v.extend(more.iter().map(|(n, r, c)| (n.to_string(), *r, *c)));
        v
    }
}

/// Ordered named tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawParamSet")]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl From<RawParamSet> for ParamSet {
    fn from(r: RawParamSet) -> Self {
        ParamSet::new(r.names, r.tensors)
    }
}

impl ParamSet {
    fn from_shapes(shapes: &[(String, usize, usize)], mut init: impl FnMut(&str, usize, usize) -> Tensor) -> Self {
        let names: Vec<String> = shapes.iter().map(|s| s.0.clone()).collect();
        let tensors = shapes.iter().map(|(n, r, c)| init(n, *r, *c)).collect();
        ParamSet::new(names, tensors)
    }

    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        ParamSet { names, tensors, index }
    }

    pub fn zeros_like(&self) -> Self {
        let tensors = self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        ParamSet::new(self.names.clone(), tensors)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Adds `scale * d root / d param` into `self`.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound, scale: f64) {
        for (t, v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(*v) {
                for (a, b) in t.data.iter_mut().zip(&g.data) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.tensors.iter().map(|t| t.sum_sq()).sum()
    }

    pub fn scale(&mut self, f: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(f));
    }

    pub fn fill(&mut self, v: f64) {
        self.tensors.iter_mut().for_each(|t| t.fill(v));
    }
}

/// Parameters bound as leaves in a [`Graph`].
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
}

fn init_tensor(rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, cfg: &NetConfig) -> Tensor {
    if name.ends_with("log_std") {
        let mut t = Tensor::zeros(rows, cols);
        t.fill(cfg.init_log_std);
        return t;
    }
    if name.ends_with(".b") || name.ends_with("b2") {
        return Tensor::zeros(rows, cols);
    }
    let bound = if name == "talent.b1" {
        1.0
    } else {
        1.0 / (rows as f64).sqrt()
    };
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Masked row-normalized adjacency; columns of infeasible nodes are zero.
pub fn aggregation_matrix(obs: &Observation) -> Tensor {
    let n = obs.n_nodes();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if obs.mask[j] {
                let w = obs.adjacency[i * n + j];
                a.data[i * n + j] = w;
                total += w;
            }
        }
        if total > 0.0 {
            for j in 0..n {
                a.data[i * n + j] /= total;
            }
        }
    }
    a
}

pub fn node_tensor(obs: &Observation) -> Tensor {
    Tensor::from_vec(
        obs.n_nodes(),
        NODE_FEATURES,
        obs.nodes.iter().flatten().copied().collect(),
    )
}

fn encode(g: &mut Graph, p: &Bound, cfg: &NetConfig, agg: Var, nodes: Var) -> Var {
    let mut h = nodes;
    for l in 0..cfg.layers {
        let mut parts = vec![h];
        let mut power = h;
        for k in 0..cfg.moments {
            if k > 0 {
                power = g.mul(power, h);
            }
            parts.push(g.matmul(agg, power));
        }
        let cat = g.concat(&parts);
        let lin = g.matmul(cat, p.var(&format!("enc.{l}.w")));
        let lin = g.add_row(lin, p.var(&format!("enc.{l}.b")));
        h = g.tanh(lin);
    }
    h
}

/// Graph inputs cached per observation.
pub struct ObsVars {
    pub agg: Var,
    pub nodes: Var,
    pub context: Var,
}

impl ObsVars {
    pub fn bind(g: &mut Graph, obs: &Observation) -> Self {
        ObsVars {
            agg: g.leaf(aggregation_matrix(obs)),
            nodes: g.leaf(node_tensor(obs)),
            context: g.leaf(Tensor::row(obs.context.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Actor {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::from_shapes(&config.actor_shapes(), |n, r, c| {
            init_tensor(&mut rng, n, r, c, &config)
        });
        Ok(Actor { config, params })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::from_shapes(&config.actor_shapes(), |_, r, c| Tensor::zeros(r, c));
        Ok(Actor { config, params })
    }

    /// Node embeddings `(N_T + 1) x h_l`.
    pub fn encode_graph(&self, obs: &Observation) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let o = ObsVars::bind(&mut g, obs);
        let e = encode(&mut g, &p, &self.config, o.agg, o.nodes);
        g.value(e).clone()
    }

    /// Masked log-softmax over actions as a graph node.
    pub fn action_log_probs_var(&self, g: &mut Graph, p: &Bound, obs: &Observation, o: &ObsVars) -> Result<Var> {
        if !obs.mask.iter().any(|m| *m) {
            return Err(Error::Contract("all actions masked".into()));
        }
        let cfg = &self.config;
        let h = cfg.hidden;
        let dk = h / cfg.heads;
        let emb = encode(g, p, cfg, o.agg, o.nodes);
        let ctx = g.matmul(o.context, p.var("ctx.w"));
        let ctx = g.add_row(ctx, p.var("ctx.b"));
        let q = g.matmul(ctx, p.var("dec.wq"));
        let k = g.matmul(emb, p.var("dec.wk"));
        let v = g.matmul(emb, p.var("dec.wv"));
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let qh = g.slice(q, head * dk, dk);
            let kh = g.slice(k, head * dk, dk);
            let vh = g.slice(v, head * dk, dk);
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, 1.0 / (dk as f64).sqrt());
            let a = g.masked_softmax(s, &obs.mask);
            heads.push(g.matmul(a, vh));
        }
        let cat = g.concat(&heads);
        let glimpse = g.matmul(cat, p.var("dec.wo"));
        let pq = g.matmul(glimpse, p.var("dec.pq"));
        let pk = g.matmul(emb, p.var("dec.pk"));
        let logits = g.matmul_nt(pq, pk);
        let logits = g.scale(logits, 1.0 / (h as f64).sqrt());
        let logits = g.tanh(logits);
        let logits = g.scale(logits, cfg.logit_clip);
        Ok(g.masked_log_softmax(logits, &obs.mask))
    }

    /// Log-probabilities over {depot, tasks}; masked entries are `-inf`.
    pub fn action_log_probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let o = ObsVars::bind(&mut g, obs);
        let lp = self.action_log_probs_var(&mut g, &p, obs, &o)?;
        let vals = &g.value(lp).data;
        Ok(vals
            .iter()
            .zip(&obs.mask)
            .map(|(l, m)| if *m { *l } else { f64::NEG_INFINITY })
            .collect())
    }

    pub fn action_probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.action_log_probs(obs)?.into_iter().map(f64::exp).collect())
    }

    /// Talent mean and std nodes; the talent network has no input.
    pub fn talent_vars(&self, g: &mut Graph, p: &Bound) -> (Var, Var) {
        let hidden = p.var("talent.b1");
        let out = g.matmul(hidden, p.var("talent.w2"));
        let out = g.add_row(out, p.var("talent.b2"));
        let mean = g.sigmoid(out);
        let std = g.exp(p.var("talent.log_std"));
        let std = g.floor_at(std, self.config.std_floor);
        (mean, std)
    }

    pub fn talent_distribution(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (m, s) = self.talent_vars(&mut g, &p);
        (g.value(m).data.clone(), g.value(s).data.clone())
    }

    /// Action distribution and talent distribution for one observation.
    pub fn forward(&self, obs: &Observation) -> Result<ActorOutput> {
        let probs = self.action_probs(obs)?;
        let (talent_mean, talent_std) = self.talent_distribution();
        Ok(ActorOutput {
            probs,
            talent_mean,
            talent_std,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: Actor = read_json(path)?;
        a.check_shapes(&a.config.actor_shapes())?;
        Ok(a)
    }

    fn check_shapes(&self, shapes: &[(String, usize, usize)]) -> Result<()> {
        check_shapes(&self.params, shapes)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Actor = serde_json::from_str(s)?;
        a.check_shapes(&a.config.actor_shapes())?;
        Ok(a)
    }
}

fn check_shapes(p: &ParamSet, shapes: &[(String, usize, usize)]) -> Result<()> {
    let ok = p.names.len() == shapes.len()
        && p.tensors.len() == shapes.len()
        && shapes
            .iter()
            .zip(p.names.iter().zip(&p.tensors))
            .all(|((n, r, c), (pn, t))| n == pn && t.shape() == (*r, *c) && t.len() == r * c);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(
            "checkpoint parameter layout does not match its network config".into(),
        ))
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string(v)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorOutput {
    pub probs: Vec<f64>,
    pub talent_mean: Vec<f64>,
    pub talent_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub config: NetConfig,
    pub params: ParamSet,
}

impl Critic {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::from_shapes(&config.critic_shapes(), |n, r, c| {
            init_tensor(&mut rng, n, r, c, &config)
        });
        Ok(Critic { config, params })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::from_shapes(&config.critic_shapes(), |_, r, c| Tensor::zeros(r, c));
        Ok(Critic { config, params })
    }

    /// State-talent value as a `1 x 1` node.
    pub fn value_var(&self, g: &mut Graph, p: &Bound, o: &ObsVars, talents: &[f64]) -> Var {
        let emb = encode(g, p, &self.config, o.agg, o.nodes);
        let pooled = g.mean_rows(emb);
        let t = g.leaf(Tensor::row(talents.to_vec()));
        let x = g.concat(&[pooled, o.context, t]);
        let h = g.matmul(x, p.var("v1.w"));
        let h = g.add_row(h, p.var("v1.b"));
        let h = g.tanh(h);
        let v = g.matmul(h, p.var("v2.w"));
        g.add_row(v, p.var("v2.b"))
    }

    /// `talents` are the scaled talent features of the episode's robots.
    pub fn value(&self, obs: &Observation, talents: &[f64]) -> f64 {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let o = ObsVars::bind(&mut g, obs);
        let v = self.value_var(&mut g, &p, &o, talents);
        g.scalar(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Critic = read_json(path)?;
        check_shapes(&c.params, &c.config.critic_shapes())?;
        Ok(c)
    }
}

/// A talent draw: raw Gaussian sample, its clamp to the unit box and the
/// log-density of the raw sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalentDraw {
    pub raw: Vec<f64>,
    pub unit: UnitTalentSample,
    pub log_prob: f64,
}

pub fn sample_talents<R: Rng>(mean: &[f64], std: &[f64], rng: &mut R) -> TalentDraw {
    let raw: Vec<f64> = mean
        .iter()
        .zip(std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect();
    let log_prob = super::autodiff::gaussian_log_prob(mean, std, &raw);
    let unit = UnitTalentSample::new(raw.iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .expect("clamped sample lies in the unit box");
    TalentDraw { raw, unit, log_prob }
}

/// Index of the largest finite entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from log-probabilities.
pub fn sample_index<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in log_probs.iter().enumerate() {
        if l.is_finite() {
            acc += l.exp();
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
