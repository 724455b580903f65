//! NSGA-II search over the morphology box and the talent Pareto archive.
//!
//! All objectives are maximized. Constraints use constrained domination:
//! a feasible design beats any infeasible one and infeasible designs are
//! ordered by total violation.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{
    MorphologyBounds, MorphologyVector, PhysicsCoefficients, TalentVector, N_TALENTS, N_VARS, TALENT_NAMES, VAR_NAMES,
};
use crate::seed::derive_seed;

/// Talent vectors closer than this (max-norm) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

/// `a` dominates `b` under maximize-all ordering.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// Fast non-dominated sort. Returns fronts of indices; front 0 holds the
/// points no other point dominates. Indices within a front are ascending.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    sort_with(points.len(), |i, j| dominates(points[i].as_ref(), points[j].as_ref()))
}

fn sort_with(n: usize, dom: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut dominated_by_count = vec![0usize; n];
    let mut dominated_set: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dom(i, j) {
                dominated_set[i].push(j);
                dominated_by_count[j] += 1;
            } else if dom(j, i) {
                dominated_set[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_set[i] {
                dominated_by_count[j] -= 1;
                if dominated_by_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
/// Boundary points get infinity.
pub fn crowding_distance<P: AsRef<[f64]>>(points: &[P], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = points[front[0]].as_ref().len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let val = |i: usize| points[front[i]].as_ref()[k];
        order.sort_by(|&a, &b| val(a).partial_cmp(&val(b)).unwrap_or(Ordering::Equal));
        let (lo, hi) = (val(order[0]), val(order[n - 1]));
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..(n - 1) {
            dist[order[w]] += (val(order[w + 1]) - val(order[w - 1])) / span;
        }
    }
    dist
}

/// Exact hypervolume dominated by `points` and bounded below by `reference`
/// (maximization). Points that do not strictly exceed the reference in every
/// coordinate contribute nothing.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> f64 {
    let pts: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.as_ref().to_vec())
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x > r))
        .collect();
    hv_slices(pts, reference)
}

fn hv_slices(mut pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    let d = reference.len();
    if pts.is_empty() {
        return 0.0;
    }
    if d == 1 {
        return pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) - reference[0];
    }
    let last = d - 1;
    pts.sort_by(|a, b| b[last].partial_cmp(&a[last]).unwrap_or(Ordering::Equal));
    let mut volume = 0.0;
    for i in 0..pts.len() {
        let top = pts[i][last];
        let bottom = if i + 1 < pts.len() {
            pts[i + 1][last]
        } else {
            reference[last]
        };
        let height = top - bottom;
        if height <= 0.0 {
            continue;
        }
        let proj: Vec<Vec<f64>> = pts[..=i].iter().map(|p| p[..last].to_vec()).collect();
        volume += height * hv_slices(proj, &reference[..last]);
    }
    volume
}

/// Objective values (maximized) and total constraint violation of a candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    pub violation: f64,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.violation <= 0.0
    }
}

pub trait MultiObjectiveProblem: Sync {
    fn n_vars(&self) -> usize;
    fn lower(&self) -> Vec<f64>;
    fn upper(&self) -> Vec<f64>;
    fn evaluate(&self, x: &[f64]) -> Evaluation;
}

/// Talent maximization over the morphology box.
pub struct TalentProblem {
    pub bounds: MorphologyBounds,
    pub physics: PhysicsCoefficients,
}

impl MultiObjectiveProblem for TalentProblem {
    fn n_vars(&self) -> usize {
        N_VARS
    }

    fn lower(&self) -> Vec<f64> {
        self.bounds.lower.to_array().to_vec()
    }

    fn upper(&self) -> Vec<f64> {
        self.bounds.upper.to_array().to_vec()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let m = MorphologyVector::from_slice(x).expect("variable count");
        match (self.physics.talents(&m), self.physics.violation(&m)) {
            (Ok(t), Ok(v)) => Evaluation {
                objectives: t.to_array().to_vec(),
                violation: v,
            },
            _ => Evaluation {
                objectives: vec![0.0; N_TALENTS],
                violation: f64::INFINITY,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub runs: usize,
    pub crossover_rate: f64,
    /// Per-variable mutation probability; `None` means 1 / n_vars.
    pub mutation_rate: Option<f64>,
    pub crossover_eta: f64,
    pub mutation_eta: f64,
    pub seed: u64,
    /// Generations allowed without any feasible individual before giving up.
    pub feasibility_budget: Option<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 120,
            generations: 40,
            runs: 6,
            crossover_rate: 0.9,
            mutation_rate: None,
            crossover_eta: 15.0,
            mutation_eta: 20.0,
            seed: 0,
            feasibility_budget: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return Err(Error::Config("population_size must be even and >= 4".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        let rates = [Some(self.crossover_rate), self.mutation_rate];
        if rates.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("crossover and mutation rates must lie in [0, 1]".into()));
        }
        if !(self.crossover_eta > 0.0 && self.mutation_eta > 0.0) {
            return Err(Error::Config("distribution indices must be positive".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, &format!("nsga2-run-{run}"))
    }
}

#[derive(Clone, Debug)]
pub struct Individual {
    pub x: Vec<f64>,
    pub eval: Evaluation,
}

fn constrained_dominates(a: &Evaluation, b: &Evaluation) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => dominates(&a.objectives, &b.objectives),
    }
}

fn rank_population(pop: &[Individual]) -> (Vec<usize>, Vec<f64>, Vec<Vec<usize>>) {
    let fronts = sort_with(pop.len(), |i, j| constrained_dominates(&pop[i].eval, &pop[j].eval));
    let objs: Vec<&[f64]> = pop.iter().map(|p| p.eval.objectives.as_slice()).collect();
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, front) in fronts.iter().enumerate() {
        let cd = crowding_distance(&objs, front);
        for (k, &i) in front.iter().enumerate() {
            rank[i] = r;
            crowd[i] = cd[k];
        }
    }
    (rank, crowd, fronts)
}

fn evaluate_all<P: MultiObjectiveProblem>(problem: &P, xs: Vec<Vec<f64>>) -> Vec<Individual> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        xs.into_par_iter()
            .map(|x| {
                let eval = problem.evaluate(&x);
                Individual { x, eval }
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        xs.into_iter()
            .map(|x| {
                let eval = problem.evaluate(&x);
                Individual { x, eval }
            })
            .collect()
    }
}

fn sbx_pair<R: Rng>(rng: &mut R, p1: &[f64], p2: &[f64], lo: &[f64], hi: &[f64], eta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[i] < p2[i] { (p1[i], p2[i]) } else { (p2[i], p1[i]) };
        let (yl, yu) = (lo[i], hi[i]);
        let u: f64 = rng.random();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let beta_lo = 1.0 + 2.0 * (y1 - yl) / (y2 - y1);
        let beta_hi = 1.0 + 2.0 * (yu - y2) / (y2 - y1);
        let a = (0.5 * ((y1 + y2) - spread(beta_lo) * (y2 - y1))).clamp(yl, yu);
        let b = (0.5 * ((y1 + y2) + spread(beta_hi) * (y2 - y1))).clamp(yl, yu);
        if rng.random::<f64>() <= 0.5 {
            c1[i] = b;
            c2[i] = a;
        } else {
            c1[i] = a;
            c2[i] = b;
        }
    }
    (c1, c2)
}

fn polynomial_mutation<R: Rng>(rng: &mut R, x: &mut [f64], lo: &[f64], hi: &[f64], rate: f64, eta: f64) {
    for i in 0..x.len() {
        if rng.random::<f64>() > rate {
            continue;
        }
        let (yl, yu) = (lo[i], hi[i]);
        let span = yu - yl;
        if span <= 0.0 {
            continue;
        }
        let y = x[i];
        let d1 = (y - yl) / span;
        let d2 = (yu - y) / span;
        let u: f64 = rng.random();
        let mpow = 1.0 / (eta + 1.0);
        let dq = if u < 0.5 {
            let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            v.powf(mpow) - 1.0
        } else {
            let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(mpow)
        };
        x[i] = (y + dq * span).clamp(yl, yu);
    }
}

fn tournament<R: Rng>(rng: &mut R, rank: &[usize], crowd: &[f64]) -> usize {
    let n = rank.len();
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    match rank[a].cmp(&rank[b]) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if crowd[a] > crowd[b] {
                a
            } else if crowd[b] > crowd[a] {
                b
            } else if rng.random::<bool>() {
                a
            } else {
                b
            }
        }
    }
}

/// One NSGA-II run; returns the final population.
pub fn nsga2<P: MultiObjectiveProblem>(problem: &P, config: &GaConfig, seed: u64) -> Result<Vec<Individual>> {
    config.validate()?;
    let n = problem.n_vars();
    let (lo, hi) = (problem.lower(), problem.upper());
    let mutation_rate = config.mutation_rate.unwrap_or(1.0 / n as f64);
    let budget = config.feasibility_budget.unwrap_or(config.generations).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let init: Vec<Vec<f64>> = (0..config.population_size)
        .map(|_| (0..n).map(|i| rng.random_range(lo[i]..=hi[i])).collect())
        .collect();
    let mut pop = evaluate_all(problem, init);
    let mut seen_feasible = pop.iter().any(|p| p.eval.is_feasible());

    for gen in 0..config.generations {
        if !seen_feasible && gen >= budget {
            return Err(Error::NoFeasibleDesign { attempts: gen });
        }
        let (rank, crowd, _) = rank_population(&pop);
        let mut children = Vec::with_capacity(config.population_size);
        while children.len() < config.population_size {
            let a = tournament(&mut rng, &rank, &crowd);
            let b = tournament(&mut rng, &rank, &crowd);
            let (mut c1, mut c2) = if rng.random::<f64>() < config.crossover_rate {
                sbx_pair(&mut rng, &pop[a].x, &pop[b].x, &lo, &hi, config.crossover_eta)
            } else {
                (pop[a].x.clone(), pop[b].x.clone())
            };
            polynomial_mutation(&mut rng, &mut c1, &lo, &hi, mutation_rate, config.mutation_eta);
            polynomial_mutation(&mut rng, &mut c2, &lo, &hi, mutation_rate, config.mutation_eta);
            children.push(c1);
            children.push(c2);
        }
        let offspring = evaluate_all(problem, children);
        seen_feasible |= offspring.iter().any(|p| p.eval.is_feasible());
        pop.extend(offspring);

        let (_, crowd, fronts) = rank_population(&pop);
        let mut keep = Vec::with_capacity(config.population_size);
        for front in fronts {
            if keep.len() + front.len() <= config.population_size {
                keep.extend(front);
            } else {
                let mut last = front;
                last.sort_by(|&a, &b| crowd[b].partial_cmp(&crowd[a]).unwrap_or(Ordering::Equal));
                keep.extend(last.into_iter().take(config.population_size - keep.len()));
            }
            if keep.len() == config.population_size {
                break;
            }
        }
        let mut slots: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
        pop = keep
            .into_iter()
            .map(|i| slots[i].take().expect("unique index"))
            .collect();
    }
    if !pop.iter().any(|p| p.eval.is_feasible()) {
        return Err(Error::NoFeasibleDesign {
            attempts: config.generations,
        });
    }
    Ok(pop)
}

/// Feasible members of `pop` that no other feasible member dominates.
pub fn feasible_front(pop: &[Individual]) -> Vec<usize> {
    let feasible: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].eval.is_feasible()).collect();
    let objs: Vec<&[f64]> = feasible.iter().map(|&i| pop[i].eval.objectives.as_slice()).collect();
    non_dominated_sort(&objs)
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .map(|k| feasible[k])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub morphology: MorphologyVector,
    pub talents: TalentVector,
    pub run_id: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub entries: Vec<ArchiveEntry>,
}

fn near_duplicate(a: &TalentVector, b: &TalentVector) -> bool {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .all(|(x, y)| (x - y).abs() <= DUPLICATE_TOLERANCE)
}

impl ParetoArchive {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn talent_rows(&self) -> Vec<[f64; N_TALENTS]> {
        self.entries.iter().map(|e| e.talents.to_array()).collect()
    }

    /// Deduplicates and keeps only mutually non-dominated entries.
    pub fn from_candidates(candidates: impl IntoIterator<Item = ArchiveEntry>) -> Self {
        let mut unique: Vec<ArchiveEntry> = Vec::new();
        for c in candidates {
            if !unique.iter().any(|u| near_duplicate(&u.talents, &c.talents)) {
                unique.push(c);
            }
        }
        let rows: Vec<[f64; N_TALENTS]> = unique.iter().map(|e| e.talents.to_array()).collect();
        let front = non_dominated_sort(&rows).into_iter().next().unwrap_or_default();
        ParetoArchive {
            entries: front.into_iter().map(|i| unique[i]).collect(),
        }
    }

    pub fn hypervolume(&self, reference: &[f64; N_TALENTS]) -> f64 {
        hypervolume(&self.talent_rows(), reference)
    }

    /// Entry with the largest value of talent `k`, ties broken by the
    /// remaining talents in order.
    pub fn lexicographic_extreme(&self, order: &[usize]) -> Option<&ArchiveEntry> {
        self.entries.iter().max_by(|a, b| {
            let (ta, tb) = (a.talents.to_array(), b.talents.to_array());
            for &k in order {
                match ta[k].partial_cmp(&tb[k]).unwrap_or(Ordering::Equal) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["run_id"];
        header.extend(VAR_NAMES);
        header.extend(TALENT_NAMES);
        w.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.run_id.to_string()];
            row.extend(e.morphology.to_array().iter().map(|v| v.to_string()));
            row.extend(e.talents.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<archive>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 1 + N_VARS + N_TALENTS {
                return Err(Error::InvalidArgument(format!(
                    "archive row has {} fields, expected {}",
                    rec.len(),
                    1 + N_VARS + N_TALENTS
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number `{s}`: {e}")))
            };
            let run_id = rec[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidArgument(format!("bad run id: {e}")))?;
            let mut m = [0.0; N_VARS];
            for (i, v) in m.iter_mut().enumerate() {
                *v = parse(&rec[1 + i])?;
            }
            let mut t = [0.0; N_TALENTS];
            for (i, v) in t.iter_mut().enumerate() {
                *v = parse(&rec[1 + N_VARS + i])?;
            }
            entries.push(ArchiveEntry {
                morphology: MorphologyVector::from_array(m),
                talents: TalentVector::from_array(t),
                run_id,
            });
        }
        Ok(ParetoArchive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Final union of several runs: deduplicated, then filtered to front 0.
pub fn merge_runs(archives: &[ParetoArchive]) -> Result<ParetoArchive> {
    if archives.is_empty() {
        return Err(Error::InvalidArgument("merge_runs needs at least one archive".into()));
    }
    Ok(ParetoArchive::from_candidates(
        archives.iter().flat_map(|a| a.entries.iter().copied()),
    ))
}

/// Feasible non-dominated designs of a single run.
pub fn nsga2_single_run(
    config: &GaConfig,
    bounds: &MorphologyBounds,
    physics: &PhysicsCoefficients,
    run: usize,
) -> Result<ParetoArchive> {
    bounds.validate()?;
    let problem = TalentProblem {
        bounds: *bounds,
        physics: *physics,
    };
    let pop = nsga2(&problem, config, config.run_seed(run))?;
    let front = feasible_front(&pop);
    Ok(ParetoArchive::from_candidates(front.into_iter().map(|i| {
        let morphology = MorphologyVector::from_slice(&pop[i].x).expect("variable count");
        ArchiveEntry {
            morphology,
            talents: TalentVector::from_array(pop[i].eval.objectives.clone().try_into().expect("talent count")),
            run_id: run,
        }
    })))
}

/// `config.runs` independent runs merged by a final non-dominated sort.
pub fn nsga2_run(config: &GaConfig, bounds: &MorphologyBounds, physics: &PhysicsCoefficients) -> Result<ParetoArchive> {
    let runs = (0..config.runs)
        .map(|r| nsga2_single_run(config, bounds, physics, r))
        .collect::<Result<Vec<_>>>()?;
    merge_runs(&runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub config: GaConfig,
    pub bounds: MorphologyBounds,
    pub size: usize,
    pub reference: [f64; N_TALENTS],
    pub hypervolume: f64,
}

impl ArchiveMetadata {
    pub fn new(config: &GaConfig, bounds: &MorphologyBounds, archive: &ParetoArchive) -> Self {
        let reference = [0.0; N_TALENTS];
        ArchiveMetadata {
            config: config.clone(),
            bounds: *bounds,
            size: archive.len(),
            reference,
            hypervolume: archive.hypervolume(&reference),
        }
    }
}
