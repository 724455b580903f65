//! Morphology finalization: constrained global-best PSO that recovers a
//! feasible design whose talents match a target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{MorphologyBounds, MorphologyVector, PhysicsCoefficients, TalentVector, N_TALENTS, N_VARS};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Weight of total constraint violation in an infeasible particle's fitness.
    pub penalty_weight: f64,
    /// Velocity limit as a fraction of each variable's range.
    pub max_velocity_fraction: f64,
    /// Normalized residual above which a target is reported unreachable.
    pub unreachable_threshold: f64,
    /// Evaluation budget per local least-squares polish; 0 disables it.
    pub polish_evaluations: usize,
    /// Best personal positions polished, best first.
    pub polish_starts: usize,
    /// Extra independently seeded swarms tried while the residual exceeds
    /// `restart_tolerance`.
    pub restarts: usize,
    pub restart_tolerance: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm_size: 60,
            iterations: 200,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            penalty_weight: 1e3,
            max_velocity_fraction: 0.2,
            unreachable_threshold: 0.05,
            polish_evaluations: 2_000,
            polish_starts: 8,
            restarts: 4,
            restart_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("swarm_size must be at least 2".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        let positive = [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
            ("penalty_weight", self.penalty_weight),
            ("max_velocity_fraction", self.max_velocity_fraction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalizeReport {
    pub morphology: MorphologyVector,
    pub talents: TalentVector,
    pub target: TalentVector,
    /// Euclidean talent error with each talent divided by its scale.
    pub residual: f64,
    pub constraints: [f64; 3],
    pub unreachable: bool,
    pub evaluations: usize,
    /// Smallest residual among all evaluated feasible positions.
    pub best_feasible_seen: f64,
}

pub fn normalized_residual(t: &[f64; N_TALENTS], target: &[f64; N_TALENTS], scales: &[f64; N_TALENTS]) -> f64 {
    (0..N_TALENTS)
        .map(|k| ((t[k] - target[k]) / scales[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug)]
struct Score {
    violation: f64,
    residual: f64,
    fitness: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        match (self.violation == 0.0, other.violation == 0.0) {
            (true, false) => true,
            (false, true) => false,
            _ => self.fitness < other.fitness,
        }
    }
}

/// PSO over any talent map. `scales` normalize each talent in the residual.
/// Returns the design, its residual, the evaluation count and the best
/// feasible residual seen. A swarm whose polished residual stays above
/// `restart_tolerance` is followed by a freshly seeded one, up to `restarts`
/// times.
pub fn finalize_with<M, C>(
    talent_map: M,
    constraint_map: C,
    target: &[f64; N_TALENTS],
    scales: &[f64; N_TALENTS],
    bounds: &MorphologyBounds,
    config: &PsoConfig,
) -> Result<(MorphologyVector, f64, usize, f64)>
where
    M: Fn(&MorphologyVector) -> Result<[f64; N_TALENTS]> + Sync,
    C: Fn(&MorphologyVector) -> Result<[f64; 3]> + Sync,
{
    config.validate()?;
    bounds.validate()?;
    if target.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("target talents must be finite".into()));
    }
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidArgument("talent scales must be positive".into()));
    }
    let mut best: Option<(MorphologyVector, f64)> = None;
    let mut evaluations = 0;
    let mut best_seen = f64::INFINITY;
    let mut last_err = None;
    for r in 0..=config.restarts {
        let seed = if r == 0 {
            config.seed
        } else {
            derive_seed(config.seed, &format!("restart-{r}"))
        };
        match swarm(&talent_map, &constraint_map, target, scales, bounds, config, seed) {
            Ok((x, res, used, seen)) => {
                evaluations += used;
                best_seen = best_seen.min(seen);
                if best.as_ref().is_none_or(|b| res < b.1) {
                    best = Some((x, res));
                }
            }
            Err(e @ Error::NoFeasibleParticle { .. }) => {
                evaluations += config.swarm_size * (config.iterations + 1);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
        if best.as_ref().is_some_and(|b| b.1 <= config.restart_tolerance) {
            break;
        }
    }
    match best {
        Some((x, res)) => Ok((x, res, evaluations, best_seen)),
        None => Err(last_err.expect("at least one swarm ran")),
    }
}

fn swarm<M, C>(
    talent_map: &M,
    constraint_map: &C,
    target: &[f64; N_TALENTS],
    scales: &[f64; N_TALENTS],
    bounds: &MorphologyBounds,
    config: &PsoConfig,
    seed: u64,
) -> Result<(MorphologyVector, f64, usize, f64)>
where
    M: Fn(&MorphologyVector) -> Result<[f64; N_TALENTS]> + Sync,
    C: Fn(&MorphologyVector) -> Result<[f64; 3]> + Sync,
{
    let lo = bounds.lower.to_array();
    let hi = bounds.upper.to_array();
    let vmax: Vec<f64> = (0..N_VARS)
        .map(|i| config.max_velocity_fraction * (hi[i] - lo[i]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let score = |x: &[f64; N_VARS]| -> Result<Score> {
        let m = MorphologyVector::from_array(*x);
        let violation: f64 = constraint_map(&m)?.iter().map(|c| c.max(0.0)).sum();
        let residual = normalized_residual(&talent_map(&m)?, target, scales);
        Ok(Score {
            violation,
            residual,
            fitness: residual + config.penalty_weight * violation,
        })
    };
    let score_all = |xs: &[[f64; N_VARS]]| -> Result<Vec<Score>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            xs.par_iter().map(score).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            xs.iter().map(score).collect()
        }
    };

    let n = config.swarm_size;
    let mut pos: Vec<[f64; N_VARS]> = (0..n)
        .map(|_| std::array::from_fn(|i| rng.random_range(lo[i]..=hi[i])))
        .collect();
    let mut vel: Vec<[f64; N_VARS]> = (0..n)
        .map(|_| std::array::from_fn(|i| rng.random_range(-vmax[i]..=vmax[i])))
        .collect();
    let mut scores = score_all(&pos)?;
    let mut evaluations = n;
    let mut best_seen = f64::INFINITY;
    let track = |scores: &[Score], best: &mut f64| {
        for s in scores {
            if s.violation == 0.0 && s.residual < *best {
                *best = s.residual;
            }
        }
    };
    track(&scores, &mut best_seen);
    let mut pbest = pos.clone();
    let mut pbest_score = scores.clone();
    let mut g = 0;
    for k in 1..n {
        if pbest_score[k].better_than(&pbest_score[g]) {
            g = k;
        }
    }

    for _ in 0..config.iterations {
        let gpos = pbest[g];
        for k in 0..n {
            for i in 0..N_VARS {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = config.inertia * vel[k][i]
                    + config.cognitive * r1 * (pbest[k][i] - pos[k][i])
                    + config.social * r2 * (gpos[i] - pos[k][i]);
                vel[k][i] = v.clamp(-vmax[i], vmax[i]);
                let x = pos[k][i] + vel[k][i];
                if x < lo[i] || x > hi[i] {
                    vel[k][i] = 0.0;
                }
                pos[k][i] = x.clamp(lo[i], hi[i]);
            }
        }
        scores = score_all(&pos)?;
        evaluations += n;
        track(&scores, &mut best_seen);
        for k in 0..n {
            if scores[k].better_than(&pbest_score[k]) {
                pbest[k] = pos[k];
                pbest_score[k] = scores[k];
                if pbest_score[k].better_than(&pbest_score[g]) {
                    g = k;
                }
            }
        }
    }

    let best = pbest_score[g];
    if best.violation > 0.0 {
        return Err(Error::NoFeasibleParticle {
            iterations: config.iterations,
            best_violation: best.violation,
        });
    }
    let residuals = |x: &[f64; N_VARS]| -> Result<Option<[f64; N_TALENTS]>> {
        let m = MorphologyVector::from_array(*x);
        if constraint_map(&m)?.iter().any(|c| *c > 0.0) {
            return Ok(None);
        }
        let t = talent_map(&m)?;
        Ok(Some(std::array::from_fn(|k| (t[k] - target[k]) / scales[k])))
    };
    let mut order: Vec<usize> = (0..n).filter(|&k| pbest_score[k].violation == 0.0).collect();
    order.sort_by(|&a, &b| pbest_score[a].residual.total_cmp(&pbest_score[b].residual));
    let (mut x, mut residual) = (pbest[g], best.residual);
    for &k in order.iter().take(config.polish_starts) {
        if residual <= 1e-12 {
            break;
        }
        let (y, r, used) = polish(pbest[k], &lo, &hi, config.polish_evaluations, &residuals)?;
        evaluations += used;
        if r < residual {
            x = y;
            residual = r;
        }
    }
    Ok((
        MorphologyVector::from_array(x),
        residual,
        evaluations,
        best_seen.min(residual),
    ))
}

fn norm(e: &[f64; N_TALENTS]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Levenberg-Marquardt on the normalized talent residuals in unit-box
/// coordinates, with a forward-difference Jacobian. Only feasible, in-box
/// improvements are accepted.
fn polish<F>(
    start: [f64; N_VARS],
    lo: &[f64; N_VARS],
    hi: &[f64; N_VARS],
    budget: usize,
    residuals: &F,
) -> Result<([f64; N_VARS], f64, usize)>
where
    F: Fn(&[f64; N_VARS]) -> Result<Option<[f64; N_TALENTS]>>,
{
    use nalgebra::{SMatrix, SVector};
    let span: [f64; N_VARS] = std::array::from_fn(|i| hi[i] - lo[i]);
    let mut x = start;
    let mut used = 1;
    let Some(mut e) = residuals(&x)? else {
        return Ok((x, f64::INFINITY, used));
    };
    let mut lambda = 1e-3;
    let h = 1e-7;
    while used + N_VARS < budget && norm(&e) > 1e-14 && lambda < 1e12 {
        let mut jac = SMatrix::<f64, N_TALENTS, N_VARS>::zeros();
        for i in 0..N_VARS {
            let mut y = x;
            let dir = if x[i] + h * span[i] <= hi[i] { 1.0 } else { -1.0 };
            y[i] = x[i] + dir * h * span[i];
            used += 1;
            // an infeasible probe leaves that column at zero
            if let Some(ey) = residuals(&y)? {
                for k in 0..N_TALENTS {
                    jac[(k, i)] = dir * (ey[k] - e[k]) / h;
                }
            }
        }
        let ev = SVector::<f64, N_TALENTS>::from_column_slice(&e);
        let mut accepted = false;
        while !accepted && lambda < 1e12 && used < budget {
            let jjt = jac * jac.transpose() + SMatrix::<f64, N_TALENTS, N_TALENTS>::identity() * lambda;
            let Some(inv) = jjt.try_inverse() else {
                lambda *= 10.0;
                continue;
            };
            let dz = -(jac.transpose() * (inv * ev));
            let y: [f64; N_VARS] = std::array::from_fn(|i| (x[i] + dz[i] * span[i]).clamp(lo[i], hi[i]));
            used += 1;
            match residuals(&y)? {
                Some(ey) if norm(&ey) < norm(&e) => {
                    x = y;
                    e = ey;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                }
                _ => lambda *= 10.0,
            }
        }
    }
    Ok((x, norm(&e), used))
}

/// Feasible morphology whose talents best match `target`. `scales` are the
/// per-talent ranges of the Pareto archive.
pub fn finalize_morphology(
    target: &TalentVector,
    bounds: &MorphologyBounds,
    physics: &PhysicsCoefficients,
    scales: &[f64; N_TALENTS],
    config: &PsoConfig,
) -> Result<FinalizeReport> {
    let (m, residual, evaluations, best_feasible_seen) = finalize_with(
        |x| physics.talents(x).map(|t| t.to_array()),
        |x| physics.constraints(x),
        &target.to_array(),
        scales,
        bounds,
        config,
    )?;
    let constraints = physics.constraints(&m)?;
    assert!(bounds.contains(&m) && constraints.iter().all(|c| *c <= 0.0));
    Ok(FinalizeReport {
        morphology: m,
        talents: physics.talents(&m)?,
        target: *target,
        residual,
        constraints,
        unreachable: residual > config.unreachable_threshold,
        evaluations,
        best_feasible_seen,
    })
}

/// Per-talent spread of talent rows, used as residual scales.
pub fn talent_scales(rows: &[[f64; N_TALENTS]]) -> Result<[f64; N_TALENTS]> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no talent rows to derive scales from".into()));
    }
    let mut s = [0.0; N_TALENTS];
    for k in 0..N_TALENTS {
        let max = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        let min = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        s[k] = if max > min { max - min } else { 1.0 };
    }
    Ok(s)
}
