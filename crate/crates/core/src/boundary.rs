//! Talent boundary: range box of the first talent, chained conditional
//! quantile bands for the intermediate talents, and a quadratic response
//! surface for the last talent. The decoder maps unit-interval samples onto
//! this boundary.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{TalentVector, N_TALENTS, TALENT_NAMES};
use crate::pareto::ParetoArchive;

pub const BOUNDARY_SCHEMA_VERSION: u32 = 1;

/// Quadratic monomials of `x`: 1, x_i, then x_i*x_j for i <= j.
pub fn quadratic_features(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut f = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    f.push(1.0);
    f.extend_from_slice(x);
    for i in 0..d {
        for j in i..d {
            f.push(x[i] * x[j]);
        }
    }
    f
}

pub fn quadratic_feature_names(inputs: &[&str]) -> Vec<String> {
    let d = inputs.len();
    let mut names = vec!["1".to_string()];
    names.extend(inputs.iter().map(|s| s.to_string()));
    for i in 0..d {
        for j in i..d {
            if i == j {
                names.push(format!("{}^2", inputs[i]));
            } else {
                names.push(format!("{}*{}", inputs[i], inputs[j]));
            }
        }
    }
    names
}

pub fn pinball_loss(q: f64, residual: f64) -> f64 {
    if residual >= 0.0 {
        q * residual
    } else {
        (q - 1.0) * residual
    }
}

/// Conditional quantile curve: quadratic polynomial of standardized inputs
/// `z_i = (x_i - center_i) / scale_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub level: f64,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub coeffs: Vec<f64>,
}

impl QuantileModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (c, s))| (v - c) / s)
            .collect();
        quadratic_features(&z)
            .iter()
            .zip(&self.coeffs)
            .map(|(f, c)| f * c)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileFitOptions {
    pub iterations: usize,
    /// Initial subgradient step on the standardized scale; step k is
    /// `initial_step / sqrt(k + 1)`.
    pub initial_step: f64,
}

impl Default for QuantileFitOptions {
    fn default() -> Self {
        QuantileFitOptions {
            iterations: 5000,
            initial_step: 0.5,
        }
    }
}

/// Fits a one-input quadratic quantile curve.
pub fn fit_quantile(xs: &[f64], ys: &[f64], q: f64) -> Result<QuantileModel> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    fit_quantile_multi(&rows, ys, q, &QuantileFitOptions::default())
}

/// Fits a quadratic quantile model in any number of inputs by subgradient
/// descent on the pinball loss, started from the least-squares fit shifted to
/// the empirical residual quantile. The best iterate is returned.
pub fn fit_quantile_multi(xs: &[Vec<f64>], ys: &[f64], q: f64, opts: &QuantileFitOptions) -> Result<QuantileModel> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
    }
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("xs and ys differ in length".into()));
    }
    if xs.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "quantile fit needs at least 10 points, got {}",
            xs.len()
        )));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) || xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "quantile fit inputs must be finite and rectangular".into(),
        ));
    }
    let n = xs.len();
    let mut center = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for k in 0..d {
        let (lo, hi) = xs
            .iter()
            .map(|x| x[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo <= 0.0 {
            return Err(Error::Degenerate(format!("input {k} is constant ({lo})")));
        }
        center[k] = 0.5 * (lo + hi);
        scale[k] = 0.5 * (hi - lo);
    }
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let y_sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };

    let feats: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let z: Vec<f64> = (0..d).map(|k| (x[k] - center[k]) / scale[k]).collect();
            quadratic_features(&z)
        })
        .collect();
    let p = feats[0].len();
    let yz: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_scale).collect();

    let mut beta = least_squares_start(&feats, &yz, p);
    let mut resid: Vec<f64> = (0..n).map(|i| yz[i] - dot(&feats[i], &beta)).collect();
    let mut sorted = resid.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let shift = sorted[((q * n as f64).floor() as usize).min(n - 1)];
    beta[0] += shift;
    for r in resid.iter_mut() {
        *r -= shift;
    }

    let loss = |res: &[f64]| res.iter().map(|&e| pinball_loss(q, e)).sum::<f64>() / n as f64;
    let mut best = beta.clone();
    let mut best_loss = loss(&resid);
    let mut grad = vec![0.0; p];
    for k in 0..opts.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let w = if resid[i] < 0.0 { 1.0 - q } else { -q };
            for j in 0..p {
                grad[j] += w * feats[i][j];
            }
        }
        let step = opts.initial_step / ((k + 1) as f64).sqrt() / n as f64;
        for j in 0..p {
            beta[j] -= step * grad[j];
        }
        for i in 0..n {
            resid[i] = yz[i] - dot(&feats[i], &beta);
        }
        let l = loss(&resid);
        if l < best_loss {
            best_loss = l;
            best.copy_from_slice(&beta);
        }
    }

    let mut coeffs: Vec<f64> = best.iter().map(|b| b * y_scale).collect();
    coeffs[0] += y_mean;
    Ok(QuantileModel {
        level: q,
        center,
        scale,
        coeffs,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn least_squares_start(feats: &[Vec<f64>], y: &[f64], p: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(feats.len(), p, |i, j| feats[i][j]);
    let b = DVector::from_column_slice(y);
    match a.svd(true, true).solve(&b, 1e-12) {
        Ok(sol) => sol.iter().copied().collect(),
        Err(_) => vec![0.0; p],
    }
}

/// Ordinary least squares on raw quadratic monomials. Columns are scaled to
/// unit max-magnitude before a QR solve; a column whose QR pivot collapses
/// is reported by name.
pub fn fit_quadratic_surface(xs: &[Vec<f64>], ys: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let n = xs.len();
    let feats: Vec<Vec<f64>> = xs.iter().map(|x| quadratic_features(x)).collect();
    let p = feats.first().map_or(0, |f| f.len());
    if n < p {
        return Err(Error::InvalidArgument(format!(
            "{n} points cannot determine {p} coefficients"
        )));
    }
    let mut col_scale = vec![0.0_f64; p];
    for f in &feats {
        for j in 0..p {
            col_scale[j] = col_scale[j].max(f[j].abs());
        }
    }
    for (j, s) in col_scale.iter().enumerate() {
        if *s == 0.0 {
            return Err(Error::RankDeficient {
                feature: names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            });
        }
    }
    let a = DMatrix::from_fn(n, p, |i, j| feats[i][j] / col_scale[j]);
    let b = DVector::from_column_slice(ys);
    let qr = a.qr();
    let r = qr.r();
    let diag_max = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..p {
        if r[(j, j)].abs() <= 1e-10 * diag_max.max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient {
                feature: names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            });
        }
    }
    let qtb = qr.q().transpose() * b;
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))?;
    Ok((0..p).map(|j| sol[j] / col_scale[j]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub low: QuantileModel,
    pub high: QuantileModel,
}

impl QuantileBand {
    /// Band limits at `prefix`, ordered low <= high.
    pub fn limits(&self, prefix: &[f64]) -> (f64, f64) {
        let a = self.low.predict(prefix);
        let b = self.high.predict(prefix);
        (a.min(b), a.max(b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    /// Coefficients of the raw quadratic monomials of the first m-1 talents
    /// (for three talents: 1, r, s, r^2, r*s, s^2).
    pub coeffs: Vec<f64>,
    /// Largest value of the last talent in the fitted archive.
    pub max_value: f64,
}

impl SurfaceModel {
    pub fn raw(&self, x: &[f64]) -> f64 {
        dot(&quadratic_features(x), &self.coeffs)
    }

    /// Surface value clamped to [0, max_value].
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(0.0, self.max_value.max(0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub low_quantile: f64,
    pub high_quantile: f64,
    pub quantile: QuantileFitOptions,
    pub probes: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            low_quantile: 0.05,
            high_quantile: 0.95,
            quantile: QuantileFitOptions::default(),
            probes: 100,
        }
    }
}

/// Goodness-of-fit figures computed on the training archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub points: usize,
    pub surface_r_squared: f64,
    /// Per band: fraction of training targets at or below the low and high curves.
    pub coverage: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalentBoundaryModel {
    pub schema_version: u32,
    pub range_min: f64,
    pub range_max: f64,
    /// Band i bounds talent i+2 conditioned on talents 1..=i+1.
    pub bands: Vec<QuantileBand>,
    pub surface: SurfaceModel,
    pub diagnostics: FitDiagnostics,
}

impl TalentBoundaryModel {
    pub fn n_talents(&self) -> usize {
        self.bands.len() + 2
    }

    pub fn speed_quantile_low(&self) -> &QuantileModel {
        &self.bands[0].low
    }

    pub fn speed_quantile_high(&self) -> &QuantileModel {
        &self.bands[0].high
    }

    /// Maps m-1 unit values onto the boundary, returning all m talents.
    pub fn decode(&self, u: &[f64]) -> Vec<f64> {
        let m = self.n_talents();
        assert_eq!(u.len(), m - 1, "decoder expects {} unit values", m - 1);
        let mut out = Vec::with_capacity(m);
        out.push(scale_unit(u[0], self.range_min, self.range_max));
        for (i, band) in self.bands.iter().enumerate() {
            let (lo, hi) = band.limits(&out);
            out.push(scale_unit(u[i + 1], lo, hi));
        }
        out.push(self.surface.predict(&out));
        out
    }

    /// Unit coordinates of a talent prefix (inverse of the scaling part of
    /// [`decode`](Self::decode)), clamped to [0, 1].
    pub fn encode(&self, talents: &[f64]) -> Vec<f64> {
        let m = self.n_talents();
        let mut u = Vec::with_capacity(m - 1);
        u.push(unit_of(talents[0], self.range_min, self.range_max));
        for (i, band) in self.bands.iter().enumerate() {
            let (lo, hi) = band.limits(&talents[..=i]);
            u.push(unit_of(talents[i + 1], lo, hi));
        }
        u
    }

    /// Whether talents satisfy the range box and every quantile band.
    pub fn within_band(&self, talents: &[f64], tol: f64) -> bool {
        if talents[0] < self.range_min - tol || talents[0] > self.range_max + tol {
            return false;
        }
        self.bands.iter().enumerate().all(|(i, band)| {
            let (lo, hi) = band.limits(&talents[..=i]);
            talents[i + 1] >= lo - tol && talents[i + 1] <= hi + tol
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TalentBoundaryModel = serde_json::from_str(s)?;
        if m.schema_version != BOUNDARY_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: m.schema_version,
                expected: BOUNDARY_SCHEMA_VERSION,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// `u` in [0, 1] mapped linearly onto [lo, hi]; exact at both ends and
/// nondecreasing in `u`.
fn scale_unit(u: f64, lo: f64, hi: f64) -> f64 {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    if u >= 1.0 {
        return hi;
    }
    (u * (hi - lo) + lo).clamp(lo, hi)
}

fn unit_of(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Unit-interval outputs of the talent network (one per talent except the last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitTalentSample {
    pub u: Vec<f64>,
}

impl UnitTalentSample {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("unit talent values must lie in [0, 1]".into()));
        }
        Ok(UnitTalentSample { u })
    }
}

pub fn decode_talents(u: &UnitTalentSample, model: &TalentBoundaryModel) -> TalentVector {
    let v = model.decode(&u.u);
    TalentVector::from_array(v.try_into().expect("three-talent boundary model"))
}

/// Fits the boundary of arbitrary-length talent rows.
pub fn fit_boundary(rows: &[Vec<f64>], names: &[&str], config: &BoundaryConfig) -> Result<TalentBoundaryModel> {
    let m = names.len();
    if m < 2 {
        return Err(Error::InvalidArgument("boundary needs at least two talents".into()));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidArgument("talent rows differ in length".into()));
    }
    let surface_names = quadratic_feature_names(&names[..m - 1]);
    let min_points = 2 * surface_names.len();
    if rows.len() < min_points {
        return Err(Error::InvalidArgument(format!(
            "boundary fit needs at least {min_points} points, got {}",
            rows.len()
        )));
    }
    let (range_min, range_max) = rows
        .iter()
        .map(|r| r[0])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(range_min < range_max) {
        return Err(Error::Degenerate(format!("{} is constant over the archive", names[0])));
    }

    let mut bands = Vec::new();
    let mut coverage = Vec::new();
    for i in 1..(m - 1) {
        let prefix: Vec<Vec<f64>> = rows.iter().map(|r| r[..i].to_vec()).collect();
        let target: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let low = fit_quantile_multi(&prefix, &target, config.low_quantile, &config.quantile)?;
        let high = fit_quantile_multi(&prefix, &target, config.high_quantile, &config.quantile)?;
        let frac = |qm: &QuantileModel| {
            prefix.iter().zip(&target).filter(|(x, y)| **y <= qm.predict(x)).count() as f64 / rows.len() as f64
        };
        coverage.push((frac(&low), frac(&high)));
        check_ordering(&low, &high, &prefix, range_min, range_max, config.probes)?;
        bands.push(QuantileBand { low, high });
    }

    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r[..m - 1].to_vec()).collect();
    let target: Vec<f64> = rows.iter().map(|r| r[m - 1]).collect();
    let coeffs = fit_quadratic_surface(&inputs, &target, &surface_names)?;
    let max_value = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let surface = SurfaceModel { coeffs, max_value };
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = inputs
        .iter()
        .zip(&target)
        .map(|(x, y)| (y - surface.raw(x)).powi(2))
        .sum();
    let surface_r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(TalentBoundaryModel {
        schema_version: BOUNDARY_SCHEMA_VERSION,
        range_min,
        range_max,
        bands,
        surface,
        diagnostics: FitDiagnostics {
            points: rows.len(),
            surface_r_squared,
            coverage,
        },
    })
}

fn check_ordering(
    low: &QuantileModel,
    high: &QuantileModel,
    prefix: &[Vec<f64>],
    range_min: f64,
    range_max: f64,
    probes: usize,
) -> Result<()> {
    let check = |x: &[f64]| {
        let (l, h) = (low.predict(x), high.predict(x));
        if l > h {
            Err(Error::QuantileCrossing {
                x: x[0],
                low: l,
                high: h,
            })
        } else {
            Ok(())
        }
    };
    if prefix[0].len() == 1 {
        for k in 0..probes.max(2) {
            let t = k as f64 / (probes.max(2) - 1) as f64;
            check(&[range_min + t * (range_max - range_min)])?;
        }
    } else {
        for x in prefix {
            check(x)?;
        }
    }
    Ok(())
}

/// Fits the three-talent boundary of a Pareto archive.
pub fn fit_surface(archive: &ParetoArchive, config: &BoundaryConfig) -> Result<TalentBoundaryModel> {
    let rows: Vec<Vec<f64>> = archive.talent_rows().iter().map(|r| r.to_vec()).collect();
    fit_boundary(&rows, &TALENT_NAMES[..N_TALENTS], config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_targets_fit_constant_curve() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys = vec![3.5; 20];
        for q in [0.05, 0.5, 0.95] {
            let m = fit_quantile(&xs, &ys, q).unwrap();
            for x in [-1.0, 0.0, 7.3, 19.0] {
                assert!((m.predict(&[x]) - 3.5).abs() < 1e-9, "q={q} x={x}");
            }
        }
    }

    #[test]
    fn median_recovers_generating_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..400).map(|i| i as f64 / 40.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0 + rng.random_range(-1.0..1.0)).collect();
        let m = fit_quantile(&xs, &ys, 0.5).unwrap();
        let slope = (m.predict(&[9.0]) - m.predict(&[1.0])) / 8.0;
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn low_curve_below_high_curve_and_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..10.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 0.3 * x * x - x + rng.random_range(-2.0..2.0) * (1.0 + 0.1 * x))
            .collect();
        let lo = fit_quantile(&xs, &ys, 0.05).unwrap();
        let hi = fit_quantile(&xs, &ys, 0.95).unwrap();
        for x in &xs {
            assert!(lo.predict(&[*x]) <= hi.predict(&[*x]));
        }
        for (m, q) in [(&lo, 0.05), (&hi, 0.95)] {
            let cov = xs.iter().zip(&ys).filter(|(x, y)| **y <= m.predict(&[**x])).count() as f64 / 300.0;
            assert!((cov - q).abs() <= 0.07, "coverage {cov} for q={q}");
        }
    }

    #[test]
    fn quantile_errors() {
        let xs = vec![1.0; 12];
        let ys: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert!(matches!(fit_quantile(&xs, &ys, 0.5), Err(Error::Degenerate(_))));
        assert!(fit_quantile(&ys[..5], &ys[..5], 0.5).is_err());
        assert!(fit_quantile(&ys, &ys, 1.0).is_err());
    }

    fn synthetic_rows(seed: u64, n: usize) -> (Vec<Vec<f64>>, [f64; 6]) {
        let coeffs = [4.0, -0.05, 0.2, 0.0004, -0.002, -0.006];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let r: f64 = rng.random_range(5.0..70.0);
                let s: f64 = 30.0 - 0.25 * r + rng.random_range(-3.0..3.0);
                let c = dot(&quadratic_features(&[r, s]), &coeffs);
                vec![r, s, c]
            })
            .collect();
        (rows, coeffs)
    }

    #[test]
    fn surface_coefficients_recovered() {
        let (rows, coeffs) = synthetic_rows(4, 60);
        let m = fit_boundary(&rows, &TALENT_NAMES, &BoundaryConfig::default()).unwrap();
        for (a, b) in m.surface.coeffs.iter().zip(coeffs) {
            assert!((a - b).abs() < 1e-6, "{:?}", m.surface.coeffs);
        }
        assert!(m.diagnostics.surface_r_squared > 0.999_999);
    }

    #[test]
    fn rank_deficiency_names_feature() {
        // speed a linear function of range makes `nominal_speed` collinear with `1, r`
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let r = 10.0 + i as f64;
                vec![r, 2.0 * r + 1.0, 1.0 + 0.1 * r]
            })
            .collect();
        let cfg = BoundaryConfig::default();
        match fit_boundary(&rows, &TALENT_NAMES, &cfg) {
            Err(Error::RankDeficient { feature }) => assert_eq!(feature, "nominal_speed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let (rows, _) = synthetic_rows(5, 11);
        assert!(fit_boundary(&rows, &TALENT_NAMES, &BoundaryConfig::default()).is_err());
    }

    #[test]
    fn extrema_stable_under_interior_removal() {
        let (mut rows, _) = synthetic_rows(6, 40);
        let cfg = BoundaryConfig::default();
        let a = fit_boundary(&rows, &TALENT_NAMES, &cfg).unwrap();
        let (imin, imax) = {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.sort_by(|&i, &j| rows[i][0].partial_cmp(&rows[j][0]).unwrap());
            (idx[0], idx[idx.len() - 1])
        };
        let victim = (0..rows.len()).find(|&i| i != imin && i != imax).unwrap();
        rows.remove(victim);
        let b = fit_boundary(&rows, &TALENT_NAMES, &cfg).unwrap();
        assert_eq!((a.range_min, a.range_max), (b.range_min, b.range_max));
    }

    #[test]
    fn decoder_corners_and_clamping() {
        let (rows, _) = synthetic_rows(7, 80);
        let m = fit_boundary(&rows, &TALENT_NAMES, &BoundaryConfig::default()).unwrap();
        let lo = m.decode(&[0.0, 0.0]);
        assert_eq!(lo[0], m.range_min);
        assert_eq!(lo[1], m.bands[0].limits(&[m.range_min]).0);
        let hi = m.decode(&[1.0, 1.0]);
        assert_eq!(hi[0], m.range_max);
        assert_eq!(hi[1], m.bands[0].limits(&[m.range_max]).1);
        assert_eq!(m.decode(&[-3.0, 7.0]), m.decode(&[0.0, 1.0]));
        let t = decode_talents(&UnitTalentSample::new(vec![0.3, 0.6]).unwrap(), &m);
        assert!(t.package_capacity >= 0.0);
        let u = m.encode(&t.to_array());
        assert!((u[0] - 0.3).abs() < 1e-9 && (u[1] - 0.6).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let (rows, _) = synthetic_rows(8, 40);
        let m = fit_boundary(&rows, &TALENT_NAMES, &BoundaryConfig::default()).unwrap();
        let back = TalentBoundaryModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.clone();
        bad.schema_version = 99;
        let s = serde_json::to_string(&bad).unwrap();
        assert!(matches!(TalentBoundaryModel::from_json(&s), Err(Error::Schema { .. })));
    }

    #[test]
    fn chained_quantiles_for_four_talents() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..1.0);
                let b = 1.0 - a + rng.random_range(0.0..0.3);
                let c = a * b + rng.random_range(0.0..0.2);
                vec![a, b, c, 2.0 - a - b - c]
            })
            .collect();
        let m = fit_boundary(&rows, &["a", "b", "c", "d"], &BoundaryConfig::default()).unwrap();
        assert_eq!(m.bands.len(), 2);
        for _ in 0..200 {
            let u = [rng.random(), rng.random(), rng.random()];
            let v = m.decode(&u);
            assert_eq!(v.len(), 4);
            assert!(m.within_band(&v, 0.0));
        }
    }
}
