//! Growth-rate, shape, martingale and extinction-tail estimators.
//!
//! Every estimator maps a pure function over replica seeds (in parallel) and
//! folds the per-replica values in index order, so results are independent of
//! the thread count. Conditioned estimators draw replicas through
//! [`ConditionedSampler`]; the conditioning horizon is raised to whatever the
//! estimator needs so that the quantity being logged is never empty.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Environment, LatticeParams, Point, Site};
use crate::counting::{count_between, count_final, surviving_layer, CountMode, PathCounter};
use crate::dynamics::{evolve_front, probe_extinction, Boundary, Extinction, Front, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::hitting::{essential_hitting, regen_sequence, ConditionedSample, ConditionedSampler, HittingCaps};
use crate::stats::{median, pooled_se, proportion_se, Accumulator};

pub const SCHEMA_VERSION: u32 = 1;

/// How conditioned replicas are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Survival horizon `H` used for conditioning and for hitting times.
    pub horizon: u32,
    /// Maximum candidates tried; defaults to `100 * replicas + 10^4`.
    pub budget: Option<u64>,
    /// First replica index tried.
    pub first_index: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan { horizon: DEFAULT_HORIZON, budget: None, first_index: 0 }
    }
}

impl SamplingPlan {
    pub fn with_horizon(horizon: u32) -> Self {
        SamplingPlan { horizon, ..Default::default() }
    }

    fn caps(&self) -> HittingCaps {
        HittingCaps::with_horizon(self.horizon)
    }

    fn draw(&self, params: &LatticeParams, needed: u32, replicas: usize) -> Result<(Vec<ConditionedSample>, SeedRange)> {
        if replicas == 0 {
            return Err(Error::Precondition("replicas must be at least 1".into()));
        }
        let horizon = self.horizon.max(needed);
        let budget = self.budget.unwrap_or(100 * replicas as u64 + 10_000);
        let mut sampler = ConditionedSampler::new(*params, horizon, budget)?.starting_at(self.first_index);
        let samples = sampler.take(replicas)?;
        let range = SeedRange {
            first: self.first_index,
            end: self.first_index + sampler.tried(),
            tried: sampler.tried(),
            accepted: sampler.accepted(),
            horizon,
        };
        Ok((samples, range))
    }
}

/// Replica indices consumed by an estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRange {
    pub first: u64,
    /// One past the last index tried.
    pub end: u64,
    pub tried: u64,
    pub accepted: u64,
    /// Conditioning horizon actually used (0 for unconditioned runs).
    pub horizon: u32,
}

impl SeedRange {
    fn unconditioned(first: u64, count: u64) -> Self {
        SeedRange { first, end: first + count, tried: count, accepted: count, horizon: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Plain,
    Surviving,
    RegenChain,
    RegenSubsequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub direction: Vec<f64>,
    /// Nats per layer.
    pub value: f64,
    pub stderr: f64,
    /// Level used (mean final level for chain-based estimates).
    pub n_used: u64,
    pub replicas: u64,
    pub method: Method,
    pub survival_m: Option<u32>,
    pub seeds: SeedRange,
    /// Replicas excluded after acceptance (failed chains, empty subsequences).
    pub failures: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kept_fraction: Option<f64>,
    /// Per-replica values in replica order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl GrowthEstimate {
    fn from_values(values: Vec<f64>, direction: Vec<f64>, n_used: u64, method: Method, seeds: SeedRange) -> Self {
        let acc: Accumulator = values.iter().copied().collect();
        GrowthEstimate {
            direction,
            value: acc.mean(),
            stderr: acc.stderr(),
            n_used,
            replicas: acc.count,
            method,
            survival_m: None,
            seeds,
            failures: 0,
            kept_fraction: None,
            samples: values,
        }
    }

    /// `log((2d+1) p)`, the annealed growth rate bounding every estimate.
    pub fn annealed_bound(params: &LatticeParams) -> f64 {
        ((2 * params.d + 1) as f64 * params.p).ln()
    }

    /// `0 < value <= log((2d+1) p) + 3 stderr`.
    pub fn within_bound(&self, params: &LatticeParams) -> bool {
        self.value > 0.0 && self.value <= Self::annealed_bound(params) + 3.0 * self.stderr + 1e-12
    }

    pub fn to_json(&self, params: &LatticeParams) -> serde_json::Value {
        json_record("growth_estimate", params, self)
    }
}

/// Wraps `body`'s fields with `schema_version`, `kind` and `params`.
pub fn json_record<T: Serialize>(kind: &str, params: &LatticeParams, body: &T) -> serde_json::Value {
    let mut out = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "params": params,
    });
    if let (Some(map), Ok(serde_json::Value::Object(fields))) = (out.as_object_mut(), serde_json::to_value(body)) {
        for (k, v) in fields {
            map.insert(k, v);
        }
    }
    out
}

fn check_params(params: &LatticeParams) -> Result<()> {
    params.validate()
}

/// Mean over conditioned replicas of `(1/n) log N_n`, or of the
/// survival-filtered `(1/n) log N-bar_n` when `survival_m` is set.
pub fn estimate_alpha0(
    params: &LatticeParams,
    n: u32,
    replicas: usize,
    survival_m: Option<u32>,
    plan: &SamplingPlan,
) -> Result<GrowthEstimate> {
    check_params(params)?;
    if n == 0 {
        return Err(Error::Precondition("level n must be at least 1".into()));
    }
    if survival_m == Some(0) {
        return Err(Error::Precondition("survival horizon m must be at least 1".into()));
    }
    let (samples, seeds) = plan.draw(params, n + survival_m.unwrap_or(0), replicas)?;
    let values = samples
        .par_iter()
        .map(|s| {
            let env = s.environment(params);
            let mut layer = count_final(&env, n, CountMode::Log)?;
            if let Some(m) = survival_m {
                layer = surviving_layer(&env, &layer, m)?;
            }
            Ok(layer.total().ln() / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let method = if survival_m.is_some() { Method::Surviving } else { Method::Plain };
    let mut est = GrowthEstimate::from_values(values, vec![0.0; params.d], n as u64, method, seeds);
    est.survival_m = survival_m;
    Ok(est)
}

/// `(1/S_n) log N_{(n y, S_n)}` along regenerating chains of `n_links` links.
pub fn estimate_alpha_dir(
    params: &LatticeParams,
    y: Point,
    h: u32,
    n_links: usize,
    replicas: usize,
    plan: &SamplingPlan,
) -> Result<GrowthEstimate> {
    check_params(params)?;
    if n_links == 0 || h == 0 {
        return Err(Error::Precondition("n_links and h must be at least 1".into()));
    }
    let (samples, seeds) = plan.draw(params, 0, replicas)?;
    let caps = plan.caps();
    let d = params.d;
    let outcomes = samples
        .par_iter()
        .map(|s| {
            let env = s.environment(params);
            let chain = regen_sequence(&env, y, h, n_links, &caps)?;
            if !chain.is_complete() {
                return Ok(None);
            }
            let end = chain.point(n_links);
            let ln = count_between(&env, &Site::origin(), &end, CountMode::Log)?.ln();
            let dir: Vec<f64> = (0..d).map(|a| end.z.0[a] as f64 / end.t as f64).collect();
            Ok(Some((ln / end.t as f64, dir, end.t)))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes.iter().filter(|o| o.is_none()).count() as u64;
    let ok: Vec<_> = outcomes.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Sampling(format!("all {failures} chains failed")));
    }
    let mut direction = vec![0.0; d];
    let mut level = 0.0;
    for (_, dir, s) in &ok {
        for a in 0..d {
            direction[a] += dir[a] / ok.len() as f64;
        }
        level += *s as f64 / ok.len() as f64;
    }
    let values = ok.iter().map(|(v, _, _)| *v).collect();
    let mut est = GrowthEstimate::from_values(values, direction, level.round() as u64, Method::RegenChain, seeds);
    est.failures = failures;
    Ok(est)
}

/// Subsequence estimate: along `k = 1..=n_max`, keep the levels `k h` at
/// which `k y` is reached from the origin and report `(1/(k h)) log N_{k(y,h)}`
/// at the last kept `k` of each replica.
pub fn directional_subsequence_estimate(
    params: &LatticeParams,
    y: Point,
    h: u32,
    n_max: u32,
    replicas: usize,
    mu_y: Option<f64>,
    plan: &SamplingPlan,
) -> Result<GrowthEstimate> {
    check_params(params)?;
    if h == 0 || n_max == 0 {
        return Err(Error::Precondition("h and n_max must be at least 1".into()));
    }
    if let Some(mu) = mu_y {
        if mu >= h as f64 {
            return Err(Error::Precondition(format!("mu(y) = {mu} is not below h = {h}")));
        }
    }
    let steps = n_max
        .checked_mul(h)
        .ok_or_else(|| Error::Precondition("n_max * h overflows".into()))?;
    let (samples, seeds) = plan.draw(params, steps, replicas)?;
    let outcomes = samples
        .par_iter()
        .map(|s| {
            let env = s.environment(params);
            let mut counter = PathCounter::new(&env, Site::origin(), steps, CountMode::Log)?;
            let mut kept = 0u32;
            let mut last = None;
            for k in 1..=n_max {
                for _ in 0..h {
                    counter.step()?;
                }
                let ln = counter.layer().ln_at(y.scale(k as i32));
                if ln > f64::NEG_INFINITY {
                    kept += 1;
                    last = Some((k, ln / (k as f64 * h as f64)));
                }
            }
            Ok((kept, last))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept_total: u64 = outcomes.iter().map(|o| o.0 as u64).sum();
    let failures = outcomes.iter().filter(|o| o.1.is_none()).count() as u64;
    let hits: Vec<(u32, f64)> = outcomes.into_iter().filter_map(|o| o.1).collect();
    if hits.is_empty() {
        return Err(Error::InsufficientHits(format!("no k <= {n_max} reached in {replicas} replicas")));
    }
    let level = hits.iter().map(|(k, _)| (*k * h) as f64).sum::<f64>() / hits.len() as f64;
    let d = params.d;
    let span = h as f64;
    let direction = (0..d).map(|a| y.0[a] as f64 / span).collect();
    let values = hits.iter().map(|(_, v)| *v).collect();
    let mut est = GrowthEstimate::from_values(values, direction, level.round() as u64, Method::RegenSubsequence, seeds);
    est.failures = failures;
    est.kept_fraction = Some(kept_total as f64 / (replicas as f64 * n_max as f64));
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeMethod {
    SigmaBased,
    HullBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMean {
    pub n: u32,
    pub mean: f64,
    pub stderr: f64,
    pub used: u64,
}

/// `mu(x)` estimate for one integer direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub x: Vec<i32>,
    pub method: ShapeMethod,
    /// Mean of `sigma(n x)/n` (sigma-based) or `n / r_n` (hull-based) per level.
    pub levels: Vec<LevelMean>,
    /// Minimum of the level means.
    pub value: f64,
    pub stderr: f64,
    pub failures: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub entries: Vec<MuEstimate>,
    /// Mean and standard error of `sigma(0)`.
    pub sigma0: f64,
    pub sigma0_stderr: f64,
    pub method: ShapeMethod,
    pub n_used: u32,
    pub replicas: u64,
    pub seeds: SeedRange,
}

impl ShapeEstimate {
    /// `mu` at an integer point, by homogeneity from a recorded direction
    /// pointing the same way.
    pub fn mu_at(&self, z: &[i32]) -> Option<f64> {
        if z.iter().all(|&c| c == 0) {
            return Some(0.0);
        }
        for e in &self.entries {
            if let Some(c) = positive_multiple(z, &e.x) {
                return Some(c * e.value);
            }
        }
        None
    }
}

/// `c > 0` with `z = c x`, if any.
fn positive_multiple(z: &[i32], x: &[i32]) -> Option<f64> {
    if z.len() != x.len() || x.iter().all(|&c| c == 0) {
        return None;
    }
    let (i, &xi) = x.iter().enumerate().find(|(_, &c)| c != 0)?;
    let c = z[i] as f64 / xi as f64;
    if c <= 0.0 {
        return None;
    }
    let parallel = z.iter().zip(x).all(|(&a, &b)| (a as i64) * (xi as i64) == (b as i64) * (z[i] as i64));
    parallel.then_some(c)
}

fn mu_from_samples(
    params: &LatticeParams,
    samples: &[ConditionedSample],
    x: Point,
    n_list: &[u32],
    caps: &HittingCaps,
) -> Result<MuEstimate> {
    let per_replica = samples
        .par_iter()
        .map(|s| {
            let env = s.environment(params);
            n_list
                .iter()
                .map(|&n| {
                    let r = essential_hitting(&env, x.scale(n as i32), caps)?;
                    Ok(r.sigma.map(|sigma| sigma as f64 / n as f64))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut failures = 0;
    let mut levels = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let mut acc = Accumulator::new();
        for row in &per_replica {
            match row[i] {
                Some(v) => acc.push(v),
                None => failures += 1,
            }
        }
        levels.push(LevelMean { n, mean: acc.mean(), stderr: acc.stderr(), used: acc.count });
    }
    let best = levels
        .iter()
        .filter(|l| l.used > 0)
        .min_by(|a, b| a.mean.total_cmp(&b.mean))
        .ok_or_else(|| Error::Sampling("every hitting record failed".into()))?;
    Ok(MuEstimate {
        x: x.coords(params.d).to_vec(),
        method: ShapeMethod::SigmaBased,
        value: best.mean,
        stderr: best.stderr,
        levels,
        failures,
    })
}

fn check_levels(n_list: &[u32]) -> Result<()> {
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Precondition("levels must be a non-empty list of positive integers".into()));
    }
    Ok(())
}

/// `min_n mean sigma(n x)/n` over conditioned replicas.
pub fn estimate_mu(params: &LatticeParams, x: Point, n_list: &[u32], replicas: usize, plan: &SamplingPlan) -> Result<MuEstimate> {
    check_params(params)?;
    check_levels(n_list)?;
    let (samples, _) = plan.draw(params, 0, replicas)?;
    mu_from_samples(params, &samples, x, n_list, &plan.caps())
}

/// Sigma-based `mu` along each of `xs`, plus the mean of `sigma(0)`, all on
/// the same conditioned replicas.
pub fn estimate_shape(params: &LatticeParams, xs: &[Point], n_list: &[u32], replicas: usize, plan: &SamplingPlan) -> Result<ShapeEstimate> {
    check_params(params)?;
    check_levels(n_list)?;
    let (samples, seeds) = plan.draw(params, 0, replicas)?;
    let caps = plan.caps();
    let entries = xs
        .iter()
        .map(|&x| mu_from_samples(params, &samples, x, n_list, &caps))
        .collect::<Result<Vec<_>>>()?;
    let sigma0 = mu_from_samples(params, &samples, Point::ORIGIN, &[1], &caps)?;
    Ok(ShapeEstimate {
        entries,
        sigma0: sigma0.levels[0].mean,
        sigma0_stderr: sigma0.levels[0].stderr,
        method: ShapeMethod::SigmaBased,
        n_used: *n_list.iter().max().unwrap(),
        replicas: samples.len() as u64,
        seeds,
    })
}

/// Hull cross-check: `n / r_n` with `r_n` the largest coordinate along
/// `axis` occupied by the origin's front at level `n`.
pub fn estimate_mu_hull(params: &LatticeParams, axis: usize, n: u32, replicas: usize, plan: &SamplingPlan) -> Result<MuEstimate> {
    check_params(params)?;
    if axis >= params.d || n == 0 {
        return Err(Error::Precondition("axis must be below d and n at least 1".into()));
    }
    let (samples, _) = plan.draw(params, n, replicas)?;
    let radii = samples
        .par_iter()
        .map(|s| {
            let env = s.environment(params);
            let mut front = Front::single(params.d, Point::ORIGIN, 0, 8)?;
            for _ in 0..n {
                front = evolve_front(&env, &front, Boundary::Grow)?;
            }
            Ok(front.points().map(|z| z.0[axis]).max().unwrap_or(0))
        })
        .collect::<Result<Vec<i32>>>()?;
    let acc: Accumulator = radii.iter().filter(|&&r| r > 0).map(|&r| n as f64 / r as f64).collect();
    let failures = radii.iter().filter(|&&r| r <= 0).count() as u64;
    let level = LevelMean { n, mean: acc.mean(), stderr: acc.stderr(), used: acc.count };
    Ok(MuEstimate {
        x: Point::unit(axis, 1).coords(params.d).to_vec(),
        method: ShapeMethod::HullBased,
        levels: vec![level],
        value: level.mean,
        stderr: level.stderr,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub z: Vec<i32>,
    pub l: u32,
    pub y: Vec<i32>,
    pub h: u32,
    /// Predicted direction `y / E s(y, h)`.
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub resolution: u32,
    pub scale: u32,
    pub sigma0: f64,
    /// `(z, mu(z))` for every admitted grid point.
    pub mu_reference: Vec<(Vec<i32>, f64)>,
    pub points: Vec<GridPoint>,
    pub skipped: Vec<String>,
}

/// Encodings `(y, h) = (n z, ceil(n (l - mu(z)) / E sigma(0)))` for the
/// directions `z / l`, `z` in `[-l, l]^d`, with `mu(z) < l`.
pub fn build_direction_grid(d: usize, resolution: u32, scale: u32, mu_ref: &ShapeEstimate) -> Result<DirectionGrid> {
    if resolution == 0 || scale == 0 {
        return Err(Error::Precondition("resolution and scale must be at least 1".into()));
    }
    if !(mu_ref.sigma0 >= 1.0) {
        return Err(Error::Precondition(format!("E sigma(0) estimate {} below 1", mu_ref.sigma0)));
    }
    let l = resolution as i32;
    let mut grid = DirectionGrid {
        resolution,
        scale,
        sigma0: mu_ref.sigma0,
        mu_reference: Vec::new(),
        points: Vec::new(),
        skipped: Vec::new(),
    };
    let window = crate::dynamics::Window::cube(d, Point::ORIGIN, l as i64)?;
    for z in window.points() {
        let zc = z.coords(d).to_vec();
        let Some(mu) = mu_ref.mu_at(&zc) else {
            grid.skipped.push(format!("{zc:?}/{l}: no mu estimate along this direction"));
            continue;
        };
        if mu >= l as f64 {
            grid.skipped.push(format!("{zc:?}/{l}: mu = {mu:.4} outside the unit ball"));
            continue;
        }
        let n = scale as f64;
        let h = (n * (l as f64 - mu) / mu_ref.sigma0).ceil().max(1.0) as u32;
        let y = z.scale(scale as i32);
        let first = if zc.iter().all(|&c| c == 0) { mu_ref.sigma0 } else { n * mu };
        let s_hat = first + h as f64 * mu_ref.sigma0;
        grid.mu_reference.push((zc.clone(), mu));
        grid.points.push(GridPoint {
            z: zc,
            l: resolution,
            y: y.coords(d).to_vec(),
            h,
            target: (0..d).map(|a| y.0[a] as f64 / s_hat).collect(),
        });
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub grid: GridPoint,
    pub estimate: Option<GrowthEstimate>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub a: usize,
    pub b: usize,
    pub diff: f64,
    pub pooled_se: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub a: usize,
    pub b: usize,
    pub mid: usize,
    pub value: f64,
    /// Chord value at the projection of `mid` onto the segment `a..b`.
    pub chord: f64,
    pub pooled_se: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximumCheck {
    pub center: usize,
    pub argmax: usize,
    pub excess: f64,
    pub pooled_se: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub grid: DirectionGrid,
    pub n_links: usize,
    pub points: Vec<ProfilePoint>,
    pub symmetry: Vec<SymmetryCheck>,
    pub concavity: Vec<ConcavityCheck>,
    pub maximum: Option<MaximumCheck>,
}

/// Tolerance multiplier for the diagnostic checks.
pub const DIAGNOSTIC_SIGMAS: f64 = 3.0;

impl GrowthProfile {
    pub fn diagnostics_ok(&self) -> bool {
        self.symmetry.iter().all(|c| c.ok) && self.concavity.iter().all(|c| c.ok) && self.maximum.is_none_or(|m| m.ok)
    }

    /// CSV rows `x1..xd,value,stderr` over the points that produced an estimate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Resource(format!("csv: {e}"));
        let d = self.grid.points.first().map_or(0, |g| g.y.len());
        let mut header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
        header.extend(["value".into(), "stderr".into()]);
        wtr.write_record(&header).map_err(err)?;
        for p in &self.points {
            if let Some(e) = &p.estimate {
                let mut row: Vec<String> = e.direction.iter().map(|x| x.to_string()).collect();
                row.push(e.value.to_string());
                row.push(e.stderr.to_string());
                wtr.write_record(&row).map_err(err)?;
            }
        }
        wtr.flush().map_err(|e| Error::Resource(e.to_string()))
    }
}

/// `alpha` along every grid encoding, with symmetry, midpoint-concavity and
/// maximum-at-zero diagnostics.
pub fn estimate_profile(
    params: &LatticeParams,
    grid: &DirectionGrid,
    n_links: usize,
    replicas: usize,
    plan: &SamplingPlan,
) -> Result<GrowthProfile> {
    if grid.points.is_empty() {
        return Err(Error::Precondition("empty direction grid".into()));
    }
    let points: Vec<ProfilePoint> = grid
        .points
        .iter()
        .map(|g| {
            let y = Point::from_slice(&g.y);
            match estimate_alpha_dir(params, y, g.h, n_links, replicas, plan) {
                Ok(e) => ProfilePoint { grid: g.clone(), estimate: Some(e), error: None },
                Err(e) => ProfilePoint { grid: g.clone(), estimate: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let est: Vec<Option<&GrowthEstimate>> = points.iter().map(|p| p.estimate.as_ref()).collect();
    Ok(GrowthProfile {
        symmetry: symmetry_checks(&grid.points, &est),
        concavity: concavity_checks(&est),
        maximum: maximum_check(&est),
        grid: grid.clone(),
        n_links,
        points,
    })
}

fn symmetry_checks(grid: &[GridPoint], est: &[Option<&GrowthEstimate>]) -> Vec<SymmetryCheck> {
    let mut out = Vec::new();
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            if grid[a].h != grid[b].h {
                continue;
            }
            let (ya, yb) = (&grid[a].y, &grid[b].y);
            let reflected = ya.iter().zip(yb).all(|(p, q)| *p == -*q) && ya.iter().any(|&c| c != 0);
            let mut sa = ya.clone();
            let mut sb = yb.clone();
            sa.sort_unstable();
            sb.sort_unstable();
            let permuted = ya != yb && sa == sb;
            if !(reflected || permuted) {
                continue;
            }
            if let (Some(ea), Some(eb)) = (est[a], est[b]) {
                let diff = (ea.value - eb.value).abs();
                let se = pooled_se(&[ea.stderr, eb.stderr]);
                out.push(SymmetryCheck { a, b, diff, pooled_se: se, ok: diff < DIAGNOSTIC_SIGMAS * se });
            }
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn concavity_checks(est: &[Option<&GrowthEstimate>]) -> Vec<ConcavityCheck> {
    let idx: Vec<usize> = (0..est.len()).filter(|&i| est[i].is_some()).collect();
    let mut out = Vec::new();
    for (ia, &a) in idx.iter().enumerate() {
        for &b in &idx[ia + 1..] {
            let (ea, eb) = (est[a].unwrap(), est[b].unwrap());
            let seg: Vec<f64> = eb.direction.iter().zip(&ea.direction).map(|(q, p)| q - p).collect();
            let len = seg.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len == 0.0 {
                continue;
            }
            let mid: Vec<f64> = ea.direction.iter().zip(&eb.direction).map(|(p, q)| 0.5 * (p + q)).collect();
            let Some(&c) = idx
                .iter()
                .filter(|&&c| c != a && c != b)
                .min_by(|&&u, &&v| dist(&est[u].unwrap().direction, &mid).total_cmp(&dist(&est[v].unwrap().direction, &mid)))
            else {
                continue;
            };
            let ec = est[c].unwrap();
            if dist(&ec.direction, &mid) > 0.25 * len {
                continue;
            }
            let rel: Vec<f64> = ec.direction.iter().zip(&ea.direction).map(|(q, p)| q - p).collect();
            let lambda = rel.iter().zip(&seg).map(|(r, s)| r * s).sum::<f64>() / (len * len);
            if !(0.0..=1.0).contains(&lambda) {
                continue;
            }
            let chord = (1.0 - lambda) * ea.value + lambda * eb.value;
            let se = pooled_se(&[ec.stderr, (1.0 - lambda) * ea.stderr, lambda * eb.stderr]);
            out.push(ConcavityCheck {
                a,
                b,
                mid: c,
                value: ec.value,
                chord,
                pooled_se: se,
                ok: ec.value >= chord - DIAGNOSTIC_SIGMAS * se,
            });
        }
    }
    out
}

fn maximum_check(est: &[Option<&GrowthEstimate>]) -> Option<MaximumCheck> {
    let norm = |e: &GrowthEstimate| e.direction.iter().map(|x| x * x).sum::<f64>();
    let idx: Vec<usize> = (0..est.len()).filter(|&i| est[i].is_some()).collect();
    let center = *idx.iter().min_by(|&&u, &&v| norm(est[u].unwrap()).total_cmp(&norm(est[v].unwrap())))?;
    let argmax = *idx.iter().max_by(|&&u, &&v| est[u].unwrap().value.total_cmp(&est[v].unwrap().value))?;
    let (ec, em) = (est[center].unwrap(), est[argmax].unwrap());
    let excess = em.value - ec.value;
    let se = pooled_se(&[ec.stderr, em.stderr]);
    Some(MaximumCheck {
        center,
        argmax,
        excess,
        pooled_se: se,
        ok: argmax == center || excess <= DIAGNOSTIC_SIGMAS * se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub n_max: u32,
    pub seeds: SeedRange,
    /// `w[r][n] = N_n / ((2d+1) p)^n` for replica `r`.
    pub w: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub median: Vec<f64>,
}

impl MartingaleTrace {
    pub fn replicas(&self) -> usize {
        self.w.len()
    }

    pub fn level(&self, n: u32) -> Vec<f64> {
        self.w.iter().map(|row| row[n as usize]).collect()
    }

    /// Mean and standard error of `W_{n+1} - W_n`.
    pub fn increment(&self, n: u32) -> (f64, f64) {
        let acc: Accumulator = self.w.iter().map(|row| row[n as usize + 1] - row[n as usize]).collect();
        (acc.mean(), acc.stderr())
    }

    pub fn to_json(&self, params: &LatticeParams) -> serde_json::Value {
        #[derive(Serialize)]
        struct Summary<'a> {
            n_max: u32,
            replicas: usize,
            seeds: &'a SeedRange,
            mean: &'a [f64],
            stderr: &'a [f64],
            median: &'a [f64],
        }
        json_record(
            "martingale",
            params,
            &Summary {
                n_max: self.n_max,
                replicas: self.replicas(),
                seeds: &self.seeds,
                mean: &self.mean,
                stderr: &self.stderr,
                median: &self.median,
            },
        )
    }
}

/// `W_n` for `n = 0..=n_max` on unconditioned replicas
/// `first_index..first_index + replicas`.
pub fn track_martingale(params: &LatticeParams, n_max: u32, replicas: usize, first_index: u64) -> Result<MartingaleTrace> {
    check_params(params)?;
    if params.p <= 0.0 {
        return Err(Error::Precondition("W_n needs p > 0".into()));
    }
    let rate = GrowthEstimate::annealed_bound(params);
    let w = (first_index..first_index + replicas as u64)
        .into_par_iter()
        .map(|i| {
            let env = Environment::new(params.replica(i))?;
            let mut counter = PathCounter::new(&env, Site::origin(), n_max, CountMode::Log)?;
            let mut row = Vec::with_capacity(n_max as usize + 1);
            row.push(1.0);
            let mut dead = false;
            for n in 1..=n_max {
                if dead {
                    row.push(0.0);
                    continue;
                }
                counter.step()?;
                let ln = counter.layer().total().ln();
                dead = ln == f64::NEG_INFINITY;
                row.push((ln - n as f64 * rate).exp());
            }
            Ok(row)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut mean = Vec::with_capacity(n_max as usize + 1);
    let mut stderr = Vec::with_capacity(n_max as usize + 1);
    let mut med = Vec::with_capacity(n_max as usize + 1);
    for n in 0..=n_max as usize {
        let col: Vec<f64> = w.iter().map(|row| row[n]).collect();
        let acc: Accumulator = col.iter().copied().collect();
        mean.push(acc.mean());
        stderr.push(acc.stderr());
        med.push(median(&col));
    }
    Ok(MartingaleTrace {
        n_max,
        seeds: SeedRange::unconditioned(first_index, replicas as u64),
        w,
        mean,
        stderr,
        median: med,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub n: u32,
    /// Replicas with `n <= tau <= t_max`.
    pub count: u64,
    pub prob: f64,
    pub stderr: f64,
}

/// `P(n <= tau < inf) ~ A exp(-B n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub a: f64,
    pub b: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauTail {
    pub replicas: u64,
    pub t_max: u32,
    pub seeds: SeedRange,
    /// `tau_counts[t - 1]` replicas with `tau = t`.
    pub tau_counts: Vec<u64>,
    pub table: Vec<TailRow>,
    /// Fraction still alive at `t_max`, the estimate of `P(tau = inf)`.
    pub survival_fraction: f64,
    pub survival_stderr: f64,
    pub fit: Option<TailFit>,
    pub fit_note: Option<String>,
}

/// Rows with fewer hits than this are left out of the tail fit.
pub const FIT_MIN_COUNT: u64 = 5;

impl TauTail {
    /// Empirical `P(tau = t)` and its standard error.
    pub fn point_mass(&self, t: u32) -> (f64, f64) {
        let hits = self.tau_counts.get(t as usize - 1).copied().unwrap_or(0);
        (hits as f64 / self.replicas as f64, proportion_se(hits, self.replicas))
    }

    pub fn require_fit(&self) -> Result<TailFit> {
        self.fit
            .ok_or_else(|| Error::Fit(self.fit_note.clone().unwrap_or_else(|| "no fit".into())))
    }
}

/// Extinction times of the origin on unconditioned replicas, truncated at
/// `t_max`, with a log-linear fit of the finite part of the tail.
pub fn estimate_tau_tail(params: &LatticeParams, replicas: usize, t_max: u32, first_index: u64) -> Result<TauTail> {
    check_params(params)?;
    if replicas == 0 || t_max == 0 {
        return Err(Error::Precondition("replicas and t_max must be at least 1".into()));
    }
    let taus: Vec<Option<u32>> = (first_index..first_index + replicas as u64)
        .into_par_iter()
        .map(|i| {
            let env = Environment::new(params.replica(i)).expect("validated");
            match probe_extinction(&env, &Site::origin(), t_max) {
                Extinction::Extinct { tau } => Some(tau),
                Extinction::SurvivedToCap { .. } => None,
            }
        })
        .collect();
    let r = replicas as u64;
    let mut tau_counts = vec![0u64; t_max as usize];
    for tau in taus.iter().flatten() {
        tau_counts[*tau as usize - 1] += 1;
    }
    let survivors = taus.iter().filter(|t| t.is_none()).count() as u64;
    let mut table = Vec::with_capacity(t_max as usize);
    let mut tail = r - survivors;
    for n in 1..=t_max {
        table.push(TailRow { n, count: tail, prob: tail as f64 / r as f64, stderr: proportion_se(tail, r) });
        tail -= tau_counts[n as usize - 1];
    }
    let (fit, fit_note) = if survivors == r {
        (None, Some("every replica survived".to_string()))
    } else if survivors == 0 {
        (None, Some("every replica died".to_string()))
    } else {
        let pts: Vec<(f64, f64)> = table
            .iter()
            .filter(|row| row.count >= FIT_MIN_COUNT)
            .map(|row| (row.n as f64, row.prob.ln()))
            .collect();
        match least_squares(&pts) {
            Some((intercept, slope)) => (Some(TailFit { a: intercept.exp(), b: -slope, points: pts.len() }), None),
            None => (None, Some(format!("only {} tail rows with at least {FIT_MIN_COUNT} hits", pts.len()))),
        }
    };
    Ok(TauTail {
        replicas: r,
        t_max,
        seeds: SeedRange::unconditioned(first_index, r),
        tau_counts,
        table,
        survival_fraction: survivors as f64 / r as f64,
        survival_stderr: proportion_se(survivors, r),
        fit,
        fit_note,
    })
}

/// Ordinary least squares `y = a + b x`; `None` below two distinct abscissae.
fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

/// Smallest `p` (to `1e-4`) at which at least `target` of the replicas
/// survive `horizon` layers. Replica seeds are fixed across `p`, so the
/// survival fraction is monotone and bisection is exact on the sample.
pub fn calibrate_p(d: usize, target: f64, horizon: u32, replicas: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) || replicas == 0 || horizon == 0 {
        return Err(Error::Precondition("target in [0,1], replicas and horizon at least 1".into()));
    }
    let base = LatticeParams::new(d, 1.0, seed)?;
    let fraction = |p: f64| -> f64 {
        let alive = (0..replicas as u64)
            .into_par_iter()
            .filter(|&i| {
                let env = Environment::new(base.replica(i).with_p(p)).expect("valid p");
                probe_extinction(&env, &Site::origin(), horizon).survived()
            })
            .count();
        alive as f64 / replicas as f64
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
