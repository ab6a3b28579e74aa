//! Open-path counts `N_{x,n}`, `N_n`, `N_{A,n}` and survival-filtered counts
//! by forward dynamic programming.
//!
//! Exact mode carries arbitrary-precision integers and exists to validate the
//! log mode, which stores natural logarithms combined by a max-shifted
//! log-sum-exp at every site and so handles thousands of layers.

use std::cmp::Ordering;
use std::io::Write;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::config::{step_offset, Environment, LatticeParams, Point, Site};
use crate::dynamics::{probe_extinction, Window};
use crate::error::{Error, Result};

/// Default cap on the estimated footprint of exact-mode layers.
pub const EXACT_MEMORY_GUARD: usize = 512 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Exact,
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CountValue {
    Exact(BigUint),
    /// Natural logarithm; `-inf` encodes zero.
    Log(f64),
}

impl CountValue {
    pub fn zero(mode: CountMode) -> Self {
        match mode {
            CountMode::Exact => CountValue::Exact(BigUint::zero()),
            CountMode::Log => CountValue::Log(f64::NEG_INFINITY),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            CountValue::Exact(v) => v.is_zero(),
            CountValue::Log(l) => *l == f64::NEG_INFINITY,
        }
    }

    pub fn ln(&self) -> f64 {
        match self {
            CountValue::Exact(v) => ln_biguint(v),
            CountValue::Log(l) => *l,
        }
    }

    pub fn as_exact(&self) -> Option<&BigUint> {
        match self {
            CountValue::Exact(v) => Some(v),
            CountValue::Log(_) => None,
        }
    }
}

pub fn ln_biguint(v: &BigUint) -> f64 {
    if v.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = v.bits();
    if bits <= 1000 {
        return v.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    (v >> shift).to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// `ln(sum(exp(terms)))`, shifted by the largest term.
#[inline]
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let rest: f64 = terms.iter().map(|&a| (a - max).exp()).sum::<f64>() - 1.0;
    max + rest.ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
enum Values {
    Exact(Vec<BigUint>),
    Log(Vec<f64>),
}

/// Path counts on one layer, dense over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct CountLayer {
    pub t: i64,
    window: Window,
    values: Values,
}

impl CountLayer {
    fn single(window: Window, z: Point, t: i64, mode: CountMode) -> Self {
        let i = window.index(z);
        let values = match mode {
            CountMode::Exact => {
                let mut v = vec![BigUint::zero(); window.volume()];
                v[i] = BigUint::from(1u32);
                Values::Exact(v)
            }
            CountMode::Log => {
                let mut v = vec![f64::NEG_INFINITY; window.volume()];
                v[i] = 0.0;
                Values::Log(v)
            }
        };
        CountLayer { t, window, values }
    }

    pub fn mode(&self) -> CountMode {
        match self.values {
            Values::Exact(_) => CountMode::Exact,
            Values::Log(_) => CountMode::Log,
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn get(&self, z: Point) -> CountValue {
        if !self.window.contains(z) {
            return CountValue::zero(self.mode());
        }
        let i = self.window.index(z);
        match &self.values {
            Values::Exact(v) => CountValue::Exact(v[i].clone()),
            Values::Log(v) => CountValue::Log(v[i]),
        }
    }

    pub fn ln_at(&self, z: Point) -> f64 {
        if !self.window.contains(z) {
            return f64::NEG_INFINITY;
        }
        let i = self.window.index(z);
        match &self.values {
            Values::Exact(v) => ln_biguint(&v[i]),
            Values::Log(v) => v[i],
        }
    }

    pub fn is_positive(&self, z: Point) -> bool {
        if !self.window.contains(z) {
            return false;
        }
        let i = self.window.index(z);
        match &self.values {
            Values::Exact(v) => !v[i].is_zero(),
            Values::Log(v) => v[i] > f64::NEG_INFINITY,
        }
    }

    /// Sites with a non-zero count.
    pub fn support(&self) -> Vec<Point> {
        (0..self.window.volume())
            .filter(|&i| match &self.values {
                Values::Exact(v) => !v[i].is_zero(),
                Values::Log(v) => v[i] > f64::NEG_INFINITY,
            })
            .map(|i| self.window.point(i))
            .collect()
    }

    /// Sum of counts over the sites accepted by `keep`.
    pub fn total_where(&self, mut keep: impl FnMut(Point) -> bool) -> CountValue {
        match &self.values {
            Values::Exact(v) => {
                let mut sum = BigUint::zero();
                for (i, c) in v.iter().enumerate() {
                    if !c.is_zero() && keep(self.window.point(i)) {
                        sum += c;
                    }
                }
                CountValue::Exact(sum)
            }
            Values::Log(v) => {
                let terms: Vec<f64> = v
                    .iter()
                    .enumerate()
                    .filter(|(i, &c)| c > f64::NEG_INFINITY && keep(self.window.point(*i)))
                    .map(|(_, &c)| c)
                    .collect();
                CountValue::Log(log_sum_exp(&terms))
            }
        }
    }

    pub fn total(&self) -> CountValue {
        self.total_where(|_| true)
    }
}

/// Optional restriction of the DP to the backward light cone of a target.
#[derive(Clone, Copy, Debug)]
struct Funnel {
    target: Site,
}

impl Funnel {
    #[inline(always)]
    fn admits(&self, z: Point, t: i64) -> bool {
        (self.target.z - z).l1() <= self.target.t - t
    }
}

/// Streaming forward DP from a single site.
pub struct PathCounter<'a> {
    env: &'a Environment,
    layer: CountLayer,
    funnel: Option<Funnel>,
    /// Bounding box of the current support; `None` once every count is zero.
    reach: Option<Window>,
    scratch: Vec<f64>,
}

impl<'a> PathCounter<'a> {
    /// Counter from `start`, able to run `max_steps` layers.
    pub fn new(env: &'a Environment, start: Site, max_steps: u32, mode: CountMode) -> Result<Self> {
        let window = Window::cube(env.d(), start.z, max_steps as i64)?;
        if mode == CountMode::Exact {
            let bytes_per_site = (max_steps as f64 * (env.degree() as f64).log2() / 8.0) as usize + 32;
            let estimate = bytes_per_site.saturating_mul(window.volume()).saturating_mul(2);
            if estimate > EXACT_MEMORY_GUARD {
                return Err(Error::Resource(format!("exact counts need ~{estimate} bytes")));
            }
        }
        Ok(PathCounter {
            env,
            layer: CountLayer::single(window, start.z, start.t, mode),
            funnel: None,
            reach: Some(Window::cube(env.d(), start.z, 0)?),
            scratch: Vec::with_capacity(8),
        })
    }

    fn towards(mut self, target: Site) -> Self {
        self.funnel = Some(Funnel { target });
        self
    }

    pub fn layer(&self) -> &CountLayer {
        &self.layer
    }

    pub fn into_layer(self) -> CountLayer {
        self.layer
    }

    /// Sites of the next layer that can receive a path.
    fn active(&self, t: i64) -> Option<Window> {
        let window = &self.layer.window;
        let mut active = self.reach?.inflate(1).ok()?.intersect(window)?;
        if let Some(f) = self.funnel {
            let cone = Window::cube(window.d(), f.target.z, (f.target.t - t).max(0)).ok()?;
            active = active.intersect(&cone)?;
        }
        Some(active)
    }

    pub fn step(&mut self) -> Result<()> {
        let window = self.layer.window;
        let t = self.layer.t + 1;
        let degree = self.env.degree();
        let env = self.env;
        let funnel = self.funnel;
        let active = self.active(t);
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        let mut mark = |z: Point| {
            for a in 0..window.d() {
                lo[a] = lo[a].min(z.0[a]);
                hi[a] = hi[a].max(z.0[a]);
            }
        };
        let values = match &self.layer.values {
            Values::Log(prev) => {
                let mut next = vec![f64::NEG_INFINITY; prev.len()];
                for target in active.iter().flat_map(|w| w.points()) {
                    if funnel.is_some_and(|f| !f.admits(target, t)) {
                        continue;
                    }
                    self.scratch.clear();
                    for dir in 0..degree {
                        let src = target - step_offset(dir);
                        if !window.contains(src) {
                            continue;
                        }
                        let v = prev[window.index(src)];
                        if v > f64::NEG_INFINITY && env.is_open_at(src, t, dir) {
                            self.scratch.push(v);
                        }
                    }
                    let value = match self.scratch.len() {
                        0 => continue,
                        1 => self.scratch[0],
                        _ => log_sum_exp(&self.scratch),
                    };
                    next[window.index(target)] = value;
                    mark(target);
                }
                Values::Log(next)
            }
            Values::Exact(prev) => {
                let mut next = vec![BigUint::zero(); prev.len()];
                for target in active.iter().flat_map(|w| w.points()) {
                    if funnel.is_some_and(|f| !f.admits(target, t)) {
                        continue;
                    }
                    let slot = &mut next[window.index(target)];
                    for dir in 0..degree {
                        let src = target - step_offset(dir);
                        if !window.contains(src) {
                            continue;
                        }
                        let v = &prev[window.index(src)];
                        if !v.is_zero() && env.is_open_at(src, t, dir) {
                            *slot += v;
                        }
                    }
                    if !slot.is_zero() {
                        mark(target);
                    }
                }
                Values::Exact(next)
            }
        };
        self.reach = if lo[0] == i32::MAX {
            None
        } else {
            let mut l = Point::ORIGIN;
            let mut h = Point::ORIGIN;
            l.0[..window.d()].copy_from_slice(&lo[..window.d()]);
            h.0[..window.d()].copy_from_slice(&hi[..window.d()]);
            Some(Window::new(window.d(), l, h)?)
        };
        self.layer = CountLayer { t, window, values };
        Ok(())
    }
}

/// Layers `0..=n` of path counts from the origin.
pub fn count_forward(env: &Environment, n: u32, mode: CountMode) -> Result<Vec<CountLayer>> {
    let mut counter = PathCounter::new(env, Site::origin(), n, mode)?;
    let mut layers = Vec::with_capacity(n as usize + 1);
    layers.push(counter.layer().clone());
    for _ in 0..n {
        counter.step()?;
        layers.push(counter.layer().clone());
    }
    Ok(layers)
}

/// Only layer `n` of [`count_forward`].
pub fn count_final(env: &Environment, n: u32, mode: CountMode) -> Result<CountLayer> {
    let mut counter = PathCounter::new(env, Site::origin(), n, mode)?;
    for _ in 0..n {
        counter.step()?;
    }
    Ok(counter.into_layer())
}

/// Number of open paths from `from` to `to`.
pub fn count_between(env: &Environment, from: &Site, to: &Site, mode: CountMode) -> Result<CountValue> {
    let span = to.t - from.t;
    if span < 0 || (to.z - from.z).l1() > span {
        return Ok(CountValue::zero(mode));
    }
    let mut counter = PathCounter::new(env, *from, span as u32, mode)?.towards(*to);
    for _ in 0..span {
        counter.step()?;
    }
    Ok(counter.layer().get(to.z))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    All,
    Point { z: Vec<i32> },
    /// Lattice box with inclusive bounds.
    Box { lo: Vec<i32>, hi: Vec<i32> },
    /// Closed box `A` of `R^d`, scaled by the level: `x` counts when `x in nA`.
    Scaled { lo: Vec<f64>, hi: Vec<f64> },
}

impl RegionSpec {
    pub fn point(z: Point, d: usize) -> Self {
        RegionSpec::Point { z: z.coords(d).to_vec() }
    }

    pub fn scaled_interval(lo: f64, hi: f64) -> Self {
        RegionSpec::Scaled { lo: vec![lo], hi: vec![hi] }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let ok = match self {
            RegionSpec::All => true,
            RegionSpec::Point { z } => z.len() == d,
            RegionSpec::Box { lo, hi } => lo.len() == d && hi.len() == d,
            RegionSpec::Scaled { lo, hi } => {
                lo.len() == d && hi.len() == d && lo.iter().chain(hi).all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Params(format!("region {self:?} does not match d = {d}")))
        }
    }

    /// Membership of lattice point `z` at level `n`; boundaries are included.
    pub fn contains(&self, z: Point, n: i64) -> bool {
        const EPS: f64 = 1e-9;
        match self {
            RegionSpec::All => true,
            RegionSpec::Point { z: c } => c.iter().enumerate().all(|(a, &v)| z.0[a] == v),
            RegionSpec::Box { lo, hi } => {
                lo.iter().zip(hi).enumerate().all(|(a, (&l, &h))| z.0[a] >= l && z.0[a] <= h)
            }
            RegionSpec::Scaled { lo, hi } => {
                let n = n as f64;
                lo.iter().zip(hi).enumerate().all(|(a, (&l, &h))| {
                    let x = z.0[a] as f64;
                    x >= l * n - EPS && x <= h * n + EPS
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountReport {
    pub n: i64,
    pub region: RegionSpec,
    pub mode: CountMode,
    pub total: CountValue,
    pub survival_horizon: Option<u32>,
}

impl CountReport {
    pub fn log_total(&self) -> f64 {
        self.total.ln()
    }

    pub fn to_json(&self, params: &LatticeParams) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "region": self.region,
            "mode": self.mode,
            "total": self.total.as_exact().map(|v| v.to_string()),
            "log_total": finite_or_null(self.log_total()),
            "survival_horizon": self.survival_horizon,
            "seed": params.seed,
            "params": params,
        })
    }
}

/// JSON has no infinities; `-inf` log counts are emitted as null.
pub fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Sums the counts of `layer` over `region` at the layer's level.
pub fn count_region(layer: &CountLayer, region: &RegionSpec) -> Result<CountReport> {
    region.validate(layer.window.d())?;
    let n = layer.t;
    Ok(CountReport {
        n,
        region: region.clone(),
        mode: layer.mode(),
        total: layer.total_where(|z| region.contains(z, n)),
        survival_horizon: None,
    })
}

/// Layer `n` with every endpoint whose cluster dies within `m` layers removed.
pub fn surviving_layer(env: &Environment, layer: &CountLayer, m: u32) -> Result<CountLayer> {
    if m == 0 {
        return Err(Error::Precondition("survival horizon m must be at least 1".into()));
    }
    let mut out = layer.clone();
    for z in layer.support() {
        if !probe_extinction(env, &Site { z, t: layer.t }, m).survived() {
            let i = out.window.index(z);
            match &mut out.values {
                Values::Exact(v) => v[i] = BigUint::zero(),
                Values::Log(v) => v[i] = f64::NEG_INFINITY,
            }
        }
    }
    Ok(out)
}

/// `N-bar` proxy: paths to level `n` whose endpoint survives `m` more layers.
pub fn surviving_count(env: &Environment, n: u32, m: u32, region: &RegionSpec, mode: CountMode) -> Result<CountReport> {
    let layer = count_final(env, n, mode)?;
    let filtered = surviving_layer(env, &layer, m)?;
    let mut report = count_region(&filtered, region)?;
    report.survival_horizon = Some(m);
    Ok(report)
}

/// Default survival horizon `ceil(0.25 n)` for filtered counts.
pub fn default_survival_m(n: u32) -> u32 {
    n.div_ceil(4).max(1)
}

/// Checks `N(a, c) >= N(a, b) N(b, c)` with exact counts.
pub fn concat_check(env: &Environment, a: &Site, b: &Site, c: &Site) -> Result<bool> {
    if !(a.t < b.t && b.t < c.t) {
        return Err(Error::Precondition("layers must satisfy a < b < c".into()));
    }
    let ab = count_between(env, a, b, CountMode::Exact)?;
    let bc = count_between(env, b, c, CountMode::Exact)?;
    let ac = count_between(env, a, c, CountMode::Exact)?;
    let (ab, bc, ac) = (ab.as_exact().unwrap(), bc.as_exact().unwrap(), ac.as_exact().unwrap());
    Ok(ac.cmp(&(ab * bc)) != Ordering::Less)
}

/// `(1/n) (ln N_{nA,n} - ln N_n)`, optionally with survival-filtered counts.
pub fn ldp_ratio(env: &Environment, n: u32, region: &RegionSpec, m: Option<u32>) -> Result<f64> {
    if n == 0 {
        return Err(Error::Precondition("level n must be positive".into()));
    }
    let mut layer = count_final(env, n, CountMode::Log)?;
    if let Some(m) = m {
        layer = surviving_layer(env, &layer, m)?;
    }
    let all = layer.total().ln();
    if all == f64::NEG_INFINITY {
        return Err(Error::UndefinedRatio(format!("N_{n} = 0")));
    }
    let part = count_region(&layer, region)?.log_total();
    if part == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((part - all) / n as f64)
}

/// CSV rows `t,z1..,count` (exact) or `t,z1..,logcount`, non-zero sites only.
pub fn write_layers_csv<W: Write>(layers: &[CountLayer], out: W) -> Result<()> {
    let first = layers.first().ok_or_else(|| Error::Precondition("no layers".into()))?;
    let d = first.window.d();
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|a| format!("z{a}")));
    header.push(match first.mode() {
        CountMode::Exact => "count".into(),
        CountMode::Log => "logcount".into(),
    });
    let csv_err = |e: csv::Error| Error::Resource(format!("csv: {e}"));
    wtr.write_record(&header).map_err(csv_err)?;
    for layer in layers {
        for z in layer.support() {
            let mut row = vec![layer.t.to_string()];
            row.extend(z.coords(d).iter().map(|c| c.to_string()));
            row.push(match layer.get(z) {
                CountValue::Exact(v) => v.to_string(),
                CountValue::Log(l) => format!("{l:.17e}"),
            });
            wtr.write_record(&row).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::Resource(e.to_string()))
}
