//! Essential hitting times, regenerating times and the survival-conditioned
//! sampler.
//!
//! `sigma(x)` is found by alternating two stopping times: `u_{k+1}` is the
//! first layer after `v_k` at which `x` is occupied by the origin's cluster,
//! and `v_k = u_k + tau` of the cluster restarted at `(x, u_k)`. The loop ends
//! at the first `v_k` classified as infinite, i.e. surviving the horizon.
//! Regenerating times chain such hits in successively recentred environments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Environment, LatticeParams, Point, Site};
use crate::dynamics::{evolve_front, probe_extinction, reachable, Boundary, Extinction, Front, DEFAULT_HORIZON};
use crate::error::{Error, Result};

pub const DEFAULT_ITER_CAP: u32 = 10_000;
pub const DEFAULT_LAYER_CAP: i64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingCaps {
    /// Survival horizon standing in for an infinite `v_k`.
    pub horizon: u32,
    /// Maximum number of `u/v` turns.
    pub iter_cap: u32,
    /// Maximum layer the origin's front is followed to.
    pub layer_cap: i64,
}

impl Default for HittingCaps {
    fn default() -> Self {
        HittingCaps { horizon: DEFAULT_HORIZON, iter_cap: DEFAULT_ITER_CAP, layer_cap: DEFAULT_LAYER_CAP }
    }
}

impl HittingCaps {
    pub fn with_horizon(horizon: u32) -> Self {
        HittingCaps { horizon, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStatus {
    Success,
    /// Turn or layer cap reached first.
    Inconclusive,
    /// The origin's cluster died: `u_{K+1} = +inf`.
    OriginDied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub x: Vec<i32>,
    pub u_seq: Vec<i64>,
    /// `None` is `+inf` (survived the horizon).
    pub v_seq: Vec<Option<i64>>,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: Option<i64>,
    pub horizon: u32,
    pub iter_cap: u32,
    pub status: HitStatus,
}

impl HittingRecord {
    pub fn is_success(&self) -> bool {
        self.status == HitStatus::Success
    }
}

/// The `u/v` recursion without the survival precondition.
fn hit(env: &Environment, x: Point, caps: &HittingCaps) -> HittingRecord {
    let d = env.d();
    let mut record = HittingRecord {
        x: x.coords(d).to_vec(),
        u_seq: vec![0],
        v_seq: vec![Some(0)],
        k: 0,
        sigma: None,
        horizon: caps.horizon,
        iter_cap: caps.iter_cap,
        status: HitStatus::Inconclusive,
    };
    let mut front = Front::single(d, Point::ORIGIN, 0, 8).expect("small window");
    loop {
        if record.k >= caps.iter_cap as usize {
            return record;
        }
        let v_k = record.v_seq[record.k].expect("loop continues only on finite v");
        while front.t <= v_k || !front.contains(x) {
            if front.t >= caps.layer_cap {
                return record;
            }
            front = match evolve_front(env, &front, Boundary::Grow) {
                Ok(f) => f,
                Err(_) => return record,
            };
            if front.is_empty() {
                record.status = HitStatus::OriginDied;
                return record;
            }
        }
        let u = front.t;
        record.u_seq.push(u);
        record.k += 1;
        match probe_extinction(env, &Site { z: x, t: u }, caps.horizon) {
            Extinction::SurvivedToCap { .. } => {
                record.v_seq.push(None);
                record.sigma = Some(u);
                record.status = HitStatus::Success;
                return record;
            }
            Extinction::Extinct { tau } => record.v_seq.push(Some(u + tau as i64)),
        }
    }
}

/// `sigma(x)` with its stopping-time history, in the frame of `env`.
///
/// The origin of `env` must survive `caps.horizon` layers.
pub fn essential_hitting(env: &Environment, x: Point, caps: &HittingCaps) -> Result<HittingRecord> {
    if !probe_extinction(env, &Site::origin(), caps.horizon).survived() {
        return Err(Error::Precondition(format!("origin dies before horizon {}", caps.horizon)));
    }
    Ok(hit(env, x, caps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenLink {
    /// `s(y, h)`.
    pub s: i64,
    /// `sigma(y)` followed by the `h` values of `sigma(0)`.
    pub sigmas: Vec<i64>,
    /// `(y, s)` relative to the frame the link started in.
    pub anchor: (Vec<i32>, i64),
}

fn link(env: &Environment, y: Point, h: u32, caps: &HittingCaps) -> Result<RegenLink> {
    let mut frame = *env;
    let mut sigmas = Vec::with_capacity(h as usize + 1);
    for i in 0..=h {
        let target = if i == 0 { y } else { Point::ORIGIN };
        let rec = hit(&frame, target, caps);
        let sigma = rec.sigma.ok_or_else(|| {
            Error::Inconclusive(format!("hitting {target:?} ended with {:?} after {} turns", rec.status, rec.k))
        })?;
        sigmas.push(sigma);
        frame = frame.recentered(&Site { z: target, t: sigma });
    }
    let s = sigmas.iter().sum();
    Ok(RegenLink { s, sigmas, anchor: (y.coords(env.d()).to_vec(), s) })
}

/// Regenerating time `s(y, h) = sigma(y) + h` successive `sigma(0)`s, each
/// measured after recentring at the previous hit.
pub fn regen_time(env: &Environment, y: Point, h: u32, caps: &HittingCaps) -> Result<RegenLink> {
    if h == 0 {
        return Err(Error::Precondition("h must be at least 1".into()));
    }
    if !probe_extinction(env, &Site::origin(), caps.horizon).survived() {
        return Err(Error::Precondition(format!("origin dies before horizon {}", caps.horizon)));
    }
    link(env, y, h, caps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Complete,
    Truncated { at_link: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenChain {
    pub y: Vec<i32>,
    pub h: u32,
    pub s_vals: Vec<i64>,
    /// `partial[k] = S_k`, starting from `S_0 = 0`.
    pub partial: Vec<i64>,
    pub status: ChainStatus,
    /// Every recorded link `(k y, S_k) -> ((k+1) y, S_{k+1})` was re-checked.
    pub links_certified: bool,
}

impl RegenChain {
    pub fn len(&self) -> usize {
        self.s_vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_vals.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.status == ChainStatus::Complete
    }

    /// Regenerating point `(k y, S_k)`.
    pub fn point(&self, k: usize) -> Site {
        let y = Point::from_slice(&self.y);
        Site { z: y.scale(k as i32), t: self.partial[k] }
    }

    pub fn last_level(&self) -> i64 {
        *self.partial.last().unwrap_or(&0)
    }

    /// CSV rows `k,s_k,S_k` for `k = 1..=len`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Resource(format!("csv: {e}"));
        wtr.write_record(["k", "s_k", "S_k"]).map_err(err)?;
        for (k, s) in self.s_vals.iter().enumerate() {
            wtr.write_record([(k + 1).to_string(), s.to_string(), self.partial[k + 1].to_string()])
                .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::Resource(e.to_string()))
    }
}

/// Links `S_1, ..., S_{n_links}` of the regenerating sequence for `(y, h)`.
///
/// A link that cannot be resolved truncates the chain; the reason is kept.
pub fn regen_sequence(env: &Environment, y: Point, h: u32, n_links: usize, caps: &HittingCaps) -> Result<RegenChain> {
    if h == 0 {
        return Err(Error::Precondition("h must be at least 1".into()));
    }
    if !probe_extinction(env, &Site::origin(), caps.horizon).survived() {
        return Err(Error::Precondition(format!("origin dies before horizon {}", caps.horizon)));
    }
    let mut chain = RegenChain {
        y: y.coords(env.d()).to_vec(),
        h,
        s_vals: Vec::with_capacity(n_links),
        partial: vec![0],
        status: ChainStatus::Complete,
        links_certified: true,
    };
    let mut anchor = Site::origin();
    for k in 0..n_links {
        match link(&env.recentered(&anchor), y, h, caps) {
            Ok(l) => {
                let next = Site { z: anchor.z + y, t: anchor.t + l.s };
                chain.links_certified &= reachable(env, &anchor, &next);
                chain.s_vals.push(l.s);
                chain.partial.push(next.t);
                anchor = next;
            }
            Err(e) => {
                chain.status = ChainStatus::Truncated { at_link: k, reason: e.to_string() };
                break;
            }
        }
    }
    Ok(chain)
}

/// Re-derives `(0,0) -> (k y, S_k)` for every `k` by sweeping the origin's
/// fronts up to the last level.
pub fn certify_chain_from_origin(env: &Environment, chain: &RegenChain) -> Result<bool> {
    let mut front = Front::single(env.d(), Point::ORIGIN, 0, 8)?;
    for k in 1..chain.partial.len() {
        let target = chain.point(k);
        while front.t < target.t {
            front = evolve_front(env, &front, Boundary::Grow)?;
        }
        if !front.contains(target.z) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `phi(n) = min { k : S_k >= n }`.
pub fn first_passage_index(chain: &RegenChain, n: i64) -> Result<usize> {
    chain
        .partial
        .iter()
        .position(|&s| s >= n)
        .ok_or(Error::InsufficientChain { needed: n.max(0) as u64, reached: chain.last_level().max(0) as u64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionedSample {
    /// Replica index the seed was split from.
    pub index: u64,
    pub seed: u64,
    pub horizon: u32,
    /// Running tallies when this sample was accepted.
    pub tried: u64,
    pub accepted: u64,
}

/// Rejection sampler over replica sub-seeds, accepting those whose origin
/// cluster survives the horizon.
#[derive(Clone, Debug)]
pub struct ConditionedSampler {
    base: LatticeParams,
    horizon: u32,
    budget: u64,
    next_index: u64,
    tried: u64,
    accepted: u64,
}

/// Below this acceptance rate the sampler gives up.
pub const MIN_ACCEPTANCE: f64 = 1e-3;
const GUARD_AFTER: u64 = 10_000;

impl ConditionedSampler {
    pub fn new(base: LatticeParams, horizon: u32, budget: u64) -> Result<Self> {
        base.validate()?;
        if horizon == 0 {
            return Err(Error::Precondition("conditioning horizon must be at least 1".into()));
        }
        Ok(ConditionedSampler { base, horizon, budget, next_index: 0, tried: 0, accepted: 0 })
    }

    /// Starts from replica index `start` instead of 0.
    pub fn starting_at(mut self, start: u64) -> Self {
        self.next_index = start;
        self
    }

    pub fn tried(&self) -> u64 {
        self.tried
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Acceptance rate so far, an estimate of `P(tau >= horizon)`.
    pub fn acceptance_rate(&self) -> f64 {
        if self.tried == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }

    fn accepts(&self, index: u64) -> bool {
        let env = Environment::new(self.base.replica(index)).expect("validated");
        probe_extinction(&env, &Site::origin(), self.horizon).survived()
    }

    fn failure(&self) -> Error {
        Error::Sampling(format!(
            "accepted {} of {} tried (rate {:.3e}) at horizon {}",
            self.accepted,
            self.tried,
            self.accepted as f64 / self.tried.max(1) as f64,
            self.horizon
        ))
    }

    fn check_guard(&self) -> Result<()> {
        if self.tried >= self.budget {
            return Err(self.failure());
        }
        if self.tried >= GUARD_AFTER.min(self.budget) && (self.accepted as f64) < MIN_ACCEPTANCE * self.tried as f64 {
            return Err(self.failure());
        }
        Ok(())
    }

    pub fn next_sample(&mut self) -> Result<ConditionedSample> {
        loop {
            self.check_guard()?;
            let index = self.next_index;
            self.next_index += 1;
            self.tried += 1;
            if self.accepts(index) {
                self.accepted += 1;
                return Ok(self.sample(index));
            }
        }
    }

    fn sample(&self, index: u64) -> ConditionedSample {
        ConditionedSample {
            index,
            seed: self.base.replica(index).seed,
            horizon: self.horizon,
            tried: self.tried,
            accepted: self.accepted,
        }
    }

    /// Next `count` accepted samples; candidates are screened in parallel and
    /// consumed in index order, so the result does not depend on threading.
    pub fn take(&mut self, count: usize) -> Result<Vec<ConditionedSample>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            self.check_guard()?;
            let room = self.budget - self.tried;
            let batch = ((count - out.len()) as u64 * 2).clamp(16, 4096).min(room);
            let start = self.next_index;
            let flags: Vec<bool> = (start..start + batch).into_par_iter().map(|i| self.accepts(i)).collect();
            for (offset, ok) in flags.into_iter().enumerate() {
                self.next_index = start + offset as u64 + 1;
                self.tried += 1;
                if ok {
                    self.accepted += 1;
                    out.push(self.sample(start + offset as u64));
                    if out.len() == count {
                        break;
                    }
                }
                if self.check_guard().is_err() {
                    break;
                }
            }
        }
        Ok(out)
    }
}

impl ConditionedSample {
    pub fn environment(&self, params: &LatticeParams) -> Environment {
        Environment::new(params.with_seed(self.seed)).expect("validated")
    }
}
