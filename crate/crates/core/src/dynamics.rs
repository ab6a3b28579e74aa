//! Occupied fronts `xi_n`, hulls, extinction times, the everywhere-started
//! front and coupled zones, all over finite windows.

use std::io::Write;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::config::{step_offset, Environment, Point, Site, COORD_LIMIT};
use crate::error::{Error, Result};

/// Survival horizon standing in for `tau = +infinity`.
pub const DEFAULT_HORIZON: u32 = 256;

/// Axis-aligned box of lattice points with inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    d: usize,
    lo: Point,
    hi: Point,
}

impl Window {
    pub fn new(d: usize, lo: Point, hi: Point) -> Result<Self> {
        for axis in 0..d {
            if lo.0[axis] > hi.0[axis] {
                return Err(Error::Window(format!("empty window {lo:?}..{hi:?}")));
            }
        }
        if !lo.in_bounds() || !hi.in_bounds() {
            return Err(Error::Window(format!("window {lo:?}..{hi:?} beyond coordinate bound")));
        }
        let mut w = Window { d, lo, hi };
        for axis in d..lo.0.len() {
            w.lo.0[axis] = 0;
            w.hi.0[axis] = 0;
        }
        if w.volume() > 1usize << 34 {
            return Err(Error::Resource(format!("window of {} sites", w.volume())));
        }
        Ok(w)
    }

    /// The l-infinity ball of `radius` around `center`.
    pub fn cube(d: usize, center: Point, radius: i64) -> Result<Self> {
        let r = clamp_radius(radius)?;
        let mut lo = center;
        let mut hi = center;
        for axis in 0..d {
            lo.0[axis] = center.0[axis].saturating_sub(r);
            hi.0[axis] = center.0[axis].saturating_add(r);
        }
        Window::new(d, lo, hi)
    }

    pub fn inflate(&self, by: i64) -> Result<Self> {
        let r = clamp_radius(by)?;
        let mut lo = self.lo;
        let mut hi = self.hi;
        for axis in 0..self.d {
            lo.0[axis] = lo.0[axis].saturating_sub(r);
            hi.0[axis] = hi.0[axis].saturating_add(r);
        }
        Window::new(self.d, lo, hi)
    }

    /// Smallest window containing both.
    pub fn union(&self, other: &Window) -> Self {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for axis in 0..self.d {
            lo.0[axis] = lo.0[axis].min(other.lo.0[axis]);
            hi.0[axis] = hi.0[axis].max(other.hi.0[axis]);
        }
        Window { d: self.d, lo, hi }
    }

    /// Common part of two windows, if any.
    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for axis in 0..self.d {
            lo.0[axis] = lo.0[axis].max(other.lo.0[axis]);
            hi.0[axis] = hi.0[axis].min(other.hi.0[axis]);
            if lo.0[axis] > hi.0[axis] {
                return None;
            }
        }
        Some(Window { d: self.d, lo, hi })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lo(&self) -> Point {
        self.lo
    }

    pub fn hi(&self) -> Point {
        self.hi
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi.0[axis] - self.lo.0[axis] + 1) as usize
    }

    pub fn volume(&self) -> usize {
        (0..self.d).map(|a| self.extent(a)).product()
    }

    #[inline(always)]
    pub fn contains(&self, z: Point) -> bool {
        (0..self.d).all(|a| z.0[a] >= self.lo.0[a] && z.0[a] <= self.hi.0[a])
    }

    /// Row-major index, last axis fastest.
    #[inline(always)]
    pub fn index(&self, z: Point) -> usize {
        let mut idx = 0usize;
        for axis in 0..self.d {
            idx = idx * self.extent(axis) + (z.0[axis] - self.lo.0[axis]) as usize;
        }
        idx
    }

    #[inline(always)]
    pub fn point(&self, mut idx: usize) -> Point {
        let mut z = Point::ORIGIN;
        for axis in (0..self.d).rev() {
            let ext = self.extent(axis);
            z.0[axis] = self.lo.0[axis] + (idx % ext) as i32;
            idx /= ext;
        }
        z
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.volume()).map(move |i| self.point(i))
    }

    /// Distance (l-infinity) from `z` to the complement of the window.
    fn margin(&self, z: Point) -> i64 {
        (0..self.d)
            .map(|a| ((z.0[a] - self.lo.0[a]).min(self.hi.0[a] - z.0[a])) as i64)
            .min()
            .unwrap_or(0)
    }
}

fn clamp_radius(r: i64) -> Result<i32> {
    if r < 0 || r >= COORD_LIMIT as i64 {
        return Err(Error::Window(format!("radius {r} out of range")));
    }
    Ok(r as i32)
}

/// Set of lattice points stored as a packed bitset over a window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteSet {
    window: Window,
    bits: Vec<u64>,
}

impl SiteSet {
    pub fn empty(window: Window) -> Self {
        SiteSet { window, bits: vec![0; window.volume().div_ceil(64)] }
    }

    pub fn full(window: Window) -> Self {
        let n = window.volume();
        let mut bits = vec![u64::MAX; n.div_ceil(64)];
        if n % 64 != 0 {
            *bits.last_mut().unwrap() = (1u64 << (n % 64)) - 1;
        }
        SiteSet { window, bits }
    }

    pub fn from_points(window: Window, points: impl IntoIterator<Item = Point>) -> Result<Self> {
        let mut set = SiteSet::empty(window);
        for z in points {
            set.insert(z)?;
        }
        Ok(set)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn insert(&mut self, z: Point) -> Result<()> {
        if !self.window.contains(z) {
            return Err(Error::Window(format!("{z:?} outside window")));
        }
        self.set_index(self.window.index(z));
        Ok(())
    }

    #[inline(always)]
    fn set_index(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    #[inline(always)]
    fn has_index(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn contains(&self, z: Point) -> bool {
        self.window.contains(z) && self.has_index(self.window.index(z))
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.indices().map(move |i| self.window.point(i))
    }

    /// Same set re-expressed over `window`; points outside it are dropped.
    pub fn restricted_to(&self, window: &Window) -> SiteSet {
        let mut out = SiteSet::empty(*window);
        for z in self.points() {
            if window.contains(z) {
                out.set_index(window.index(z));
            }
        }
        out
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        if self.window == other.window {
            return self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0);
        }
        self.points().all(|z| other.contains(z))
    }

    pub fn union_with(&mut self, other: &SiteSet) {
        if self.window == other.window {
            for (a, b) in self.bits.iter_mut().zip(&other.bits) {
                *a |= b;
            }
        } else {
            for z in other.points() {
                if self.window.contains(z) {
                    let i = self.window.index(z);
                    self.set_index(i);
                }
            }
        }
    }

    /// Per-axis (min, max) of the occupied points, `None` when empty.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.points();
        let first = it.next()?;
        Some(it.fold((first, first), |(mut lo, mut hi), z| {
            for a in 0..self.window.d {
                lo.0[a] = lo.0[a].min(z.0[a]);
                hi.0[a] = hi.0[a].max(z.0[a]);
            }
            (lo, hi)
        }))
    }
}

/// What to do when an open edge leads out of the front's window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Report a window error.
    Strict,
    /// Drop the target site.
    Clip,
    /// Enlarge the window before stepping.
    Grow,
}

/// Occupied set at layer `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Front {
    pub t: i64,
    pub sites: SiteSet,
}

impl Front {
    pub fn new(t: i64, sites: SiteSet) -> Self {
        Front { t, sites }
    }

    pub fn single(d: usize, z: Point, t: i64, radius: i64) -> Result<Self> {
        let window = Window::cube(d, z, radius)?;
        let mut sites = SiteSet::empty(window);
        sites.insert(z)?;
        Ok(Front { t, sites })
    }

    pub fn window(&self) -> &Window {
        self.sites.window()
    }

    pub fn contains(&self, z: Point) -> bool {
        self.sites.contains(z)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.sites.points()
    }

    fn grown(&self) -> Result<Front> {
        let w = self.window();
        let near_edge = self.points().any(|z| w.margin(z) < 1);
        if !near_edge {
            return Ok(self.clone());
        }
        let widest = (0..w.d()).map(|a| w.extent(a)).max().unwrap_or(1) as i64;
        let bigger = w.inflate(widest.max(8))?;
        Ok(Front { t: self.t, sites: self.sites.restricted_to(&bigger) })
    }
}

/// One layer of the forward dynamics.
pub fn evolve_front(env: &Environment, front: &Front, boundary: Boundary) -> Result<Front> {
    let grown;
    let front = if boundary == Boundary::Grow {
        grown = front.grown()?;
        &grown
    } else {
        front
    };
    let window = *front.window();
    let t = front.t + 1;
    let degree = env.degree();
    let mut next = SiteSet::empty(window);
    for z in front.points() {
        for dir in 0..degree {
            let target = z + step_offset(dir);
            if !window.contains(target) {
                if boundary == Boundary::Strict && env.is_open_at(z, t, dir) {
                    return Err(Error::Window(format!("cluster left window at {target:?}, t = {t}")));
                }
                continue;
            }
            let i = window.index(target);
            if !next.has_index(i) && env.is_open_at(z, t, dir) {
                next.set_index(i);
            }
        }
    }
    Ok(Front { t, sites: next })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Extinction {
    /// First empty layer, counted from the start layer.
    Extinct { tau: u32 },
    SurvivedToCap { cap: u32 },
}

impl Extinction {
    pub fn tau(&self) -> Option<u32> {
        match *self {
            Extinction::Extinct { tau } => Some(tau),
            Extinction::SurvivedToCap { .. } => None,
        }
    }

    pub fn survived(&self) -> bool {
        matches!(self, Extinction::SurvivedToCap { .. })
    }
}

#[derive(Clone, Debug)]
pub struct ClusterTrace {
    pub fronts: Vec<Front>,
    pub hull: SiteSet,
    pub tau: Extinction,
}

impl ClusterTrace {
    pub fn t0(&self) -> i64 {
        self.fronts[0].t
    }

    pub fn last(&self) -> &Front {
        self.fronts.last().expect("trace has layer 0")
    }

    /// CSV rows `t,count,min_z1..,max_z1..`; empty layers leave bounds blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.hull.window().d();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "count".to_string()];
        header.extend((1..=d).map(|a| format!("min_z{a}")));
        header.extend((1..=d).map(|a| format!("max_z{a}")));
        wtr.write_record(&header).map_err(io_err)?;
        for f in &self.fronts {
            let mut row = vec![f.t.to_string(), f.len().to_string()];
            match f.sites.bounds() {
                Some((lo, hi)) => {
                    row.extend(lo.coords(d).iter().map(|c| c.to_string()));
                    row.extend(hi.coords(d).iter().map(|c| c.to_string()));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 2 * d)),
            }
            wtr.write_record(&row).map_err(io_err)?;
        }
        wtr.flush().map_err(|e| Error::Resource(e.to_string()))
    }

    /// Binary bitset dump.
    ///
    /// Layout, little-endian: magic `b"OPBS"`, `u32` version (1), `u32` d,
    /// `d x i32` lower bounds, `d x i32` upper bounds, `u32` layer count, then per
    /// layer an `i64` t followed by `ceil(volume / 8)` bytes of row-major bits
    /// (last axis fastest, least significant bit first).
    pub fn write_bitsets<W: Write>(&self, mut out: W) -> Result<()> {
        let w = *self.fronts[0].window();
        let d = w.d();
        let mut buf = Vec::new();
        buf.extend_from_slice(b"OPBS");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        for c in w.lo().coords(d).iter().chain(w.hi().coords(d)) {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf.extend_from_slice(&(self.fronts.len() as u32).to_le_bytes());
        let nbytes = w.volume().div_ceil(8);
        for f in &self.fronts {
            buf.extend_from_slice(&f.t.to_le_bytes());
            let bytes: Vec<u8> = f.sites.words().iter().flat_map(|x| x.to_le_bytes()).collect();
            buf.extend_from_slice(&bytes[..nbytes]);
        }
        out.write_all(&buf).map_err(|e| Error::Resource(e.to_string()))
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Resource(format!("csv: {e}"))
}

/// Runs the cluster of `start` (all on one layer) for `t_max` layers.
///
/// With no window, the l-infinity cone of the start set is used, which the
/// cluster can never leave.
pub fn run_cluster(env: &Environment, start: &[Site], t_max: u32, window: Option<Window>) -> Result<ClusterTrace> {
    let d = env.d();
    let first = start.first().ok_or_else(|| Error::Precondition("empty start set".into()))?;
    if start.iter().any(|s| s.t != first.t) {
        return Err(Error::Precondition("start sites must share one layer".into()));
    }
    let window = match window {
        Some(w) => w,
        None => {
            let mut w = Window::cube(d, first.z, t_max as i64)?;
            for s in start {
                w = w.union(&Window::cube(d, s.z, t_max as i64)?);
            }
            w
        }
    };
    let sites = SiteSet::from_points(window, start.iter().map(|s| s.z))?;
    let mut front = Front::new(first.t, sites);
    let mut hull = front.sites.clone();
    let mut tau = None;
    let mut fronts = Vec::with_capacity(t_max as usize + 1);
    for k in 1..=t_max {
        let next = if tau.is_some() {
            Front::new(front.t + 1, SiteSet::empty(window))
        } else {
            evolve_front(env, &front, Boundary::Strict)?
        };
        if tau.is_none() && next.is_empty() {
            tau = Some(k);
        }
        hull.union_with(&next.sites);
        fronts.push(std::mem::replace(&mut front, next));
    }
    fronts.push(front);
    let tau = match tau {
        Some(tau) => Extinction::Extinct { tau },
        None => Extinction::SurvivedToCap { cap: t_max },
    };
    Ok(ClusterTrace { fronts, hull, tau })
}

/// `xi^{Z^d}_t` restricted to `target`, started fully occupied at layer `t0`.
///
/// Only sites within distance `t - t0` of the target can influence it, so the
/// start layer is filled on the inflated window and the tracked window shrinks
/// by one each step.
pub fn full_front(env: &Environment, target: &Window, t0: i64, t: i64) -> Result<Front> {
    if t < t0 {
        return Err(Error::Precondition(format!("t = {t} before t0 = {t0}")));
    }
    let steps = t - t0;
    let mut front = Front::new(t0, SiteSet::full(target.inflate(steps)?));
    for k in 1..=steps {
        let shrunk = target.inflate(steps - k)?;
        let next = evolve_front(env, &front, Boundary::Clip)?;
        front = Front::new(next.t, next.sites.restricted_to(&shrunk));
    }
    Ok(front)
}

#[derive(Clone, Debug)]
pub struct CoupledZoneReport {
    pub n: i64,
    pub m: i64,
    pub anchor: Site,
    pub window: Window,
    pub zone: SiteSet,
}

/// Sites of `window` where the anchor-started and everywhere-started processes
/// agree on every layer `n..=n+m`, in the environment recentred at `anchor`.
pub fn coupled_zone(env: &Environment, anchor: &Site, n: i64, m: i64, window: &Window) -> Result<CoupledZoneReport> {
    if n < 0 || m < 0 {
        return Err(Error::Precondition(format!("n = {n}, m = {m} must be non-negative")));
    }
    let local = env.recentered(anchor);
    let d = env.d();
    let last = n + m;
    let cone = Window::cube(d, Point::ORIGIN, last)?;
    let everywhere_window = window.inflate(last)?;

    let mut single = Front::single(d, Point::ORIGIN, 0, 0)?;
    single = Front::new(0, single.sites.restricted_to(&cone));
    let mut everywhere = Front::new(0, SiteSet::full(everywhere_window));
    let mut zone = SiteSet::full(*window);
    for k in 0..=last {
        if k > 0 {
            single = evolve_front(&local, &single, Boundary::Strict)?;
            everywhere = evolve_front(&local, &everywhere, Boundary::Clip)?;
        }
        if k < n {
            continue;
        }
        let mut agree = SiteSet::empty(*window);
        for z in window.points() {
            if single.contains(z) == everywhere.contains(z) {
                agree.insert(z)?;
            }
        }
        for (a, b) in zone.bits.iter_mut().zip(&agree.bits) {
            *a &= b;
        }
    }
    Ok(CoupledZoneReport { n, m, anchor: *anchor, window: *window, zone })
}

/// Depth-first search for an open path of `horizon` steps from `site`.
///
/// Each visited site is expanded at most once; on extinction the whole
/// cluster has been explored, which yields the exact `tau`.
pub fn probe_extinction(env: &Environment, site: &Site, horizon: u32) -> Extinction {
    if horizon == 0 {
        return Extinction::SurvivedToCap { cap: 0 };
    }
    let degree = env.degree();
    let mut visited: FxHashSet<(Point, u32)> = FxHashSet::default();
    let mut stack: Vec<(Point, u32, u8)> = vec![(site.z, 0, 0)];
    let mut deepest = 0u32;
    while let Some(top) = stack.last_mut() {
        if top.1 == horizon {
            return Extinction::SurvivedToCap { cap: horizon };
        }
        if top.2 == degree {
            stack.pop();
            continue;
        }
        let (z, depth, dir) = (top.0, top.1, top.2);
        top.2 += 1;
        let next = (z + step_offset(dir), depth + 1);
        if visited.contains(&next) {
            continue;
        }
        if env.is_open_at(z, site.t + depth as i64 + 1, dir) {
            visited.insert(next);
            deepest = deepest.max(depth + 1);
            stack.push((next.0, next.1, 0));
        }
    }
    Extinction::Extinct { tau: deepest + 1 }
}

/// Whether the cluster of `site` is non-empty `horizon` layers later.
pub fn survives(env: &Environment, site: &Site, horizon: u32) -> Result<bool> {
    if horizon == 0 {
        return Err(Error::Precondition("survival horizon must be at least 1".into()));
    }
    Ok(probe_extinction(env, site, horizon).survived())
}

/// Whether an open path joins `from` to `to`, searched inside the backward
/// light cone of `to`.
pub fn reachable(env: &Environment, from: &Site, to: &Site) -> bool {
    let span = to.t - from.t;
    if span < 0 {
        return false;
    }
    if (to.z - from.z).l1() > span {
        return false;
    }
    if span == 0 {
        return from.z == to.z;
    }
    let degree = env.degree();
    let mut visited: FxHashSet<(Point, i64)> = FxHashSet::default();
    let mut stack: Vec<(Point, i64, u8)> = vec![(from.z, from.t, 0)];
    while let Some(top) = stack.last_mut() {
        if top.1 == to.t {
            return true;
        }
        if top.2 == degree {
            stack.pop();
            continue;
        }
        let (z, t, dir) = (top.0, top.1, top.2);
        top.2 += 1;
        let nz = z + step_offset(dir);
        if (to.z - nz).l1() > to.t - t - 1 || visited.contains(&(nz, t + 1)) {
            continue;
        }
        if env.is_open_at(z, t + 1, dir) {
            visited.insert((nz, t + 1));
            stack.push((nz, t + 1, 0));
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LatticeParams;

    fn env(d: usize, p: f64, seed: u64) -> Environment {
        Environment::new(LatticeParams::new(d, p, seed).unwrap()).unwrap()
    }

    fn pts(xs: &[i32]) -> Vec<Point> {
        xs.iter().map(|&x| Point::from_slice(&[x])).collect()
    }

    #[test]
    fn window_index_round_trip() {
        let w = Window::new(3, Point::from_slice(&[-2, 0, 5]), Point::from_slice(&[1, 3, 7])).unwrap();
        for (i, z) in w.points().enumerate() {
            assert_eq!(w.index(z), i);
            assert!(w.contains(z));
        }
        assert_eq!(w.volume(), 4 * 4 * 3);
    }

    #[test]
    fn full_set_has_exact_volume() {
        let w = Window::cube(1, Point::ORIGIN, 40).unwrap();
        assert_eq!(SiteSet::full(w).len(), 81);
    }

    #[test]
    fn all_open_and_all_closed_steps() {
        let f = Front::single(1, Point::ORIGIN, 0, 4).unwrap();
        let up = evolve_front(&env(1, 1.0, 0), &f, Boundary::Strict).unwrap();
        assert_eq!(up.points().collect::<Vec<_>>(), pts(&[-1, 0, 1]));
        assert_eq!(up.t, 1);
        assert!(evolve_front(&env(1, 0.0, 0), &f, Boundary::Strict).unwrap().is_empty());
    }

    #[test]
    fn strict_boundary_reports_overflow() {
        let f = Front::single(1, Point::ORIGIN, 0, 0).unwrap();
        assert!(matches!(evolve_front(&env(1, 1.0, 0), &f, Boundary::Strict), Err(Error::Window(_))));
        let clipped = evolve_front(&env(1, 1.0, 0), &f, Boundary::Clip).unwrap();
        assert_eq!(clipped.len(), 1);
        let grown = evolve_front(&env(1, 1.0, 0), &f, Boundary::Grow).unwrap();
        assert_eq!(grown.len(), 3);
    }

    #[test]
    fn step_matches_edge_by_edge_recomputation() {
        let e = env(1, 0.5, 4242);
        let w = Window::cube(1, Point::ORIGIN, 30).unwrap();
        let start: Vec<Point> = pts(&[-7, -3, -2, 0, 4, 5, 11]);
        let f = Front::new(9, SiteSet::from_points(w, start.clone()).unwrap());
        let next = evolve_front(&e, &f, Boundary::Strict).unwrap();
        for target in -20..=20 {
            let tz = Point::from_slice(&[target]);
            let expected = start.iter().any(|&z| {
                let off = target - z.0[0];
                let dir = match off {
                    0 => 0,
                    1 => 1,
                    -1 => 2,
                    _ => return false,
                };
                e.is_open_at(z, 10, dir)
            });
            assert_eq!(next.contains(tz), expected, "site {target}");
        }
    }

    #[test]
    fn p1_cluster_fills_the_cone() {
        let trace = run_cluster(&env(1, 1.0, 3), &[Site::origin()], 3, None).unwrap();
        assert_eq!(trace.last().points().collect::<Vec<_>>(), pts(&[-3, -2, -1, 0, 1, 2, 3]));
        assert_eq!(trace.tau, Extinction::SurvivedToCap { cap: 3 });
        assert_eq!(trace.hull.len(), 7);
    }

    #[test]
    fn p0_dies_at_layer_one() {
        let trace = run_cluster(&env(1, 0.0, 3), &[Site::origin()], 10, None).unwrap();
        assert_eq!(trace.tau, Extinction::Extinct { tau: 1 });
        assert!(trace.fronts[1..].iter().all(|f| f.is_empty()));
    }

    #[test]
    fn trace_invariants_hold_over_seeds() {
        for seed in 0..40 {
            let trace = run_cluster(&env(1, 0.62, seed), &[Site::origin()], 60, None).unwrap();
            let mut died = false;
            for f in &trace.fronts {
                assert!(f.points().all(|z| z.l1() <= f.t));
                if died {
                    assert!(f.is_empty());
                }
                died |= f.is_empty();
                assert!(f.sites.is_subset(&trace.hull));
            }
            assert_eq!(trace.tau.tau().is_some(), died);
            assert_eq!(probe_extinction(&env(1, 0.62, seed), &Site::origin(), 60), trace.tau);
        }
    }

    #[test]
    fn probe_agrees_with_full_run_in_two_dimensions() {
        for seed in 0..30 {
            let e = env(2, 0.35, seed);
            let trace = run_cluster(&e, &[Site::origin()], 25, None).unwrap();
            assert_eq!(probe_extinction(&e, &Site::origin(), 25), trace.tau);
        }
    }

    #[test]
    fn survives_extremes() {
        assert!(survives(&env(1, 1.0, 0), &Site::origin(), 100).unwrap());
        assert!(!survives(&env(1, 0.0, 0), &Site::origin(), 1).unwrap());
        assert!(survives(&env(1, 0.5, 0), &Site::origin(), 0).is_err());
    }

    #[test]
    fn full_front_at_start_and_at_p1() {
        let target = Window::cube(1, Point::ORIGIN, 5).unwrap();
        let f = full_front(&env(1, 0.3, 1), &target, 4, 4).unwrap();
        assert_eq!(f.len(), 11);
        let f = full_front(&env(1, 1.0, 1), &target, 0, 9).unwrap();
        assert_eq!(f.len(), 11);
    }

    #[test]
    fn full_front_is_union_of_single_site_clusters() {
        let target = Window::cube(1, Point::ORIGIN, 10).unwrap();
        for seed in 0..20 {
            let e = env(1, 0.6, seed);
            for steps in 0..=5 {
                let f = full_front(&e, &target, 0, steps).unwrap();
                let mut union = SiteSet::empty(target);
                for x in target.inflate(steps).unwrap().points() {
                    let tr = run_cluster(&e, &[Site { z: x, t: 0 }], steps as u32, None).unwrap();
                    union.union_with(&tr.last().sites);
                }
                assert_eq!(f.sites, union, "seed {seed} steps {steps}");
            }
        }
    }

    #[test]
    fn single_site_front_is_contained_in_full_front() {
        let target = Window::cube(1, Point::ORIGIN, 40).unwrap();
        for seed in 0..10 {
            let e = env(1, 0.7, seed);
            let tr = run_cluster(&e, &[Site::origin()], 30, None).unwrap();
            for f in &tr.fronts {
                let full = full_front(&e, &target, 0, f.t).unwrap();
                assert!(f.sites.is_subset(&full.sites));
            }
        }
    }

    #[test]
    fn coupled_zone_extremes() {
        let w = Window::cube(1, Point::ORIGIN, 6).unwrap();
        let r = coupled_zone(&env(1, 1.0, 5), &Site::origin(), 8, 4, &w).unwrap();
        assert_eq!(r.zone.len(), w.volume());
        // m = 0 reduces to agreement at layer n
        let e = env(1, 0.7, 9);
        let r = coupled_zone(&e, &Site::origin(), 6, 0, &w).unwrap();
        let single = run_cluster(&e, &[Site::origin()], 6, None).unwrap();
        let full = full_front(&e, &w, 0, 6).unwrap();
        for z in w.points() {
            assert_eq!(r.zone.contains(z), single.last().contains(z) == full.contains(z));
        }
    }

    #[test]
    fn coupled_zone_shrinks_with_horizon() {
        let w = Window::cube(1, Point::ORIGIN, 12).unwrap();
        for seed in 0..10 {
            let e = env(1, 0.75, seed);
            let anchor = Site { z: Point::from_slice(&[seed as i32 - 5]), t: 3 };
            let mut prev = coupled_zone(&e, &anchor, 10, 0, &w).unwrap().zone;
            for m in 1..8 {
                let next = coupled_zone(&e, &anchor, 10, m, &w).unwrap().zone;
                assert!(next.is_subset(&prev));
                prev = next;
            }
        }
    }

    #[test]
    fn reachability_matches_fronts() {
        for seed in 0..10 {
            let e = env(1, 0.65, seed);
            let tr = run_cluster(&e, &[Site::origin()], 20, None).unwrap();
            for f in &tr.fronts {
                for z in -22..=22 {
                    let z = Point::from_slice(&[z]);
                    assert_eq!(reachable(&e, &Site::origin(), &Site { z, t: f.t }), f.contains(z));
                }
            }
        }
    }

    #[test]
    fn trace_csv_and_bitset_dump() {
        let trace = run_cluster(&env(1, 1.0, 0), &[Site::origin()], 2, None).unwrap();
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text, "t,count,min_z1,max_z1\n0,1,0,0\n1,3,-1,1\n2,5,-2,2\n");
        let mut bin = Vec::new();
        trace.write_bitsets(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"OPBS");
        // header 4+4+4+4+4+4, then 3 layers of 8 + 1 byte
        assert_eq!(bin.len(), 24 + 3 * 9);
        assert_eq!(bin[24 + 8], 0b00100);
        assert_eq!(bin[24 + 2 * 9 + 8], 0b11111);
    }
}
