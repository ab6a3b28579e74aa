//! Brute-force ground truth at desk scale.
//!
//! Nothing here shares code with the counting or dynamics modules beyond the
//! edge environment itself: paths are enumerated one step sequence at a time
//! and configuration laws are summed over every configuration.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{step_offset, Environment, Point};
use crate::error::{Error, Result};

pub const ENUMERATION_GUARD: u64 = 10_000_000;
pub const TINY_EDGE_GUARD: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnumerationResult {
    pub n: u32,
    /// Open paths per endpoint; endpoints with no open path are absent.
    pub counts: BTreeMap<Point, u64>,
    pub examined: u64,
}

impl EnumerationResult {
    pub fn open_total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Walks every one of the `(2d+1)^n` step sequences from the origin.
pub fn enumerate_paths_count(env: &Environment, n: u32) -> Result<EnumerationResult> {
    let degree = env.degree() as u64;
    let total = degree
        .checked_pow(n)
        .filter(|&t| t <= ENUMERATION_GUARD)
        .ok_or_else(|| Error::Resource(format!("({degree})^{n} step sequences exceed {ENUMERATION_GUARD}")))?;
    let mut counts = BTreeMap::new();
    for code in 0..total {
        let mut rest = code;
        let mut z = Point::ORIGIN;
        let mut open = true;
        for layer in 1..=n as i64 {
            let dir = (rest % degree) as u8;
            rest /= degree;
            if !env.is_open_at(z, layer, dir) {
                open = false;
                break;
            }
            z = z + step_offset(dir);
        }
        if open {
            *counts.entry(z).or_insert(0) += 1;
        }
    }
    Ok(EnumerationResult { n, counts, examined: total })
}

/// Exhaustive statistics of the first `n` layers, polynomial in `p`.
///
/// Sums are kept per number of open edges, so the law for any `p` is a
/// Bernstein combination of the stored tallies.
#[derive(Clone, Debug)]
pub struct TinyStats {
    pub d: usize,
    pub n: u32,
    pub edges: usize,
    paths_by_open: Vec<f64>,
    configs_by_open: Vec<f64>,
    /// `tau_by_open[k][t - 1]` for `t = 1..=n`, last slot for `tau > n`.
    tau_by_open: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TinyLaw {
    pub mean_paths: f64,
    /// `P(tau = t)` for `t = 1..=n`, then `P(tau > n)`.
    pub tau_law: Vec<f64>,
}

pub fn exact_tiny_stats(d: usize, n: u32) -> Result<TinyStats> {
    if !(1..=3).contains(&d) {
        return Err(Error::Params(format!("d = {d}")));
    }
    let degree = 2 * d as u8 + 1;
    // Edges able to matter: sources inside the l1 ball reachable by layer t-1.
    let mut edges: Vec<(Point, i64, u8)> = Vec::new();
    for t in 1..=n as i64 {
        for z in l1_ball(d, t - 1) {
            for dir in 0..degree {
                edges.push((z, t, dir));
            }
        }
    }
    if edges.len() > TINY_EDGE_GUARD {
        return Err(Error::Resource(format!("{} edges exceed {TINY_EDGE_GUARD}", edges.len())));
    }
    let index: BTreeMap<(Point, i64, u8), usize> = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let e = edges.len();
    let mut paths_by_open = vec![0.0; e + 1];
    let mut configs_by_open = vec![0.0; e + 1];
    let mut tau_by_open = vec![vec![0.0; n as usize + 1]; e + 1];
    let sequences = (degree as u64).pow(n);
    for mask in 0u64..(1 << e) {
        let k = mask.count_ones() as usize;
        let open = |z: Point, t: i64, dir: u8| index.get(&(z, t, dir)).is_some_and(|&i| mask >> i & 1 == 1);
        let mut paths = 0u64;
        for code in 0..sequences {
            let mut rest = code;
            let mut z = Point::ORIGIN;
            let mut ok = true;
            for t in 1..=n as i64 {
                let dir = (rest % degree as u64) as u8;
                rest /= degree as u64;
                if !open(z, t, dir) {
                    ok = false;
                    break;
                }
                z = z + step_offset(dir);
            }
            paths += ok as u64;
        }
        let mut occupied = vec![Point::ORIGIN];
        let mut tau = n as usize + 1;
        for t in 1..=n as i64 {
            let mut next: Vec<Point> = Vec::new();
            for &z in &occupied {
                for dir in 0..degree {
                    let w = z + step_offset(dir);
                    if open(z, t, dir) && !next.contains(&w) {
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                tau = t as usize;
                break;
            }
            occupied = next;
        }
        paths_by_open[k] += paths as f64;
        configs_by_open[k] += 1.0;
        tau_by_open[k][tau - 1] += 1.0;
    }
    Ok(TinyStats { d, n, edges: e, paths_by_open, configs_by_open, tau_by_open })
}

impl TinyStats {
    pub fn at(&self, p: f64) -> TinyLaw {
        let weight = |k: usize| p.powi(k as i32) * (1.0 - p).powi((self.edges - k) as i32);
        let mut mean_paths = 0.0;
        let mut tau_law = vec![0.0; self.n as usize + 1];
        let mut mass = 0.0;
        for k in 0..=self.edges {
            let w = weight(k);
            mean_paths += w * self.paths_by_open[k];
            mass += w * self.configs_by_open[k];
            for (slot, c) in tau_law.iter_mut().zip(&self.tau_by_open[k]) {
                *slot += w * c;
            }
        }
        debug_assert!((mass - 1.0).abs() < 1e-9);
        TinyLaw { mean_paths, tau_law }
    }
}

fn l1_ball(d: usize, r: i64) -> Vec<Point> {
    let r = r as i32;
    let mut out = Vec::new();
    let range = || -r..=r;
    match d {
        1 => out.extend(range().map(|a| Point::from_slice(&[a]))),
        2 => {
            for a in range() {
                for b in range() {
                    out.push(Point::from_slice(&[a, b]));
                }
            }
        }
        _ => {
            for a in range() {
                for b in range() {
                    for c in range() {
                        out.push(Point::from_slice(&[a, b, c]));
                    }
                }
            }
        }
    }
    out.retain(|z| z.l1() <= r as i64);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum P1Reference {
    /// Growth profile at slope `t` in `d = 1`.
    Growth(f64),
    /// `mu(x)`.
    Shape(Vec<i32>),
    /// `sigma(x)`.
    Sigma(Vec<i32>),
}

/// Closed-form values for the all-open lattice.
///
/// Growth is `log 3 - I(t)` with `I(t) = sup_l (l t - log((1 + 2 cosh l) / 3))`;
/// the supremum is attained where `2 sinh l / (1 + 2 cosh l) = t`, found by
/// bisection.
pub fn p1_reference(kind: &P1Reference) -> Result<f64> {
    match kind {
        P1Reference::Growth(t) => {
            if !(t.abs() < 1.0) {
                return Err(Error::Domain(format!("slope {t} outside (-1, 1)")));
            }
            let slope = |l: f64| 2.0 * l.sinh() / (1.0 + 2.0 * l.cosh());
            let (mut lo, mut hi) = (-700.0f64, 700.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) < *t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let l = 0.5 * (lo + hi);
            Ok((1.0 + 2.0 * l.cosh()).ln() - l * t)
        }
        P1Reference::Shape(x) => Ok(x.iter().map(|&c| (c as f64).abs()).sum()),
        P1Reference::Sigma(x) => Ok(x.iter().map(|&c| (c as f64).abs()).sum::<f64>().max(1.0)),
    }
}
