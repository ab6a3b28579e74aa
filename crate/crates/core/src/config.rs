//! Lattice geometry of `Z^d x N` and the Bernoulli edge environment.
//!
//! The environment is never stored. Every edge value is a pure function of
//! `(seed, target layer, source coordinate, step index)` through a keyed
//! SplitMix64 hash, so any region can be replayed, translated, or read
//! backwards in time without bookkeeping. Because `open = uniform < p`, the
//! environments for different `p` at one seed are monotonically coupled.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Exclusive bound on `|z_i|`; coordinates are packed into 21-bit fields.
pub const COORD_LIMIT: i32 = 1 << 20;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FIELD_MASK: u64 = (1 << 21) - 1;
const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

/// SplitMix64 output finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `index`-th replica seed from a master seed.
pub fn sub_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(GOLDEN_GAMMA)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub d: usize,
    pub p: f64,
    pub seed: u64,
}

impl LatticeParams {
    pub fn new(d: usize, p: f64, seed: u64) -> Result<Self> {
        let params = LatticeParams { d, p, seed };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.d) {
            return Err(Error::Params(format!("dimension d = {} outside 1..=3", self.d)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Params(format!("p = {} outside [0, 1]", self.p)));
        }
        Ok(())
    }

    /// Number of forward edges leaving each site, `2d + 1`.
    pub fn degree(&self) -> usize {
        2 * self.d + 1
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LatticeParams { seed, ..*self }
    }

    pub fn with_p(&self, p: f64) -> Self {
        LatticeParams { p, ..*self }
    }

    /// Parameters for replica `index`, seeded by [`sub_seed`].
    pub fn replica(&self, index: u64) -> Self {
        self.with_seed(sub_seed(self.seed, index))
    }
}

/// Spatial coordinate in `Z^d`; axes at or beyond `d` are kept at zero.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(pub [i32; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0; MAX_DIM]);

    pub fn from_slice(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point(c)
    }

    /// `value * e_axis`.
    pub fn unit(axis: usize, value: i32) -> Self {
        let mut c = [0; MAX_DIM];
        c[axis] = value;
        Point(c)
    }

    pub fn coords(&self, d: usize) -> &[i32] {
        &self.0[..d]
    }

    pub fn l1(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).max().unwrap_or(0)
    }

    pub fn scale(&self, k: i32) -> Self {
        Point([self.0[0] * k, self.0[1] * k, self.0[2] * k])
    }

    pub fn in_bounds(&self) -> bool {
        self.0.iter().all(|&c| c > -COORD_LIMIT && c < COORD_LIMIT)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// A site `(z, t)` of the space-time lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub z: Point,
    pub t: i64,
}

impl Site {
    pub fn new(z: Point, t: i64) -> Result<Self> {
        if t < 0 {
            return Err(Error::Address(format!("negative layer {t}")));
        }
        if !z.in_bounds() {
            return Err(Error::Address(format!("coordinate {z:?} beyond 2^20")));
        }
        Ok(Site { z, t })
    }

    pub fn origin() -> Self {
        Site { z: Point::ORIGIN, t: 0 }
    }
}

/// Spatial offset of step `dir`: `0 -> 0`, `2i+1 -> +e_i`, `2i+2 -> -e_i`.
#[inline(always)]
pub fn step_offset(dir: u8) -> Point {
    if dir == 0 {
        return Point::ORIGIN;
    }
    let axis = ((dir - 1) / 2) as usize;
    Point::unit(axis, if dir % 2 == 1 { 1 } else { -1 })
}

/// Step index whose offset is the negation of `dir`'s.
#[inline(always)]
pub fn reverse_step(dir: u8) -> u8 {
    match dir {
        0 => 0,
        d if d % 2 == 1 => d + 1,
        d => d - 1,
    }
}

/// Step index for an offset of l1-norm at most one.
pub fn step_for_offset(offset: Point) -> Option<u8> {
    if offset == Point::ORIGIN {
        return Some(0);
    }
    if offset.l1() != 1 {
        return None;
    }
    let axis = offset.0.iter().position(|&c| c != 0)?;
    Some(if offset.0[axis] > 0 { 2 * axis as u8 + 1 } else { 2 * axis as u8 + 2 })
}

/// Oriented edge from `(z, t - 1)` to `(z + offset(dir), t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeAddress {
    pub z: Point,
    pub t: i64,
    pub dir: u8,
}

impl EdgeAddress {
    pub fn new(d: usize, z: Point, t: i64, dir: u8) -> Result<Self> {
        let edge = EdgeAddress { z, t, dir };
        edge.validate(d)?;
        Ok(edge)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.dir as usize > 2 * d {
            return Err(Error::Address(format!("step index {} invalid for d = {d}", self.dir)));
        }
        if self.z.0[d..].iter().any(|&c| c != 0) {
            return Err(Error::Address(format!("coordinate {:?} has axes beyond d = {d}", self.z)));
        }
        if !self.z.in_bounds() || !self.target().in_bounds() {
            return Err(Error::Address(format!("coordinate {:?} beyond 2^20", self.z)));
        }
        Ok(())
    }

    pub fn source(&self) -> Point {
        self.z
    }

    pub fn target(&self) -> Point {
        self.z + step_offset(self.dir)
    }
}

/// Forward translation `theta_(y,h)` or reversed-time translation.
///
/// Forward maps edge `(z, t, dir)` to `(z + y, t + h, dir)`. Reversed maps the
/// site `(w, j)` to `(w + y, h - j)`, so the edge `(z, t, dir)` becomes the edge
/// from `(z + offset + y, h - t)` to `(z + y, h - t + 1)`, whose step is the
/// negated one. A forward path in the image reads as a backward path in the
/// source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TranslationVector {
    pub y: Point,
    pub h: i64,
    pub reversed: bool,
}

impl TranslationVector {
    pub const IDENTITY: TranslationVector =
        TranslationVector { y: Point::ORIGIN, h: 0, reversed: false };

    pub fn forward(y: Point, h: i64) -> Result<Self> {
        if h < 0 {
            return Err(Error::Address(format!("forward translation with h = {h} < 0")));
        }
        Ok(TranslationVector { y, h, reversed: false })
    }

    pub fn reversed(y: Point, h: i64) -> Self {
        TranslationVector { y, h, reversed: true }
    }

    /// The translation undoing `self` (for reversed ones: the reversal about
    /// the same anchor read from the other side).
    pub fn inverse(&self) -> Self {
        if self.reversed {
            TranslationVector { y: -self.y, h: self.h, reversed: true }
        } else {
            TranslationVector { y: -self.y, h: -self.h, reversed: false }
        }
    }

    /// Frame equal to applying `inner` first and then reading through `self`:
    /// `remap(e, self.then(inner)) == remap(remap(e, inner), self)`.
    pub fn then(&self, inner: &TranslationVector) -> Self {
        let h = if self.reversed { self.h - inner.h } else { self.h + inner.h };
        TranslationVector { y: self.y + inner.y, h, reversed: self.reversed ^ inner.reversed }
    }

    #[inline(always)]
    fn apply_unchecked(&self, z: Point, t: i64, dir: u8) -> (Point, i64, u8) {
        if self.reversed {
            (z + step_offset(dir) + self.y, self.h - t + 1, reverse_step(dir))
        } else {
            (z + self.y, t + self.h, dir)
        }
    }
}

impl Default for TranslationVector {
    fn default() -> Self {
        TranslationVector::IDENTITY
    }
}

/// Address of `edge` in the environment translated by `tv`.
pub fn remap(edge: &EdgeAddress, tv: &TranslationVector) -> Result<EdgeAddress> {
    let (z, t, dir) = tv.apply_unchecked(edge.z, edge.t, edge.dir);
    if t < 1 {
        return Err(Error::Address(format!("remapped target layer {t} < 1")));
    }
    let out = EdgeAddress { z, t, dir };
    if !out.z.in_bounds() || !out.target().in_bounds() {
        return Err(Error::Address(format!("remapped coordinate {z:?} beyond 2^20")));
    }
    Ok(out)
}

#[inline(always)]
fn pack_coords(z: Point) -> u64 {
    (z.0[0] as u64 & FIELD_MASK)
        | ((z.0[1] as u64 & FIELD_MASK) << 21)
        | ((z.0[2] as u64 & FIELD_MASK) << 42)
}

/// Raw 64-bit hash of an edge in base coordinates.
#[inline(always)]
pub fn edge_key(seed: u64, z: Point, t: i64, dir: u8) -> u64 {
    let layer_word = ((t as u64) << 3) | dir as u64;
    mix64(mix64(mix64(seed) ^ layer_word) ^ pack_coords(z))
}

#[inline(always)]
fn key_to_uniform(key: u64) -> f64 {
    (key >> 11) as f64 / TWO_POW_53
}

/// Read-only view of the environment, possibly translated.
///
/// Cheap to copy; every query is a hash evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Environment {
    params: LatticeParams,
    seed_key: u64,
    threshold: f64,
    frame: TranslationVector,
}

impl Environment {
    pub fn new(params: LatticeParams) -> Result<Self> {
        params.validate()?;
        Ok(Environment {
            params,
            seed_key: mix64(params.seed),
            threshold: params.p * TWO_POW_53,
            frame: TranslationVector::IDENTITY,
        })
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn degree(&self) -> u8 {
        self.params.degree() as u8
    }

    pub fn frame(&self) -> &TranslationVector {
        &self.frame
    }

    /// Environment seen from the translated frame: `theta_tv` applied to `self`.
    pub fn translate(&self, tv: &TranslationVector) -> Self {
        Environment { frame: self.frame.then(tv), ..*self }
    }

    /// Forward translation making `site` the new origin.
    pub fn recentered(&self, site: &Site) -> Self {
        self.translate(&TranslationVector { y: site.z, h: site.t, reversed: false })
    }

    #[inline(always)]
    fn key(&self, z: Point, t: i64, dir: u8) -> u64 {
        let (bz, bt, bdir) = self.frame.apply_unchecked(z, t, dir);
        // Hash the packed mix of seed and layer first; see edge_key.
        let layer_word = ((bt as u64) << 3) | bdir as u64;
        mix64(mix64(self.seed_key ^ layer_word) ^ pack_coords(bz))
    }

    /// Uniform variate of the edge entering `(z + offset(dir), t)` from `(z, t - 1)`.
    #[inline(always)]
    pub fn uniform_at(&self, z: Point, t: i64, dir: u8) -> f64 {
        key_to_uniform(self.key(z, t, dir))
    }

    /// Hot-path edge test without address validation.
    #[inline(always)]
    pub fn is_open_at(&self, z: Point, t: i64, dir: u8) -> bool {
        ((self.key(z, t, dir) >> 11) as f64) < self.threshold
    }

    pub fn edge_uniform(&self, edge: &EdgeAddress) -> Result<f64> {
        edge.validate(self.params.d)?;
        Ok(self.uniform_at(edge.z, edge.t, edge.dir))
    }

    pub fn edge_is_open(&self, edge: &EdgeAddress) -> Result<bool> {
        edge.validate(self.params.d)?;
        Ok(self.is_open_at(edge.z, edge.t, edge.dir))
    }
}

pub fn edge_uniform(params: &LatticeParams, edge: &EdgeAddress) -> Result<f64> {
    Environment::new(*params)?.edge_uniform(edge)
}

pub fn edge_is_open(params: &LatticeParams, edge: &EdgeAddress) -> Result<bool> {
    Environment::new(*params)?.edge_is_open(edge)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilDirection {
    Forward,
    Backward,
}

/// The `2d + 1` neighbours of `site` one layer up or down.
pub fn stencil(d: usize, site: &Site, direction: StencilDirection) -> Result<Vec<Site>> {
    let t = match direction {
        StencilDirection::Forward => site.t + 1,
        StencilDirection::Backward => {
            if site.t < 1 {
                return Err(Error::Boundary(format!("no layer below t = {}", site.t)));
            }
            site.t - 1
        }
    };
    Ok((0..=2 * d as u8).map(|dir| Site { z: site.z + step_offset(dir), t }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(p: f64, seed: u64) -> Environment {
        Environment::new(LatticeParams::new(1, p, seed).unwrap()).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LatticeParams::new(0, 0.5, 1).is_err());
        assert!(LatticeParams::new(4, 0.5, 1).is_err());
        assert!(LatticeParams::new(1, 1.5, 1).is_err());
        assert!(LatticeParams::new(1, f64::NAN, 1).is_err());
    }

    #[test]
    fn malformed_step_index_is_an_address_error() {
        let params = LatticeParams::new(1, 0.5, 7).unwrap();
        let edge = EdgeAddress { z: Point::ORIGIN, t: 1, dir: 3 };
        assert!(matches!(edge_uniform(&params, &edge), Err(Error::Address(_))));
    }

    #[test]
    fn uniform_is_deterministic() {
        let params = LatticeParams::new(2, 0.5, 99).unwrap();
        let edge = EdgeAddress::new(2, Point::from_slice(&[3, -4]), 17, 4).unwrap();
        assert_eq!(
            edge_uniform(&params, &edge).unwrap().to_bits(),
            edge_uniform(&params, &edge).unwrap().to_bits()
        );
    }

    #[test]
    fn extreme_probabilities() {
        for seed in 0..20 {
            for t in 1..20 {
                for dir in 0..3 {
                    let z = Point::from_slice(&[t as i32 - 10]);
                    assert!(!env(0.0, seed).is_open_at(z, t, dir));
                    assert!(env(1.0, seed).is_open_at(z, t, dir));
                }
            }
        }
    }

    #[test]
    fn uniform_mean_over_a_million_edges() {
        let e = env(0.5, 2024);
        let n = 1_000_000;
        let mut sum = 0.0;
        for i in 0..n {
            let z = Point::from_slice(&[(i % 1000) as i32 - 500]);
            sum += e.uniform_at(z, (i / 1000) as i64 + 1, (i % 3) as u8);
        }
        let mean = sum / n as f64;
        let tol = 3.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 0.5).abs() < tol, "mean {mean}");
    }

    #[test]
    fn open_frequency_at_p_07() {
        let e = env(0.7, 31337);
        let n = 1_000_000u32;
        let open = (0..n)
            .filter(|&i| e.is_open_at(Point::from_slice(&[(i % 2000) as i32 - 1000]), (i / 2000) as i64 + 1, 0))
            .count();
        let freq = open as f64 / n as f64;
        assert!((freq - 0.7).abs() < 3.0 * (0.21f64 / n as f64).sqrt(), "freq {freq}");
    }

    #[test]
    fn seeds_decorrelate_values() {
        let (a, b) = (env(0.5, 1), env(0.5, 2));
        let differ = (0..10_000)
            .filter(|&i| {
                let z = Point::from_slice(&[i % 100 - 50]);
                a.uniform_at(z, (i / 100) as i64 + 1, 1) != b.uniform_at(z, (i / 100) as i64 + 1, 1)
            })
            .count();
        assert!(differ >= 9_990);
    }

    #[test]
    fn sub_seeds_do_not_share_edges() {
        // Replica environments must not be related by a fixed bit pattern.
        let base = LatticeParams::new(1, 0.5, 5).unwrap();
        let (a, b) = (Environment::new(base.replica(0)).unwrap(), Environment::new(base.replica(1)).unwrap());
        let both = (0..20_000)
            .filter(|&i| {
                let z = Point::from_slice(&[i % 200 - 100]);
                a.is_open_at(z, (i / 200) as i64 + 1, 0) == b.is_open_at(z, (i / 200) as i64 + 1, 0)
            })
            .count();
        let frac = both as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "agreement {frac}");
    }

    #[test]
    fn stencil_shapes() {
        let s = stencil(1, &Site { z: Point::ORIGIN, t: 5 }, StencilDirection::Forward).unwrap();
        let zs: Vec<i32> = s.iter().map(|s| s.z.0[0]).collect();
        assert_eq!(zs.len(), 3);
        for want in [-1, 0, 1] {
            assert!(zs.contains(&want));
        }
        assert!(s.iter().all(|s| s.t == 6));
        assert_eq!(stencil(2, &Site::origin(), StencilDirection::Forward).unwrap().len(), 5);
        assert!(matches!(
            stencil(1, &Site::origin(), StencilDirection::Backward),
            Err(Error::Boundary(_))
        ));
    }

    #[test]
    fn stencil_closure() {
        let site = Site { z: Point::from_slice(&[2, -1, 4]), t: 3 };
        for up in stencil(3, &site, StencilDirection::Forward).unwrap() {
            assert!(stencil(3, &up, StencilDirection::Backward).unwrap().contains(&site));
        }
    }

    #[test]
    fn step_encoding_round_trip() {
        for dir in 0..7u8 {
            assert_eq!(step_for_offset(step_offset(dir)), Some(dir));
            assert_eq!(step_offset(reverse_step(dir)), -step_offset(dir));
        }
        assert_eq!(step_for_offset(Point::from_slice(&[1, 1])), None);
    }

    #[test]
    fn identity_and_group_law() {
        let e = EdgeAddress::new(2, Point::from_slice(&[4, -2]), 9, 3).unwrap();
        assert_eq!(remap(&e, &TranslationVector::IDENTITY).unwrap(), e);
        let a = TranslationVector::forward(Point::from_slice(&[1, 2]), 3).unwrap();
        let b = TranslationVector::forward(Point::from_slice(&[-5, 0]), 4).unwrap();
        let ab = TranslationVector::forward(Point::from_slice(&[-4, 2]), 7).unwrap();
        assert_eq!(remap(&remap(&e, &a).unwrap(), &b).unwrap(), remap(&e, &ab).unwrap());
    }

    #[test]
    fn reversed_remap_is_undone_about_the_same_anchor() {
        let mut state = 17u64;
        for _ in 0..1000 {
            state = mix64(state);
            let h = 10 + (state % 50) as i64;
            let t = 1 + ((state >> 8) % h as u64) as i64;
            let z = Point::from_slice(&[((state >> 20) % 200) as i32 - 100]);
            let y = Point::from_slice(&[((state >> 40) % 60) as i32 - 30]);
            let dir = ((state >> 60) % 3) as u8;
            let e = EdgeAddress::new(1, z, t, dir).unwrap();
            let tv = TranslationVector::reversed(y, h);
            let there = remap(&e, &tv).unwrap();
            assert_eq!(remap(&there, &tv.inverse()).unwrap(), e);
        }
    }

    #[test]
    fn reversed_paths_read_backwards() {
        // Path (0,0) -> (1,1) -> (1,2) seen through a reversal anchored at (y, 2).
        let tv = TranslationVector::reversed(Point::from_slice(&[5]), 2);
        let e1 = remap(&EdgeAddress::new(1, Point::ORIGIN, 1, 1).unwrap(), &tv).unwrap();
        let e2 = remap(&EdgeAddress::new(1, Point::from_slice(&[1]), 2, 0).unwrap(), &tv).unwrap();
        // Image edges are base edges traversed from (6,0) -> (6,1) -> (5,2).
        assert_eq!((e2.source(), e2.t - 1, e2.target(), e2.t), (Point::from_slice(&[6]), 0, Point::from_slice(&[6]), 1));
        assert_eq!((e1.source(), e1.target(), e1.t), (Point::from_slice(&[6]), Point::from_slice(&[5]), 2));
        assert!(remap(&EdgeAddress::new(1, Point::ORIGIN, 3, 0).unwrap(), &tv).is_err());
    }

    #[test]
    fn composed_frames_match_nested_remaps() {
        let frames = [
            TranslationVector::forward(Point::from_slice(&[3]), 5).unwrap(),
            TranslationVector::reversed(Point::from_slice(&[-2]), 40),
            TranslationVector::forward(Point::from_slice(&[-7]), 2).unwrap(),
            TranslationVector::reversed(Point::from_slice(&[4]), 25),
        ];
        let e = EdgeAddress::new(1, Point::from_slice(&[1]), 6, 2).unwrap();
        for a in &frames {
            for b in &frames {
                let (z, t, dir) = b.apply_unchecked(e.z, e.t, e.dir);
                let nested = a.apply_unchecked(z, t, dir);
                assert_eq!(nested, a.then(b).apply_unchecked(e.z, e.t, e.dir));
            }
        }
    }

    #[test]
    fn translated_environment_reads_shifted_edges() {
        let base = env(0.5, 8);
        let tv = TranslationVector::forward(Point::from_slice(&[7]), 11).unwrap();
        let shifted = base.translate(&tv);
        for t in 1..30 {
            for z in -10..10 {
                let z = Point::from_slice(&[z]);
                for dir in 0..3 {
                    assert_eq!(
                        shifted.uniform_at(z, t, dir).to_bits(),
                        base.uniform_at(z + tv.y, t + tv.h, dir).to_bits()
                    );
                }
            }
        }
    }

    /// Frozen hash vectors; any conforming implementation must reproduce them.
    #[test]
    fn hash_test_vectors() {
        let cases = [
            (0u64, [0, 0, 0], 1i64, 0u8),
            (42, [-1, 0, 0], 7, 2),
            (0xDEAD_BEEF, [5, -3, 0], 100, 3),
            (u64::MAX, [1_048_575, -1_048_575, 12], 123_456, 6),
        ];
        let got: Vec<u64> = cases.iter().map(|&(s, z, t, dir)| edge_key(s, Point(z), t, dir)).collect();
        assert_eq!(got, crate::config::tests::FROZEN_KEYS);
        for &(s, z, t, dir) in &cases {
            let e = Environment::new(LatticeParams::new(3, 0.5, s).unwrap()).unwrap();
            assert_eq!(e.uniform_at(Point(z), t, dir), key_to_uniform(edge_key(s, Point(z), t, dir)));
        }
    }

    pub(crate) const FROZEN_KEYS: [u64; 4] =
        [721373886964523290, 2478587297504569890, 2428365148486380675, 12969434548944525448];

    #[test]
    fn monotone_coupling_in_p() {
        let lo = env(0.4, 77);
        let hi = env(0.9, 77);
        for t in 1..200 {
            for z in -20..20 {
                for dir in 0..3 {
                    let z = Point::from_slice(&[z]);
                    assert!(!lo.is_open_at(z, t, dir) || hi.is_open_at(z, t, dir));
                }
            }
        }
    }
}
