//! Dyadic cube approximations of well-shaped sets `Ω ⊆ [0,1]^{2n}` and the
//! blow-up count `N(a; pΩ)`.
//!
//! A set is well-shaped when both `ε`-shells of its boundary have measure at
//! most `Cε`. Inside such a set we take the cubes of a shifted grid of mesh
//! `1/k` ([`cubes_inside`]), peel them into dyadic layers `ℬ_1, ..., ℬ_M`
//! ([`dyadic_layers`]) and count solutions cube by cube with the fast counter
//! ([`count_in_blowup`]). Blow-up points are `(x_1/p, y_1/p, ..., x_n/p, y_n/p)`
//! with every integer coordinate in `[0, p-1]`.

use std::collections::HashSet;
use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accum::par_map;
use crate::counting::{CoefficientVector, FastCounter};
use crate::error::{Error, Result};
use crate::fpcore::PrimeContext;
use crate::geometry::{Interval, ProductRegion, Region};

/// Largest `p^{2n-1}` accepted by [`exact_blowup_count`].
pub const EXACT_BLOWUP_BUDGET: f64 = 2e9;
/// Largest number of candidate grid cells scanned by a cube enumeration.
pub const CUBE_BUDGET: f64 = 4e8;

/// A subset of `[0,1]^d` with a containment test for axis-aligned cubes.
pub trait WellShapedSet: Send + Sync {
    fn dim(&self) -> usize;

    fn member(&self, x: &[f64]) -> bool;

    /// Whether the closed cube `Π [lo_i, lo_i + side]` lies inside the set.
    fn cube_inside(&self, lo: &[f64], side: f64) -> bool;

    /// Necessary condition for `cube_inside` using only the first
    /// `lo.len()` coordinates.
    fn partial_fits(&self, _lo: &[f64], _side: f64) -> bool {
        true
    }

    /// Necessary condition for `member` using only the coordinates with
    /// `fixed[i]` set.
    fn may_contain(&self, _x: &[f64], _fixed: &[bool]) -> bool {
        true
    }

    /// Lebesgue measure.
    fn measure(&self) -> f64;

    /// Standard error of [`WellShapedSet::measure`]; zero when exact.
    fn measure_std_error(&self) -> f64 {
        0.0
    }

    /// A constant `C` with `μ(shell_ε) <= C ε` for both shells and all `ε > 0`.
    /// The inner shell is measured against the complement in `R^d`, which
    /// also covers the grid slivers next to the faces of `[0,1]^d`.
    fn boundary_constant(&self) -> f64;

    fn describe(&self) -> String;
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let mut v = [1.0, 2.0];
    for k in 2..=d {
        v[k % 2] *= 2.0 * PI / k as f64;
    }
    v[d % 2]
}

fn in_unit_cube(lo: &[f64], side: f64) -> bool {
    lo.iter().all(|&l| l >= 0.0 && l + side <= 1.0)
}

fn farthest_offset(lo: f64, side: f64, c: f64) -> f64 {
    (c - lo).abs().max((lo + side - c).abs())
}

// Outer shell bound: f(ε) = μ(grown set) − μ is convex, so below ε* it is
// under the chord to (ε*, 1 − μ), and above ε* it is capped by 1 − μ.
fn chord_constant(volume: f64, eps_star: f64) -> f64 {
    if volume >= 1.0 || eps_star <= 0.0 {
        0.0
    } else {
        (1.0 - volume) / eps_star
    }
}

/// Ellipsoid `Σ ((x_i - c_i)/r_i)^2 <= 1` contained in `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    center: Vec<f64>,
    radii: Vec<f64>,
}

impl Ellipsoid {
    pub fn new(center: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        if center.len() != radii.len() || center.is_empty() {
            return Err(Error::domain(
                "center and radii must have equal positive length",
            ));
        }
        for (&c, &r) in center.iter().zip(&radii) {
            if !(r > 0.0) || c - r < 0.0 || c + r > 1.0 {
                return Err(Error::domain(format!(
                    "ellipsoid axis (c={c}, r={r}) leaves [0,1]"
                )));
            }
        }
        Ok(Self { center, radii })
    }

    /// Axis-parallel ellipsoid centred at `(1/2, ..., 1/2)`.
    pub fn centered(radii: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.5; radii.len()], radii)
    }

    fn quad(&self, terms: impl Iterator<Item = (usize, f64)>) -> f64 {
        terms.map(|(i, dx)| (dx / self.radii[i]).powi(2)).sum()
    }
}

impl WellShapedSet for Ellipsoid {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn member(&self, x: &[f64]) -> bool {
        self.quad(x.iter().enumerate().map(|(i, &v)| (i, v - self.center[i]))) <= 1.0
    }

    fn cube_inside(&self, lo: &[f64], side: f64) -> bool {
        lo.len() == self.dim() && self.partial_fits(lo, side)
    }

    fn partial_fits(&self, lo: &[f64], side: f64) -> bool {
        self.quad(
            lo.iter()
                .enumerate()
                .map(|(i, &l)| (i, farthest_offset(l, side, self.center[i]))),
        ) <= 1.0
    }

    fn may_contain(&self, x: &[f64], fixed: &[bool]) -> bool {
        self.quad(
            x.iter()
                .enumerate()
                .filter(|(i, _)| fixed[*i])
                .map(|(i, &v)| (i, v - self.center[i])),
        ) <= 1.0
    }

    fn measure(&self) -> f64 {
        unit_ball_volume(self.dim()) * self.radii.iter().product::<f64>()
    }

    fn boundary_constant(&self) -> f64 {
        // (1 - ε/r_min) E lies at distance >= ε from the boundary, and the
        // ε-neighbourhood of E lies inside (1 + ε/r_min) E.
        let d = self.dim() as f64;
        let v = self.measure();
        let r_min = self.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let inner = d * v / r_min;
        let eps_star = r_min * (v.powf(-1.0 / d) - 1.0);
        inner.max(chord_constant(v, eps_star))
    }

    fn describe(&self) -> String {
        let r: Vec<String> = self.radii.iter().map(|r| r.to_string()).collect();
        format!("ellipsoid:{}", r.join(","))
    }
}

/// Euclidean ball inside `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball(Ellipsoid);

impl Ball {
    pub fn new(center: Vec<f64>, r: f64) -> Result<Self> {
        let d = center.len();
        Ok(Self(Ellipsoid::new(center, vec![r; d])?))
    }

    pub fn centered(dim: usize, r: f64) -> Result<Self> {
        Self::new(vec![0.5; dim], r)
    }

    pub fn radius(&self) -> f64 {
        self.0.radii[0]
    }
}

impl WellShapedSet for Ball {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn member(&self, x: &[f64]) -> bool {
        self.0.member(x)
    }
    fn cube_inside(&self, lo: &[f64], side: f64) -> bool {
        self.0.cube_inside(lo, side)
    }
    fn partial_fits(&self, lo: &[f64], side: f64) -> bool {
        self.0.partial_fits(lo, side)
    }
    fn may_contain(&self, x: &[f64], fixed: &[bool]) -> bool {
        self.0.may_contain(x, fixed)
    }
    fn measure(&self) -> f64 {
        self.0.measure()
    }
    fn boundary_constant(&self) -> f64 {
        self.0.boundary_constant()
    }
    fn describe(&self) -> String {
        format!("ball:{}", self.radius())
    }
}

/// Axis-parallel box `Π [lo_i, hi_i] ⊆ [0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::domain("box bounds must have equal positive length"));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(&a, &b)| !(0.0 <= a && a <= b && b <= 1.0))
        {
            return Err(Error::domain("box must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a)
    }
}

impl WellShapedSet for BoxSet {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn member(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }

    fn cube_inside(&self, lo: &[f64], side: f64) -> bool {
        lo.len() == self.dim() && self.partial_fits(lo, side)
    }

    fn partial_fits(&self, lo: &[f64], side: f64) -> bool {
        lo.iter()
            .enumerate()
            .all(|(i, &l)| self.lo[i] <= l && l + side <= self.hi[i])
    }

    fn may_contain(&self, x: &[f64], fixed: &[bool]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| !fixed[i] || (self.lo[i] <= v && v <= self.hi[i]))
    }

    fn measure(&self) -> f64 {
        self.widths().product()
    }

    fn boundary_constant(&self) -> f64 {
        let w: Vec<f64> = self.widths().collect();
        let surface: f64 = (0..w.len())
            .map(|i| {
                2.0 * w
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, x)| x)
                    .product::<f64>()
            })
            .sum();
        let v = self.measure();
        let grown = |e: f64| w.iter().map(|x| x + 2.0 * e).product::<f64>();
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if grown(m) < 1.0 {
                a = m;
            } else {
                b = m;
            }
        }
        surface.max(chord_constant(v, b))
    }

    fn describe(&self) -> String {
        if self.lo.iter().all(|&x| x == 0.0) && self.hi.iter().all(|&x| x == 1.0) {
            "cube".into()
        } else {
            format!("box:{:?}-{:?}", self.lo, self.hi)
        }
    }
}

/// The corner region `{x ∈ [0,1]^d : Σ w_i x_i <= t}` with positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceCap {
    w: Vec<f64>,
    t: f64,
}

impl HalfspaceCap {
    pub fn new(w: Vec<f64>, t: f64) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::domain("halfspace-cap weights must be positive"));
        }
        Ok(Self { w, t })
    }
}

impl WellShapedSet for HalfspaceCap {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn member(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| (0.0..=1.0).contains(&v))
            && x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() <= self.t
    }

    fn cube_inside(&self, lo: &[f64], side: f64) -> bool {
        lo.len() == self.dim() && self.partial_fits(lo, side)
    }

    fn partial_fits(&self, lo: &[f64], side: f64) -> bool {
        in_unit_cube(lo, side)
            && lo
                .iter()
                .zip(&self.w)
                .map(|(l, w)| (l + side) * w)
                .sum::<f64>()
                <= self.t
    }

    fn may_contain(&self, x: &[f64], fixed: &[bool]) -> bool {
        x.iter()
            .zip(&self.w)
            .zip(fixed)
            .filter(|(_, &f)| f)
            .map(|((a, b), _)| a * b)
            .sum::<f64>()
            <= self.t
    }

    fn measure(&self) -> f64 {
        // inclusion-exclusion over the vertices of the unit cube
        let d = self.dim();
        let scale: f64 =
            (1..=d).map(|k| k as f64).product::<f64>() * self.w.iter().product::<f64>();
        let mut acc = 0.0;
        for mask in 0u32..(1 << d) {
            let shift: f64 = (0..d)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| self.w[i])
                .sum();
            let excess = self.t - shift;
            if excess > 0.0 {
                let sign = if mask.count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                acc += sign * excess.powi(d as i32);
            }
        }
        (acc / scale).clamp(0.0, 1.0)
    }

    fn boundary_constant(&self) -> f64 {
        // a convex subset of [0,1]^d has surface area at most 2d, and every
        // hyperplane section of the unit cube has area at most √2
        (2.0 * self.dim() as f64).max(2f64.sqrt())
    }

    fn describe(&self) -> String {
        let w: Vec<String> = self.w.iter().map(|r| r.to_string()).collect();
        format!("halfspace-cap:{},{}", w.join(","), self.t)
    }
}

/// A set given only by a membership predicate; convex sets only.
///
/// `cube_inside` tests the `2^d` vertices and the `2d` face centres. The
/// measure is a Monte Carlo estimate with a fixed seed.
pub struct PredicateSet {
    dim: usize,
    predicate: Box<dyn Fn(&[f64]) -> bool + Send + Sync>,
    measure: f64,
    std_error: f64,
    boundary_constant: f64,
    name: String,
}

impl PredicateSet {
    pub const SAMPLES: usize = 200_000;
    pub const SEED: u64 = 0x5eed_cafe;

    pub fn new(
        dim: usize,
        boundary_constant: f64,
        name: impl Into<String>,
        predicate: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        let mut x = vec![0.0; dim];
        let mut hits = 0usize;
        for _ in 0..Self::SAMPLES {
            for v in x.iter_mut() {
                *v = rng.gen::<f64>();
            }
            hits += predicate(&x) as usize;
        }
        let n = Self::SAMPLES as f64;
        let mu = hits as f64 / n;
        Self {
            dim,
            predicate: Box::new(predicate),
            measure: mu,
            std_error: (mu * (1.0 - mu) / n).sqrt(),
            boundary_constant,
            name: name.into(),
        }
    }
}

impl WellShapedSet for PredicateSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn member(&self, x: &[f64]) -> bool {
        (self.predicate)(x)
    }

    fn cube_inside(&self, lo: &[f64], side: f64) -> bool {
        if !in_unit_cube(lo, side) {
            return false;
        }
        let d = self.dim;
        let mut v = vec![0.0; d];
        for mask in 0u64..(1 << d) {
            for (i, x) in v.iter_mut().enumerate() {
                *x = lo[i] + if mask >> i & 1 == 1 { side } else { 0.0 };
            }
            if !self.member(&v) {
                return false;
            }
        }
        for face in 0..2 * d {
            for (i, x) in v.iter_mut().enumerate() {
                *x = lo[i] + 0.5 * side;
            }
            v[face / 2] = lo[face / 2] + if face % 2 == 1 { side } else { 0.0 };
            if !self.member(&v) {
                return false;
            }
        }
        true
    }

    fn measure(&self) -> f64 {
        self.measure
    }

    fn measure_std_error(&self) -> f64 {
        self.std_error
    }

    fn boundary_constant(&self) -> f64 {
        self.boundary_constant
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Parses `ball:r`, `ellipsoid:r1,...,rd`, `cube` or
/// `halfspace-cap:w1,...,wd,t` for dimension `dim`.
pub fn parse_set(spec: &str, dim: usize) -> Result<Box<dyn WellShapedSet>> {
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let nums = || -> Result<Vec<f64>> {
        args.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(format!("bad number `{s}` in `{spec}`")))
            })
            .collect()
    };
    let set: Box<dyn WellShapedSet> = match kind {
        "ball" => match nums()?.as_slice() {
            [r] => Box::new(Ball::centered(dim, *r)?),
            _ => return Err(Error::parse("expected ball:r")),
        },
        "ellipsoid" => {
            let r = nums()?;
            if r.len() != dim {
                return Err(Error::parse(format!("ellipsoid needs {dim} radii")));
            }
            Box::new(Ellipsoid::centered(r)?)
        }
        "cube" => Box::new(BoxSet::unit(dim)),
        "halfspace-cap" => {
            let mut v = nums()?;
            if v.len() != dim + 1 {
                return Err(Error::parse(format!(
                    "halfspace-cap needs {dim} weights and t"
                )));
            }
            let t = v.pop().unwrap();
            Box::new(HalfspaceCap::new(v, t)?)
        }
        _ => return Err(Error::parse(format!("unknown set `{spec}`"))),
    };
    Ok(set)
}

/// Grid shift `α ∈ [0,1)^d` shared by every level of a decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    alpha: Vec<f64>,
}

impl Shift {
    /// `α_i = frac(√q_i)` over the first `d` non-squares `q_i >= 2`.
    pub fn standard(dim: usize) -> Self {
        let alpha = (2u64..)
            .filter(|&q| {
                let r = (q as f64).sqrt().round() as u64;
                r * r != q
            })
            .take(dim)
            .map(|q| (q as f64).sqrt().fract())
            .collect();
        Self { alpha }
    }

    pub fn from_coords(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !(0.0..1.0).contains(a)) {
            return Err(Error::domain("shift coordinates must lie in [0,1)"));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Redraws coordinates until no cube face at mesh `1/2^max_level` passes
    /// through a point of `(1/p) Z`, i.e. `2^max_level · p · α_i` stays away
    /// from the integers. Returns the number of redrawn coordinates.
    pub fn make_generic(&mut self, p: u64, max_level: u32, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = p as f64 * 2f64.powi(max_level as i32);
        let bad = |a: f64| {
            let f = (a * scale).fract();
            f.min(1.0 - f) < 1e-6
        };
        let mut redrawn = 0;
        for a in self.alpha.iter_mut() {
            while bad(*a) {
                *a = rng.gen::<f64>();
                redrawn += 1;
            }
        }
        redrawn
    }
}

/// The cubes `Π [α_i + u_i/k, α_i + (u_i+1)/k]`, `u ∈ Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedCubeFamily {
    pub k: u32,
    pub shift: Shift,
}

impl ShiftedCubeFamily {
    pub fn new(k: u32, shift: Shift) -> Result<Self> {
        if k == 0 || k > 1 << 14 {
            return Err(Error::domain(format!("grid size k={k} out of range")));
        }
        Ok(Self { k, shift })
    }

    pub fn side(&self) -> f64 {
        1.0 / self.k as f64
    }

    pub fn corner(&self, axis: usize, u: i32) -> f64 {
        self.shift.alpha[axis] + u as f64 / self.k as f64
    }

    /// The `u` whose cubes lie inside `[0,1]` along `axis`.
    pub fn axis_range(&self, axis: usize) -> std::ops::RangeInclusive<i32> {
        let k = self.k as f64;
        let a = self.shift.alpha[axis];
        let lo = (-a * k).ceil() as i32;
        let hi = (k * (1.0 - a)).floor() as i32 - 1;
        lo..=hi
    }
}

/// A flat list of cubes of one family, `dim` coordinates per cube.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeList {
    pub k: u32,
    pub dim: usize,
    coords: Vec<i16>,
}

impl CubeList {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[i16] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i16]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    fn push(&mut self, u: &[i16]) {
        self.coords.extend_from_slice(u);
    }
}

fn scan_cubes(
    omega: &dyn WellShapedSet,
    fam: &ShiftedCubeFamily,
    mut visit: impl FnMut(&[i16]),
) -> Result<()> {
    let d = omega.dim();
    if fam.shift.dim() != d {
        return Err(Error::domain("shift dimension differs from the set"));
    }
    let ranges: Vec<_> = (0..d).map(|i| fam.axis_range(i)).collect();
    let side = fam.side();
    let mut u = vec![0i16; d];
    let mut lo = vec![0.0; d];
    let mut visited = 0f64;
    fn rec(
        depth: usize,
        omega: &dyn WellShapedSet,
        fam: &ShiftedCubeFamily,
        ranges: &[std::ops::RangeInclusive<i32>],
        side: f64,
        u: &mut [i16],
        lo: &mut [f64],
        visited: &mut f64,
        visit: &mut dyn FnMut(&[i16]),
    ) -> Result<()> {
        let d = u.len();
        for v in ranges[depth].clone() {
            *visited += 1.0;
            if *visited > CUBE_BUDGET {
                return Err(Error::Size {
                    what: "cube enumeration",
                    needed: *visited,
                    budget: CUBE_BUDGET,
                });
            }
            u[depth] = v as i16;
            lo[depth] = fam.corner(depth, v);
            if depth + 1 == d {
                if omega.cube_inside(lo, side) {
                    visit(u);
                }
            } else if omega.partial_fits(&lo[..=depth], side) {
                rec(depth + 1, omega, fam, ranges, side, u, lo, visited, visit)?;
            }
        }
        Ok(())
    }
    rec(
        0,
        omega,
        fam,
        &ranges,
        side,
        &mut u,
        &mut lo,
        &mut visited,
        &mut visit,
    )
}

/// `ℭ_0(k)`: cubes of the family lying inside `Ω`, in lexicographic order of `u`.
pub fn cubes_inside(omega: &dyn WellShapedSet, fam: &ShiftedCubeFamily) -> Result<CubeList> {
    let mut out = CubeList {
        k: fam.k,
        dim: omega.dim(),
        coords: Vec::new(),
    };
    scan_cubes(omega, fam, |u| out.push(u))?;
    Ok(out)
}

/// `#ℭ_0(k)` without storing the cubes.
pub fn count_cubes_inside(omega: &dyn WellShapedSet, fam: &ShiftedCubeFamily) -> Result<u64> {
    let mut n = 0u64;
    scan_cubes(omega, fam, |_| n += 1)?;
    Ok(n)
}

/// Layers `ℬ_1 = ℭ_0(2)` and `ℬ_i = {Γ ∈ ℭ_0(2^i) : parent(Γ) ∉ ℭ_0(2^{i-1})}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicDecomposition {
    pub m: u32,
    pub shift: Shift,
    /// `layers[i - 1]` is `ℬ_i`, with mesh `2^{-i}`.
    pub layers: Vec<CubeList>,
    /// `Σ_i #ℬ_i 2^{-i d}`.
    pub covered_measure: f64,
    /// `max_i #ℬ_i / 2^{i(d-1)}`.
    pub layer_constant: f64,
}

impl DyadicDecomposition {
    pub fn dim(&self) -> usize {
        self.shift.dim()
    }

    pub fn cube_count(&self) -> usize {
        self.layers.iter().map(CubeList::len).sum()
    }

    /// One line `level u_1 ... u_d` per cube.
    pub fn dump(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            for u in layer.iter() {
                write!(out, "{}", i + 1)?;
                for c in u {
                    write!(out, " {c}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

pub fn dyadic_layers(
    omega: &dyn WellShapedSet,
    m: u32,
    shift: &Shift,
) -> Result<DyadicDecomposition> {
    if m == 0 || m > 14 {
        return Err(Error::domain(format!("depth M={m} must lie in 1..=14")));
    }
    let d = omega.dim();
    let mut layers = Vec::with_capacity(m as usize);
    let mut parents: HashSet<Vec<i16>> = HashSet::new();
    for level in 1..=m {
        let fam = ShiftedCubeFamily::new(1 << level, shift.clone())?;
        let all = cubes_inside(omega, &fam)?;
        let mut layer = CubeList {
            k: fam.k,
            dim: d,
            coords: Vec::new(),
        };
        let mut parent = vec![0i16; d];
        for u in all.iter() {
            for (p, &c) in parent.iter_mut().zip(u) {
                *p = c.div_euclid(2);
            }
            if level == 1 || !parents.contains(&parent) {
                layer.push(u);
            }
        }
        if level < m {
            parents = all.iter().map(<[i16]>::to_vec).collect();
        }
        layers.push(layer);
    }
    let covered_measure = layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.len() as f64 * 2f64.powi(-((i as i32 + 1) * d as i32)))
        .sum();
    let layer_constant = layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.len() as f64 / 2f64.powi((i as i32 + 1) * (d as i32 - 1)))
        .fold(0.0, f64::max);
    Ok(DyadicDecomposition {
        m,
        shift: shift.clone(),
        layers,
        covered_measure,
        layer_constant,
    })
}

/// The largest `M` with `2^M <= p^{2(n-1)/(3n-2)}`. Warns for `n < 3`.
#[allow(non_snake_case)]
pub fn choose_M(p: u64, n: usize) -> u32 {
    if n < 3 {
        warn!("depth rule is stated for n >= 3, got n = {n}");
    }
    if n <= 1 || p < 2 {
        return 0;
    }
    let (num, den) = (2 * (n as u32 - 1), 3 * n as u32 - 2);
    // 2^{M den} <= p^{num}, compared in logs with an exact integer fallback
    let lp = (p as f64).log2();
    let mut m = (num as f64 * lp / den as f64).floor() as u32;
    let fits = |m: u32| -> bool {
        let lhs = (m * den) as f64;
        let rhs = num as f64 * lp;
        if (lhs - rhs).abs() > 1e-9 {
            return lhs <= rhs;
        }
        match (m * den, (p as u128).checked_pow(num)) {
            (e, Some(pn)) if e < 128 => (1u128 << e) <= pn,
            _ => lhs <= rhs,
        }
    };
    while m > 0 && !fits(m) {
        m -= 1;
    }
    while fits(m + 1) {
        m += 1;
    }
    m
}

/// Result of [`count_in_blowup`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlowupCount {
    /// Solutions lying in the union of all layer cubes; a lower bound for
    /// `N(a; pΩ)`.
    pub layer_sum: u64,
    /// `p^{2n-1} μ(Ω)`.
    pub main_term: f64,
    /// `p^{2n-1} C (√(2n) 2^{-M} + √(2n)/p)`, the expected number of
    /// solutions near the boundary that the layers miss.
    pub uncovered_bound: f64,
    pub m: u32,
    pub layer_sums: Vec<u64>,
    pub cubes: usize,
    pub covered_measure: f64,
    pub redrawn_shift_coords: usize,
}

/// Seed used to redraw shift coordinates that hit the blow-up lattice.
pub const SHIFT_SEED: u64 = 0x0a1f_a5ee;

/// Integer coordinates `[⌈p lo⌉, ⌊p hi⌋] ∩ [0, p-1]` of one cube axis.
fn inward_interval(lo: f64, side: f64, p: u64) -> Interval {
    let pf = p as f64;
    let a = (pf * lo).ceil().max(0.0) as i64;
    let b = (pf * (lo + side)).floor().min(pf - 1.0) as i64;
    Interval::closed(a, b)
}

/// Counts solutions in the dyadic layers of `pΩ`, cube by cube.
pub fn count_in_blowup(
    coeffs: &CoefficientVector,
    omega: &dyn WellShapedSet,
    ctx: &PrimeContext,
) -> Result<BlowupCount> {
    let n = coeffs.n();
    if omega.dim() != 2 * n {
        return Err(Error::domain(format!(
            "set has dimension {} but {} variable pairs need {}",
            omega.dim(),
            n,
            2 * n
        )));
    }
    let p = ctx.p();
    let m = choose_M(p, n);
    let pf = p as f64;
    let d = 2 * n;
    let scale = pf.powi(d as i32 - 1);
    let main_term = scale * omega.measure();
    let c = omega.boundary_constant();
    let root_d = (d as f64).sqrt();
    let uncovered_bound = scale * c * (root_d * 2f64.powi(-(m as i32)) + root_d / pf);
    if m == 0 {
        return Ok(BlowupCount {
            layer_sum: 0,
            main_term,
            uncovered_bound: scale * omega.measure().max(c * root_d),
            m,
            layer_sums: Vec::new(),
            cubes: 0,
            covered_measure: 0.0,
            redrawn_shift_coords: 0,
        });
    }
    let mut shift = Shift::standard(d);
    let redrawn = shift.make_generic(p, m, SHIFT_SEED);
    let dec = dyadic_layers(omega, m, &shift)?;
    let mut layer_sums = Vec::with_capacity(dec.layers.len());
    for layer in &dec.layers {
        let fam = ShiftedCubeFamily::new(layer.k, shift.clone())?;
        let side = fam.side();
        let counts = par_map(0..layer.len() as u64, |idx| -> Result<u64> {
            let u = layer.get(idx as usize);
            let axes: Vec<Interval> = (0..d)
                .map(|i| inward_interval(fam.corner(i, u[i] as i32), side, p))
                .collect();
            if axes.iter().any(Interval::is_empty) {
                return Ok(0);
            }
            let factors = (0..n)
                .map(|j| Region::boxed(axes[2 * j], axes[2 * j + 1]))
                .collect();
            let regions = ProductRegion::bind(factors, ctx)?;
            Ok(FastCounter::new(coeffs, &regions, ctx)?
                .count(coeffs.a0() as i64)?
                .count)
        });
        let mut total = 0u64;
        for c in counts {
            total += c?;
        }
        layer_sums.push(total);
    }
    Ok(BlowupCount {
        layer_sum: layer_sums.iter().sum(),
        main_term,
        uncovered_bound,
        m,
        layer_sums,
        cubes: dec.cube_count(),
        covered_measure: dec.covered_measure,
        redrawn_shift_coords: redrawn,
    })
}

/// Exact `N(a; pΩ)` over `y ∈ [1, p-1]^n`, `x_2, ..., x_n ∈ [0, p-1]`, with
/// `x_1` solved from the congruence.
pub fn exact_blowup_count(
    coeffs: &CoefficientVector,
    omega: &dyn WellShapedSet,
    ctx: &PrimeContext,
) -> Result<u64> {
    let n = coeffs.n();
    let d = 2 * n;
    if omega.dim() != d {
        return Err(Error::domain(format!(
            "set has dimension {} but {} variable pairs need {}",
            omega.dim(),
            n,
            d
        )));
    }
    let p = ctx.p();
    let needed = (p as f64).powi(d as i32 - 1);
    if needed > EXACT_BLOWUP_BUDGET {
        return Err(Error::Size {
            what: "exact blow-up count",
            needed,
            budget: EXACT_BLOWUP_BUDGET,
        });
    }
    let a1_inv = ctx.inv_reduced(coeffs.a()[0]);
    let pf = p as f64;
    // y_1 first, then (x_j, y_j) for j >= 2, each pruned by the fixed coordinates
    let counts = par_map(1..p, |y1| {
        let mut point = vec![0.0; d];
        let mut fixed = vec![false; d];
        point[1] = y1 as f64 / pf;
        fixed[1] = true;
        if !omega.may_contain(&point, &fixed) {
            return 0u64;
        }
        let mut count = 0u64;
        exact_rec(
            1, 0, y1, coeffs, omega, ctx, a1_inv, &mut point, &mut fixed, &mut count,
        );
        count
    });
    Ok(counts.iter().sum())
}

#[allow(clippy::too_many_arguments)]
fn exact_rec(
    j: usize,
    partial: u64,
    y1: u64,
    coeffs: &CoefficientVector,
    omega: &dyn WellShapedSet,
    ctx: &PrimeContext,
    a1_inv: u64,
    point: &mut [f64],
    fixed: &mut [bool],
    count: &mut u64,
) {
    let p = ctx.p();
    let pf = p as f64;
    if j == coeffs.n() {
        let rhs = ctx.add(coeffs.a0(), ctx.neg(partial));
        let x1 = ctx.mul(ctx.mul(rhs, a1_inv), y1);
        point[0] = x1 as f64 / pf;
        *count += omega.member(point) as u64;
        return;
    }
    let aj = coeffs.a()[j];
    for yj in 1..p {
        point[2 * j + 1] = yj as f64 / pf;
        fixed[2 * j + 1] = true;
        fixed[2 * j] = false;
        if !omega.may_contain(point, fixed) {
            continue;
        }
        let step = ctx.mul(aj, ctx.inv_reduced(yj));
        let mut term = 0u64;
        fixed[2 * j] = true;
        for xj in 0..p {
            point[2 * j] = xj as f64 / pf;
            if omega.may_contain(point, fixed) {
                exact_rec(
                    j + 1,
                    ctx.add(partial, term),
                    y1,
                    coeffs,
                    omega,
                    ctx,
                    a1_inv,
                    point,
                    fixed,
                    count,
                );
            }
            term = ctx.add(term, step);
        }
        fixed[2 * j] = false;
    }
    fixed[2 * j + 1] = false;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((unit_ball_volume(6) - PI.powi(3) / 6.0).abs() < 1e-12);
        let b = Ball::centered(6, 0.4).unwrap();
        assert!((b.measure() - PI.powi(3) * 0.4f64.powi(6) / 6.0).abs() < 1e-15);
        assert!((b.boundary_constant() - 2.714975867088811).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_counts() {
        let cube = BoxSet::unit(6);
        let shift = Shift::standard(6);
        for k in [2u32, 3, 4, 7, 8] {
            let fam = ShiftedCubeFamily::new(k, shift.clone()).unwrap();
            assert_eq!(
                count_cubes_inside(&cube, &fam).unwrap(),
                (k as u64 - 1).pow(6)
            );
        }
        let fam = ShiftedCubeFamily::new(4, shift).unwrap();
        assert_eq!(cubes_inside(&cube, &fam).unwrap().len(), 729);
    }

    #[test]
    fn small_ball_holds_no_half_cube() {
        let b = Ball::centered(6, 0.1).unwrap();
        let fam = ShiftedCubeFamily::new(2, Shift::standard(6)).unwrap();
        assert!(cubes_inside(&b, &fam).unwrap().is_empty());
    }

    #[test]
    fn unit_cube_layers() {
        let dec = dyadic_layers(&BoxSet::unit(6), 2, &Shift::standard(6)).unwrap();
        assert_eq!(dec.layers[0].len(), 1);
        assert_eq!(dec.layers[1].len(), 665);
        let one = dyadic_layers(&BoxSet::unit(6), 1, &Shift::standard(6)).unwrap();
        let fam = ShiftedCubeFamily::new(2, Shift::standard(6)).unwrap();
        assert_eq!(one.layers[0], cubes_inside(&BoxSet::unit(6), &fam).unwrap());
    }

    #[test]
    fn choose_depth() {
        assert_eq!(choose_M(127, 3), 3);
        assert_eq!(choose_M(2, 3), 0);
        assert_eq!(choose_M(1009, 4), 5);
        for p in [31u64, 61, 101, 1009, 65537] {
            for n in 3..6 {
                assert!(1u64 << choose_M(p, n) < p);
            }
        }
    }

    #[test]
    fn cap_volume_inclusion_exclusion() {
        let cap = HalfspaceCap::new(vec![1.0, 1.0], 1.0).unwrap();
        assert!((cap.measure() - 0.5).abs() < 1e-12);
        let cap = HalfspaceCap::new(vec![1.0, 1.0], 1.5).unwrap();
        assert!((cap.measure() - 0.875).abs() < 1e-12);
        let cap = HalfspaceCap::new(vec![1.0, 2.0, 3.0], 10.0).unwrap();
        assert!((cap.measure() - 1.0).abs() < 1e-12);
        let cap = HalfspaceCap::new(vec![1.0; 3], 1.0).unwrap();
        assert!((cap.measure() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn predicate_set_matches_builtin() {
        let ball = Ball::centered(3, 0.3).unwrap();
        let pred = PredicateSet::new(3, ball.boundary_constant(), "ball-pred", |x| {
            x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() <= 0.09
        });
        assert!((pred.measure() - ball.measure()).abs() < 5.0 * pred.measure_std_error());
        let fam = ShiftedCubeFamily::new(16, Shift::standard(3)).unwrap();
        assert_eq!(
            cubes_inside(&pred, &fam).unwrap(),
            cubes_inside(&ball, &fam).unwrap()
        );
    }

    #[test]
    fn parse_sets() {
        assert_eq!(parse_set("ball:0.4", 6).unwrap().describe(), "ball:0.4");
        assert_eq!(parse_set("cube", 4).unwrap().measure(), 1.0);
        assert!(parse_set("ellipsoid:0.1,0.2", 2).is_ok());
        assert!(parse_set("ellipsoid:0.1", 2).is_err());
        assert!(parse_set("halfspace-cap:1,1,1", 2).is_ok());
        assert!(parse_set("ball:0.7", 2).is_err());
        assert!(parse_set("torus", 2).is_err());
    }

    #[test]
    fn exact_blowup_unit_cube() {
        let ctx = PrimeContext::new(7).unwrap();
        let co = CoefficientVector::new(0, &[1, 1, 1], &ctx).unwrap();
        assert_eq!(
            exact_blowup_count(&co, &BoxSet::unit(6), &ctx).unwrap(),
            10584
        );
        let empty = BoxSet::new(vec![0.5; 6], vec![0.5 + 1e-3; 6]).unwrap();
        assert_eq!(exact_blowup_count(&co, &empty, &ctx).unwrap(), 0);
    }

    #[test]
    fn blowup_of_unit_cube_is_a_lower_bound() {
        let ctx = PrimeContext::new(31).unwrap();
        let co = CoefficientVector::new(0, &[1, 1, 1], &ctx).unwrap();
        let r = count_in_blowup(&co, &BoxSet::unit(6), &ctx).unwrap();
        let exact = 30u64.pow(3) * 31u64.pow(2);
        assert!(r.layer_sum <= exact);
        assert!((exact - r.layer_sum) as f64 <= r.uncovered_bound);
        let tiny = Ball::centered(6, 0.05).unwrap();
        assert_eq!(count_in_blowup(&co, &tiny, &ctx).unwrap().layer_sum, 0);
    }

    #[test]
    fn blowup_layers_match_direct_count() {
        let ctx = PrimeContext::new(13).unwrap();
        let co = CoefficientVector::new(2, &[1, 3], &ctx).unwrap();
        let ball = Ball::centered(4, 0.45).unwrap();
        let r = count_in_blowup(&co, &ball, &ctx).unwrap();
        // recount: solutions whose point lies in some layer cube
        let mut shift = Shift::standard(4);
        shift.make_generic(13, r.m, SHIFT_SEED);
        let dec = dyadic_layers(&ball, r.m, &shift).unwrap();
        let mut direct = 0u64;
        for x1 in 0..13u64 {
            for y1 in 1..13u64 {
                for x2 in 0..13u64 {
                    for y2 in 1..13u64 {
                        let s = ctx.add(
                            ctx.mul(x1, ctx.inv_reduced(y1)),
                            ctx.mul(3, ctx.mul(x2, ctx.inv_reduced(y2))),
                        );
                        if s != 2 {
                            continue;
                        }
                        let pt = [x1, y1, x2, y2].map(|v| v as f64 / 13.0);
                        let inside = dec.layers.iter().any(|layer| {
                            let fam = ShiftedCubeFamily::new(layer.k, shift.clone()).unwrap();
                            layer.iter().any(|u| {
                                (0..4).all(|i| {
                                    let lo = fam.corner(i, u[i] as i32);
                                    lo < pt[i] && pt[i] < lo + fam.side()
                                })
                            })
                        });
                        direct += inside as u64;
                    }
                }
            }
        }
        assert_eq!(r.layer_sum, direct);
        assert!(r.layer_sum <= exact_blowup_count(&co, &ball, &ctx).unwrap());
    }

    #[test]
    fn dump_format() {
        let dec = dyadic_layers(&BoxSet::unit(2), 2, &Shift::standard(2)).unwrap();
        let mut buf = Vec::new();
        dec.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + (9 - 4));
        assert!(lines.iter().all(|l| l.split(' ').count() == 3));
        assert!(lines[0].starts_with("1 "));
    }

    fn corners(lo: &[f64], side: f64) -> Vec<Vec<f64>> {
        (0..1usize << lo.len())
            .map(|mask| {
                lo.iter()
                    .enumerate()
                    .map(|(i, &l)| if mask >> i & 1 == 1 { l + side } else { l })
                    .collect()
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn inside_cubes_have_member_corners_and_centre(
            c in proptest::collection::vec(0.3f64..0.7, 3),
            radii in proptest::collection::vec(0.05f64..0.3, 3),
            lo in proptest::collection::vec(0.0f64..1.0, 3),
            side in 0.001f64..0.4,
        ) {
            let sets: Vec<Box<dyn WellShapedSet>> = vec![
                Box::new(Ellipsoid::new(c.clone(), radii.clone()).unwrap()),
                Box::new(Ball::new(c.clone(), radii[0]).unwrap()),
                Box::new(BoxSet::new(
                    c.iter().zip(&radii).map(|(a, r)| a - r).collect(),
                    c.iter().zip(&radii).map(|(a, r)| a + r).collect(),
                ).unwrap()),
            ];
            let centre: Vec<f64> = lo.iter().map(|l| l + side / 2.0).collect();
            for set in &sets {
                let all_corners = corners(&lo, side).iter().all(|q| set.member(q));
                // convex sets contain a cube exactly when they contain its corners
                proptest::prop_assert_eq!(set.cube_inside(&lo, side), all_corners);
                if set.cube_inside(&lo, side) {
                    proptest::prop_assert!(set.member(&centre));
                }
            }
        }

        #[test]
        fn layers_are_disjoint_nested_and_inside(
            r in 0.1f64..0.5,
            m in 1u32..5,
            seed in 0u64..1000,
        ) {
            let ball = Ball::centered(3, r).unwrap();
            let mut shift = Shift::standard(3);
            shift.make_generic(101, m, seed);
            let dec = dyadic_layers(&ball, m, &shift).unwrap();
            proptest::prop_assert!(crate::harness::checks::check_layers(&ball, &dec).is_ok());
            proptest::prop_assert!(dec.covered_measure <= ball.measure() + 1e-12);
            for (i, layer) in dec.layers.iter().enumerate() {
                let fam = ShiftedCubeFamily::new(layer.k, shift.clone()).unwrap();
                proptest::prop_assert_eq!(layer.k, 1u32 << (i + 1));
                for u in layer.iter() {
                    for (axis, &ui) in u.iter().enumerate() {
                        let expect = shift.alpha()[axis] + ui as f64 / layer.k as f64;
                        proptest::prop_assert!((fam.corner(axis, ui as i32) - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
