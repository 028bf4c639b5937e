//! Solution counters for `Σ_j a_j x_j / y_j ≡ a_0 (mod p)`.
//!
//! Two independent routes compute `N(a; S)`:
//!
//! - [`count_bruteforce`] enumerates integer points and solves for `x_1`;
//! - [`count_fast`] evaluates the orthogonality relation
//!   `N = p^{-1} Σ_λ e_p(-λ a_0) Π_j S_j(λ a_j)` with the row-wise double
//!   sums of [`crate::expsums`].
//!
//! Alongside them live the ratio-class tables, the cross-ratio count
//! `x_1 y_2 ≡ x_2 y_1`, the inverse concentration count
//! `(B + y) z ≡ 1`, and the coprime (Farey) variant.

use num_complex::Complex64;

use crate::accum::{par_map, par_sum_complex};
use crate::error::{Error, Result};
use crate::expsums::PreparedRows;
use crate::fpcore::{divisors, find_small_uv, gcd, mobius_table, PrimeContext};
use crate::geometry::{BoxRegion, Interval, ProductRegion, Region};

/// Largest `Π_j #W_j` accepted by [`count_bruteforce`].
pub const BRUTEFORCE_BUDGET: f64 = 1e9;
/// Largest `Π_j #W_j` accepted by the full enumeration oracles.
pub const FULL_ENUMERATION_BUDGET: f64 = 1e8;
/// Largest `p · Σ_j rows_j` accepted by the character-sum counter.
pub const FAST_BUDGET: f64 = 2e10;
/// Distance from an integer above which the fast counter gives up.
pub const RESIDUAL_LIMIT: f64 = 0.4;

/// `(a_0; a_1, ..., a_n)` reduced mod `p`, with every `a_j ≢ 0` for `j >= 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoefficientVector {
    a0: u64,
    a: Vec<u64>,
}

impl CoefficientVector {
    pub fn new(a0: i64, a: &[i64], ctx: &PrimeContext) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::domain("at least one coefficient a_1 is required"));
        }
        let a: Vec<u64> = a.iter().map(|&x| ctx.reduce(x)).collect();
        if let Some(j) = a.iter().position(|&x| x == 0) {
            return Err(Error::domain(format!("a_{} is divisible by p", j + 1)));
        }
        Ok(Self {
            a0: ctx.reduce(a0),
            a,
        })
    }

    /// Parses `a0,a1,...,an`.
    pub fn parse(s: &str, ctx: &PrimeContext) -> Result<Self> {
        let v: Vec<i64> = s
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(format!("bad coefficient list `{s}`")))?;
        if v.len() < 2 {
            return Err(Error::parse("expected a0,a1[,a2,...]"));
        }
        Self::new(v[0], &v[1..], ctx)
    }

    pub fn a0(&self) -> u64 {
        self.a0
    }

    pub fn a(&self) -> &[u64] {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn with_a0(&self, a0: u64) -> Self {
        Self {
            a0,
            a: self.a.clone(),
        }
    }
}

/// An exact count from the character-sum route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountResult {
    pub count: u64,
    /// `N(S)/p` with `N(S)` the number of points having every `y_j ≢ 0`.
    pub main_term: f64,
    /// Distance of the λ-average from `count`.
    pub residual: f64,
    pub skipped_rows: u64,
}

fn check_shape(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<()> {
    regions.ensure_modulus(ctx)?;
    if coeffs.n() != regions.n() {
        return Err(Error::domain(format!(
            "{} coefficients for {} region factors",
            coeffs.n(),
            regions.n()
        )));
    }
    Ok(())
}

/// Points of a region with `y ≢ 0`, as `(x mod p, y^{-1} mod p)`.
fn residue_points(region: &Region, ctx: &PrimeContext) -> Vec<(u64, u64)> {
    let mut pts = Vec::new();
    for (y, row) in region.rows() {
        let yr = ctx.reduce(y);
        if yr == 0 {
            continue;
        }
        let yi = ctx.inv_reduced(yr);
        for x in row.iter() {
            pts.push((ctx.reduce(x), yi));
        }
    }
    pts
}

fn guard(what: &'static str, needed: f64, budget: f64) -> Result<()> {
    if needed > budget {
        return Err(Error::Size {
            what,
            needed,
            budget,
        });
    }
    Ok(())
}

/// Exact `N(a; S)` by enumeration.
///
/// Tuples of factors `2..n` are enumerated and tallied by their partial sum
/// `s = Σ_{j>=2} a_j x_j/y_j`; then for every row `y_1` of the first factor
/// the forced residue `x_1 ≡ (a_0 - s) y_1 / a_1` is counted inside the row.
pub fn count_bruteforce(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<u64> {
    check_shape(coeffs, regions, ctx)?;
    guard(
        "brute-force count",
        regions.lattice_count() as f64,
        BRUTEFORCE_BUDGET,
    )?;
    let p = ctx.p();
    let mut hist = vec![0u64; p as usize];
    hist[0] = 1;
    let classes: Vec<Vec<u64>> = regions.factors()[1..]
        .iter()
        .zip(&coeffs.a()[1..])
        .map(|(f, &aj)| {
            residue_points(f, ctx)
                .into_iter()
                .map(|(x, yi)| ctx.mul(aj, ctx.mul(x, yi)))
                .collect()
        })
        .collect();
    if !classes.is_empty() {
        hist[0] = 0;
        enumerate_partial_sums(&classes, 0, 0, ctx, &mut hist);
    }

    let first = &regions.factors()[0];
    let a1_inv = ctx.inv_reduced(coeffs.a()[0]);
    let mut total = 0u64;
    for (s, &mult) in hist.iter().enumerate() {
        if mult == 0 {
            continue;
        }
        let rhs = ctx.mul(ctx.add(coeffs.a0(), ctx.neg(s as u64)), a1_inv);
        for (y, row) in first.rows() {
            let yr = ctx.reduce(y);
            if yr == 0 || row.is_empty() {
                continue;
            }
            total += mult * row.count_congruent(ctx.mul(rhs, yr), p);
        }
    }
    Ok(total)
}

fn enumerate_partial_sums(
    classes: &[Vec<u64>],
    depth: usize,
    partial: u64,
    ctx: &PrimeContext,
    hist: &mut [u64],
) {
    if depth == classes.len() {
        hist[partial as usize] += 1;
        return;
    }
    for &t in &classes[depth] {
        enumerate_partial_sums(classes, depth + 1, ctx.add(partial, t), ctx, hist);
    }
}

/// Exact `N(a; S)` by testing every `2n`-tuple; slowest route, for
/// cross-validation only.
pub fn count_full_enumeration(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<u64> {
    full_enumeration(coeffs, regions, ctx, |_| true)
}

/// `N(a; S)` restricted to `gcd(x_j, y_j) = 1`, by full enumeration.
pub fn coprime_count_bruteforce(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<u64> {
    full_enumeration(coeffs, regions, ctx, |(x, y)| {
        gcd(x.unsigned_abs(), y.unsigned_abs()) == 1
    })
}

fn full_enumeration(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
    keep: impl Fn((i64, i64)) -> bool,
) -> Result<u64> {
    check_shape(coeffs, regions, ctx)?;
    guard(
        "full enumeration",
        regions.lattice_count() as f64,
        FULL_ENUMERATION_BUDGET,
    )?;
    let points: Vec<Vec<(i64, i64)>> = regions
        .factors()
        .iter()
        .map(|f| {
            f.rows()
                .filter(|(y, _)| ctx.reduce(*y) != 0)
                .flat_map(|(y, row)| row.iter().map(move |x| (x, y)))
                .filter(|&pt| keep(pt))
                .collect()
        })
        .collect();
    let mut count = 0u64;
    let mut idx = vec![0usize; points.len()];
    if points.iter().any(|v| v.is_empty()) {
        return Ok(0);
    }
    loop {
        let mut s = 0u64;
        for (j, &i) in idx.iter().enumerate() {
            let (x, y) = points[j][i];
            let q = ctx.mul(ctx.reduce(x), ctx.mod_inverse(y)?);
            s = ctx.add(s, ctx.mul(coeffs.a()[j], q));
        }
        count += (s == coeffs.a0()) as u64;
        // odometer
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < points[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == idx.len() {
                return Ok(count);
            }
        }
    }
}

/// One factor of the λ-product: either a plain region sum or the Möbius
/// combination `Σ_d μ(d) S_d` used for coprime pairs.
#[derive(Clone, Debug)]
enum FactorSum {
    Plain(PreparedRows),
    Mobius(Vec<(i8, PreparedRows)>),
}

impl FactorSum {
    fn sum(&self, c: u64, ctx: &PrimeContext) -> Complex64 {
        match self {
            FactorSum::Plain(rows) => rows.sum(c, ctx),
            FactorSum::Mobius(parts) => parts
                .iter()
                .map(|(mu, rows)| rows.sum(c, ctx) * *mu as f64)
                .sum(),
        }
    }

    fn terms(&self) -> i128 {
        match self {
            FactorSum::Plain(rows) => rows.terms() as i128,
            FactorSum::Mobius(parts) => parts
                .iter()
                .map(|(mu, rows)| *mu as i128 * rows.terms() as i128)
                .sum(),
        }
    }

    fn row_work(&self) -> usize {
        match self {
            FactorSum::Plain(rows) => rows.row_count(),
            FactorSum::Mobius(parts) => parts.iter().map(|(_, r)| r.row_count()).sum(),
        }
    }

    fn skipped_rows(&self) -> u64 {
        match self {
            FactorSum::Plain(rows) => rows.skipped_rows(),
            FactorSum::Mobius(parts) => parts.first().map_or(0, |(_, r)| r.skipped_rows()),
        }
    }
}

/// Character-sum counter with the factor products `Π_j S_j(λ a_j)` cached
/// for every `λ`, so counts for many `a_0` cost `O(p)` each.
#[derive(Clone, Debug)]
pub struct FastCounter<'a> {
    ctx: &'a PrimeContext,
    main: i128,
    /// `products[λ - 1] = Π_j S_j(λ a_j)`.
    products: Vec<Complex64>,
    skipped_rows: u64,
}

impl<'a> FastCounter<'a> {
    /// Prepares the counter for `coeffs.a()`; `coeffs.a0()` is ignored.
    pub fn new(
        coeffs: &CoefficientVector,
        regions: &ProductRegion,
        ctx: &'a PrimeContext,
    ) -> Result<Self> {
        check_shape(coeffs, regions, ctx)?;
        let factors = regions
            .factors()
            .iter()
            .map(|f| FactorSum::Plain(PreparedRows::new(f, ctx)))
            .collect();
        Self::from_factors(coeffs, factors, ctx)
    }

    /// Like [`FastCounter::new`], restricted to pairs with
    /// `gcd(x_j, y_j) = 1`. Box factors only.
    pub fn coprime(
        coeffs: &CoefficientVector,
        regions: &ProductRegion,
        ctx: &'a PrimeContext,
    ) -> Result<Self> {
        check_shape(coeffs, regions, ctx)?;
        let factors = regions
            .factors()
            .iter()
            .map(|f| match f {
                Region::Box(b) => Ok(FactorSum::Mobius(mobius_parts(b, ctx))),
                _ => Err(Error::domain(
                    "the coprime counter accepts box factors only",
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_factors(coeffs, factors, ctx)
    }

    fn from_factors(
        coeffs: &CoefficientVector,
        factors: Vec<FactorSum>,
        ctx: &'a PrimeContext,
    ) -> Result<Self> {
        let p = ctx.p();
        let work: usize = factors.iter().map(FactorSum::row_work).sum();
        guard("character-sum count", p as f64 * work as f64, FAST_BUDGET)?;
        let main: i128 = factors.iter().map(FactorSum::terms).product();
        let skipped_rows = factors.iter().map(FactorSum::skipped_rows).sum();
        let products = if main == 0 && factors.iter().any(|f| f.terms() == 0) {
            vec![Complex64::new(0.0, 0.0); p as usize - 1]
        } else {
            par_map(1..p, |lam| {
                let mut prod = Complex64::new(1.0, 0.0);
                for (f, &aj) in factors.iter().zip(coeffs.a()) {
                    prod *= f.sum(ctx.mul(lam, aj), ctx);
                }
                prod
            })
        };
        Ok(Self {
            ctx,
            main,
            products,
            skipped_rows,
        })
    }

    /// `Π_j #{(x_j, y_j) ∈ W_j : y_j ≢ 0}`.
    pub fn main_count(&self) -> i128 {
        self.main
    }

    pub fn count(&self, a0: i64) -> Result<CountResult> {
        let ctx = self.ctx;
        let p = ctx.p();
        let a0 = ctx.reduce(a0);
        let minus_a0 = ctx.neg(a0);
        let tail = par_sum_complex(1..p, |lam| {
            ctx.root(ctx.mul(lam, minus_a0)) * self.products[lam as usize - 1]
        });
        // N = (main + tail) / p, with the integer part of main/p kept exact
        let q = self.main.div_euclid(p as i128);
        let r = self.main.rem_euclid(p as i128);
        let frac = (Complex64::new(r as f64, 0.0) + tail) / p as f64;
        let rounded = frac.re.round();
        let residual = (frac - Complex64::new(rounded, 0.0)).norm();
        let nearest = q + rounded as i128;
        if residual >= RESIDUAL_LIMIT || nearest < 0 {
            return Err(Error::Precision {
                residual,
                nearest: nearest as f64,
            });
        }
        Ok(CountResult {
            count: nearest as u64,
            main_term: self.main as f64 / p as f64,
            residual,
            skipped_rows: self.skipped_rows,
        })
    }
}

/// Exact `N(a; S)` from the orthogonality relation over `λ ∈ F_p`.
pub fn count_fast(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<CountResult> {
    FastCounter::new(coeffs, regions, ctx)?.count(coeffs.a0() as i64)
}

/// `N(a; S)` with the extra conditions `gcd(x_j, y_j) = 1`, via Möbius
/// inversion in each factor. `gcd(0, y) = y`, so `(0, y)` is coprime only
/// for `y = 1`.
pub fn coprime_count(
    coeffs: &CoefficientVector,
    regions: &ProductRegion,
    ctx: &PrimeContext,
) -> Result<CountResult> {
    FastCounter::coprime(coeffs, regions, ctx)?.count(coeffs.a0() as i64)
}

// Σ_{d} μ(d) [d | x][d | y] = [gcd(x, y) = 1]; the ratio x/y is unchanged
// by removing d when p ∤ d, and every y in a d-multiple row is ≡ 0 when p | d.
fn mobius_parts(b: &BoxRegion, ctx: &PrimeContext) -> Vec<(i8, PreparedRows)> {
    if b.x.is_empty() || b.y.is_empty() {
        return Vec::new();
    }
    let dmax = b.x.hi().max(b.y.hi()).max(1) as usize;
    let mu = mobius_table(dmax);
    (1..=dmax)
        .filter(|&d| mu[d] != 0 && !(d as u64).is_multiple_of(ctx.p()))
        .filter_map(|d| {
            let xs = b.x.scaled_down(d as u64);
            let ys = b.y.scaled_down(d as u64);
            if xs.is_empty() || ys.is_empty() {
                return None;
            }
            let rows = PreparedRows::from_box(xs, ys, ctx);
            (rows.terms() > 0).then_some((mu[d], rows))
        })
        .collect()
}

/// `d[t] = #{(x, y) ∈ I × J : y ≢ 0, x ≡ t·y (mod p)}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatioDistribution {
    pub d: Vec<u64>,
    pub region: BoxRegion,
}

impl RatioDistribution {
    pub fn total(&self) -> u64 {
        self.d.iter().sum()
    }
}

pub fn ratio_distribution(x: Interval, y: Interval, ctx: &PrimeContext) -> RatioDistribution {
    let mut d = vec![0u64; ctx.p() as usize];
    if !x.is_empty() {
        let x0 = ctx.reduce(x.lo());
        for yv in y.iter() {
            let yr = ctx.reduce(yv);
            if yr == 0 {
                continue;
            }
            let step = ctx.inv_reduced(yr);
            let mut t = ctx.mul(x0, step);
            for _ in 0..x.len() {
                d[t as usize] += 1;
                t = ctx.add(t, step);
            }
        }
    }
    RatioDistribution {
        d,
        region: BoxRegion::new(x, y),
    }
}

/// `#{x_1 y_2 ≡ x_2 y_1 : x_i ∈ I_i, y_i ∈ J_i, y_i ≢ 0}` as `Σ_t d_1[t] d_2[t]`.
pub fn cross_ratio_count(
    i1: Interval,
    j1: Interval,
    i2: Interval,
    j2: Interval,
    ctx: &PrimeContext,
) -> u64 {
    let d1 = ratio_distribution(i1, j1, ctx);
    if (i1, j1) == (i2, j2) {
        return d1.d.iter().map(|&v| v * v).sum();
    }
    let d2 = ratio_distribution(i2, j2, ctx);
    d1.d.iter().zip(&d2.d).map(|(a, b)| a * b).sum()
}

/// The expected value `K_1 K_2 L_1' L_2' / p` of [`cross_ratio_count`].
pub fn cross_ratio_main_term(
    i1: Interval,
    j1: Interval,
    i2: Interval,
    j2: Interval,
    ctx: &PrimeContext,
) -> f64 {
    let p = ctx.p();
    (i1.len() as f64)
        * (i2.len() as f64)
        * (j1.count_nonzero_mod(p) as f64)
        * (j2.count_nonzero_mod(p) as f64)
        / p as f64
}

fn check_concentration_args(b: i64, l: u64, m: u64, ctx: &PrimeContext) -> Result<()> {
    let p = ctx.p() as i64;
    if b < 0 || l == 0 || b + l as i64 >= p || m >= p as u64 {
        return Err(Error::domain(format!(
            "need 0 <= B < B+L < p and 0 <= M < p, got B={b}, L={l}, M={m}, p={p}"
        )));
    }
    Ok(())
}

/// `#{(w, z) : B+1 <= w <= B+L, 1 <= z <= M, w·z ≡ 1 (mod p)}`.
pub fn inverse_concentration_count(b: i64, l: u64, m: u64, ctx: &PrimeContext) -> Result<u64> {
    check_concentration_args(b, l, m, ctx)?;
    Ok((b + 1..=b + l as i64)
        .filter(|&w| {
            let z = ctx.inv_reduced(w as u64);
            z >= 1 && z <= m
        })
        .count() as u64)
}

/// [`inverse_concentration_count`] recomputed through the integer identity
/// `v z + u y z = u + k p`, where `u B ≡ v` is a Dirichlet small pair with
/// `U = ⌈(p/L)^{1/2}⌉`: every solution fixes `k`, and `z` must divide
/// `u + k p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DivisorRouteCount {
    pub count: u64,
    pub u: u64,
    pub v: i64,
    /// Number of `k` values scanned.
    pub k_values: u64,
}

pub fn inverse_concentration_by_divisors(
    b: i64,
    l: u64,
    m: u64,
    ctx: &PrimeContext,
) -> Result<DivisorRouteCount> {
    check_concentration_args(b, l, m, ctx)?;
    let p = ctx.p() as i128;
    let u_max = ((p as f64 / l as f64).sqrt().ceil() as u64).clamp(1, ctx.p() - 1);
    let (u, v) = find_small_uv(b, u_max, ctx)?;
    if m == 0 {
        return Ok(DivisorRouteCount {
            count: 0,
            u,
            v,
            k_values: 0,
        });
    }
    let (ui, vi) = (u as i128, v as i128);
    // z(v + u y) over y ∈ [1, L], z ∈ [1, M]
    let lin_lo = vi + ui;
    let lin_hi = vi + ui * l as i128;
    let corners = [lin_lo, lin_hi, lin_lo * m as i128, lin_hi * m as i128];
    let lhs_min = *corners.iter().min().unwrap();
    let lhs_max = *corners.iter().max().unwrap();
    let k_lo = div_ceil_i128(lhs_min - ui, p);
    let k_hi = (lhs_max - ui).div_euclid(p);
    let mut count = 0;
    for k in k_lo..=k_hi {
        let target = ui + k * p;
        if target == 0 {
            continue;
        }
        for z in divisors(target as i64)? {
            if z > m {
                break;
            }
            let rest = target / z as i128 - vi;
            if rest % ui == 0 {
                let y = rest / ui;
                if y >= 1 && y <= l as i128 {
                    count += 1;
                }
            }
        }
    }
    Ok(DivisorRouteCount {
        count,
        u,
        v,
        k_values: (k_hi - k_lo + 1).max(0) as u64,
    })
}

fn div_ceil_i128(a: i128, d: i128) -> i128 {
    -((-a).div_euclid(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(p: u64) -> PrimeContext {
        PrimeContext::new(p).unwrap()
    }

    fn boxes(c: &PrimeContext, ivs: &[(i64, i64, i64, i64)]) -> ProductRegion {
        let f = ivs
            .iter()
            .map(|&(a, b, cc, d)| Region::boxed(Interval::closed(a, b), Interval::closed(cc, d)))
            .collect();
        ProductRegion::bind(f, c).unwrap()
    }

    #[test]
    fn single_variable_examples() {
        let c7 = ctx(7);
        let co = CoefficientVector::new(0, &[1], &c7).unwrap();
        let r = boxes(&c7, &[(0, 6, 1, 6)]);
        assert_eq!(count_bruteforce(&co, &r, &c7).unwrap(), 6);
        assert_eq!(count_full_enumeration(&co, &r, &c7).unwrap(), 6);
        assert_eq!(count_fast(&co, &r, &c7).unwrap().count, 6);

        let c11 = ctx(11);
        let co = CoefficientVector::new(3, &[1], &c11).unwrap();
        let r = boxes(&c11, &[(0, 10, 1, 10)]);
        assert_eq!(count_bruteforce(&co, &r, &c11).unwrap(), 10);
        assert_eq!(count_fast(&co, &r, &c11).unwrap().count, 10);
    }

    #[test]
    fn three_variable_example() {
        let c = ctx(13);
        let co = CoefficientVector::new(1, &[1, 1, 1], &c).unwrap();
        let r = boxes(&c, &[(1, 5, 1, 5); 3]);
        let full = count_full_enumeration(&co, &r, &c).unwrap();
        assert_eq!(full, 1184);
        assert_eq!(count_bruteforce(&co, &r, &c).unwrap(), full);
        let fast = count_fast(&co, &r, &c).unwrap();
        assert_eq!(fast.count, full);
        assert!(fast.residual < 1e-6);
        assert!((fast.main_term - 15625.0 / 13.0).abs() < 1e-9);
    }

    #[test]
    fn empty_interval_gives_zero() {
        let c = ctx(31);
        let co = CoefficientVector::new(4, &[1, 2, 3], &c).unwrap();
        let r = boxes(&c, &[(1, 5, 1, 5), (3, 2, 1, 5), (1, 5, 1, 5)]);
        assert_eq!(count_fast(&co, &r, &c).unwrap().count, 0);
        assert_eq!(count_bruteforce(&co, &r, &c).unwrap(), 0);
    }

    #[test]
    fn cached_products_serve_every_a0() {
        let c = ctx(23);
        let co = CoefficientVector::new(0, &[3, 5], &c).unwrap();
        let r = boxes(&c, &[(0, 9, 2, 11), (4, 17, 1, 6)]);
        let fc = FastCounter::new(&co, &r, &c).unwrap();
        let mut sum = 0;
        for a0 in 0..23 {
            let n = fc.count(a0).unwrap().count;
            assert_eq!(n, count_bruteforce(&co.with_a0(a0 as u64), &r, &c).unwrap());
            sum += n;
        }
        // every tuple solves exactly one a0
        assert_eq!(sum as u128, r.lattice_count_nonzero_y().0);
    }

    #[test]
    fn rejects_bad_coefficients_and_shapes() {
        let c = ctx(7);
        assert!(CoefficientVector::new(1, &[1, 7], &c).is_err());
        assert!(CoefficientVector::new(1, &[], &c).is_err());
        let co = CoefficientVector::new(1, &[1, 2], &c).unwrap();
        let r = boxes(&c, &[(0, 3, 1, 3)]);
        assert!(count_fast(&co, &r, &c).is_err());
        assert_eq!(CoefficientVector::parse("3,1,-1", &c).unwrap().a(), &[1, 6]);
        assert!(CoefficientVector::parse("3", &c).is_err());
    }

    #[test]
    fn bruteforce_guard() {
        let c = ctx(97);
        let co = CoefficientVector::new(1, &[1, 1, 1], &c).unwrap();
        let r = boxes(&c, &[(0, 96, 1, 96); 3]);
        assert!(matches!(
            count_bruteforce(&co, &r, &c),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn disk_and_convex_factors() {
        let c = ctx(41);
        let co = CoefficientVector::new(5, &[1, 3], &c).unwrap();
        let tri = crate::geometry::ConvexRegion::from_fn(Interval::closed(2, 12), |y| {
            Interval::closed(1, y)
        });
        let r = ProductRegion::bind(
            vec![
                Region::Disk(crate::geometry::DiskRegion::new(20, 20, 7, 2).unwrap()),
                Region::Convex(tri),
            ],
            &c,
        )
        .unwrap();
        let brute = count_full_enumeration(&co, &r, &c).unwrap();
        assert_eq!(count_bruteforce(&co, &r, &c).unwrap(), brute);
        assert_eq!(count_fast(&co, &r, &c).unwrap().count, brute);
    }

    #[test]
    fn ratio_distribution_examples() {
        let c7 = ctx(7);
        let full = ratio_distribution(Interval::closed(0, 6), Interval::closed(1, 6), &c7);
        assert!(full.d.iter().all(|&v| v == 6));
        let small = ratio_distribution(Interval::closed(1, 3), Interval::closed(1, 2), &c7);
        assert_eq!(small.d, vec![0, 2, 1, 1, 1, 1, 0]);
        assert_eq!(small.total(), 6);
        let empty = ratio_distribution(Interval::empty(), Interval::closed(1, 2), &c7);
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn cross_ratio_examples() {
        let c7 = ctx(7);
        let (x, y) = (Interval::closed(0, 6), Interval::closed(1, 6));
        assert_eq!(cross_ratio_count(x, y, x, y, &c7), 252);

        let c23 = ctx(23);
        let (i, j) = (Interval::closed(1, 8), Interval::closed(1, 9));
        let d = ratio_distribution(i, j, &c23);
        let t = c23.mul(5, c23.mod_inverse(7).unwrap());
        assert_eq!(
            cross_ratio_count(i, j, Interval::singleton(5), Interval::singleton(7), &c23),
            d.d[t as usize]
        );
        let mut quad = 0;
        for x1 in 1..=8i64 {
            for x2 in 1..=8 {
                for y1 in 1..=9 {
                    for y2 in 1..=9 {
                        quad += ((x1 * y2 - x2 * y1) % 23 == 0) as u64;
                    }
                }
            }
        }
        assert_eq!(quad, 282);
        assert_eq!(cross_ratio_count(i, j, i, j, &c23), quad);
    }

    #[test]
    fn inverse_concentration_examples() {
        let c = ctx(101);
        assert_eq!(inverse_concentration_count(0, 100, 100, &c).unwrap(), 100);
        assert_eq!(inverse_concentration_count(0, 100, 1, &c).unwrap(), 1);
        assert!(inverse_concentration_count(50, 60, 3, &c).is_err());
        let c = ctx(1009);
        let n = inverse_concentration_count(50, 100, 30, &c).unwrap();
        assert_eq!(n, 1);
        let env = (100f64.sqrt() * 30.0 / 1009f64.sqrt() + 1.0) * 1009f64.powf(0.2);
        assert!((n as f64) <= env);
    }

    #[test]
    fn divisor_route_agrees() {
        for &(p, b, l, m) in &[
            (101u64, 0i64, 100u64, 100u64),
            (101, 0, 100, 1),
            (1009, 50, 100, 30),
            (1009, 500, 400, 800),
            (7919, 1234, 50, 7000),
            (7919, 0, 7000, 60),
        ] {
            let c = ctx(p);
            let direct = inverse_concentration_count(b, l, m, &c).unwrap();
            let route = inverse_concentration_by_divisors(b, l, m, &c).unwrap();
            assert_eq!(route.count, direct, "p={p} B={b} L={l} M={m}");
        }
    }

    #[test]
    fn coprime_examples() {
        let c7 = ctx(7);
        let co = CoefficientVector::new(0, &[1], &c7).unwrap();
        let r = boxes(&c7, &[(0, 6, 1, 6)]);
        assert_eq!(coprime_count(&co, &r, &c7).unwrap().count, 1);
        assert_eq!(coprime_count_bruteforce(&co, &r, &c7).unwrap(), 1);

        let c11 = ctx(11);
        let co = CoefficientVector::new(3, &[1], &c11).unwrap();
        let r = boxes(&c11, &[(0, 10, 1, 10)]);
        let direct = (1..=10u64).filter(|&y| gcd(3 * y % 11, y) == 1).count() as u64;
        assert_eq!(direct, 6);
        assert_eq!(coprime_count(&co, &r, &c11).unwrap().count, direct);

        let c13 = ctx(13);
        let co = CoefficientVector::new(1, &[1, 1, 1], &c13).unwrap();
        let r = boxes(&c13, &[(1, 5, 1, 5); 3]);
        let brute = coprime_count_bruteforce(&co, &r, &c13).unwrap();
        assert_eq!(brute, 506);
        assert_eq!(coprime_count(&co, &r, &c13).unwrap().count, brute);
    }

    #[test]
    fn coprime_rejects_non_boxes() {
        let c = ctx(41);
        let co = CoefficientVector::new(0, &[1], &c).unwrap();
        let r = ProductRegion::bind(
            vec![Region::Disk(
                crate::geometry::DiskRegion::new(20, 20, 3, 1).unwrap(),
            )],
            &c,
        )
        .unwrap();
        assert!(coprime_count(&co, &r, &c).is_err());
    }

    fn instance() -> impl Strategy<Value = (u64, Vec<i64>, Vec<(i64, i64, i64, i64)>)> {
        (
            prop::sample::select(vec![11u64, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]),
            1usize..=3,
        )
            .prop_flat_map(|(p, n)| {
                let p_i = p as i64;
                let iv =
                    (0..p_i, 0..p_i).prop_map(move |(a, b)| (a.min(b), a.max(b).min(a.min(b) + 7)));
                (
                    Just(p),
                    proptest::collection::vec(0..p_i, n + 1),
                    proptest::collection::vec((iv.clone(), iv), n),
                )
            })
            .prop_map(|(p, mut a, ivs)| {
                for c in a.iter_mut().skip(1) {
                    if *c == 0 {
                        *c = 1;
                    }
                }
                let boxes = ivs
                    .into_iter()
                    .map(|((x0, x1), (y0, y1))| (x0, x1, y0, y1))
                    .collect();
                (p, a, boxes)
            })
    }

    proptest! {
        #[test]
        fn fast_matches_bruteforce((p, a, b) in instance()) {
            let c = ctx(p);
            let co = CoefficientVector::new(a[0], &a[1..], &c).unwrap();
            let r = boxes(&c, &b);
            let fast = count_fast(&co, &r, &c).unwrap();
            prop_assert!(fast.residual < RESIDUAL_LIMIT);
            prop_assert_eq!(fast.count, count_bruteforce(&co, &r, &c).unwrap());
        }

        #[test]
        fn coprime_matches_filtered_enumeration((p, a, b) in instance()) {
            let c = ctx(p);
            let co = CoefficientVector::new(a[0], &a[1..], &c).unwrap();
            let r = boxes(&c, &b);
            prop_assert_eq!(
                coprime_count(&co, &r, &c).unwrap().count,
                coprime_count_bruteforce(&co, &r, &c).unwrap()
            );
        }

        #[test]
        fn parseval_bridge(
            p in prop::sample::select(vec![11u64, 31, 53, 97, 211]),
            a in 0i64..200, k in 1u64..40, b in 0i64..200, l in 1u64..40,
        ) {
            let c = ctx(p);
            let pi = p as i64;
            let i = Interval::new(a % pi, k.min(p - 1 - (a % pi) as u64).max(1));
            let j = Interval::new(b % pi, l.min(p - 1 - (b % pi) as u64).max(1));
            let count = cross_ratio_count(i, j, i, j, &c) as f64;
            let kl = (i.len() * j.count_nonzero_mod(p)) as f64;
            let moment = crate::expsums::second_moment_over_a(i, j, &c);
            let lhs = p as f64 * count - kl * kl;
            prop_assert!((lhs - moment).abs() <= 1e-8 * moment.abs().max(1.0));
        }

        #[test]
        fn distribution_total_is_nonzero_row_count(
            a in 0i64..40, k in 0u64..30, b in 0i64..40, l in 0u64..30,
        ) {
            let c = ctx(41);
            let (i, j) = (Interval::new(a, k), Interval::new(b, l));
            let d = ratio_distribution(i, j, &c);
            prop_assert_eq!(d.total(), k * j.count_nonzero_mod(41));
        }
    }
}
