//! Exponential sums with ratios: `Σ_{(x,y) ∈ W} e_p(a·x/y)` over boxes,
//! convex regions and disks, short Kloosterman sums `Σ_{u ∈ J} e_p(λ/u)`,
//! the second moment over `a`, and the `ρ`-level sets used to bound the
//! double sums.
//!
//! Rows with `y ≡ 0 (mod p)` have no ratio and are skipped everywhere;
//! the number skipped is reported alongside each sum.

use num_complex::Complex64;

use crate::accum::{par_sum_real, ComplexAccumulator};
use crate::error::{Error, Result};
use crate::fpcore::PrimeContext;
use crate::geometry::{Interval, Region};

/// A complex sum together with its number of summands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumValue {
    pub value: Complex64,
    pub terms: u64,
    pub skipped_rows: u64,
}

/// A region flattened into `(y^{-1} mod p, x_lo, x_hi)` rows, dropping
/// empty rows and rows with `y ≡ 0`. Built once, evaluated for many
/// coefficients.
#[derive(Clone, Debug)]
pub struct PreparedRows {
    rows: Vec<(u64, i64, i64)>,
    terms: u64,
    skipped_rows: u64,
}

impl PreparedRows {
    pub fn new(region: &Region, ctx: &PrimeContext) -> Self {
        let mut rows = Vec::new();
        let mut terms = 0;
        let mut skipped_rows = 0;
        for (y, r) in region.rows() {
            if r.is_empty() {
                continue;
            }
            let yr = ctx.reduce(y);
            if yr == 0 {
                skipped_rows += 1;
                continue;
            }
            rows.push((ctx.inv_reduced(yr), r.lo(), r.hi()));
            terms += r.len();
        }
        Self {
            rows,
            terms,
            skipped_rows,
        }
    }

    pub fn from_box(x: Interval, y: Interval, ctx: &PrimeContext) -> Self {
        Self::new(&Region::boxed(x, y), ctx)
    }

    /// Number of lattice points with `y ≢ 0`.
    pub fn terms(&self) -> u64 {
        self.terms
    }

    pub fn skipped_rows(&self) -> u64 {
        self.skipped_rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// `Σ e_p(c·x/y)` for a reduced coefficient `c`; `c = 0` gives the
    /// number of terms.
    #[inline]
    pub fn sum(&self, c: u64, ctx: &PrimeContext) -> Complex64 {
        if c == 0 {
            return Complex64::new(self.terms as f64, 0.0);
        }
        let mut acc = ComplexAccumulator::new();
        for &(inv_y, lo, hi) in &self.rows {
            acc.add(ctx.geometric_reduced(ctx.mul(c, inv_y), lo, hi));
        }
        acc.total()
    }

    fn value(&self, c: u64, ctx: &PrimeContext) -> SumValue {
        SumValue {
            value: self.sum(c, ctx),
            terms: self.terms,
            skipped_rows: self.skipped_rows,
        }
    }
}

fn nonzero_coefficient(a: i64, ctx: &PrimeContext) -> Result<u64> {
    let c = ctx.reduce(a);
    if c == 0 {
        return Err(Error::domain(
            "coefficient must be nonzero mod p; the zero frequency is the main term",
        ));
    }
    Ok(c)
}

/// `Σ_{x ∈ I} Σ_{y ∈ J, y ≢ 0} e_p(a·x/y)`, one closed-form geometric sum
/// per row.
pub fn ratio_double_sum(a: i64, x: Interval, y: Interval, ctx: &PrimeContext) -> Result<SumValue> {
    let c = nonzero_coefficient(a, ctx)?;
    Ok(PreparedRows::from_box(x, y, ctx).value(c, ctx))
}

/// `Σ_{(x,y) ∈ W} e_p(a·x/y)` over the integer points of a region.
pub fn ratio_double_sum_region(a: i64, region: &Region, ctx: &PrimeContext) -> Result<SumValue> {
    let c = nonzero_coefficient(a, ctx)?;
    Ok(PreparedRows::new(region, ctx).value(c, ctx))
}

/// `K(λ; J) = Σ_{u ∈ J, u ≢ 0} e_p(λ/u)`.
pub fn kloosterman_interval(lam: i64, j: Interval, ctx: &PrimeContext) -> SumValue {
    let lam = ctx.reduce(lam);
    let mut acc = ComplexAccumulator::new();
    let mut terms = 0;
    let mut skipped_rows = 0;
    for u in j.iter() {
        let ur = ctx.reduce(u);
        if ur == 0 {
            skipped_rows += 1;
            continue;
        }
        terms += 1;
        acc.add(ctx.root(ctx.mul(lam, ctx.inv_reduced(ur))));
    }
    SumValue {
        value: acc.total(),
        terms,
        skipped_rows,
    }
}

/// `Σ_{a=1}^{p-1} |Σ_{x∈I} Σ_{y∈J} e_p(a·x/y)|²`.
pub fn second_moment_over_a(x: Interval, y: Interval, ctx: &PrimeContext) -> f64 {
    let rows = PreparedRows::from_box(x, y, ctx);
    if rows.terms() == 0 {
        return 0.0;
    }
    par_sum_real(1..ctx.p(), |a| rows.sum(a, ctx).norm_sqr())
}

/// The partition of the rows `y ∈ J` by the size of `|ρ(a/y)|`:
/// `R` counts `|ρ| < e^{I*}` and `T_j` counts `e^j <= |ρ| < e^{j+1}` for
/// `I* <= j <= J*`, where `I* = ⌊log(2p/K)⌋` and `J* = ⌊log 2p⌋`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSetCounts {
    pub i_star: i64,
    pub j_star: i64,
    pub r: u64,
    /// `t[k]` is `T_{i_star + k}`.
    pub t: Vec<u64>,
}

impl LevelSetCounts {
    pub fn t_j(&self, j: i64) -> u64 {
        if j < self.i_star || j > self.j_star {
            0
        } else {
            self.t[(j - self.i_star) as usize]
        }
    }

    /// `R + Σ_j T_j`.
    pub fn total(&self) -> u64 {
        self.r + self.t.iter().sum::<u64>()
    }
}

pub fn level_set_counts(a: i64, k: u64, j: Interval, ctx: &PrimeContext) -> Result<LevelSetCounts> {
    let c = nonzero_coefficient(a, ctx)?;
    let p = ctx.p();
    if k == 0 || k > p {
        return Err(Error::domain(format!(
            "K must satisfy 1 <= K <= p, got {k}"
        )));
    }
    let i_star = (2.0 * p as f64 / k as f64).ln().floor() as i64;
    let j_star = (2.0 * p as f64).ln().floor() as i64;
    // thresholds[k] = e^{i_star + k}, k = 0..=J*-I*+1
    let thresholds: Vec<f64> = (i_star..=j_star + 1).map(|e| (e as f64).exp()).collect();
    let mut r = 0;
    let mut t = vec![0u64; (j_star - i_star + 1) as usize];
    for y in j.iter() {
        let yr = ctx.reduce(y);
        if yr == 0 {
            continue;
        }
        let w = ctx.center(ctx.mul(c, ctx.inv_reduced(yr))).abs() as f64;
        if w < thresholds[0] {
            r += 1;
            continue;
        }
        // |ρ| < p/2 < e^{J*+1}, so the search always lands in range
        let idx = thresholds.partition_point(|&th| th <= w) - 1;
        t[idx] += 1;
    }
    Ok(LevelSetCounts {
        i_star,
        j_star,
        r,
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConvexRegion, DiskRegion};

    fn ctx(p: u64) -> PrimeContext {
        PrimeContext::new(p).unwrap()
    }

    fn direct(a: i64, region: &Region, c: &PrimeContext) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        let ext = region.y_extent();
        for y in ext.iter() {
            if c.reduce(y) == 0 {
                continue;
            }
            let yi = c.mod_inverse(y).unwrap();
            for x in -1..=c.p() as i64 + 1 {
                if region.brute_force_member(x, y) {
                    s += c.root(c.mul(c.mul(c.reduce(a), c.reduce(x)), yi));
                }
            }
        }
        s
    }

    #[test]
    fn full_period_rows_vanish() {
        let c = ctx(11);
        let s = ratio_double_sum(1, Interval::closed(0, 10), Interval::closed(1, 10), &c).unwrap();
        assert!(s.value.norm() < 1e-10);
        assert_eq!(s.terms, 110);
    }

    #[test]
    fn single_term() {
        let c = ctx(5);
        let s = ratio_double_sum(1, Interval::singleton(1), Interval::singleton(2), &c).unwrap();
        assert!((s.value - c.e_p(3)).norm() < 1e-12);
        assert_eq!(s.terms, 1);
    }

    #[test]
    fn box_sum_matches_double_loop() {
        let c = ctx(101);
        let b = Region::boxed(Interval::closed(1, 10), Interval::closed(1, 10));
        let s = ratio_double_sum(7, Interval::closed(1, 10), Interval::closed(1, 10), &c).unwrap();
        // frozen from the 100-term double loop
        assert!(
            (s.value - Complex64::new(1.983_570_227_343_458_6, 8.742_318_167_408_422)).norm()
                < 1e-9
        );
        assert!((s.value - direct(7, &b, &c)).norm() < 1e-9 * 100.0);
        let r = ratio_double_sum_region(7, &b, &c).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn region_sums() {
        let c = ctx(101);
        let pt = Region::Convex(ConvexRegion::point(17, 23));
        let s = ratio_double_sum_region(4, &pt, &c).unwrap();
        let w = c.mul(4 * 17, c.mod_inverse(23).unwrap());
        assert!((s.value - c.root(w)).norm() < 1e-12);

        let disk = Region::Disk(DiskRegion::new(20, 20, 5, 1).unwrap());
        let s = ratio_double_sum_region(3, &disk, &c).unwrap();
        assert_eq!(s.terms, 81);
        assert!(
            (s.value - Complex64::new(-1.190_030_237_813_729_5, -3.796_301_574_469_742)).norm()
                < 1e-9
        );
        assert!((s.value - direct(3, &disk, &c)).norm() < 1e-9 * 81.0);
        assert!(ratio_double_sum_region(0, &disk, &c).is_err());
    }

    #[test]
    fn kloosterman_examples() {
        let c13 = ctx(13);
        let k = kloosterman_interval(5, Interval::closed(1, 12), &c13);
        assert!((k.value - Complex64::new(-1.0, 0.0)).norm() < 1e-9 * 13.0);
        let c = ctx(101);
        assert_eq!(
            kloosterman_interval(0, Interval::closed(1, 20), &c).value,
            Complex64::new(20.0, 0.0)
        );
        let k = kloosterman_interval(3, Interval::closed(1, 20), &c);
        let direct: Complex64 = (1..=20)
            .map(|u| c.e_p(3 * c.mod_inverse(u).unwrap() as i64))
            .sum();
        assert!((k.value - direct).norm() < 1e-12);
        assert!(
            (k.value - Complex64::new(0.703_032_264_637_475_3, 1.119_023_942_743_518_7)).norm()
                < 1e-9
        );
        let z = kloosterman_interval(2, Interval::closed(0, 3), &c);
        assert_eq!((z.terms, z.skipped_rows), (3, 1));
    }

    #[test]
    fn second_moment_examples() {
        let c = ctx(31);
        let m = second_moment_over_a(Interval::singleton(4), Interval::singleton(9), &c);
        assert!((m - 30.0).abs() < 1e-9);
        let c7 = ctx(7);
        let m = second_moment_over_a(Interval::closed(0, 6), Interval::closed(1, 6), &c7);
        assert!(m.abs() < 1e-9);
        let m = second_moment_over_a(Interval::closed(1, 5), Interval::closed(1, 6), &c);
        let mut direct = 0.0;
        for a in 1..31 {
            let s =
                ratio_double_sum(a, Interval::closed(1, 5), Interval::closed(1, 6), &c).unwrap();
            direct += s.value.norm_sqr();
        }
        assert!((m - direct).abs() < 1e-9 * direct);
        // p·T − (KL)² with T = 62 from the quadruple loop
        assert!((m - (31.0 * 62.0 - 900.0)).abs() < 1e-8);
    }

    #[test]
    fn level_sets_partition_rows() {
        let c = ctx(101);
        let one = level_set_counts(5, 10, Interval::singleton(7), &c).unwrap();
        assert_eq!(one.total(), 1);
        assert_eq!(
            one.t.iter().filter(|&&t| t == 1).count() + one.r as usize,
            1
        );

        let full = level_set_counts(1, 10, Interval::closed(1, 100), &c).unwrap();
        assert_eq!(full.i_star, 3);
        assert_eq!(full.j_star, 5);
        assert_eq!(full.r, 2 * (3f64.exp().floor() as u64));
        assert_eq!(full.total(), 100);

        let l = level_set_counts(17, 10, Interval::closed(1, 50), &c).unwrap();
        assert_eq!((l.i_star, l.j_star, l.r), (3, 5, 20));
        assert_eq!(l.t, vec![30, 0, 0]);
        assert!(level_set_counts(17, 0, Interval::closed(1, 50), &c).is_err());
    }

    proptest::proptest! {
        #[test]
        fn box_sums_match_direct_and_respect_triangle(
            p in proptest::sample::select(vec![11u64, 13, 29, 53, 97]),
            a in 1i64..1000,
            x0 in 0i64..60,
            kx in 0i64..40,
            y0 in 0i64..60,
            ky in 0i64..40,
        ) {
            let c = ctx(p);
            proptest::prop_assume!(a % p as i64 != 0);
            let top = p as i64 - 1;
            let x = Interval::closed(x0.min(top), (x0 + kx - 1).min(top));
            let y = Interval::closed(y0.min(top), (y0 + ky - 1).min(top));
            let s = ratio_double_sum(a, x, y, &c).unwrap();
            let d = direct(a, &Region::boxed(x, y), &c);
            proptest::prop_assert!((s.value - d).norm() <= 1e-9 * (s.terms as f64).max(1.0));
            proptest::prop_assert!(s.value.norm() <= s.terms as f64 * (1.0 + 1e-9) + 1e-9);
            proptest::prop_assert_eq!(s.terms + s.skipped_rows * x.len(), x.len() * y.len());
        }

        #[test]
        fn level_sets_partition_nonzero_rows(
            a in 1i64..500,
            k in 1u64..100,
            y0 in 0i64..100,
            ly in 0i64..100,
        ) {
            let c = ctx(101);
            proptest::prop_assume!(a % 101 != 0);
            let y = Interval::closed(y0, (y0 + ly - 1).min(100));
            let l = level_set_counts(a, k, y, &c).unwrap();
            proptest::prop_assert_eq!(l.total(), y.count_nonzero_mod(101));
        }

        #[test]
        fn kloosterman_is_bounded_by_its_terms(lam in -300i64..300, lo in 0i64..97, len in 0i64..97) {
            let c = ctx(97);
            let j = Interval::closed(lo, (lo + len - 1).min(96));
            let k = kloosterman_interval(lam, j, &c);
            proptest::prop_assert!(k.value.norm() <= k.terms as f64 * (1.0 + 1e-9) + 1e-9);
            proptest::prop_assert_eq!(k.terms, j.count_nonzero_mod(97));
        }
    }
}
