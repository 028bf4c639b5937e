//! Integer regions in the `(x, y)` plane: interval pairs, convex regions
//! given row by row, and disks. Every region is described by its y-extent
//! and the contiguous x-range of each row, which is all the counters and
//! row-wise exponential sums need.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fpcore::PrimeContext;

/// The integer interval `[A+1, A+K]`, stored by its first element and
/// length. Empty iff the length is zero.
#[derive(Clone, Copy, Debug, Eq)]
pub struct Interval {
    lo: i64,
    len: u64,
}

impl Interval {
    /// `[offset + 1, offset + len]`.
    pub fn new(offset: i64, len: u64) -> Self {
        Self {
            lo: offset + 1,
            len,
        }
    }

    /// `[lo, hi]`; empty when `hi < lo`.
    pub fn closed(lo: i64, hi: i64) -> Self {
        let len = if hi < lo { 0 } else { (hi - lo + 1) as u64 };
        Self { lo, len }
    }

    pub fn empty() -> Self {
        Self { lo: 0, len: 0 }
    }

    pub fn singleton(x: i64) -> Self {
        Self { lo: x, len: 1 }
    }

    #[inline]
    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Last element; `lo - 1` for an empty interval.
    #[inline]
    pub fn hi(&self) -> i64 {
        self.lo + self.len as i64 - 1
    }

    /// The `A` of `[A+1, A+K]`.
    #[inline]
    pub fn offset(&self) -> i64 {
        self.lo - 1
    }

    #[inline]
    pub fn len(&self) -> u64 {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        x >= self.lo && x <= self.hi()
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi()
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval::closed(self.lo.max(other.lo), self.hi().min(other.hi()))
    }

    /// `{m : d·m ∈ self}` for `d >= 1`, i.e. `[⌈lo/d⌉, ⌊hi/d⌋]`.
    pub fn scaled_down(&self, d: u64) -> Interval {
        if self.is_empty() {
            return Interval::empty();
        }
        let d = d as i64;
        Interval::closed(div_ceil(self.lo, d), self.hi().div_euclid(d))
    }

    /// Number of elements `≡ r (mod p)`.
    pub fn count_congruent(&self, r: u64, p: u64) -> u64 {
        if self.is_empty() {
            return 0;
        }
        let (r, p) = (r as i64, p as i64);
        ((self.hi() - r).div_euclid(p) - (self.lo - 1 - r).div_euclid(p)) as u64
    }

    /// Number of elements not divisible by `p`.
    pub fn count_nonzero_mod(&self, p: u64) -> u64 {
        self.len - self.count_congruent(0, p)
    }

    /// Intervals bound to `p` lie in `[0, p]` and hold at most `p` integers,
    /// so they never contain two representatives of one residue class.
    pub fn check_bound(&self, p: u64) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.lo < 0 || self.hi() > p as i64 || self.len > p {
            return Err(Error::domain(format!(
                "interval [{}, {}] is not inside [0, {p}] with at most {p} elements",
                self.lo,
                self.hi()
            )));
        }
        Ok(())
    }
}

// all empty intervals compare equal
impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && (self.len == 0 || self.lo == other.lo)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "[]")
        } else {
            write!(f, "[{},{}]", self.lo, self.hi())
        }
    }
}

fn div_ceil(a: i64, d: i64) -> i64 {
    -((-a).div_euclid(d))
}

/// `I × J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxRegion {
    pub x: Interval,
    pub y: Interval,
}

impl BoxRegion {
    pub fn new(x: Interval, y: Interval) -> Self {
        Self { x, y }
    }
}

/// A region given by its y-interval and one contiguous x-range per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvexRegion {
    y: Interval,
    rows: Vec<Interval>,
}

impl ConvexRegion {
    /// `rows[i]` is the x-range at height `y.lo() + i`.
    pub fn from_rows(y: Interval, rows: Vec<Interval>) -> Result<Self> {
        if rows.len() as u64 != y.len() {
            return Err(Error::domain(format!(
                "{} rows supplied for a y-interval of length {}",
                rows.len(),
                y.len()
            )));
        }
        Ok(Self { y, rows })
    }

    /// Tabulates a row oracle over `y`.
    pub fn from_fn(y: Interval, row: impl Fn(i64) -> Interval) -> Self {
        let rows = y.iter().map(row).collect();
        Self { y, rows }
    }

    /// Rows as `[A + H_y, A + K_y]`, one `(H_y, K_y)` per height in `y`.
    pub fn from_offsets(x_offset: i64, y: Interval, bounds: &[(i64, i64)]) -> Result<Self> {
        let rows = bounds
            .iter()
            .map(|&(h, k)| Interval::closed(x_offset + h, x_offset + k))
            .collect();
        Self::from_rows(y, rows)
    }

    pub fn point(x: i64, y: i64) -> Self {
        Self {
            y: Interval::singleton(y),
            rows: vec![Interval::singleton(x)],
        }
    }

    /// Reads `y H_y K_y` lines (absolute x-range `[H_y, K_y]`); separators
    /// may be spaces or commas and `#` starts a comment. Heights must be
    /// consecutive.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries: Vec<(i64, Interval)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<i64> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(Error::parse(format!(
                    "line {}: expected `y H_y K_y`",
                    lineno + 1
                )));
            }
            entries.push((nums[0], Interval::closed(nums[1], nums[2])));
        }
        let Some(&(first, _)) = entries.first() else {
            return Err(Error::parse("convex region file has no rows"));
        };
        for (i, (y, _)) in entries.iter().enumerate() {
            if *y != first + i as i64 {
                return Err(Error::parse(format!(
                    "row heights must be consecutive, found {y} after {}",
                    first + i as i64 - 1
                )));
            }
        }
        let y = Interval::closed(first, first + entries.len() as i64 - 1);
        Ok(Self {
            y,
            rows: entries.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every column `{y : x ∈ row(y)}` is a contiguous run of heights.
    pub fn is_column_convex(&self) -> bool {
        let Some(xmin) = self
            .rows
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| r.lo())
            .min()
        else {
            return true;
        };
        let xmax = self.rows.iter().map(|r| r.hi()).max().unwrap();
        (xmin..=xmax).all(|x| {
            let hits: Vec<usize> = self
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.contains(x))
                .map(|(i, _)| i)
                .collect();
            hits.windows(2).all(|w| w[1] == w[0] + 1)
        })
    }
}

/// The lattice disk `(x-b)² + (y-c)² <= r²` with rational `r = num/den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiskRegion {
    pub b: i64,
    pub c: i64,
    r_num: u64,
    r_den: u64,
    r2_floor: i64,
}

impl DiskRegion {
    pub fn new(b: i64, c: i64, r_num: u64, r_den: u64) -> Result<Self> {
        if r_num == 0 || r_den == 0 {
            return Err(Error::domain("disk radius must be a positive rational"));
        }
        let g = crate::fpcore::gcd(r_num, r_den);
        let (num, den) = (r_num / g, r_den / g);
        let r2_floor = ((num as u128 * num as u128) / (den as u128 * den as u128)) as i64;
        Ok(Self {
            b,
            c,
            r_num: num,
            r_den: den,
            r2_floor,
        })
    }

    /// Parses a decimal radius such as `3`, `2.5` or `0.125` exactly.
    pub fn with_decimal_radius(b: i64, c: i64, radius: &str) -> Result<Self> {
        let radius = radius.trim();
        let (int, frac) = radius.split_once('.').unwrap_or((radius, ""));
        let digits = format!("{int}{frac}");
        let num: u64 = digits
            .parse()
            .map_err(|_| Error::parse(format!("bad radius `{radius}`")))?;
        let den = 10u64
            .checked_pow(frac.len() as u32)
            .ok_or_else(|| Error::parse(format!("radius `{radius}` has too many digits")))?;
        Self::new(b, c, num, den)
    }

    pub fn radius(&self) -> (u64, u64) {
        (self.r_num, self.r_den)
    }

    fn half_width(&self) -> i64 {
        isqrt(self.r2_floor as u64) as i64
    }
}

pub fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// One factor `W_j` of a product region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Region {
    Box(BoxRegion),
    Convex(ConvexRegion),
    Disk(DiskRegion),
}

impl Region {
    pub fn boxed(x: Interval, y: Interval) -> Self {
        Region::Box(BoxRegion::new(x, y))
    }

    /// Heights at which rows may be nonempty.
    pub fn y_extent(&self) -> Interval {
        match self {
            Region::Box(b) => b.y,
            Region::Convex(c) => c.y,
            Region::Disk(d) => {
                let w = d.half_width();
                Interval::closed(d.c - w, d.c + w)
            }
        }
    }

    /// The x-range of the row at height `y`, empty outside the region.
    #[inline]
    pub fn row_slice(&self, y: i64) -> Interval {
        match self {
            Region::Box(b) => {
                if b.y.contains(y) {
                    b.x
                } else {
                    Interval::empty()
                }
            }
            Region::Convex(c) => {
                if c.y.contains(y) {
                    c.rows[(y - c.y.lo()) as usize]
                } else {
                    Interval::empty()
                }
            }
            Region::Disk(d) => {
                let dy = y - d.c;
                let rem = d.r2_floor - dy * dy;
                if rem < 0 {
                    Interval::empty()
                } else {
                    let w = isqrt(rem as u64) as i64;
                    Interval::closed(d.b - w, d.b + w)
                }
            }
        }
    }

    /// Iterates `(y, row)` over the y-extent.
    pub fn rows(&self) -> impl Iterator<Item = (i64, Interval)> + '_ {
        self.y_extent().iter().map(move |y| (y, self.row_slice(y)))
    }

    /// `#(W ∩ Z²)`, all rows included.
    pub fn lattice_count(&self) -> u64 {
        match self {
            Region::Box(b) => b.x.len() * b.y.len(),
            _ => self.rows().map(|(_, r)| r.len()).sum(),
        }
    }

    /// Lattice count over rows with `y ≢ 0 (mod p)`, and the number of
    /// nonempty rows that were skipped.
    pub fn lattice_count_nonzero_y(&self, p: u64) -> (u64, u64) {
        let mut count = 0;
        let mut skipped = 0;
        for (y, r) in self.rows() {
            if y.rem_euclid(p as i64) == 0 {
                if !r.is_empty() {
                    skipped += 1;
                }
            } else {
                count += r.len();
            }
        }
        (count, skipped)
    }

    /// `x`-extent of the nonempty rows.
    pub fn x_extent(&self) -> Interval {
        match self {
            Region::Box(b) => b.x,
            _ => {
                let mut lo = i64::MAX;
                let mut hi = i64::MIN;
                for (_, r) in self.rows() {
                    if !r.is_empty() {
                        lo = lo.min(r.lo());
                        hi = hi.max(r.hi());
                    }
                }
                Interval::closed(lo, hi)
            }
        }
    }

    /// Checks that every row and the y-extent lie in `[0, p]` with at most
    /// `p` elements.
    pub fn check_bound(&self, p: u64) -> Result<()> {
        let y = self.y_extent();
        y.check_bound(p)?;
        match self {
            Region::Box(b) => b.x.check_bound(p),
            _ => self.rows().try_for_each(|(_, r)| r.check_bound(p)),
        }
    }

    pub fn brute_force_member(&self, x: i64, y: i64) -> bool {
        match self {
            Region::Box(b) => b.x.contains(x) && b.y.contains(y),
            Region::Convex(c) => c.y.contains(y) && c.rows[(y - c.y.lo()) as usize].contains(x),
            Region::Disk(d) => {
                let (dx, dy) = ((x - d.b) as i128, (y - d.c) as i128);
                let (num, den) = (d.r_num as i128, d.r_den as i128);
                (dx * dx + dy * dy) * den * den <= num * num
            }
        }
    }
}

impl FromStr for Region {
    type Err = Error;

    /// `box:A,K,B,L` for `[A+1,A+K] × [B+1,B+L]`, `disk:b,c,r`, or
    /// `convex:path`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::parse(format!("region `{s}` lacks a `kind:` prefix")))?;
        match kind.trim() {
            "box" => {
                let v = parse_ints(rest, 4, "box:A,K,B,L")?;
                if v[1] < 0 || v[3] < 0 {
                    return Err(Error::parse("box lengths must be nonnegative"));
                }
                Ok(Region::boxed(
                    Interval::new(v[0], v[1] as u64),
                    Interval::new(v[2], v[3] as u64),
                ))
            }
            "disk" => {
                let parts: Vec<&str> = rest.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::parse("expected disk:b,c,r"));
                }
                let b = parts[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(format!("bad disk centre `{}`", parts[0])))?;
                let c = parts[1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(format!("bad disk centre `{}`", parts[1])))?;
                Ok(Region::Disk(DiskRegion::with_decimal_radius(
                    b, c, parts[2],
                )?))
            }
            "convex" => Ok(Region::Convex(ConvexRegion::from_file(rest.trim())?)),
            other => Err(Error::parse(format!("unknown region kind `{other}`"))),
        }
    }
}

fn parse_ints(s: &str, n: usize, shape: &str) -> Result<Vec<i64>> {
    let v: Vec<i64> = s
        .split(',')
        .map(|t| t.trim().parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(format!("expected {shape}, got `{s}`")))?;
    if v.len() != n {
        return Err(Error::parse(format!("expected {shape}, got `{s}`")));
    }
    Ok(v)
}

/// `W_1 × ... × W_n`, validated against a modulus.
#[derive(Clone, Debug)]
pub struct ProductRegion {
    factors: Vec<Region>,
    p: u64,
}

impl ProductRegion {
    pub fn bind(factors: Vec<Region>, ctx: &PrimeContext) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::domain("a product region needs at least one factor"));
        }
        for f in &factors {
            f.check_bound(ctx.p())?;
        }
        Ok(Self {
            factors,
            p: ctx.p(),
        })
    }

    /// `n` copies of the same factor.
    pub fn repeated(factor: Region, n: usize, ctx: &PrimeContext) -> Result<Self> {
        Self::bind(vec![factor; n], ctx)
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Region] {
        &self.factors
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub(crate) fn ensure_modulus(&self, ctx: &PrimeContext) -> Result<()> {
        if self.p != ctx.p() {
            return Err(Error::domain(format!(
                "region bound to p = {} used with p = {}",
                self.p,
                ctx.p()
            )));
        }
        Ok(())
    }

    /// `N(S) = #(S ∩ Z^{2n})`.
    pub fn lattice_count(&self) -> u128 {
        self.factors
            .iter()
            .map(|f| f.lattice_count() as u128)
            .product()
    }

    /// Lattice count with every `y_j ≢ 0`, and the total number of skipped
    /// rows across factors.
    pub fn lattice_count_nonzero_y(&self) -> (u128, u64) {
        self.factors.iter().fold((1u128, 0u64), |(c, s), f| {
            let (fc, fs) = f.lattice_count_nonzero_y(self.p);
            (c * fc as u128, s + fs)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_conventions() {
        let i = Interval::new(3, 4);
        assert_eq!((i.lo(), i.hi(), i.offset(), i.len()), (4, 7, 3, 4));
        assert!(Interval::new(5, 0).is_empty());
        assert!(Interval::closed(3, 2).is_empty());
        assert_eq!(
            Interval::closed(1, 10).scaled_down(3),
            Interval::closed(1, 3)
        );
        assert_eq!(
            Interval::closed(0, 10).scaled_down(4),
            Interval::closed(0, 2)
        );
        assert!(Interval::closed(5, 7).scaled_down(4).is_empty());
        assert_eq!(Interval::closed(0, 20).count_congruent(3, 7), 3);
        assert_eq!(Interval::closed(1, 6).count_nonzero_mod(7), 6);
        assert_eq!(Interval::closed(0, 7).count_nonzero_mod(7), 6);
    }

    #[test]
    fn interval_bounds() {
        assert!(Interval::closed(0, 6).check_bound(7).is_ok());
        assert!(Interval::closed(1, 7).check_bound(7).is_ok());
        assert!(Interval::closed(0, 7).check_bound(7).is_err());
        assert!(Interval::closed(-1, 3).check_bound(7).is_err());
        assert!(Interval::empty().check_bound(7).is_ok());
    }

    #[test]
    fn row_slice_examples() {
        let b = Region::boxed(Interval::closed(1, 10), Interval::closed(1, 5));
        assert_eq!(b.row_slice(3), Interval::closed(1, 10));
        assert!(b.row_slice(6).is_empty());
        let d = Region::Disk(DiskRegion::new(10, 10, 3, 1).unwrap());
        assert_eq!(d.row_slice(10), Interval::closed(7, 13));
        assert!(d.row_slice(14).is_empty());
    }

    #[test]
    fn lattice_count_examples() {
        let ctx = PrimeContext::new(101).unwrap();
        let b = Region::boxed(Interval::new(0, 10), Interval::new(0, 5));
        assert_eq!(b.lattice_count(), 50);
        let d = Region::Disk(DiskRegion::with_decimal_radius(10, 10, "2.5").unwrap());
        assert_eq!(d.lattice_count(), 21);
        let cube = Region::boxed(Interval::new(0, 10), Interval::new(0, 10));
        let prod = ProductRegion::repeated(cube, 3, &ctx).unwrap();
        assert_eq!(prod.lattice_count(), 1_000_000);
    }

    #[test]
    fn region_literals() {
        let r: Region = "box:0,7,0,6".parse().unwrap();
        assert_eq!(
            r,
            Region::boxed(Interval::closed(1, 7), Interval::closed(1, 6))
        );
        let d: Region = "disk:20,20,5".parse().unwrap();
        assert_eq!(d.lattice_count(), 81);
        assert!("box:1,2,3".parse::<Region>().is_err());
        assert!("ring:1".parse::<Region>().is_err());
        let c = ConvexRegion::from_text("# tri\n3 1,1\n4 1 2\n5 1,3\n").unwrap();
        assert_eq!(Region::Convex(c.clone()).lattice_count(), 6);
        assert!(c.is_column_convex());
        assert!(ConvexRegion::from_text("3 1 1\n5 1 1\n").is_err());
    }

    #[test]
    fn column_convexity_detects_gaps() {
        let bad = ConvexRegion::from_rows(
            Interval::closed(1, 3),
            vec![
                Interval::closed(1, 4),
                Interval::closed(3, 4),
                Interval::closed(1, 4),
            ],
        )
        .unwrap();
        assert!(!bad.is_column_convex());
    }

    #[test]
    fn skipped_rows_are_reported() {
        let r = Region::boxed(Interval::closed(0, 4), Interval::closed(0, 3));
        assert_eq!(r.lattice_count_nonzero_y(7), (15, 1));
    }

    fn arb_region() -> impl Strategy<Value = Region> {
        prop_oneof![
            (0i64..30, 0u64..15, 0i64..30, 0u64..15)
                .prop_map(|(a, k, b, l)| Region::boxed(Interval::new(a, k), Interval::new(b, l))),
            (8i64..30, 8i64..30, 1u64..40, 1u64..6)
                .prop_map(|(b, c, n, d)| Region::Disk(DiskRegion::new(b, c, n, d).unwrap())),
            (
                0i64..20,
                proptest::collection::vec((0i64..10, -2i64..10), 1..12)
            )
                .prop_map(|(y0, rows)| {
                    let rows = rows
                        .into_iter()
                        .map(|(lo, len)| Interval::closed(lo, lo + len))
                        .collect::<Vec<_>>();
                    let y = Interval::closed(y0, y0 + rows.len() as i64 - 1);
                    Region::Convex(ConvexRegion::from_rows(y, rows).unwrap())
                }),
        ]
    }

    proptest! {
        #[test]
        fn lattice_count_matches_membership(r in arb_region()) {
            let ys = r.y_extent();
            let mut brute = 0u64;
            for y in ys.lo() - 2..=ys.hi() + 2 {
                for x in -50..120 {
                    brute += r.brute_force_member(x, y) as u64;
                }
            }
            prop_assert_eq!(r.lattice_count(), brute);
        }

        #[test]
        fn disk_rows_shrink_away_from_centre(n in 1u64..200, d in 1u64..7) {
            let r = Region::Disk(DiskRegion::new(50, 50, n, d).unwrap());
            let lens: Vec<u64> = (0..40).map(|k| r.row_slice(50 + k).len()).collect();
            prop_assert!(lens.windows(2).all(|w| w[1] <= w[0]));
            for k in 0..40 {
                prop_assert_eq!(r.row_slice(50 + k), r.row_slice(50 - k));
            }
        }
    }
}
