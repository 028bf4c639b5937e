//! Arithmetic in `F_p`: inverses, centred residues, additive characters
//! `e_p(w) = exp(2πi w/p)`, and the small multiplicative helpers (Möbius,
//! divisor counts, Dirichlet small pairs).

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest modulus for which the inverse and root tables are materialised.
/// Above this, inverses and characters are computed on demand.
pub const TABLE_LIMIT: u64 = 1 << 21;

/// A prime modulus together with its precomputed inverse and root tables.
///
/// Immutable after construction, so it can be shared freely between
/// worker threads.
#[derive(Clone)]
pub struct PrimeContext {
    p: u64,
    inv_table: Option<Vec<u32>>,
    root_table: Option<Vec<Complex64>>,
}

impl fmt::Debug for PrimeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrimeContext")
            .field("p", &self.p)
            .field("tables", &self.inv_table.is_some())
            .finish()
    }
}

impl PrimeContext {
    /// Builds the context for an odd prime `p`, precomputing tables when
    /// `p <= TABLE_LIMIT`.
    pub fn new(p: u64) -> Result<Self> {
        if p < 3 || !is_prime(p) {
            return Err(Error::domain(format!("{p} is not an odd prime")));
        }
        if p >= 1 << 63 {
            return Err(Error::domain("modulus must be below 2^63"));
        }
        let (inv_table, root_table) = if p <= TABLE_LIMIT {
            (Some(batch_inverses(p)), Some(root_table(p)))
        } else {
            (None, None)
        };
        Ok(Self {
            p,
            inv_table,
            root_table,
        })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    /// The inverse table, `inv[w] * w ≡ 1` for `w` in `1..p`; `inv[0] = 0`.
    pub fn inv_table(&self) -> Option<&[u32]> {
        self.inv_table.as_deref()
    }

    /// Reduces any signed integer into `[0, p)`.
    #[inline]
    pub fn reduce(&self, x: i64) -> u64 {
        x.rem_euclid(self.p as i64) as u64
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.p as u128) as u64
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    /// Inverse of a reduced nonzero residue without the zero check.
    #[inline]
    pub(crate) fn inv_reduced(&self, a: u64) -> u64 {
        debug_assert!(a != 0 && a < self.p);
        match &self.inv_table {
            Some(t) => t[a as usize] as u64,
            None => pow_mod(a, self.p - 2, self.p),
        }
    }

    /// `b` with `a·b ≡ 1 (mod p)`, `1 <= b <= p-1`.
    pub fn mod_inverse(&self, a: i64) -> Result<u64> {
        let a = self.reduce(a);
        if a == 0 {
            return Err(Error::domain("zero has no inverse"));
        }
        Ok(self.inv_reduced(a))
    }

    /// The representative of `u/v (mod p)` in `(-p/2, p/2)`.
    pub fn centered_residue(&self, u: i64, v: i64) -> Result<CenteredResidue> {
        let vi = self.mod_inverse(v)?;
        let w = self.mul(self.reduce(u), vi);
        Ok(self.center(w))
    }

    #[inline]
    pub fn center(&self, w: u64) -> CenteredResidue {
        debug_assert!(w < self.p);
        if w > self.p / 2 {
            CenteredResidue(w as i64 - self.p as i64)
        } else {
            CenteredResidue(w as i64)
        }
    }

    /// `e_p(w)` for a reduced residue.
    #[inline]
    pub fn root(&self, w: u64) -> Complex64 {
        debug_assert!(w < self.p);
        match &self.root_table {
            Some(t) => t[w as usize],
            None => {
                let (s, c) = (TAU * (w as f64 / self.p as f64)).sin_cos();
                Complex64::new(c, s)
            }
        }
    }

    /// `e_p(w) = exp(2πi w / p)`.
    #[inline]
    pub fn e_p(&self, w: i64) -> Complex64 {
        self.root(self.reduce(w))
    }

    /// `Σ_{x=lo}^{hi} e_p(c·x)`, evaluated in closed form.
    ///
    /// For `c ≢ 0` this is `(z^lo - z^{hi+1}) / (1 - z)` with `z = e_p(c)`;
    /// for `c ≡ 0` it is the number of terms. An empty range gives zero.
    #[inline]
    pub fn geometric_char_sum(&self, c: i64, lo: i64, hi: i64) -> Complex64 {
        if lo > hi {
            return Complex64::new(0.0, 0.0);
        }
        self.geometric_reduced(self.reduce(c), lo, hi)
    }

    #[inline]
    pub(crate) fn geometric_reduced(&self, c: u64, lo: i64, hi: i64) -> Complex64 {
        if lo > hi {
            return Complex64::new(0.0, 0.0);
        }
        if c == 0 {
            return Complex64::new((hi - lo + 1) as f64, 0.0);
        }
        let start = self.root(self.mul(c, self.reduce(lo)));
        let end = self.root(self.mul(c, self.reduce(hi + 1)));
        let z = self.root(c);
        (start - end) / (Complex64::new(1.0, 0.0) - z)
    }
}

/// The centred residue `ρ`, an integer with `|w| < p/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CenteredResidue(i64);

impl CenteredResidue {
    #[inline]
    pub fn value(self) -> i64 {
        self.0
    }

    #[inline]
    pub fn abs(self) -> u64 {
        self.0.unsigned_abs()
    }
}

impl fmt::Display for CenteredResidue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

// inv[i] = -(p / i) * inv[p mod i]
fn batch_inverses(p: u64) -> Vec<u32> {
    let n = p as usize;
    let mut inv = vec![0u32; n];
    inv[1] = 1;
    for i in 2..n {
        let q = p / i as u64;
        let r = p % i as u64;
        let t = (q * inv[r as usize] as u64) % p;
        inv[i] = ((p - t) % p) as u32;
    }
    inv
}

fn root_table(p: u64) -> Vec<Complex64> {
    let n = p as usize;
    let mut t = vec![Complex64::new(1.0, 0.0); n];
    for w in 1..=n / 2 {
        let (s, c) = (TAU * (w as f64 / p as f64)).sin_cos();
        t[w] = Complex64::new(c, s);
        t[n - w] = Complex64::new(c, -s);
    }
    t
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = ((acc as u128 * base as u128) % m as u128) as u64;
        }
        base = ((base as u128 * base as u128) % m as u128) as u64;
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller–Rabin, exact for all `n < 2^64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Prime factorisation by trial division, as `(prime, exponent)` pairs.
pub fn factorize(mut m: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= m {
        if m.is_multiple_of(d) {
            let mut e = 0;
            while m.is_multiple_of(d) {
                m /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += if d == 2 { 1 } else { 2 };
    }
    if m > 1 {
        out.push((m, 1));
    }
    out
}

pub fn mobius(m: u64) -> Result<i8> {
    if m == 0 {
        return Err(Error::domain("mobius(0) is undefined"));
    }
    let f = factorize(m);
    if f.iter().any(|&(_, e)| e > 1) {
        return Ok(0);
    }
    Ok(if f.len().is_multiple_of(2) { 1 } else { -1 })
}

/// Möbius values `μ(0..=n)` by a linear sieve; `μ(0)` is stored as 0.
pub fn mobius_table(n: usize) -> Vec<i8> {
    let mut mu = vec![1i8; n + 1];
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    mu[0] = 0;
    for i in 2..=n {
        if !composite[i] {
            primes.push(i);
            mu[i] = -1;
        }
        for &q in &primes {
            let iq = i * q;
            if iq > n {
                break;
            }
            composite[iq] = true;
            if i % q == 0 {
                mu[iq] = 0;
                break;
            }
            mu[iq] = -mu[i];
        }
    }
    mu
}

/// `τ(|m|)`, the number of positive divisors.
pub fn divisor_count(m: i64) -> Result<u64> {
    if m == 0 {
        return Err(Error::domain("divisor_count(0) is undefined"));
    }
    Ok(factorize(m.unsigned_abs())
        .iter()
        .map(|&(_, e)| e as u64 + 1)
        .product())
}

/// All positive divisors of `|m|` in increasing order.
pub fn divisors(m: i64) -> Result<Vec<u64>> {
    if m == 0 {
        return Err(Error::domain("divisors(0) is undefined"));
    }
    let mut out = vec![1u64];
    for (q, e) in factorize(m.unsigned_abs()) {
        let len = out.len();
        let mut pw = 1u64;
        for _ in 0..e {
            pw *= q;
            for i in 0..len {
                out.push(out[i] * pw);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Dirichlet small pair: `1 <= u <= u_max` with `v = ρ(u·b)` small.
///
/// Returns the smallest `u` attaining the minimal `|ρ(u·b)|`. The
/// pigeonhole principle guarantees `|v| <= ⌈p / u_max⌉`.
pub fn find_small_uv(b: i64, u_max: u64, ctx: &PrimeContext) -> Result<(u64, i64)> {
    if u_max == 0 || u_max >= ctx.p() {
        return Err(Error::domain(format!(
            "U must satisfy 1 <= U < p, got U = {u_max}"
        )));
    }
    let b = ctx.reduce(b);
    let mut best = (1u64, ctx.center(b).value());
    let mut w = b;
    for u in 1..=u_max {
        if u > 1 {
            w = ctx.add(w, b);
        }
        let v = ctx.center(w).value();
        if v.unsigned_abs() < best.1.unsigned_abs() {
            best = (u, v);
            if v == 0 {
                break;
            }
        }
    }
    Ok(best)
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
