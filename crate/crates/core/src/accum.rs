//! Compensated accumulation and order-stable parallel reductions.
//!
//! Every parallel loop in the crate splits its index range into fixed-size
//! chunks, sums each chunk sequentially with Neumaier compensation and then
//! combines the chunk totals with a pairwise tree. Chunk boundaries do not
//! depend on the number of worker threads, so results are bit-identical for
//! any pool size.

use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;

/// Number of indices handled by one sequential chunk.
pub const CHUNK: usize = 64;

/// Neumaier (improved Kahan) summation of `f64` values.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Componentwise Neumaier summation of complex values.
#[derive(Clone, Copy, Debug, Default)]
pub struct ComplexAccumulator {
    re: Neumaier,
    im: Neumaier,
}

impl ComplexAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub fn total(&self) -> Complex64 {
        Complex64::new(self.re.total(), self.im.total())
    }
}

/// Pairwise (balanced tree) sum; the association order depends only on the
/// slice length.
pub fn pairwise_sum<T>(values: &[T]) -> T
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    match values.len() {
        0 => T::default(),
        1 => values[0],
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

fn chunks(range: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK as u64).min(range.end);
        out.push(start..end);
        start = end;
    }
    out
}

/// `Σ_{i ∈ range} f(i)` in parallel with a deterministic reduction order.
pub fn par_sum_complex<F>(range: Range<u64>, f: F) -> Complex64
where
    F: Fn(u64) -> Complex64 + Sync,
{
    let partials: Vec<Complex64> = chunks(range)
        .into_par_iter()
        .map(|r| {
            let mut acc = ComplexAccumulator::new();
            for i in r {
                acc.add(f(i));
            }
            acc.total()
        })
        .collect();
    pairwise_sum(&partials)
}

/// Real-valued counterpart of [`par_sum_complex`].
pub fn par_sum_real<F>(range: Range<u64>, f: F) -> f64
where
    F: Fn(u64) -> f64 + Sync,
{
    let partials: Vec<f64> = chunks(range)
        .into_par_iter()
        .map(|r| {
            let mut acc = Neumaier::new();
            for i in r {
                acc.add(f(i));
            }
            acc.total()
        })
        .collect();
    pairwise_sum(&partials)
}

/// Evaluates `f` over `range` in parallel, preserving index order.
pub fn par_map<T, F>(range: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let nested: Vec<Vec<T>> = chunks(range)
        .into_par_iter()
        .map(|r| r.map(&f).collect())
        .collect();
    nested.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_small_terms() {
        let mut acc = Neumaier::new();
        acc.add(1.0);
        acc.add(1e100);
        acc.add(1.0);
        acc.add(-1e100);
        assert_eq!(acc.total(), 2.0);
    }

    #[test]
    fn parallel_sum_is_independent_of_pool_size() {
        let f = |i: u64| Complex64::new((i as f64).sin(), (i as f64 * 0.37).cos());
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| par_sum_complex(0..10_000, f));
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| par_sum_complex(0..10_000, f));
        assert_eq!(one.re.to_bits(), four.re.to_bits());
        assert_eq!(one.im.to_bits(), four.im.to_bits());
    }

    #[test]
    fn par_map_keeps_order() {
        let v = par_map(3..300, |i| i * 2);
        assert_eq!(v.len(), 297);
        assert!(v.iter().enumerate().all(|(k, &x)| x == (k as u64 + 3) * 2));
    }

    proptest::proptest! {
        #[test]
        fn real_sums_ignore_pool_size_and_stay_accurate(
            values in proptest::collection::vec(-1e6f64..1e6, 0..700),
            threads in 2usize..5,
        ) {
            let f = |i: u64| values[i as usize];
            let n = values.len() as u64;
            let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| par_sum_real(0..n, f));
            let many = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| par_sum_real(0..n, f));
            proptest::prop_assert_eq!(one.to_bits(), many.to_bits());
            let mut exact = Neumaier::new();
            values.iter().for_each(|&v| exact.add(v));
            proptest::prop_assert!((one - exact.total()).abs() <= 1e-9 * values.iter().map(|v| v.abs()).sum::<f64>().max(1.0));
        }
    }
}
