//! Identity, oracle and envelope checks shared by `verify` and the
//! acceptance target.
//!
//! Every check is seeded and returns a [`CheckOutcome`] describing what was
//! measured. Envelopes replace the `p^{o(1)}` factors of the asymptotic
//! bounds by an explicit slack `p^ε`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::counting::{
    coprime_count, coprime_count_bruteforce, count_bruteforce, count_fast, cross_ratio_count,
    inverse_concentration_by_divisors, inverse_concentration_count, ratio_distribution,
    CoefficientVector,
};
use crate::expsums::{kloosterman_interval, ratio_double_sum, second_moment_over_a};
use crate::fpcore::{find_small_uv, is_prime, mobius_table, PrimeContext};
use crate::geometry::{Interval, ProductRegion, Region};
use crate::harness::{
    fit_exponent, fit_loglog, run_sweep, write_csv, CoeffPolicy, SweepConfig, SweepRow,
};
use crate::wellshaped::{
    choose_M, count_cubes_inside, count_in_blowup, cubes_inside, dyadic_layers, exact_blowup_count,
    Ball, BoxSet, Shift, ShiftedCubeFamily, WellShapedSet,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: crate::Result<String>) -> Self {
        match r {
            Ok(d) => Self::new(name, true, d),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }

    /// Joins several outcomes into one that passes when all of them do.
    pub fn all(name: &str, parts: &[CheckOutcome]) -> Self {
        let detail = parts
            .iter()
            .map(|c| {
                format!(
                    "[{}: {}] {}",
                    if c.passed { "ok" } else { "FAILED" },
                    c.name,
                    c.detail
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        Self::new(name, parts.iter().all(|c| c.passed), detail)
    }
}

fn primes_between(lo: u64, hi: u64) -> Vec<u64> {
    (lo..=hi).filter(|&q| is_prime(q)).collect()
}

fn random_interval(rng: &mut ChaCha8Rng, lo: i64, hi: i64, max_len: i64) -> Interval {
    let a = rng.gen_range(lo..=hi);
    let len = rng.gen_range(0..=max_len.min(hi - a + 1));
    Interval::closed(a, a + len - 1)
}

fn random_boxes(rng: &mut ChaCha8Rng, p: u64, n: usize, max_len: i64) -> Vec<Region> {
    let top = p as i64 - 1;
    (0..n)
        .map(|_| {
            Region::boxed(
                random_interval(rng, 0, top, max_len),
                random_interval(rng, 0, top, max_len),
            )
        })
        .collect()
}

fn random_coeffs(rng: &mut ChaCha8Rng, p: u64, n: usize, ctx: &PrimeContext) -> CoefficientVector {
    let a: Vec<i64> = (0..n).map(|_| rng.gen_range(1..p) as i64).collect();
    CoefficientVector::new(rng.gen_range(0..p) as i64, &a, ctx).unwrap()
}

/// Fast counter against the enumeration oracle, zero tolerance.
pub fn oracle_equivalence(instances: usize, seed: u64) -> CheckOutcome {
    let primes = primes_between(11, 97);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let p = primes[rng.gen_range(0..primes.len())];
        let n = 1 + i % 3;
        let ctx = PrimeContext::new(p).unwrap();
        // keeps Π #W_j under the enumeration guard
        let max_len = if n == 3 { 30 } else { p as i64 };
        let regions = ProductRegion::bind(random_boxes(&mut rng, p, n, max_len), &ctx).unwrap();
        let coeffs = random_coeffs(&mut rng, p, n, &ctx);
        let brute = count_bruteforce(&coeffs, &regions, &ctx);
        let fast = count_fast(&coeffs, &regions, &ctx);
        match (brute, fast) {
            (Ok(b), Ok(f)) if b == f.count => worst = worst.max(f.residual),
            (b, f) => {
                return CheckOutcome::new(
                    "oracle equivalence",
                    false,
                    format!("instance {i}: p={p} n={n} coeffs={coeffs:?} brute={b:?} fast={f:?}"),
                )
            }
        }
    }
    CheckOutcome::new(
        "oracle equivalence",
        true,
        format!("{instances} instances agree, max residual {worst:.2e}"),
    )
}

/// `Σ_a |S(a)|^2 = p · #{x_1/y_1 ≡ x_2/y_2} − (K L')^2`.
pub fn parseval_identity(instances: usize, max_p: u64, seed: u64) -> CheckOutcome {
    let primes = primes_between(11, max_p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p = primes[rng.gen_range(0..primes.len())];
        let ctx = PrimeContext::new(p).unwrap();
        let top = p as i64 - 1;
        let i = random_interval(&mut rng, 0, top, top);
        let j = random_interval(&mut rng, 0, top, top);
        let kl = (i.len() * j.count_nonzero_mod(p)) as f64;
        let lhs = p as f64 * cross_ratio_count(i, j, i, j, &ctx) as f64 - kl * kl;
        let moment = second_moment_over_a(i, j, &ctx);
        let rel = (lhs - moment).abs() / moment.abs().max(1.0);
        worst = worst.max(rel);
    }
    CheckOutcome::new(
        "Parseval identity",
        worst <= 1e-8,
        format!("{instances} instances, max relative deviation {worst:.2e} (limit 1e-8)"),
    )
}

/// Complete Kloosterman sums equal −1; complete `x`-sums vanish.
pub fn complete_sums(prime_count: usize, seed: u64) -> CheckOutcome {
    let primes: Vec<u64> = primes_between(3, 100_000)
        .into_iter()
        .step_by(97)
        .take(prime_count)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &p in &primes {
        let ctx = PrimeContext::new(p).unwrap();
        let top = p as i64 - 1;
        let lam = rng.gen_range(1..p) as i64;
        let k = kloosterman_interval(lam, Interval::closed(1, top), &ctx).value;
        worst = worst.max((k.re + 1.0).abs().max(k.im.abs()) / p as f64);
        let a = rng.gen_range(1..p) as i64;
        let j = random_interval(&mut rng, 1, top, top.min(200));
        let s = ratio_double_sum(a, Interval::closed(0, top), j, &ctx)
            .unwrap()
            .value;
        worst = worst.max(s.norm() / p as f64);
    }
    CheckOutcome::new(
        "complete sums",
        worst <= 1e-9,
        format!(
            "{} primes up to {}, max deviation / p {worst:.2e} (limit 1e-9)",
            primes.len(),
            primes.last().copied().unwrap_or(0)
        ),
    )
}

/// One prime of the cross-ratio sweep with `K = L = ⌊p^{3/4}⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossRatioRow {
    pub p: u64,
    pub k: u64,
    pub count: u64,
    pub main_term: f64,
    pub abs_error: f64,
    /// `√(K_1 K_2 L_1 L_2) p^ε`.
    pub envelope: f64,
}

pub fn cross_ratio_sweep(primes: &[u64], eps: f64) -> Vec<CrossRatioRow> {
    primes
        .iter()
        .map(|&p| {
            let ctx = PrimeContext::new(p).unwrap();
            let k = (p as f64).powf(0.75).floor() as u64;
            let iv = Interval::closed(1, k as i64);
            let count = cross_ratio_count(iv, iv, iv, iv, &ctx);
            let kf = k as f64;
            let main_term = kf.powi(4) / p as f64;
            CrossRatioRow {
                p,
                k,
                count,
                main_term,
                abs_error: (count as f64 - main_term).abs(),
                envelope: kf * kf * (p as f64).powf(eps),
            }
        })
        .collect()
}

pub fn cross_ratio_envelope(rows: &[CrossRatioRow]) -> CheckOutcome {
    let worst = rows
        .iter()
        .map(|r| r.abs_error / r.envelope)
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "cross-ratio envelope",
        worst <= 1.0,
        format!(
            "max |count - K^2L^2/p| / envelope = {worst:.3} over {} primes",
            rows.len()
        ),
    )
}

/// Slope of `ln |count − K²L²/p|` against `ln p`, tested against `limit`.
pub fn cross_ratio_slope(rows: &[CrossRatioRow], limit: f64) -> CheckOutcome {
    let fit = fit_loglog(
        &rows
            .iter()
            .map(|r| (r.p as f64, r.abs_error))
            .collect::<Vec<_>>(),
    );
    let env = fit_loglog(
        &rows
            .iter()
            .map(|r| (r.p as f64, r.envelope))
            .collect::<Vec<_>>(),
    );
    match fit {
        Some((slope, _)) => CheckOutcome::new(
            "cross-ratio error slope",
            slope <= limit,
            format!(
                "fitted slope {slope:.3}, limit {limit:.3}, envelope slope {:.3}",
                env.map_or(f64::NAN, |e| e.0)
            ),
        ),
        None => CheckOutcome::new(
            "cross-ratio error slope",
            false,
            "no positive errors".into(),
        ),
    }
}

/// Inverse concentration count against `(p^{-1/2} L^{1/2} M + 1) p^ε`, with
/// the divisor route recomputing every instance.
pub fn inverse_concentration_envelope(
    primes: &[u64],
    per_prime: usize,
    eps: f64,
    seed: u64,
) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut total = 0;
    for &p in primes {
        let ctx = PrimeContext::new(p).unwrap();
        let pf = p as f64;
        for _ in 0..per_prime {
            let l = rng.gen_range(1..p - 1);
            let b = rng.gen_range(0..p - l) as i64;
            let m = rng.gen_range(0..p);
            let direct = match inverse_concentration_count(b, l, m, &ctx) {
                Ok(c) => c,
                Err(e) => return CheckOutcome::new("inverse concentration", false, e.to_string()),
            };
            let route = inverse_concentration_by_divisors(b, l, m, &ctx);
            if route.as_ref().map(|r| r.count).ok() != Some(direct) {
                return CheckOutcome::new(
                    "inverse concentration",
                    false,
                    format!("p={p} B={b} L={l} M={m}: direct {direct}, divisor route {route:?}"),
                );
            }
            let env = ((l as f64).sqrt() * m as f64 / pf.sqrt() + 1.0) * pf.powf(eps);
            worst = worst.max(direct as f64 / env);
            total += 1;
        }
    }
    CheckOutcome::new(
        "inverse concentration",
        worst <= 1.0,
        format!("{total} instances, divisor route agrees, max count / envelope = {worst:.3}"),
    )
}

/// One prime of the double-sum sweep with `K = L = ⌊p^{0.6}⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoubleSumRow {
    pub p: u64,
    pub k: u64,
    pub max_abs: f64,
    /// `K + √(pL)`, without slack.
    pub bound: f64,
}

pub fn double_sum_sweep(primes: &[u64], draws: usize, seed: u64) -> Vec<DoubleSumRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primes
        .iter()
        .map(|&p| {
            let ctx = PrimeContext::new(p).unwrap();
            let k = (p as f64).powf(0.6).floor() as u64;
            let iv = Interval::closed(1, k as i64);
            let max_abs = (0..draws)
                .map(|_| {
                    let a = rng.gen_range(1..p) as i64;
                    ratio_double_sum(a, iv, iv, &ctx).unwrap().value.norm()
                })
                .fold(0.0, f64::max);
            DoubleSumRow {
                p,
                k,
                max_abs,
                bound: k as f64 + (p as f64 * k as f64).sqrt(),
            }
        })
        .collect()
}

pub fn double_sum_envelope(rows: &[DoubleSumRow], eps: f64) -> CheckOutcome {
    let worst = rows
        .iter()
        .map(|r| r.max_abs / (r.bound * (r.p as f64).powf(eps)))
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "double-sum envelope",
        worst <= 1.0,
        format!(
            "max |S| / ((K + (pL)^(1/2)) p^{eps}) = {worst:.3} over {} primes",
            rows.len()
        ),
    )
}

/// Fitted slope of `max |S|` within `tol` of the slope of `K + √(pL)`.
pub fn double_sum_slope(rows: &[DoubleSumRow], tol: f64) -> CheckOutcome {
    let s = fit_loglog(
        &rows
            .iter()
            .map(|r| (r.p as f64, r.max_abs))
            .collect::<Vec<_>>(),
    );
    let e = fit_loglog(
        &rows
            .iter()
            .map(|r| (r.p as f64, r.bound))
            .collect::<Vec<_>>(),
    );
    match (s, e) {
        (Some((s, _)), Some((e, _))) => CheckOutcome::new(
            "double-sum slope",
            (s - e).abs() <= tol,
            format!(
                "fitted slope {s:.3}, envelope slope {e:.3}, |difference| {:.3} (limit {tol})",
                (s - e).abs()
            ),
        ),
        _ => CheckOutcome::new("double-sum slope", false, "degenerate fit".into()),
    }
}

/// Cubic-box sweep `H = ⌊p^θ⌋` with `a = (0; 1, 1, 1)`.
pub fn box_sweep_rows(primes: &[u64], theta: f64, eps: f64) -> crate::Result<Vec<SweepRow>> {
    let cfg = SweepConfig {
        primes: primes.to_vec(),
        n: 3,
        theta,
        coeffs: CoeffPolicy::Fixed(vec![0, 1, 1, 1]),
        eps,
        ..SweepConfig::default()
    };
    let rows = run_sweep(&cfg)?;
    if let Some(r) = rows.iter().find(|r| r.count.is_none()) {
        return Err(crate::Error::domain(format!(
            "p={} failed: {:?}",
            r.p, r.flags
        )));
    }
    Ok(rows)
}

pub fn box_sweep_envelope(rows: &[SweepRow]) -> CheckOutcome {
    let fit = fit_exponent(rows);
    CheckOutcome::new(
        "box sweep envelope",
        fit.max_ratio <= 1.0,
        format!(
            "{} primes, max |count - H^2n/p| / envelope = {:.3}",
            rows.len(),
            fit.max_ratio
        ),
    )
}

pub fn box_sweep_slope(rows: &[SweepRow], limit: f64) -> CheckOutcome {
    let fit = fit_exponent(rows);
    CheckOutcome::new(
        "box sweep slope",
        fit.slope.is_some_and(|s| s <= limit),
        format!(
            "fitted slope {} (limit {limit:.2})",
            fit.slope.map_or("undefined".into(), |s| format!("{s:.3}"))
        ),
    )
}

/// Box-form envelope `√(K_1L_1K_2L_2) Π_{j>=3} (K_j + √(pL_j)) p^ε` on random boxes.
pub fn box_envelope(primes: &[u64], per_prime: usize, eps: f64, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &p in primes {
        let ctx = PrimeContext::new(p).unwrap();
        let pf = p as f64;
        for _ in 0..per_prime {
            let top = p as i64 - 1;
            let sides: Vec<(Interval, Interval)> = (0..3)
                .map(|_| {
                    (
                        random_interval(&mut rng, 0, top, top),
                        random_interval(&mut rng, 1, top, top),
                    )
                })
                .collect();
            let regions = ProductRegion::bind(
                sides.iter().map(|&(x, y)| Region::boxed(x, y)).collect(),
                &ctx,
            )
            .unwrap();
            let coeffs = random_coeffs(&mut rng, p, 3, &ctx);
            let r = match count_fast(&coeffs, &regions, &ctx) {
                Ok(r) => r,
                Err(e) => return CheckOutcome::new("box envelope", false, e.to_string()),
            };
            let kl: Vec<(f64, f64)> = sides
                .iter()
                .map(|(x, y)| (x.len() as f64, y.len() as f64))
                .collect();
            let env = (kl[0].0 * kl[0].1 * kl[1].0 * kl[1].1).sqrt()
                * (kl[2].0 + (pf * kl[2].1).sqrt())
                * pf.powf(eps);
            let err = (r.count as f64 - r.main_term).abs();
            if env > 0.0 {
                worst = worst.max(err / env);
            } else if err > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    CheckOutcome::new(
        "box envelope",
        worst <= 1.0,
        format!(
            "{} primes x {per_prime} boxes, max error / envelope = {worst:.3}",
            primes.len()
        ),
    )
}

/// Unit-cube counts, the second unit-cube layer, and layer invariants for
/// the 6-ball of radius 0.4 up to depth `max_m`.
pub fn dyadic_exactness(max_k: u32, max_m: u32) -> CheckOutcome {
    CheckOutcome::from_result(
        "dyadic machinery",
        (|| {
            let shift = Shift::standard(6);
            let cube = BoxSet::unit(6);
            for k in 2..=max_k {
                let fam = ShiftedCubeFamily::new(k, shift.clone())?;
                let got = count_cubes_inside(&cube, &fam)?;
                if got != (k as u64 - 1).pow(6) {
                    return Err(crate::Error::domain(format!(
                        "unit cube k={k}: {got} cubes"
                    )));
                }
            }
            let b2 = dyadic_layers(&cube, 2, &shift)?.layers[1].len();
            if b2 != 665 {
                return Err(crate::Error::domain(format!(
                    "#B_2 of the unit cube is {b2}"
                )));
            }
            let ball = Ball::centered(6, 0.4)?;
            let dec = dyadic_layers(&ball, max_m, &shift)?;
            check_layers(&ball, &dec)?;
            let sizes: Vec<usize> = dec.layers.iter().map(|l| l.len()).collect();
            let gap = ball.measure() - dec.covered_measure;
            let allowed = ball.boundary_constant() * 6f64.sqrt() * 2f64.powi(-(max_m as i32));
            if !(gap >= 0.0 && gap <= allowed) {
                return Err(crate::Error::domain(format!(
                    "uncovered measure {gap:.4e} exceeds {allowed:.4e}"
                )));
            }
            Ok(format!(
            "unit cube k<={max_k} exact, #B_2=665, ball layers {sizes:?}, uncovered {gap:.4e} <= {allowed:.4e}, C'={:.3}",
            dec.layer_constant
        ))
        })(),
    )
}

/// Disjointness inside each layer, anti-nesting against the previous
/// level, and containment of every cube.
pub fn check_layers(
    omega: &dyn WellShapedSet,
    dec: &crate::wellshaped::DyadicDecomposition,
) -> crate::Result<()> {
    use std::collections::HashSet;
    let d = omega.dim();
    for (i, layer) in dec.layers.iter().enumerate() {
        let fam = ShiftedCubeFamily::new(layer.k, dec.shift.clone())?;
        let mut seen = HashSet::new();
        let mut lo = vec![0.0; d];
        for u in layer.iter() {
            // distinct grid cells of one family have disjoint interiors
            if !seen.insert(u.to_vec()) {
                return Err(crate::Error::domain(format!(
                    "duplicate cube in layer {}",
                    i + 1
                )));
            }
            for (axis, a) in lo.iter_mut().enumerate() {
                *a = fam.corner(axis, u[axis] as i32);
            }
            if !omega.cube_inside(&lo, fam.side()) {
                return Err(crate::Error::domain(format!(
                    "cube {u:?} of layer {} leaves the set",
                    i + 1
                )));
            }
        }
        if i > 0 {
            let parent_fam = ShiftedCubeFamily::new(layer.k / 2, dec.shift.clone())?;
            let parents = cubes_inside(omega, &parent_fam)?;
            let parents: HashSet<Vec<i16>> = parents.iter().map(<[i16]>::to_vec).collect();
            for u in layer.iter() {
                let up: Vec<i16> = u.iter().map(|c| c.div_euclid(2)).collect();
                if parents.contains(&up) {
                    return Err(crate::Error::domain(format!(
                        "cube {u:?} of layer {} lies in an inside cube of the previous level",
                        i + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// One prime of the blow-up sandwich with the 6-ball of radius 0.4.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichRow {
    pub p: u64,
    pub m: u32,
    pub layer_sum: u64,
    pub exact: u64,
    pub gap_bound: f64,
    pub main_term: f64,
    /// `|exact − p^5 μ| / p^{6 − 11/7}`.
    pub normalized_error: f64,
}

pub fn sandwich_rows(primes: &[u64]) -> crate::Result<Vec<SandwichRow>> {
    let ball = Ball::centered(6, 0.4)?;
    primes
        .iter()
        .map(|&p| {
            let ctx = PrimeContext::new(p)?;
            let coeffs = CoefficientVector::new(0, &[1, 1, 1], &ctx)?;
            let b = count_in_blowup(&coeffs, &ball, &ctx)?;
            let exact = exact_blowup_count(&coeffs, &ball, &ctx)?;
            let pf = p as f64;
            let main_term = pf.powi(5) * PI.powi(3) * 0.4f64.powi(6) / 6.0;
            Ok(SandwichRow {
                p,
                m: b.m,
                layer_sum: b.layer_sum,
                exact,
                gap_bound: b.uncovered_bound,
                main_term,
                normalized_error: (exact as f64 - main_term).abs() / pf.powf(6.0 - 11.0 / 7.0),
            })
        })
        .collect()
}

pub fn sandwich_outcome(rows: &[SandwichRow], eps: f64) -> CheckOutcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in rows {
        let lower = r.layer_sum <= r.exact;
        let gap = r.exact.saturating_sub(r.layer_sum) as f64;
        let gap_ok = gap <= r.gap_bound;
        let env = (r.p as f64).powf(eps);
        let env_ok = r.normalized_error <= env;
        ok &= lower && gap_ok && env_ok;
        parts.push(format!(
            "p={} M={} layers={} exact={} gap={}/{:.3e} err/p^(6-11/7)={:.3}/{:.3}",
            r.p, r.m, r.layer_sum, r.exact, gap, r.gap_bound, r.normalized_error, env
        ));
    }
    CheckOutcome::new("blow-up sandwich", ok && !rows.is_empty(), parts.join(", "))
}

/// Coprime counter against the gcd-filtered enumeration.
pub fn coprime_equivalence(instances: usize, seed: u64) -> CheckOutcome {
    let primes = primes_between(5, 61);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let p = primes[rng.gen_range(0..primes.len())];
        let n = 1 + i % 3;
        let ctx = PrimeContext::new(p).unwrap();
        let max_len = match n {
            1 => p as i64,
            2 => 40,
            _ => 9,
        };
        let regions = ProductRegion::bind(random_boxes(&mut rng, p, n, max_len), &ctx).unwrap();
        let coeffs = random_coeffs(&mut rng, p, n, &ctx);
        let brute = coprime_count_bruteforce(&coeffs, &regions, &ctx);
        let fast = coprime_count(&coeffs, &regions, &ctx);
        match (brute, fast) {
            (Ok(b), Ok(f)) if b == f.count => {}
            (b, f) => {
                return CheckOutcome::new(
                    "coprime variant",
                    false,
                    format!("instance {i}: p={p} n={n} brute={b:?} fast={f:?}"),
                )
            }
        }
    }
    CheckOutcome::new(
        "coprime variant",
        true,
        format!("{instances} instances agree"),
    )
}

/// Two sweeps with the same configuration serialize to the same bytes.
pub fn sweep_determinism(primes: &[u64]) -> CheckOutcome {
    CheckOutcome::from_result(
        "sweep determinism",
        (|| {
            let cfg = SweepConfig {
                primes: primes.to_vec(),
                coeffs: CoeffPolicy::Random,
                seed: 7,
                ..SweepConfig::default()
            };
            let mut first = Vec::new();
            write_csv(&run_sweep(&cfg)?, &mut first)?;
            let mut second = Vec::new();
            write_csv(&run_sweep(&cfg)?, &mut second)?;
            let rows = crate::harness::read_csv(first.as_slice())?;
            if first != second {
                return Err(crate::Error::domain("CSV bytes differ between runs"));
            }
            let mut again = Vec::new();
            write_csv(&rows, &mut again)?;
            if again != first {
                return Err(crate::Error::domain(
                    "CSV does not survive a read/write round trip",
                ));
            }
            Ok(format!(
                "{} bytes identical across runs and round trip",
                first.len()
            ))
        })(),
    )
}

/// Modular arithmetic invariants: involution, centred residues, small
/// pairs and the Möbius sum.
pub fn arithmetic_invariants(samples: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let primes = primes_between(3, 20_000);
    for _ in 0..samples {
        let p = primes[rng.gen_range(0..primes.len())];
        let ctx = PrimeContext::new(p).unwrap();
        let a = rng.gen_range(1..p) as i64;
        let inv = ctx.mod_inverse(a).unwrap();
        if ctx.mod_inverse(inv as i64).unwrap() != a as u64 {
            return CheckOutcome::new(
                "arithmetic",
                false,
                format!("involution fails at p={p} a={a}"),
            );
        }
        let (u, v) = (
            rng.gen_range(-10_000i64..10_000),
            rng.gen_range(1..p) as i64,
        );
        let rho = ctx.centered_residue(u, v).unwrap().value();
        if ctx.reduce(rho) != ctx.mul(ctx.reduce(u), ctx.mod_inverse(v).unwrap())
            || rho.unsigned_abs() > (p - 1) / 2
        {
            return CheckOutcome::new(
                "arithmetic",
                false,
                format!("centred residue fails at p={p}"),
            );
        }
        let big_u = rng.gen_range(1..p);
        let (su, sv) = find_small_uv(a, big_u, &ctx).unwrap();
        if su == 0 || su > big_u || sv.unsigned_abs() > p.div_ceil(big_u) {
            return CheckOutcome::new("arithmetic", false, format!("small pair fails at p={p}"));
        }
    }
    let mu = mobius_table(10_000);
    for m in 1..=10_000usize {
        let s: i64 = (1..=m).filter(|d| m % d == 0).map(|d| mu[d] as i64).sum();
        if s != (m == 1) as i64 {
            return CheckOutcome::new("arithmetic", false, format!("Möbius sum fails at m={m}"));
        }
    }
    CheckOutcome::new(
        "arithmetic",
        true,
        format!("{samples} samples, Möbius sums to 10^4"),
    )
}

/// Cross-ratio count through distributions against a quadruple loop.
pub fn cross_ratio_paths(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let primes = primes_between(5, 61);
    for _ in 0..instances {
        let p = primes[rng.gen_range(0..primes.len())];
        let ctx = PrimeContext::new(p).unwrap();
        let top = p as i64 - 1;
        let iv: Vec<Interval> = (0..4)
            .map(|_| random_interval(&mut rng, 0, top, 15))
            .collect();
        let fast = cross_ratio_count(iv[0], iv[1], iv[2], iv[3], &ctx);
        let mut slow = 0u64;
        for x1 in iv[0].iter() {
            for y1 in iv[1].iter().filter(|y| y % p as i64 != 0) {
                for x2 in iv[2].iter() {
                    for y2 in iv[3].iter().filter(|y| y % p as i64 != 0) {
                        slow += ((x1 * y2 - x2 * y1).rem_euclid(p as i64) == 0) as u64;
                    }
                }
            }
        }
        let d = ratio_distribution(iv[0], iv[1], &ctx);
        if fast != slow || d.total() != iv[0].len() * iv[1].count_nonzero_mod(p) {
            return CheckOutcome::new(
                "cross-ratio paths",
                false,
                format!("p={p} {iv:?}: {fast} vs {slow}"),
            );
        }
    }
    CheckOutcome::new(
        "cross-ratio paths",
        true,
        format!("{instances} instances agree"),
    )
}

/// Depth rule: `2^M <= p^{2(n-1)/(3n-2)} < 2^{M+1}` and `2^M < p`.
pub fn depth_rule() -> CheckOutcome {
    let mut ok = choose_M(127, 3) == 3 && choose_M(1009, 4) == 5;
    for p in primes_between(3, 3000) {
        for n in 3..7usize {
            let m = choose_M(p, n);
            let e = 2.0 * (n as f64 - 1.0) / (3.0 * n as f64 - 2.0);
            let t = (p as f64).powf(e);
            ok &= 2f64.powi(m as i32) <= t * (1.0 + 1e-12)
                && t < 2f64.powi(m as i32 + 1)
                && (1u64 << m) < p;
        }
    }
    CheckOutcome::new("depth rule", ok, "primes below 3000, n = 3..6".into())
}

/// The whole invariant suite. `quick` shrinks every instance count and
/// drops the exponent fits, which need the full prime ranges.
pub fn verify_suite(quick: bool) -> Vec<CheckOutcome> {
    let pick = |q: usize, full: usize| if quick { q } else { full };
    let cross_primes: &[u64] = if quick {
        &[1009, 2003]
    } else {
        &[1009, 2003, 4001, 8009]
    };
    let inverse_primes: &[u64] = if quick {
        &[1009, 2003]
    } else {
        &[1009, 2003, 4001, 8009, 10007]
    };
    let double_primes: &[u64] = if quick {
        &[101, 211, 401, 809]
    } else {
        &[101, 211, 401, 809, 1601, 3203, 4999]
    };
    let box_primes: Vec<u64> = if quick {
        vec![101, 211, 307, 401]
    } else {
        crate::harness::prime_range(101, 1009, 10).unwrap()
    };
    let blowup_primes: &[u64] = if quick { &[31] } else { &[31, 37, 41, 53, 61] };
    let cross = cross_ratio_sweep(cross_primes, 0.15);
    let double = double_sum_sweep(double_primes, pick(50, 200), 6);
    let boxes = box_sweep_rows(&box_primes, 0.7, 0.2);
    let mut out = vec![
        arithmetic_invariants(pick(200, 2000), 1),
        oracle_equivalence(pick(40, 200), 1),
        parseval_identity(pick(10, 50), 499, 2),
        complete_sums(pick(5, 20), 3),
        cross_ratio_paths(pick(10, 50), 4),
        cross_ratio_envelope(&cross),
        inverse_concentration_envelope(inverse_primes, pick(20, 100), 0.2, 5),
        double_sum_envelope(&double, 0.15),
        box_envelope(&[101, 211], pick(3, 10), 0.2, 8),
        match &boxes {
            Ok(rows) => box_sweep_envelope(rows),
            Err(e) => CheckOutcome::new("box sweep envelope", false, e.to_string()),
        },
        depth_rule(),
        dyadic_exactness(pick(8, 16) as u32, pick(4, 5) as u32),
        match sandwich_rows(blowup_primes) {
            Ok(rows) => sandwich_outcome(&rows, 0.25),
            Err(e) => CheckOutcome::new("blow-up sandwich", false, e.to_string()),
        },
        coprime_equivalence(pick(15, 50), 10),
        sweep_determinism(&[101, 211]),
    ];
    if !quick {
        out.push(cross_ratio_slope(&cross, 0.75 + 0.15));
        out.push(double_sum_slope(&double, 0.15));
        out.push(match &boxes {
            Ok(rows) => box_sweep_slope(rows, 2.25 + 0.15),
            Err(e) => CheckOutcome::new("box sweep slope", false, e.to_string()),
        });
    }
    out
}
