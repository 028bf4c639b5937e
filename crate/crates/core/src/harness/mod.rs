//! Sweep orchestration, CSV emission and exponent fitting.
//!
//! A sweep counts solutions in cubic boxes `[1, H]^{2n}` with `H = ⌊p^θ⌋`
//! over a list of primes and compares each count with the main term
//! `H^{2n}/p` and the envelope `p^{n/2-1} H^{n/2+1} p^ε`.

pub mod checks;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::counting::{count_fast, CoefficientVector};
use crate::error::{Error, Result};
use crate::fpcore::{is_prime, PrimeContext};
use crate::geometry::{Interval, ProductRegion, Region};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "RATIOCONG_WORKERS";

/// CSV header of sweep output.
pub const CSV_HEADER: [&str; 12] = [
    "p",
    "n",
    "region",
    "a0",
    "coeffs",
    "count",
    "main_term",
    "abs_error",
    "envelope",
    "ratio",
    "flags",
    "runtime_ms",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoeffPolicy {
    /// `(0; 1, ..., 1)`.
    Unit,
    /// `(a_0, a_1, ..., a_n)`.
    Fixed(Vec<i64>),
    /// `a_0` uniform in `F_p`, `a_j` uniform in `F_p^*`, drawn per prime.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub primes: Vec<u64>,
    pub n: usize,
    pub theta: f64,
    pub coeffs: CoeffPolicy,
    pub eps: f64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Record wall-clock time per row; off by default so output is reproducible.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            primes: Vec::new(),
            n: 3,
            theta: 0.7,
            coeffs: CoeffPolicy::Unit,
            eps: 0.2,
            seed: 1,
            workers: std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()),
            out: None,
            timing: false,
        }
    }
}

/// Primes nearest above the `count` geometric points from `lo` to `hi`.
pub fn prime_range(lo: u64, hi: u64, count: usize) -> Result<Vec<u64>> {
    if lo < 3 || hi < lo || count == 0 {
        return Err(Error::domain(format!(
            "bad prime range lo={lo} hi={hi} count={count}"
        )));
    }
    let mut out: Vec<u64> = Vec::with_capacity(count);
    for i in 0..count {
        let t = if count == 1 {
            0.0
        } else {
            i as f64 / (count - 1) as f64
        };
        let target = (lo as f64 * (hi as f64 / lo as f64).powf(t)).round() as u64;
        let mut q = target.max(3);
        while !is_prime(q) {
            q += 1;
        }
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    Ok(out)
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::parse(format!("bad value `{s}` for `{key}`")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::parse(format!("bad value `{v}` for `{key}`")))
}

impl SweepConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "primes" => self.primes = parse_list(key, value)?,
            "prime_range" => match parse_list::<u64>(key, value)?.as_slice() {
                &[lo, hi, count] => self.primes = prime_range(lo, hi, count as usize)?,
                _ => return Err(Error::parse("prime_range expects lo,hi,count")),
            },
            "n" => self.n = parse_one(key, value)?,
            "theta" => self.theta = parse_one(key, value)?,
            "eps" => self.eps = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "workers" => self.workers = Some(parse_one(key, value)?),
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "timing" => self.timing = parse_one(key, value)?,
            "coeffs" => {
                self.coeffs = match value.trim() {
                    "random" => CoeffPolicy::Random,
                    "unit" => CoeffPolicy::Unit,
                    _ => CoeffPolicy::Fixed(parse_list(key, value)?),
                }
            }
            other => return Err(Error::parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}: expected key=value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.parse_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::domain(format!(
                "theta={} must lie in (0,1)",
                self.theta
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::domain("eps must be nonnegative"));
        }
        if self.n == 0 {
            return Err(Error::domain("n must be positive"));
        }
        if let Some(&q) = self.primes.iter().find(|&&q| q < 3 || !is_prime(q)) {
            return Err(Error::domain(format!("{q} is not an odd prime")));
        }
        if let CoeffPolicy::Fixed(c) = &self.coeffs {
            if c.len() != self.n + 1 {
                return Err(Error::domain(format!(
                    "coeffs has {} entries, n={} needs {}",
                    c.len(),
                    self.n,
                    self.n + 1
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub p: u64,
    pub n: usize,
    pub region: String,
    pub a0: u64,
    /// `a_1, ..., a_n`.
    pub coeffs: Vec<u64>,
    /// Missing when the instance failed; the reason is in `flags`.
    pub count: Option<u64>,
    pub main_term: f64,
    pub abs_error: Option<f64>,
    pub envelope: f64,
    pub ratio: Option<f64>,
    pub flags: Vec<String>,
    pub runtime_ms: Option<f64>,
}

/// `p^{n/2 - 1} H^{n/2 + 1} p^ε`.
pub fn cube_box_envelope(p: u64, n: usize, h: u64, eps: f64) -> f64 {
    let (pf, nf) = (p as f64, n as f64);
    pf.powf(nf / 2.0 - 1.0 + eps) * (h as f64).powf(nf / 2.0 + 1.0)
}

/// Whether `H < p^{n/(3n-2)}`, below which the envelope exceeds the main term.
pub fn below_nontrivial_range(p: u64, n: usize, h: u64) -> bool {
    (h as f64) < (p as f64).powf(n as f64 / (3 * n - 2) as f64)
}

fn sweep_row(cfg: &SweepConfig, p: u64) -> Result<SweepRow> {
    let ctx = PrimeContext::new(p)?;
    let n = cfg.n;
    let h = ((p as f64).powf(cfg.theta).floor() as u64).clamp(1, p - 1);
    let mut flags = Vec::new();
    let raw: Vec<i64> = match &cfg.coeffs {
        CoeffPolicy::Unit => std::iter::once(0)
            .chain(std::iter::repeat_n(1, n))
            .collect(),
        CoeffPolicy::Fixed(c) => c.clone(),
        CoeffPolicy::Random => {
            let seed = cfg.seed ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            flags.push(format!("coeff_seed={seed}"));
            std::iter::once(rng.gen_range(0..p) as i64)
                .chain((0..n).map(|_| rng.gen_range(1..p) as i64))
                .collect()
        }
    };
    let coeffs = CoefficientVector::new(raw[0], &raw[1..], &ctx)?;
    if below_nontrivial_range(p, n, h) {
        flags.push("below_nontrivial_range=true".into());
    }
    let side = Interval::closed(1, h as i64);
    let regions = ProductRegion::repeated(Region::boxed(side, side), n, &ctx)?;
    let envelope = cube_box_envelope(p, n, h, cfg.eps);
    let main_term = (h as f64).powi(2 * n as i32) / p as f64;
    let start = Instant::now();
    let result = count_fast(&coeffs, &regions, &ctx);
    let runtime_ms = cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    let (count, abs_error, ratio) = match result {
        Ok(r) => {
            let err = (r.count as f64 - main_term).abs();
            (Some(r.count), Some(err), Some(err / envelope))
        }
        Err(e) => {
            flags.push(format!("error={}", error_tag(&e)));
            (None, None, None)
        }
    };
    Ok(SweepRow {
        p,
        n,
        region: format!("box:0,{h},0,{h}"),
        a0: coeffs.a0(),
        coeffs: coeffs.a().to_vec(),
        count,
        main_term,
        abs_error,
        envelope,
        ratio,
        flags,
        runtime_ms,
    })
}

fn error_tag(e: &Error) -> &'static str {
    match e {
        Error::Precision { .. } => "precision",
        Error::Size { .. } => "size",
        _ => "domain",
    }
}

/// Runs every grid point; rows come back in grid order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let run = || -> Result<Vec<SweepRow>> {
        let rows = crate::accum::par_map(0..cfg.primes.len() as u64, |i| {
            sweep_row(cfg, cfg.primes[i as usize])
        });
        rows.into_iter().collect()
    };
    match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::domain(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let coeffs: Vec<String> = r.coeffs.iter().map(u64::to_string).collect();
        w.write_record([
            r.p.to_string(),
            r.n.to_string(),
            r.region.clone(),
            r.a0.to_string(),
            coeffs.join(";"),
            fmt_opt(r.count),
            fmt_real(r.main_term),
            fmt_opt(r.abs_error.map(fmt_real)),
            fmt_real(r.envelope),
            fmt_opt(r.ratio.map(fmt_real)),
            r.flags.join("|"),
            fmt_opt(r.runtime_ms.map(fmt_real)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::parse(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let opt = |i: usize| -> Option<&str> { Some(f(i)).filter(|s| !s.is_empty()) };
        let num = |i: usize| -> Result<f64> { parse_one(CSV_HEADER[i], f(i)) };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            opt(i).map(|s| parse_one(CSV_HEADER[i], s)).transpose()
        };
        rows.push(SweepRow {
            p: parse_one("p", f(0))?,
            n: parse_one("n", f(1))?,
            region: f(2).to_owned(),
            a0: parse_one("a0", f(3))?,
            coeffs: f(4)
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| parse_one("coeffs", s))
                .collect::<Result<_>>()?,
            count: opt(5).map(|s| parse_one("count", s)).transpose()?,
            main_term: num(6)?,
            abs_error: opt_num(7)?,
            envelope: num(8)?,
            ratio: opt_num(9)?,
            flags: f(10)
                .split('|')
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect(),
            runtime_ms: opt_num(11)?,
        });
    }
    Ok(rows)
}

/// Least-squares line through `(ln x, ln y)`; `None` with fewer than two
/// distinct abscissae.
pub fn fit_loglog(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentFit {
    /// Slope of `ln abs_error` against `ln p`; `None` when fewer than two
    /// rows have a positive error.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub max_ratio: f64,
}

pub fn fit_exponent(rows: &[SweepRow]) -> ExponentFit {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.abs_error.map(|e| (r.p as f64, e)))
        .collect();
    let fit = fit_loglog(&pts);
    ExponentFit {
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        max_ratio: rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max),
    }
}
