use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ratiocong::counting::{
    coprime_count, count_bruteforce, count_fast, cross_ratio_count, cross_ratio_main_term,
    inverse_concentration_by_divisors, inverse_concentration_count, CoefficientVector,
};
use ratiocong::expsums::{kloosterman_interval, ratio_double_sum_region, second_moment_over_a};
use ratiocong::geometry::{Interval, ProductRegion, Region};
use ratiocong::harness::checks::verify_suite;
use ratiocong::harness::{run_sweep, write_csv, SweepConfig, WORKERS_ENV};
use ratiocong::wellshaped::{
    choose_M, count_in_blowup, dyadic_layers, exact_blowup_count, parse_set, Shift, SHIFT_SEED,
};
use ratiocong::{Error, PrimeContext};

#[derive(Parser)]
#[command(
    name = "ratiocong",
    version,
    about = "Counts solutions of Σ a_j x_j/y_j ≡ a_0 (mod p)"
)]
struct Cli {
    /// Worker threads (default: $RATIOCONG_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct PrimeArg {
    #[arg(long)]
    p: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Count solutions in a product of regions.
    Count {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long)]
        n: usize,
        /// a0,a1,...,an
        #[arg(long, allow_hyphen_values = true)]
        coeffs: String,
        /// box:A,K,B,L | disk:b,c,r | convex:path; give one per factor or one for all.
        #[arg(long, required = true)]
        region: Vec<String>,
        /// Restrict to gcd(x_j, y_j) = 1 (box factors only).
        #[arg(long)]
        coprime: bool,
        /// Also run the enumeration oracle.
        #[arg(long)]
        check: bool,
    },
    /// Evaluate Σ e_p(a x/y) over one region.
    Sum {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long, allow_hyphen_values = true)]
        a: i64,
        #[arg(long)]
        region: String,
    },
    /// Σ_a |S(a)|^2 over a box.
    Moment {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long)]
        region: String,
    },
    /// Count x1 y2 ≡ x2 y1 over four intervals, each given as lo,hi.
    Lemma1 {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long)]
        i1: String,
        #[arg(long)]
        j1: String,
        #[arg(long)]
        i2: String,
        #[arg(long)]
        j2: String,
    },
    /// Count (B + y) z ≡ 1 with 1 <= y <= L, 1 <= z <= M.
    Lemma2 {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long)]
        b: i64,
        #[arg(long)]
        l: u64,
        #[arg(long)]
        m: u64,
    },
    /// Σ_{u in J} e_p(λ/u) for J given as lo,hi.
    Kloosterman {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long, allow_hyphen_values = true)]
        lambda: i64,
        #[arg(long)]
        interval: String,
    },
    /// Dump the dyadic layers of a set, one cube per line.
    Decompose {
        /// ball:r | ellipsoid:r1,... | cube | halfspace-cap:w1,...,t
        #[arg(long)]
        set: String,
        #[arg(long)]
        n: usize,
        /// Depth; defaults to the depth rule for --p.
        #[arg(long)]
        m: Option<u32>,
        /// Prime used for the depth rule and the shift check.
        #[arg(long)]
        p: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count solutions in the blow-up pΩ through dyadic layers.
    Blowup {
        #[command(flatten)]
        prime: PrimeArg,
        #[arg(long, allow_hyphen_values = true)]
        coeffs: String,
        #[arg(long)]
        set: String,
        /// Also run the exact O(p^{2n-1}) count.
        #[arg(long)]
        exact: bool,
    },
    /// Cubic-box sweep over primes, written as CSV.
    Sweep {
        /// key=value file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        primes: Option<Vec<u64>>,
        /// lo,hi,count
        #[arg(long)]
        prime_range: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// a0,a1,...,an or `random`
        #[arg(long, allow_hyphen_values = true)]
        coeffs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fill the runtime_ms column.
        #[arg(long)]
        timing: bool,
    },
    /// Run the invariant suite.
    Verify {
        #[arg(long)]
        quick: bool,
    },
}

fn interval_arg(s: &str) -> ratiocong::Result<Interval> {
    let parts: Vec<i64> = s
        .split(',')
        .map(|t| t.trim().parse::<i64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Parse(format!("bad interval `{s}`, expected lo,hi")))?;
    match parts.as_slice() {
        [lo, hi] => Ok(Interval::closed(*lo, *hi)),
        _ => Err(Error::Parse(format!("bad interval `{s}`, expected lo,hi"))),
    }
}

fn regions_arg(specs: &[String], n: usize, ctx: &PrimeContext) -> ratiocong::Result<ProductRegion> {
    let parsed: Vec<Region> = specs.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let factors = match parsed.len() {
        1 => vec![parsed[0].clone(); n],
        k if k == n => parsed,
        k => return Err(Error::Parse(format!("{k} regions given for n = {n}"))),
    };
    ProductRegion::bind(factors, ctx)
}

fn sweep_config(
    config: Option<PathBuf>,
    primes: Option<Vec<u64>>,
    prime_range: Option<String>,
    settings: &[(&str, Option<String>)],
    out: Option<PathBuf>,
    timing: bool,
) -> ratiocong::Result<SweepConfig> {
    let mut cfg = match config {
        Some(path) => SweepConfig::from_file(path)?,
        None => SweepConfig::default(),
    };
    if let Some(range) = prime_range {
        cfg.set("prime_range", &range)?;
    }
    if let Some(p) = primes {
        cfg.primes = p;
    }
    for (key, value) in settings {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if out.is_some() {
        cfg.out = out;
    }
    cfg.timing |= timing;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum Failure {
    Usage(String),
    Compute(String),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Parse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Compute(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match cli.cmd {
        Command::Count {
            prime,
            n,
            coeffs,
            region,
            coprime,
            check,
        } => {
            let ctx = PrimeContext::new(prime.p)?;
            let co = CoefficientVector::parse(&coeffs, &ctx)?;
            let regions = regions_arg(&region, n, &ctx)?;
            let r = if coprime {
                coprime_count(&co, &regions, &ctx)?
            } else {
                count_fast(&co, &regions, &ctx)?
            };
            writeln!(out, "{}", r.count)?;
            log::info!(
                "main_term={} residual={:e} skipped_rows={}",
                r.main_term,
                r.residual,
                r.skipped_rows
            );
            if check && !coprime {
                let brute = count_bruteforce(&co, &regions, &ctx)?;
                writeln!(out, "bruteforce {brute}")?;
                if brute != r.count {
                    return Err(Failure::Verify);
                }
            }
        }
        Command::Sum { prime, a, region } => {
            let ctx = PrimeContext::new(prime.p)?;
            let region: Region = region.parse()?;
            region.check_bound(ctx.p())?;
            let s = ratio_double_sum_region(a, &region, &ctx)?;
            writeln!(
                out,
                "{:.16e} {:.16e}\nterms {} skipped_rows {}",
                s.value.re, s.value.im, s.terms, s.skipped_rows
            )?;
        }
        Command::Moment { prime, region } => {
            let ctx = PrimeContext::new(prime.p)?;
            match region.parse::<Region>()? {
                Region::Box(b) => {
                    b.x.check_bound(ctx.p())?;
                    b.y.check_bound(ctx.p())?;
                    writeln!(out, "{:.16e}", second_moment_over_a(b.x, b.y, &ctx))?;
                }
                _ => return Err(Failure::Usage("moment needs a box region".into())),
            }
        }
        Command::Lemma1 {
            prime,
            i1,
            j1,
            i2,
            j2,
        } => {
            let ctx = PrimeContext::new(prime.p)?;
            let iv = [&i1, &j1, &i2, &j2]
                .map(|s| interval_arg(s))
                .into_iter()
                .collect::<ratiocong::Result<Vec<_>>>()?;
            for i in &iv {
                i.check_bound(ctx.p())?;
            }
            let count = cross_ratio_count(iv[0], iv[1], iv[2], iv[3], &ctx);
            let main = cross_ratio_main_term(iv[0], iv[1], iv[2], iv[3], &ctx);
            writeln!(
                out,
                "{count}\nmain_term {main:.16e}\ndeviation {:.16e}",
                count as f64 - main
            )?;
        }
        Command::Lemma2 { prime, b, l, m } => {
            let ctx = PrimeContext::new(prime.p)?;
            let count = inverse_concentration_count(b, l, m, &ctx)?;
            let route = inverse_concentration_by_divisors(b, l, m, &ctx)?;
            writeln!(
                out,
                "{count}\ndivisor_route {} u {} v {} k_values {}",
                route.count, route.u, route.v, route.k_values
            )?;
            if route.count != count {
                return Err(Failure::Verify);
            }
        }
        Command::Kloosterman {
            prime,
            lambda,
            interval,
        } => {
            let ctx = PrimeContext::new(prime.p)?;
            let j = interval_arg(&interval)?;
            j.check_bound(ctx.p())?;
            let s = kloosterman_interval(lambda, j, &ctx);
            writeln!(
                out,
                "{:.16e} {:.16e}\nterms {} skipped_rows {}",
                s.value.re, s.value.im, s.terms, s.skipped_rows
            )?;
        }
        Command::Decompose {
            set,
            n,
            m,
            p,
            out: path,
        } => {
            let omega = parse_set(&set, 2 * n)?;
            let depth = match (m, p) {
                (Some(m), _) => m,
                (None, Some(p)) => choose_M(p, n),
                (None, None) => return Err(Failure::Usage("give --m or --p".into())),
            };
            let mut shift = Shift::standard(2 * n);
            if let Some(p) = p {
                PrimeContext::new(p)?;
                shift.make_generic(p, depth, SHIFT_SEED);
            }
            let dec = dyadic_layers(omega.as_ref(), depth, &shift)?;
            let mut w = output(&path)?;
            dec.dump(&mut w)?;
            w.flush()?;
            log::info!(
                "M={} cubes={} covered_measure={} C'={}",
                dec.m,
                dec.cube_count(),
                dec.covered_measure,
                dec.layer_constant
            );
        }
        Command::Blowup {
            prime,
            coeffs,
            set,
            exact,
        } => {
            let ctx = PrimeContext::new(prime.p)?;
            let co = CoefficientVector::parse(&coeffs, &ctx)?;
            let omega = parse_set(&set, 2 * co.n())?;
            let b = count_in_blowup(&co, omega.as_ref(), &ctx)?;
            writeln!(
                out,
                "layer_sum {}\nmain_term {:.16e}\nuncovered_bound {:.16e}\nM {}\ncubes {}\nlayer_sums {:?}",
                b.layer_sum, b.main_term, b.uncovered_bound, b.m, b.cubes, b.layer_sums
            )?;
            if exact {
                writeln!(
                    out,
                    "exact {}",
                    exact_blowup_count(&co, omega.as_ref(), &ctx)?
                )?;
            }
        }
        Command::Sweep {
            config,
            primes,
            prime_range,
            n,
            theta,
            eps,
            seed,
            coeffs,
            out: path,
            timing,
        } => {
            let settings = [
                ("n", n.map(|v| v.to_string())),
                ("theta", theta.map(|v| v.to_string())),
                ("eps", eps.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
                ("coeffs", coeffs),
                ("workers", cli.workers.map(|v| v.to_string())),
            ];
            let cfg = sweep_config(config, primes, prime_range, &settings, path, timing)?;
            let rows = run_sweep(&cfg)?;
            let mut w = output(&cfg.out)?;
            write_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Verify { quick } => {
            let results = verify_suite(quick);
            let mut failed = false;
            for r in &results {
                writeln!(
                    out,
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                )?;
                failed |= !r.passed;
            }
            if failed {
                return Err(Failure::Verify);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let workers = cli
        .workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()));
    if let Some(w) = workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(1);
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verify) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}
