//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use contobs::histogram::{dyadic_decomposition, BinaryTreeCounter, BinaryTreeHistogram, ContinualHistogram, CumulativeHistogram};
use contobs::kquery::KDoubling;
use contobs::maxsum::{alpha_mu, DoublingSegmenter};
use contobs::noise::{gaussian_tail_bound, laplace_tail, NoiseSource, PrivacyParams, RandomSource};
use contobs::queries::{quantile, Query, QuerySet};
use contobs::streams::{exact_prefix, generate, GeneratorSpec, Row, Stream};
use contobs_harness::config::{AuditConfig, AuditTarget, ExperimentConfig, MechanismKind, NeighborMode, StreamSource};
use contobs_harness::experiment::median;
use contobs_harness::{run_audit, run_check, run_experiment, target_factory};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Noise-off oracle equivalence.

/// A single counter seen as a one-column histogram.
struct Counter {
    inner: BinaryTreeCounter,
    value: [f64; 1],
}

impl ContinualHistogram for Counter {
    fn dim(&self) -> usize {
        1
    }
    fn capacity(&self) -> usize {
        usize::MAX
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn insert(&mut self, x: &[u64], noise: &mut NoiseSource) -> contobs::Result<()> {
        self.inner.insert(x[0], noise)?;
        self.value[0] = self.inner.current();
        Ok(())
    }
    fn current(&self) -> &[f64] {
        &self.value
    }
    fn err_bound(&self, _n: usize, _beta: f64) -> f64 {
        0.0
    }
}

fn histograms(d: usize, n: usize) -> Vec<(&'static str, Box<dyn ContinualHistogram>)> {
    let pure = PrivacyParams::pure(1.0, 1.0 / 3.0).unwrap();
    let approx = PrivacyParams::new(1.0, 1e-6, 1.0 / 3.0).unwrap();
    let mut out: Vec<(&'static str, Box<dyn ContinualHistogram>)> = vec![
        ("tree-laplace", Box::new(BinaryTreeHistogram::new(d, n, pure).unwrap())),
        ("tree-gaussian", Box::new(BinaryTreeHistogram::new(d, n, approx).unwrap())),
        ("cumulative-laplace", Box::new(CumulativeHistogram::laplace(d, n, 1.0).unwrap())),
        ("cumulative-gaussian", Box::new(CumulativeHistogram::gaussian(d, n, 1.0, 1e-6).unwrap())),
    ];
    if d == 1 {
        let inner = BinaryTreeCounter::new(n, 1.0, 0.0).unwrap();
        out.push(("counter", Box::new(Counter { inner, value: [0.0] })));
    }
    out
}

fn oracle_mismatch(stream: &Stream, use_exact_prefix: bool) -> Option<String> {
    let d = stream.dim();
    let truth: Vec<Vec<u64>> = if use_exact_prefix {
        (1..=stream.len()).map(|t| exact_prefix(stream, t).unwrap().sums).collect()
    } else {
        stream.prefixes().collect()
    };
    for (name, mut h) in histograms(d, stream.len()) {
        let mut noise = NoiseSource::disabled();
        for (t, row) in stream.rows().iter().enumerate() {
            let x: Vec<u64> = row.bits().iter().map(|&b| u64::from(b)).collect();
            h.insert(&x, &mut noise).unwrap();
            let want: Vec<f64> = truth[t].iter().map(|&v| v as f64).collect();
            if h.current() != want.as_slice() {
                return Some(format!("{name} d={d} T={} differs at t={}", stream.len(), t + 1));
            }
        }
    }
    None
}

fn criterion_oracle() -> Outcome {
    let mut exhaustive = 0usize;
    for d in 1..=3usize {
        for t in 1..=16 / d {
            for code in 0u64..(1 << (d * t)) {
                let rows: Vec<Row> = (0..t)
                    .map(|r| Row::new((0..d).map(|c| (code >> (r * d + c) & 1) as u8).collect()).unwrap())
                    .collect();
                let stream = Stream::from_rows(d, t, rows).map_err(err)?;
                if let Some(m) = oracle_mismatch(&stream, false) {
                    return Err(m);
                }
                exhaustive += 1;
            }
        }
    }
    let mut rng = RandomSource::new(2024);
    for _ in 0..100 {
        let d = 1 + rng.below(6);
        let horizon = 17 + rng.below(496);
        let p = rng.uniform_open();
        let spec = GeneratorSpec::Bernoulli { p: vec![p], cap: None };
        let stream = generate(&spec, d, horizon, &mut rng).map_err(err)?;
        if let Some(m) = oracle_mismatch(&stream, true) {
            return Err(m);
        }
    }
    Ok(format!("{exhaustive} exhaustive streams (d*T <= 16) and 100 random streams match exactly"))
}

// 2. Dyadic decomposition.

fn criterion_dyadic() -> Outcome {
    let mut checked = 0usize;
    for n in 2..=1024usize {
        let max_parts = (n as f64).log2().ceil() as usize;
        for t in 1..=n {
            let parts = dyadic_decomposition(t, n).map_err(err)?;
            ensure(parts.len() <= max_parts, format!("n={n} t={t}: {} parts", parts.len()))?;
            let mut next = 1;
            for p in &parts {
                let len = p.end() - p.start() + 1;
                ensure(p.start() == next, format!("n={n} t={t}: gap or overlap at {}", p.start()))?;
                ensure(len.is_power_of_two() && (p.start() - 1) % len == 0, format!("n={n} t={t}: not dyadic"))?;
                next = p.end() + 1;
            }
            ensure(next == t + 1, format!("n={n} t={t}: covers up to {}", next - 1))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} decompositions disjoint, covering and within ceil(log2 n)"))
}

// 3. Quantile sensitivity.

fn grid(d: usize, max: i64) -> Vec<Vec<f64>> {
    let base = (max + 1) as usize;
    (0..base.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let v = (code % base) as f64;
                    code /= base;
                    v
                })
                .collect()
        })
        .collect()
}

fn criterion_quantile() -> Outcome {
    let mut pairs = 0usize;
    for d in 1..=4usize {
        let vs = grid(d, 5);
        let qs: Vec<f64> = (1..=d).map(|m| m as f64 / d as f64).collect();
        let values: Vec<Vec<f64>> = vs.iter().map(|v| qs.iter().map(|&q| quantile(q, v).unwrap()).collect()).collect();
        for alpha in [1.0, 2.0] {
            for (i, s) in vs.iter().enumerate() {
                for (j, c) in vs.iter().enumerate() {
                    if s.iter().zip(c).any(|(a, b)| (a - b).abs() > alpha) {
                        continue;
                    }
                    pairs += 1;
                    for (m, q) in qs.iter().enumerate() {
                        let gap = (values[i][m] - values[j][m]).abs();
                        ensure(gap <= alpha, format!("d={d} q={q} s={s:?} c={c:?}: gap {gap} > {alpha}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("{pairs} vector pairs, zero violations"))
}

// 4. Tail bounds.

fn criterion_tails() -> Outcome {
    const N: usize = 1_000_000;
    let se = |p: f64| (p * (1.0 - p) / N as f64).sqrt();
    let mut noise = NoiseSource::live(4);
    let b = 1.7;
    let lap: Vec<f64> = (0..N).map(|_| noise.laplace(b).unwrap()).collect();
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let p = laplace_tail(t);
        let freq = lap.iter().filter(|x| x.abs() >= t * b).count() as f64 / N as f64;
        let z = (freq - p).abs() / se(p);
        worst = worst.max(z);
        ensure(z <= 3.0, format!("laplace t={t}: {freq} vs {p} ({z:.2} SE)"))?;
    }
    let sigma = 2.3;
    let gauss: Vec<f64> = (0..N).map(|_| noise.gaussian(sigma).unwrap()).collect();
    for t in [0.5, 1.0, 2.0, 3.0] {
        let bound = gaussian_tail_bound(t * sigma, sigma);
        let freq = gauss.iter().filter(|&&x| x >= t * sigma).count() as f64 / N as f64;
        ensure(
            freq <= bound + 3.0 * se(bound),
            format!("gaussian t={t} sigma: {freq} above bound {bound}"),
        )?;
    }
    Ok(format!("laplace tails within {worst:.2} SE of exp(-t); gaussian tails below the bound"))
}

// 5. Bounded mechanism accuracy.

fn criterion_bounded_accuracy() -> Outcome {
    let mut cfg = ExperimentConfig::new(MechanismKind::Bounded, 2, 1024);
    cfg.stream = StreamSource::Generator("bernoulli:p=0.1".into());
    cfg.trials = 300;
    cfg.seed = 5;
    let r = run_experiment(&cfg).map_err(err)?;
    // Each trial has its own c_max and bound; the (1 - beta)-quantile of
    // error minus bound must be non-positive.
    let excess: Vec<f64> = r.trials.iter().map(|t| t.max_error - t.bound.unwrap()).collect();
    let q = contobs::queries::empirical_alpha(&excess, cfg.beta);
    let bounds: Vec<f64> = r.trials.iter().map(|t| t.bound.unwrap()).collect();
    let detail = format!(
        "2/3-quantile error {:.1}, median bound {:.1}, quantile of excess {q:.1}",
        r.summary.empirical_alpha,
        median(&bounds)
    );
    ensure(q <= 0.0, detail.clone())?;
    Ok(detail)
}

// 6. Doubling segment bound.

fn criterion_segments() -> Outcome {
    let mut details = Vec::new();
    for d in [1usize, 4] {
        let mut cfg = ExperimentConfig::new(MechanismKind::Doubling, d, 1024);
        cfg.trials = 1000;
        cfg.seed = 6;
        let r = run_check(&cfg).map_err(err)?;
        let c = r.summary.claims.iter().find(|c| c.claim == "segments").ok_or("no segment claim")?;
        let allowed = cfg.beta + 3.0 * (cfg.beta / 1000.0).sqrt();
        let line = format!("d={d}: {}/{} over the limit", c.violations, c.trials);
        ensure(c.fraction <= allowed, line.clone())?;
        details.push(line);
    }
    Ok(details.join("; "))
}

// 7. Partition caps.

fn criterion_caps() -> Outcome {
    let mut runs = 0;
    let streams = ["bernoulli:p=0.5", "bernoulli:p=1", "bursty:block=8,on=0.9,off=0.05", "hot:i=0"];
    for kind in MechanismKind::ALL {
        for (d, queries) in [(1, "max"), (3, "max"), (3, "max,min,quantile:0.5")] {
            if kind.max_only() && queries != "max" {
                continue;
            }
            for stream in streams {
                for horizon in [64, 256] {
                    // Tiny thresholds push bounded partitioners into their caps.
                    for (c_max, k) in [(None, None), (Some(2), Some(0.01)), (Some(5), Some(0.5))] {
                        if !kind.uses_c_max() && c_max.is_some() {
                            continue;
                        }
                        let mut cfg = ExperimentConfig::new(kind, d, horizon);
                        cfg.queries = queries.into();
                        cfg.stream = StreamSource::Generator(stream.into());
                        cfg.delta = if kind.needs_delta() { 1e-6 } else { 0.0 };
                        cfg.trials = 4;
                        cfg.seed = 7;
                        cfg.c_max = c_max;
                        cfg.k_override = k;
                        let r = run_experiment(&cfg).map_err(err)?;
                        ensure(
                            r.summary.cap_violations == 0,
                            format!("{kind} d={d} {queries} {stream} T={horizon} c_max={c_max:?}"),
                        )?;
                        runs += r.trials.len();
                    }
                }
            }
        }
    }
    Ok(format!("{runs} trials across the matrix, no partition exceeded its cap"))
}

// 8. k = 1 reduction.

fn criterion_k1() -> Outcome {
    let params = PrivacyParams::pure(1.0, 1.0 / 3.0).unwrap();
    let mut rng = RandomSource::new(8);
    let mut total_closes = 0;
    for s in 0..50u64 {
        let d = 1 + rng.below(4);
        let horizon = 64 + rng.below(960);
        let p = 0.05 + 0.9 * rng.uniform_open();
        let stream = generate(&GeneratorSpec::Bernoulli { p: vec![p], cap: None }, d, horizon, &mut rng).map_err(err)?;

        let mut live = NoiseSource::live(1000 + s).with_log();
        let mut reference = DoublingSegmenter::new(Query::MaxSum, d, horizon, 1.0, 1.0 / 3.0).map_err(err)?;
        for row in stream.rows() {
            reference.step(row, &mut live).map_err(err)?;
        }
        let recorded = live.logged_values();

        let mut a = DoublingSegmenter::new(Query::MaxSum, d, horizon, 1.0, 1.0 / 3.0).map_err(err)?;
        let qs = QuerySet::single(d, Query::MaxSum).map_err(err)?;
        let mut b = KDoubling::for_queries(qs, horizon, params, contobs::Variant::Pure).map_err(err)?;
        let (mut na, mut nb) = (NoiseSource::recorded(recorded.clone()), NoiseSource::recorded(recorded));
        for row in stream.rows() {
            a.step(row, &mut na).map_err(err)?;
            b.step(row, &mut nb).map_err(err)?;
        }
        let times = |r: Vec<contobs::SegmentReport>| r.into_iter().map(|s| s.t).collect::<Vec<_>>();
        let (ta, tb) = (times(a.segments()), times(b.segments()));
        ensure(ta == tb, format!("stream {s}: close times {ta:?} vs {tb:?}"))?;
        ensure(ta == times(reference.segments()), format!("stream {s}: replay differs from live run"))?;
        total_closes += ta.len();
    }
    Ok(format!("50 streams, {total_closes} closes, identical close times"))
}

// 9. Two-level scaling.

fn criterion_two_level() -> Outcome {
    let mut medians = Vec::new();
    let mut ses = Vec::new();
    for horizon in [1usize << 10, 1 << 14] {
        let mut cfg = ExperimentConfig::new(MechanismKind::TwoLevel, 2, horizon);
        cfg.stream = StreamSource::Generator("bernoulli:p=0.1,cap=32".into());
        cfg.trials = 100;
        cfg.seed = 9;
        let r = run_experiment(&cfg).map_err(err)?;
        let errors: Vec<f64> = r.trials.iter().map(|t| t.max_error).collect();
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        medians.push(median(&errors));
        // Asymptotic standard error of a sample median under normality.
        ses.push(1.2533 * sd / n.sqrt());
    }
    let growth = medians[1] - medians[0];
    let allowed = 2.0 * (alpha_mu(1 << 14, 1.0, 1.0 / 3.0) - alpha_mu(1 << 10, 1.0, 1.0 / 3.0));
    let slack = 3.0 * (ses[0].powi(2) + ses[1].powi(2)).sqrt();
    let detail = format!(
        "median error {:.1} -> {:.1}, growth {growth:.1} vs allowed {allowed:.1} + slack {slack:.1}",
        medians[0], medians[1]
    );
    ensure(growth <= allowed + slack, detail.clone())?;
    Ok(detail)
}

// 10. Privacy audit.

fn audit_cfg(target: AuditTarget, epsilon: f64, bin_width: f64, k: f64) -> AuditConfig {
    AuditConfig {
        target,
        x: vec!["1".into(); 4],
        neighbor: NeighborMode::Event { t: 1, row: vec![0] },
        epsilon,
        delta: 0.0,
        bin_width,
        trials: 1_000_000,
        seed: 20,
        min_count: 1000,
        k,
    }
}

fn criterion_audit() -> Outcome {
    let mut details = Vec::new();
    for eps in [0.5, 1.0, 2.0] {
        let cfg = audit_cfg(AuditTarget::LaplaceCount, eps, 0.5, 1.0);
        let r = run_audit(&cfg, &*target_factory(&cfg)).map_err(err)?;
        let line = format!("laplace eps={eps}: max ratio {:.3} vs e^eps {:.3}", r.summary.max_ratio, eps.exp());
        ensure(r.summary.pass, format!("{line}, {} bins failed", r.summary.bins_failed))?;
        details.push(line);
    }
    let honest = audit_cfg(AuditTarget::Bounded, 2.0, 1.0, 0.5);
    let r = run_audit(&honest, &*target_factory(&honest)).map_err(err)?;
    ensure(r.summary.pass, format!("honest bounded mechanism failed, max ratio {}", r.summary.max_ratio))?;
    details.push(format!("bounded: max ratio {:.3}", r.summary.max_ratio));
    let broken = audit_cfg(AuditTarget::BoundedNoSvtNoise, 2.0, 1.0, 0.5);
    let r = run_audit(&broken, &*target_factory(&broken)).map_err(err)?;
    ensure(!r.summary.pass, "mutant without threshold noise passed the audit")?;
    details.push(format!("mutant flagged, {} bins failed", r.summary.bins_failed));
    Ok(details.join("; "))
}

// 11. Determinism of every subcommand.

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_contobs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(err)?;
    // The check subcommand exits with 2 when a claim is violated, which is
    // still a complete run.
    ensure(matches!(status.code(), Some(0) | Some(2)), format!("{args:?} exited with {status}"))
}

fn compare_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(err)?
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "timing.json")
        .collect();
    names.sort();
    ensure(names.iter().any(|n| n.to_string_lossy().ends_with(".csv")), "no CSV written")?;
    for n in &names {
        let (x, y) = (std::fs::read(a.join(n)).map_err(err)?, std::fs::read(b.join(n)).map_err(err)?);
        ensure(x == y, format!("{} differs between runs", n.to_string_lossy()))?;
    }
    Ok(names.len())
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let commands: [(&str, Vec<&str>); 4] = [
        (
            "run",
            vec!["run", "--mechanism", "ktwo-level", "--queries", "max,quantile:0.5", "--d", "3", "--T", "512", "--trials", "6", "--seed", "11", "--series", "2"],
        ),
        ("run-bounded", vec!["run", "--mechanism", "bounded", "--T", "256", "--trials", "5", "--seed", "11"]),
        ("check", vec!["check", "--mechanism", "doubling", "--d", "4", "--T", "1024", "--trials", "20", "--seed", "11"]),
        (
            "audit",
            vec!["audit", "--target", "bounded", "--x", "1,1,1,1", "--neighbor", "event:1:0", "--eps", "2", "--k", "0.5", "--trials", "100000", "--seed", "11"],
        ),
    ];
    let mut files = 0;
    for (name, args) in &commands {
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        run_cli(args, &a)?;
        run_cli(args, &b)?;
        files += compare_dirs(&a, &b)?;
    }
    Ok(format!("{files} result files byte-identical across reruns of run, check and audit"))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "noise-off oracle equivalence", limit: Some(Duration::from_secs(10)), run: criterion_oracle },
        Criterion { id: 2, name: "dyadic decomposition", limit: Some(Duration::from_secs(5)), run: criterion_dyadic },
        Criterion { id: 3, name: "quantile sensitivity", limit: Some(Duration::from_secs(30)), run: criterion_quantile },
        Criterion { id: 4, name: "laplace and gaussian tails", limit: Some(Duration::from_secs(30)), run: criterion_tails },
        Criterion { id: 5, name: "bounded mechanism accuracy", limit: Some(Duration::from_secs(120)), run: criterion_bounded_accuracy },
        Criterion { id: 6, name: "doubling segment bound", limit: Some(Duration::from_secs(120)), run: criterion_segments },
        Criterion { id: 7, name: "partition caps", limit: None, run: criterion_caps },
        Criterion { id: 8, name: "k=1 reduction", limit: None, run: criterion_k1 },
        Criterion { id: 9, name: "two-level scaling", limit: Some(Duration::from_secs(300)), run: criterion_two_level },
        Criterion { id: 10, name: "privacy audit", limit: Some(Duration::from_secs(300)), run: criterion_audit },
        Criterion { id: 11, name: "determinism", limit: None, run: criterion_determinism },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(msg), Some(limit)) if elapsed > limit => Err(format!("{msg}; took {elapsed:.1?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("PASS [{:>2}] {}: {msg} ({elapsed:.1?})", c.id, c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{:>2}] {}: {msg} ({elapsed:.1?})", c.id, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
