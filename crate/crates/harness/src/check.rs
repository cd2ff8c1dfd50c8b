//! Structural claims checked on recorded traces: segment counts, histogram
//! gaps at segment closes, partition caps and growth between closes.

use std::path::Path;

use contobs::maxsum::segment_bound;
use contobs::streams::Stream;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::Prepared;
use crate::mechanisms::{Instance, Running};
use crate::output::{write_json, CsvOut};
use crate::HarnessError;

/// What one trial left behind: the stream and the finished mechanism.
#[derive(Debug, Clone)]
pub struct Trace {
    pub stream: Stream,
    pub mechanism: Running,
    /// Largest true query value at the end of the stream.
    pub c_max: usize,
}

/// Findings on one trace. Counts of zero mean the check passed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub segments: Option<usize>,
    /// `min{L-formula, log T}` at the realized `c_max`.
    pub segment_limit: Option<f64>,
    /// Largest `|s_i - c_i|` over segment closes.
    pub max_gap: Option<f64>,
    pub gap_bound: Option<f64>,
    pub intervals: usize,
    pub cap_ok: bool,
    /// Consecutive closes between which the tracked value grew too little.
    pub growth_violations: usize,
    /// Bounded mechanism only: more intervals than `c_max`.
    pub interval_excess: bool,
}

impl TraceReport {
    pub fn segment_violation(&self) -> bool {
        matches!((self.segments, self.segment_limit), (Some(s), Some(l)) if s as f64 > l)
    }

    pub fn gap_violation(&self) -> bool {
        matches!((self.max_gap, self.gap_bound), (Some(g), Some(b)) if g > b)
    }
}

/// Inspects a finished trace.
pub fn check_structure(trace: &Trace) -> TraceReport {
    let prefixes: Vec<Vec<f64>> = trace
        .stream
        .prefixes()
        .map(|h| h.into_iter().map(|v| v as f64).collect())
        .collect();
    let truth_at = |t: usize| -> &[f64] { &prefixes[t - 1] };
    let mech = &trace.mechanism;
    let horizon = trace.stream.horizon();

    let (segments, segment_limit, max_gap, gap_bound) = match mech.segment_reports() {
        Some(reports) => {
            let d = trace.stream.dim();
            let params = mech.params();
            let limit = segment_bound(d, trace.c_max as f64, horizon, params.epsilon, params.beta);
            let gap = reports
                .iter()
                .flat_map(|r| r.hist.iter().zip(truth_at(r.t)).map(|(s, c)| (s - c).abs()))
                .fold(0.0, f64::max);
            (Some(reports.len()), Some(limit), Some(gap), mech.gap_bound(limit))
        }
        None => (None, None, None, None),
    };

    let mut growth_violations = 0;
    let mut interval_excess = false;
    match &mech.instance {
        Instance::Bounded(m) => {
            let closes = m.partitioner().closes();
            let max_at = |t: usize| truth_at(t).iter().copied().fold(0.0, f64::max);
            let mut prev = 0.0;
            for c in closes {
                let now = max_at(c.t);
                if c.j > 1 && now - prev < 2.0 {
                    growth_violations += 1;
                }
                prev = now;
            }
            interval_excess = closes.len() > trace.c_max;
        }
        Instance::KQuery(m) => {
            growth_violations = m.closes().iter().filter(|c| !c.raised.iter().any(|&r| r)).count();
        }
        _ => {}
    }

    TraceReport {
        segments,
        segment_limit,
        max_gap,
        gap_bound,
        intervals: mech.intervals(),
        cap_ok: mech.cap_ok(),
        growth_violations,
        interval_excess,
    }
}

/// Violation frequency of one claim across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimSummary {
    pub claim: String,
    /// Trials the claim applies to.
    pub trials: usize,
    pub violations: usize,
    pub fraction: f64,
    /// `beta + 3 sqrt(beta/n)` for probabilistic claims, zero for absolute ones.
    pub allowed: f64,
    pub pass: bool,
}

impl ClaimSummary {
    fn new(claim: &str, trials: usize, violations: usize, allowed: f64) -> Self {
        let fraction = if trials == 0 { 0.0 } else { violations as f64 / trials as f64 };
        Self {
            claim: claim.into(),
            trials,
            violations,
            fraction,
            allowed,
            pass: fraction <= allowed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub config_hash: String,
    pub seed: u64,
    pub claims: Vec<ClaimSummary>,
    pub pass: bool,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub config: ExperimentConfig,
    pub reports: Vec<TraceReport>,
    pub summary: CheckSummary,
}

/// Per-trial traces, built the same way as in [`crate::experiment::run_experiment`].
pub fn record_traces(cfg: &ExperimentConfig) -> Result<Vec<Trace>, HarnessError> {
    let prep = Prepared::new(cfg)?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let (stream, mut noise) = prep.trial_inputs(cfg, trial)?;
            let realized = prep.realized_c_max(&stream)?;
            let mut mechanism = prep.build(cfg, cfg.c_max.unwrap_or(realized))?;
            for row in stream.rows() {
                mechanism.step(row, &mut noise)?;
            }
            Ok(Trace {
                stream,
                mechanism,
                c_max: realized,
            })
        })
        .collect()
}

/// Records traces for every trial and aggregates the findings.
pub fn run_check(cfg: &ExperimentConfig) -> Result<CheckResult, HarnessError> {
    let reports: Vec<TraceReport> = record_traces(cfg)?.par_iter().map(check_structure).collect();
    let n = reports.len();
    let beta = cfg.beta;
    let slack = beta + 3.0 * (beta / n as f64).sqrt();
    let count = |f: &dyn Fn(&TraceReport) -> bool| reports.iter().filter(|r| f(r)).count();

    let mut claims = vec![ClaimSummary::new("cap", n, count(&|r| !r.cap_ok), 0.0)];
    let segmented = count(&|r| r.segments.is_some());
    if segmented > 0 {
        claims.push(ClaimSummary::new("segments", segmented, count(&|r| r.segment_violation()), slack));
        claims.push(ClaimSummary::new("gap", segmented, count(&|r| r.gap_violation()), slack));
    }
    let grows = matches!(
        cfg.mechanism,
        crate::config::MechanismKind::Bounded | crate::config::MechanismKind::Kquery | crate::config::MechanismKind::KqueryEd
    );
    if grows {
        claims.push(ClaimSummary::new("growth", n, count(&|r| r.growth_violations > 0), slack));
    }
    if cfg.mechanism == crate::config::MechanismKind::Bounded {
        claims.push(ClaimSummary::new("intervals", n, count(&|r| r.interval_excess), slack));
    }
    let pass = claims.iter().all(|c| c.pass);
    let summary = CheckSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        claims,
        pass,
        config: cfg.clone(),
    };
    Ok(CheckResult {
        config: cfg.clone(),
        reports,
        summary,
    })
}

impl CheckResult {
    /// Writes `check.csv` (per-trial metrics) and `check.json`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let hash = self.config.hash();
        let mut csv = CsvOut::create(&dir.join("check.csv"), &hash, self.config.seed, &["trial", "metric", "value"])?;
        for (i, r) in self.reports.iter().enumerate() {
            let trial = i.to_string();
            let mut row = |metric: &str, value: String| csv.row(&[&trial, metric, &value]);
            if let (Some(s), Some(l)) = (r.segments, r.segment_limit) {
                row("segments", s.to_string())?;
                row("segment_limit", l.to_string())?;
            }
            if let (Some(g), Some(b)) = (r.max_gap, r.gap_bound) {
                row("max_gap", g.to_string())?;
                row("gap_bound", b.to_string())?;
            }
            row("intervals", r.intervals.to_string())?;
            row("cap_ok", u8::from(r.cap_ok).to_string())?;
            row("growth_violations", r.growth_violations.to_string())?;
        }
        csv.finish()?;
        write_json(&dir.join("check.json"), &self.summary)
    }
}
