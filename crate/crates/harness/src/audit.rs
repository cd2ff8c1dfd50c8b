//! Empirical likelihood-ratio audit on a fixed pair of neighboring streams.
//!
//! The pair is chosen up front rather than adaptively, so passing is a
//! necessary condition for privacy, not a proof of it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use contobs::maxsum::{BoundedConfig, BoundedMaxSum};
use contobs::noise::{NoiseMode, NoiseSource, RandomSource};
use contobs::partition::SvtNoise;
use contobs::streams::{make_independent_neighbors, make_neighbors, Row, Stream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AuditConfig, AuditTarget, NeighborMode};
use crate::output::{write_json, CsvOut};
use crate::HarnessError;

/// What the auditor sees from one run: exact discrete tags (such as close
/// times) and real values that get binned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation {
    pub tags: Vec<u32>,
    pub values: Vec<f64>,
}

impl Observation {
    fn key(&self, width: f64) -> Vec<i64> {
        let mut key: Vec<i64> = self.tags.iter().map(|&t| i64::from(t)).collect();
        key.push(-1);
        key.extend(self.values.iter().map(|v| (v / width).floor() as i64));
        key
    }
}

/// Runs a mechanism on a stream with the given noise.
pub type Factory<'a> = dyn Fn(&Stream, &mut NoiseSource) -> Result<Observation, HarnessError> + Sync + 'a;

/// One tested bin in one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRatio {
    /// `x/y` compares x's frequency against y's, `y/x` the reverse.
    pub direction: String,
    pub bin: String,
    pub numerator: u64,
    pub denominator: u64,
    pub ratio: f64,
    /// `e^eps (1 + slack)` with slack three standard errors.
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub config_hash: String,
    pub seed: u64,
    pub max_ratio: f64,
    pub bins_tested: usize,
    pub bins_failed: usize,
    pub pass: bool,
    pub config: AuditConfig,
}

#[derive(Debug, Clone)]
pub struct AuditResult {
    pub config: AuditConfig,
    pub bins: Vec<BinRatio>,
    pub summary: AuditSummary,
}

/// Parses the rows of `x` and builds its neighbor `y`.
pub fn audit_pair(cfg: &AuditConfig) -> Result<(Stream, Stream), HarnessError> {
    let rows = cfg
        .x
        .iter()
        .map(|r| {
            let bits = r
                .chars()
                .map(|c| match c {
                    '0' => Ok(0),
                    '1' => Ok(1),
                    _ => Err(HarnessError::Config(format!("row '{r}' is not a 0/1 string"))),
                })
                .collect::<Result<Vec<u8>, _>>()?;
            Ok(Row::new(bits)?)
        })
        .collect::<Result<Vec<Row>, HarnessError>>()?;
    let d = rows.first().map_or(0, Row::dim);
    if rows.is_empty() || d == 0 {
        return Err(HarnessError::Config("audit stream x is empty".into()));
    }
    if rows.len() > AuditConfig::MAX_T || d > AuditConfig::MAX_D {
        return Err(HarnessError::Config(format!(
            "audit instances are limited to T <= {} and d <= {}",
            AuditConfig::MAX_T,
            AuditConfig::MAX_D
        )));
    }
    let x = Stream::from_rows(d, rows.len(), rows)?;
    let y = match &cfg.neighbor {
        NeighborMode::Event { t, row } => make_neighbors(&x, *t, Row::new(row.clone())?)?,
        NeighborMode::Independent { flips } => make_independent_neighbors(&x, flips)?,
    };
    Ok((x, y))
}

/// The built-in audit targets.
pub fn target_factory(cfg: &AuditConfig) -> Box<Factory<'static>> {
    let eps = cfg.epsilon;
    let k = cfg.k;
    match cfg.target {
        AuditTarget::LaplaceCount => Box::new(move |s: &Stream, noise: &mut NoiseSource| {
            let count: u64 = s.rows().iter().flat_map(|r| r.bits()).map(|&b| u64::from(b)).sum();
            Ok(Observation {
                tags: Vec::new(),
                values: vec![count as f64 + noise.laplace(1.0 / eps)?],
            })
        }),
        AuditTarget::Bounded | AuditTarget::BoundedNoSvtNoise => {
            let broken = cfg.target == AuditTarget::BoundedNoSvtNoise;
            Box::new(move |s: &Stream, noise: &mut NoiseSource| {
                // c_max is fixed to T so that it does not depend on the data.
                let bcfg = BoundedConfig::new(s.dim(), s.horizon(), s.horizon(), eps, 1.0 / 3.0)?.with_k(k);
                let svt = SvtNoise::standard(eps);
                let mut m = BoundedMaxSum::with_svt(bcfg, if broken { svt.disabled() } else { svt })?;
                for row in s.rows() {
                    m.step(row, noise)?;
                }
                // Only the released values at closes are observable.
                let closes = m.partitioner().closes();
                Ok(Observation {
                    tags: closes.iter().map(|c| c.t as u32).collect(),
                    values: closes.iter().map(|c| c.hist.iter().copied().fold(f64::MIN, f64::max)).collect(),
                })
            })
        }
    }
}

type Counts = HashMap<Vec<i64>, u64>;

fn count_bins(
    cfg: &AuditConfig,
    stream: &Stream,
    factory: &Factory<'_>,
    parity: u64,
) -> Result<Counts, HarnessError> {
    (0..cfg.trials as u64)
        .into_par_iter()
        .try_fold(Counts::new, |mut acc, i| {
            let rng = RandomSource::for_trial(cfg.seed, 2 * i + parity);
            let mut noise = NoiseSource::new(NoiseMode::Live, rng);
            let obs = factory(stream, &mut noise)?;
            *acc.entry(obs.key(cfg.bin_width)).or_insert(0) += 1;
            Ok::<_, HarnessError>(acc)
        })
        .try_reduce(Counts::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            Ok(a)
        })
}

fn bin_label(key: &[i64]) -> String {
    let sep = key.iter().position(|&v| v == -1).unwrap_or(key.len());
    let tags: Vec<String> = key[..sep].iter().map(i64::to_string).collect();
    let bins: Vec<String> = key[sep + 1..].iter().map(i64::to_string).collect();
    format!("tags={} bins={}", tags.join(" "), bins.join(" "))
}

/// Estimates `(p_num(B) - delta) / p_den(B)` for every bin `B` the numerator
/// populated at least `min_count` times.
fn ratios(cfg: &AuditConfig, direction: &str, num: &BTreeMap<Vec<i64>, (u64, u64)>, flip: bool) -> Vec<BinRatio> {
    let n = cfg.trials as f64;
    let bound = cfg.epsilon.exp();
    num.iter()
        .filter_map(|(key, &(cx, cy))| {
            let (a, b) = if flip { (cy, cx) } else { (cx, cy) };
            if a < cfg.min_count {
                return None;
            }
            let pa = a as f64 / n;
            // An empty denominator bin still gets a finite, very large ratio.
            let pb = if b == 0 { 0.5 / n } else { b as f64 / n };
            let ratio = (pa - cfg.delta).max(0.0) / pb;
            let slack = 3.0 * ((1.0 - pa) / (n * pa) + (1.0 - pb) / (n * pb)).sqrt();
            let limit = bound * (1.0 + slack);
            Some(BinRatio {
                direction: direction.into(),
                bin: bin_label(key),
                numerator: a,
                denominator: b,
                ratio,
                limit,
                pass: ratio <= limit,
            })
        })
        .collect()
}

/// Runs the audit. Errors if no bin is populated enough to test.
pub fn run_audit(cfg: &AuditConfig, factory: &Factory<'_>) -> Result<AuditResult, HarnessError> {
    if cfg.trials < AuditConfig::MIN_TRIALS {
        return Err(HarnessError::Config(format!(
            "audits need at least {} trials",
            AuditConfig::MIN_TRIALS
        )));
    }
    if !(cfg.bin_width > 0.0 && cfg.bin_width.is_finite()) {
        return Err(HarnessError::Config("bin width must be positive".into()));
    }
    let (x, y) = audit_pair(cfg)?;
    let cx = count_bins(cfg, &x, factory, 0)?;
    let cy = count_bins(cfg, &y, factory, 1)?;
    let mut joint: BTreeMap<Vec<i64>, (u64, u64)> = BTreeMap::new();
    for (k, v) in cx {
        joint.entry(k).or_default().0 = v;
    }
    for (k, v) in cy {
        joint.entry(k).or_default().1 = v;
    }
    let mut bins = ratios(cfg, "x/y", &joint, false);
    bins.extend(ratios(cfg, "y/x", &joint, true));
    if bins.is_empty() {
        return Err(HarnessError::Config(format!(
            "no bin reached {} hits; raise the trial count or the bin width",
            cfg.min_count
        )));
    }
    let max_ratio = bins.iter().map(|b| b.ratio).fold(0.0, f64::max);
    let bins_failed = bins.iter().filter(|b| !b.pass).count();
    let summary = AuditSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        max_ratio,
        bins_tested: bins.len(),
        bins_failed,
        pass: bins_failed == 0,
        config: cfg.clone(),
    };
    Ok(AuditResult {
        config: cfg.clone(),
        bins,
        summary,
    })
}

impl AuditResult {
    /// Writes `audit.csv` (one row per tested bin) and `audit.json`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let header = ["direction", "bin", "numerator", "denominator", "ratio", "limit", "pass"];
        let mut csv = CsvOut::create(&dir.join("audit.csv"), &self.config.hash(), self.config.seed, &header)?;
        for b in &self.bins {
            csv.row(&[
                &b.direction,
                &b.bin,
                &b.numerator.to_string(),
                &b.denominator.to_string(),
                &b.ratio.to_string(),
                &b.limit.to_string(),
                &u8::from(b.pass).to_string(),
            ])?;
        }
        csv.finish()?;
        write_json(&dir.join("audit.json"), &self.summary)
    }
}
