//! Seeded multi-trial runs against the exact oracle.

use std::path::Path;
use std::time::Instant;

use contobs::maxsum::BoundedConfig;
use contobs::noise::{read_sample_log, NoiseMode, NoiseSource, PrivacyParams, RandomSource};
use contobs::queries::{empirical_alpha, general_error, QuerySet};
use contobs::streams::{generate, read_stream, GeneratorSpec, Stream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, MechanismKind, NoiseSetting, StreamSource};
use crate::mechanisms::{validate, BuildParams, Running};
use crate::output::{write_json, CsvOut};
use crate::HarnessError;

/// Everything one trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub max_error: f64,
    pub intervals: usize,
    pub segments: usize,
    /// Largest true query value at the end of the stream.
    pub realized_c_max: usize,
    /// `c_max` the mechanism was calibrated with.
    pub c_max: usize,
    pub cap_ok: bool,
    /// Accuracy bound of the bounded mechanism at this trial's `c_max`.
    pub bound: Option<f64>,
    pub series: Option<Series>,
    pub seconds: f64,
}

/// True and released query values per step, `[t-1][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub truth: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                median: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: median_sorted(&v),
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Aggregate written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub mechanism: MechanismKind,
    pub queries: String,
    pub trials: usize,
    pub beta: f64,
    /// Error exceeded by at most a `beta` fraction of trials.
    pub empirical_alpha: f64,
    pub max_error: Stat,
    pub intervals: Stat,
    pub segments: Stat,
    pub realized_c_max: Stat,
    pub cap_violations: usize,
    /// Trials whose error exceeded the bounded mechanism's accuracy bound.
    pub bound_violations: Option<usize>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// Inputs shared by every trial, loaded once.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub queries: QuerySet,
    pub params: PrivacyParams,
    generator: Option<GeneratorSpec>,
    file: Option<Stream>,
    recorded: Option<Vec<f64>>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let params = PrivacyParams::new(cfg.epsilon, cfg.delta, cfg.beta)?;
        let queries = QuerySet::parse(cfg.d, &cfg.queries)?;
        validate(cfg.mechanism, &queries, &params)?;
        if cfg.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        let (generator, file) = match &cfg.stream {
            StreamSource::Generator(spec) => (Some(spec.parse::<GeneratorSpec>()?), None),
            StreamSource::File(path) => {
                let s = read_stream(path)?;
                if s.dim() != cfg.d || s.horizon() != cfg.horizon || s.len() != s.horizon() {
                    return Err(HarnessError::Config(format!(
                        "stream file has d={} T={} with {} rows, config expects d={} T={}",
                        s.dim(),
                        s.horizon(),
                        s.len(),
                        cfg.d,
                        cfg.horizon
                    )));
                }
                (None, Some(s))
            }
        };
        let recorded = match &cfg.noise {
            NoiseSetting::Recorded(path) => Some(read_sample_log(path)?),
            _ => None,
        };
        Ok(Self {
            queries,
            params,
            generator,
            file,
            recorded,
        })
    }

    /// Stream and noise of one trial. Both derive from the trial's own
    /// random source, so trials are independent of scheduling.
    pub fn trial_inputs(&self, cfg: &ExperimentConfig, trial: usize) -> Result<(Stream, NoiseSource), HarnessError> {
        let mut rng = RandomSource::for_trial(cfg.seed, trial as u64);
        let stream = match (&self.generator, &self.file) {
            (Some(spec), _) => generate(spec, cfg.d, cfg.horizon, &mut rng)?,
            (None, Some(s)) => s.clone(),
            (None, None) => unreachable!("a stream source is always prepared"),
        };
        let noise = match (&cfg.noise, &self.recorded) {
            (NoiseSetting::Live, _) => NoiseSource::new(NoiseMode::Live, rng.split()),
            (NoiseSetting::Disabled, _) => NoiseSource::disabled(),
            (NoiseSetting::Recorded(_), Some(values)) => NoiseSource::recorded(values.clone()),
            (NoiseSetting::Recorded(_), None) => unreachable!("recorded noise is loaded up front"),
        };
        Ok((stream, noise))
    }

    pub fn realized_c_max(&self, stream: &Stream) -> Result<usize, HarnessError> {
        let last = stream.prefixes().last().unwrap_or_else(|| vec![0; stream.dim()]);
        let last: Vec<f64> = last.iter().map(|&v| v as f64).collect();
        let top = self.queries.eval(&last)?.into_iter().fold(0.0, f64::max);
        Ok((top.ceil() as usize).max(1))
    }

    pub fn build(&self, cfg: &ExperimentConfig, c_max: usize) -> Result<Running, HarnessError> {
        Running::build(&BuildParams {
            kind: cfg.mechanism,
            queries: self.queries.clone(),
            horizon: cfg.horizon,
            params: self.params,
            c_max,
            k_override: cfg.k_override,
        })
    }
}

fn run_trial(cfg: &ExperimentConfig, prep: &Prepared, trial: usize) -> Result<TrialResult, HarnessError> {
    let start = Instant::now();
    let (stream, mut noise) = prep.trial_inputs(cfg, trial)?;
    let realized_c_max = prep.realized_c_max(&stream)?;
    let c_max = cfg.c_max.unwrap_or(realized_c_max);
    let mut mech = prep.build(cfg, c_max)?;
    let mut outputs = Vec::with_capacity(stream.len());
    for row in stream.rows() {
        outputs.push(mech.step(row, &mut noise)?.to_vec());
    }
    let report = general_error(&outputs, &stream, &prep.queries)?;
    let series = (trial < cfg.series_trials).then(|| Series {
        truth: stream
            .prefixes()
            .map(|h| prep.queries.eval(&h.iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()
            .expect("dimensions already checked"),
        output: outputs,
    });
    let bound = match cfg.mechanism {
        MechanismKind::Bounded => {
            Some(BoundedConfig::new(cfg.d, cfg.horizon, c_max, cfg.epsilon, cfg.beta)?.accuracy_bound())
        }
        _ => None,
    };
    Ok(TrialResult {
        trial,
        max_error: report.max_abs_error,
        intervals: mech.intervals(),
        segments: mech.segments(),
        realized_c_max,
        c_max,
        cap_ok: mech.cap_ok(),
        bound,
        series,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every trial in parallel and aggregates in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let prep = Prepared::new(cfg)?;
    let trials: Vec<TrialResult> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &prep, t))
        .collect::<Result<_, _>>()?;
    let summary = summarize(cfg, &trials);
    Ok(ExperimentResult {
        config: cfg.clone(),
        trials,
        summary,
    })
}

fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Summary {
    let col = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let errors = col(&|t| t.max_error);
    let bound_violations = (cfg.mechanism == MechanismKind::Bounded).then(|| {
        trials
            .iter()
            .filter(|t| t.bound.is_some_and(|b| t.max_error > b))
            .count()
    });
    Summary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        mechanism: cfg.mechanism,
        queries: cfg.queries.clone(),
        trials: trials.len(),
        beta: cfg.beta,
        empirical_alpha: empirical_alpha(&errors, cfg.beta),
        max_error: Stat::of(&errors),
        intervals: Stat::of(&col(&|t| t.intervals as f64)),
        segments: Stat::of(&col(&|t| t.segments as f64)),
        realized_c_max: Stat::of(&col(&|t| t.realized_c_max as f64)),
        cap_violations: trials.iter().filter(|t| !t.cap_ok).count(),
        bound_violations,
        config: cfg.clone(),
    }
}

#[derive(Debug, Serialize)]
struct Timing<'a> {
    config_hash: &'a str,
    total_seconds: f64,
    trial_seconds: Vec<f64>,
}

impl ExperimentResult {
    /// Writes `trials.csv`, `summary.json`, `timing.json` and, when series
    /// were recorded, `series.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let hash = self.config.hash();
        let mut csv = CsvOut::create(&dir.join("trials.csv"), &hash, self.config.seed, &["trial", "metric", "value"])?;
        for t in &self.trials {
            let trial = t.trial.to_string();
            let mut row = |metric: &str, value: String| csv.row(&[&trial, metric, &value]);
            row("max_error", t.max_error.to_string())?;
            row("intervals", t.intervals.to_string())?;
            row("segments", t.segments.to_string())?;
            row("realized_c_max", t.realized_c_max.to_string())?;
            row("c_max", t.c_max.to_string())?;
            row("cap_ok", u8::from(t.cap_ok).to_string())?;
            if let Some(b) = t.bound {
                row("bound", b.to_string())?;
            }
        }
        csv.finish()?;

        if self.trials.iter().any(|t| t.series.is_some()) {
            let header = ["trial", "t", "metric", "value"];
            let mut csv = CsvOut::create(&dir.join("series.csv"), &hash, self.config.seed, &header)?;
            let names: Vec<String> = self.config.queries.split(',').map(str::trim).map(String::from).collect();
            for t in &self.trials {
                let Some(series) = &t.series else { continue };
                let trial = t.trial.to_string();
                for (step, (truth, out)) in series.truth.iter().zip(&series.output).enumerate() {
                    let step = (step + 1).to_string();
                    for (i, name) in names.iter().enumerate() {
                        csv.row(&[&trial, &step, &format!("truth:{name}"), &truth[i].to_string()])?;
                        csv.row(&[&trial, &step, &format!("output:{name}"), &out[i].to_string()])?;
                    }
                }
            }
            csv.finish()?;
        }

        write_json(&dir.join("summary.json"), &self.summary)?;
        let trial_seconds: Vec<f64> = self.trials.iter().map(|t| t.seconds).collect();
        write_json(
            &dir.join("timing.json"),
            &Timing {
                config_hash: &hash,
                total_seconds: trial_seconds.iter().sum(),
                trial_seconds,
            },
        )
    }
}
