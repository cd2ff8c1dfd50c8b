//! Sparse-vector partitioning of a stream into intervals.
//!
//! A [`Partitioner`] compares a noisy statistic of the running noisy
//! histogram against a noisy threshold every step. A crossing closes the
//! current interval: its exact counts go into a continual histogram, the
//! running state is refreshed from that histogram and the threshold moves
//! to the next value of its schedule.

use crate::error::{invalid, Error, Result};
use crate::histogram::ContinualHistogram;
use crate::noise::NoiseSource;
use crate::queries::Statistic;
use crate::streams::Row;

/// Sequence of thresholds `K_1, K_2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSchedule {
    /// `K_1 = first`, `K_{j+1} = K_j + step`.
    Additive { first: f64, step: f64 },
    /// `K_1 = 1`, `K_{j+1} = 2 K_j`.
    Doubling,
}

impl ThresholdSchedule {
    /// `K_1 = K_j - K_{j-1} = step`.
    pub fn additive(step: f64) -> Self {
        Self::Additive { first: step, step }
    }

    pub fn first(&self) -> f64 {
        match *self {
            Self::Additive { first, .. } => first,
            Self::Doubling => 1.0,
        }
    }

    pub fn next(&self, current: f64) -> f64 {
        match *self {
            Self::Additive { step, .. } => current + step,
            Self::Doubling => 2.0 * current,
        }
    }

    /// `K_j` for 1-based `j`.
    pub fn nth(&self, j: usize) -> f64 {
        match *self {
            Self::Additive { first, step } => first + (j.saturating_sub(1)) as f64 * step,
            Self::Doubling => 2f64.powi(j.saturating_sub(1) as i32),
        }
    }
}

/// Scales of the sparse-vector noises: `mu` on the statistic every step and
/// `tau` on each threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvtNoise {
    pub mu: f64,
    pub tau: f64,
    /// When false neither noise is drawn. Only meant for audits of a
    /// deliberately broken mechanism.
    pub enabled: bool,
}

impl SvtNoise {
    pub fn laplace(mu: f64, tau: f64) -> Self {
        Self { mu, tau, enabled: true }
    }

    /// `Lap(8/eps)` on the statistic and `Lap(4/eps)` on thresholds.
    pub fn standard(epsilon: f64) -> Self {
        Self::laplace(8.0 / epsilon, 4.0 / epsilon)
    }

    pub fn disabled(self) -> Self {
        Self { enabled: false, ..self }
    }
}

/// One closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CloseRecord {
    /// 1-based index `j` of the interval that closed.
    pub j: usize,
    /// Close time `p_j`, counted from the partitioner's own start.
    pub t: usize,
    /// Threshold `K_j` the statistic was compared against.
    pub threshold: f64,
    /// `K_j + tau_j`.
    pub noisy_threshold: f64,
    /// Statistic of the running state just before the close.
    pub statistic: f64,
    /// Refreshed running state after the close.
    pub hist: Vec<f64>,
}

/// Outcome of one [`Partitioner::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Continue,
    Closed,
}

/// The generic partitioning loop over a histogram mechanism `H` and a
/// monotone statistic `G`.
#[derive(Debug, Clone)]
pub struct Partitioner<H, G> {
    hist: H,
    stat: G,
    schedule: ThresholdSchedule,
    svt: SvtNoise,
    cap: usize,
    horizon: usize,
    offset: Vec<f64>,
    t: usize,
    threshold: f64,
    tau: Option<f64>,
    counts: Vec<u64>,
    state: Vec<f64>,
    released: Vec<f64>,
    closes: Vec<CloseRecord>,
}

/// Construction parameters of a [`Partitioner`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub schedule: ThresholdSchedule,
    pub svt: SvtNoise,
    /// Maximum number of closes `Delta`.
    pub cap: usize,
    /// Number of rows the partitioner accepts.
    pub horizon: usize,
    /// Initial noisy histogram; added to every histogram read-out.
    pub offset: Option<Vec<f64>>,
}

impl<H: ContinualHistogram, G: Statistic> Partitioner<H, G> {
    pub fn new(hist: H, stat: G, config: PartitionConfig) -> Result<Self> {
        let d = hist.dim();
        let offset = config.offset.unwrap_or_else(|| vec![0.0; d]);
        if offset.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: offset.len(),
            });
        }
        if config.horizon == 0 {
            return Err(invalid("partitioner horizon must be positive"));
        }
        if config.cap > hist.capacity() {
            return Err(invalid(format!(
                "close cap {} exceeds histogram capacity {}",
                config.cap,
                hist.capacity()
            )));
        }
        if config.svt.enabled && !(config.svt.mu > 0.0 && config.svt.tau > 0.0) {
            return Err(invalid("sparse-vector noise scales must be positive"));
        }
        Ok(Self {
            hist,
            stat,
            threshold: config.schedule.first(),
            schedule: config.schedule,
            svt: config.svt,
            cap: config.cap,
            horizon: config.horizon,
            t: 0,
            tau: None,
            counts: vec![0; d],
            state: offset.clone(),
            released: offset.clone(),
            offset,
            closes: Vec::new(),
        })
    }

    /// Feeds one row. Draw order per step: the pending threshold noise (if
    /// closes remain), then `mu`, then on a close the histogram's noise.
    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<StepEvent> {
        if row.dim() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.counts.len(),
                got: row.dim(),
            });
        }
        if self.t >= self.horizon {
            return Err(Error::HorizonExceeded { horizon: self.horizon });
        }
        self.t += 1;
        for ((c, s), &b) in self.counts.iter_mut().zip(&mut self.state).zip(row.bits()) {
            *c += u64::from(b);
            *s += f64::from(b);
        }
        let open = self.closes.len() < self.cap;
        let tau = if open { self.tau(noise)? } else { 0.0 };
        let mu = if self.svt.enabled { noise.laplace(self.svt.mu)? } else { 0.0 };
        let statistic = self.stat.value(&self.state);
        if !(open && statistic + mu > self.threshold + tau) {
            return Ok(StepEvent::Continue);
        }

        self.hist.insert(&self.counts, noise)?;
        self.counts.iter_mut().for_each(|c| *c = 0);
        for ((s, h), o) in self.state.iter_mut().zip(self.hist.current()).zip(&self.offset) {
            *s = h + o;
        }
        self.released.clone_from(&self.state);
        self.closes.push(CloseRecord {
            j: self.closes.len() + 1,
            t: self.t,
            threshold: self.threshold,
            noisy_threshold: self.threshold + tau,
            statistic,
            hist: self.state.clone(),
        });
        self.threshold = self.schedule.next(self.threshold);
        self.tau = None;
        Ok(StepEvent::Closed)
    }

    fn tau(&mut self, noise: &mut NoiseSource) -> Result<f64> {
        match self.tau {
            Some(tau) => Ok(tau),
            None => {
                let tau = if self.svt.enabled { noise.laplace(self.svt.tau)? } else { 0.0 };
                self.tau = Some(tau);
                Ok(tau)
            }
        }
    }

    /// Noisy histogram released at the latest close; the offset before any.
    pub fn released(&self) -> &[f64] {
        &self.released
    }

    /// Statistic of [`Self::released`].
    pub fn output(&self) -> f64 {
        self.stat.value(&self.released)
    }

    /// Running state `s`: the released histogram plus exact rows since.
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn closes(&self) -> &[CloseRecord] {
        &self.closes
    }

    pub fn num_closes(&self) -> usize {
        self.closes.len()
    }

    /// Threshold `K_j` of the currently open interval.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn statistic(&self) -> &G {
        &self.stat
    }

    pub fn histogram(&self) -> &H {
        &self.hist
    }

    /// Interval boundaries `p_1 < p_2 < ...`, ending with the steps seen so
    /// far when the last interval is still open.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.closes.iter().map(|c| c.t).collect();
        if p.last() != Some(&self.t) && self.t > 0 {
            p.push(self.t);
        }
        p
    }
}
