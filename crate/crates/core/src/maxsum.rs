//! Mechanisms for the maximum column sum: the bounded mechanism, the
//! doubling segmenter, the bounded mechanism restarted from a noisy
//! histogram, and the two-level combination of the last two.

use crate::error::{invalid, Result};
use crate::histogram::{tree_histogram_err, BinaryTreeHistogram, ContinualHistogram, CumulativeHistogram};
use crate::noise::{NoiseSource, PrivacyParams};
use crate::partition::{CloseRecord, PartitionConfig, Partitioner, StepEvent, SvtNoise, ThresholdSchedule};
use crate::queries::{Query, Statistic};
use crate::streams::Row;

/// `(8/eps) log(3T/beta)`.
pub fn alpha_mu(horizon: usize, epsilon: f64, beta: f64) -> f64 {
    8.0 / epsilon * (3.0 * horizon as f64 / beta).log2()
}

/// `(4/eps) log(3 c / beta)`.
pub fn alpha_tau(c: f64, epsilon: f64, beta: f64) -> f64 {
    4.0 / epsilon * (3.0 * c / beta).log2()
}

/// Segment bound of the doubling mechanism:
/// `min{log(20 d c_max / eps^2) + 4 loglog(T/beta) + loglog(3d log T/beta), log T}`.
pub fn segment_bound(d: usize, c_max: f64, horizon: usize, epsilon: f64, beta: f64) -> f64 {
    let (df, tf) = (d as f64, horizon as f64);
    let raw = (20.0 * df * c_max / (epsilon * epsilon)).log2()
        + 4.0 * (tf / beta).log2().log2()
        + (3.0 * df * tf.log2() / beta).log2().log2();
    raw.min(tf.log2())
}

/// Bound on the accumulated Laplace noise of the doubling histogram over
/// `l` segments: `(4d/eps) sqrt(2l) log(3d log T / beta)`.
pub fn alpha_gamma(d: usize, l: f64, horizon: usize, epsilon: f64, beta: f64) -> f64 {
    let df = d as f64;
    4.0 * df / epsilon * (2.0 * l).sqrt() * (3.0 * df * (horizon as f64).log2() / beta).log2()
}

/// Gaussian counterpart of [`alpha_gamma`]:
/// `(2/eps) sqrt(l d ln(2e^{eps/2}/delta) log(3d log T / beta))`.
pub fn alpha_gamma_gaussian(d: usize, l: f64, horizon: usize, params: &PrivacyParams) -> f64 {
    let df = d as f64;
    let eps = params.epsilon;
    let log_term = (2.0 / params.delta).ln() + eps / 2.0;
    2.0 / eps * (l * df * log_term * (3.0 * df * (horizon as f64).log2() / params.beta).log2()).sqrt()
}

/// Largest number of closes of a doubling segmenter, i.e. of `j < log T`.
pub fn doubling_cap(horizon: usize) -> usize {
    ((horizon as f64).log2().ceil() as usize).saturating_sub(1)
}

fn check_dims(d: usize, horizon: usize) -> Result<()> {
    if d == 0 || horizon == 0 {
        return Err(invalid("mechanisms need d >= 1 and T >= 1"));
    }
    Ok(())
}

/// Parameters of [`BoundedMaxSum`] and its derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedConfig {
    pub d: usize,
    pub horizon: usize,
    /// Upper bound on the maximum column sum of the stream.
    pub c_max: usize,
    pub epsilon: f64,
    pub beta: f64,
    /// Replaces the derived threshold step `K`.
    pub k_override: Option<f64>,
}

impl BoundedConfig {
    pub fn new(d: usize, horizon: usize, c_max: usize, epsilon: f64, beta: f64) -> Result<Self> {
        check_dims(d, horizon)?;
        if c_max == 0 {
            return Err(invalid("c_max must be at least 1"));
        }
        PrivacyParams::pure(epsilon, beta)?;
        Ok(Self {
            d,
            horizon,
            c_max,
            epsilon,
            beta,
            k_override: None,
        })
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k_override = Some(k);
        self
    }

    /// Budget of the histogram mechanism: half of epsilon.
    pub fn hist_params(&self) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon / 2.0,
            delta: 0.0,
            beta: self.beta,
        }
    }

    pub fn alpha_mu(&self) -> f64 {
        alpha_mu(self.horizon, self.epsilon, self.beta)
    }

    pub fn alpha_tau(&self) -> f64 {
        alpha_tau(self.c_max as f64, self.epsilon, self.beta)
    }

    /// `err(c_max)` of the histogram mechanism.
    pub fn err_cmax(&self) -> f64 {
        tree_histogram_err(self.d, self.c_max, &self.hist_params(), self.beta)
    }

    /// `err(c_max) + alpha_mu + alpha_tau`.
    pub fn alpha_bms(&self) -> f64 {
        self.err_cmax() + self.alpha_mu() + self.alpha_tau()
    }

    pub fn k(&self) -> f64 {
        self.k_override.unwrap_or_else(|| 3.0 * self.alpha_bms())
    }

    /// Error bound holding with probability `1 - beta`: `6 alpha_bms`.
    pub fn accuracy_bound(&self) -> f64 {
        6.0 * self.alpha_bms()
    }
}

/// Bounded mechanism: additive thresholds `K, 2K, ...`, at most `c_max`
/// closes, tree histogram at `eps/2`.
#[derive(Debug, Clone)]
pub struct BoundedMaxSum {
    config: BoundedConfig,
    part: Partitioner<BinaryTreeHistogram, Query>,
}

impl BoundedMaxSum {
    pub fn new(config: BoundedConfig) -> Result<Self> {
        let svt = SvtNoise::standard(config.epsilon);
        Self::with_svt(config, svt)
    }

    /// Same mechanism with caller-chosen sparse-vector noise.
    pub fn with_svt(config: BoundedConfig, svt: SvtNoise) -> Result<Self> {
        let hist = BinaryTreeHistogram::new(config.d, config.c_max, config.hist_params())?;
        let part = Partitioner::new(
            hist,
            Query::MaxSum,
            PartitionConfig {
                schedule: ThresholdSchedule::additive(config.k()),
                svt,
                cap: config.c_max,
                horizon: config.horizon,
                offset: None,
            },
        )?;
        Ok(Self { config, part })
    }

    pub fn config(&self) -> &BoundedConfig {
        &self.config
    }

    /// Feeds one row and returns the output for this time step.
    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<f64> {
        self.part.step(row, noise)?;
        Ok(self.part.output())
    }

    pub fn partitioner(&self) -> &Partitioner<BinaryTreeHistogram, Query> {
        &self.part
    }

    pub fn num_closes(&self) -> usize {
        self.part.num_closes()
    }
}

/// A closed segment of a doubling segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    /// 1-based segment index.
    pub j: usize,
    /// Close time.
    pub t: usize,
    /// Noisy histogram at the close.
    pub hist: Vec<f64>,
}

impl From<&CloseRecord> for SegmentReport {
    fn from(c: &CloseRecord) -> Self {
        Self {
            j: c.j,
            t: c.t,
            hist: c.hist.clone(),
        }
    }
}

/// Doubling segmenter over any monotone statistic: thresholds `1, 2, 4, ...`,
/// closes while `j < log T`, cumulative histogram noise added at each close.
#[derive(Debug, Clone)]
pub struct DoublingSegmenter<G> {
    params: PrivacyParams,
    part: Partitioner<CumulativeHistogram, G>,
}

impl<G: Statistic> DoublingSegmenter<G> {
    /// Laplace variant: `Lap(2d/eps)` per coordinate per close.
    pub fn new(stat: G, d: usize, horizon: usize, epsilon: f64, beta: f64) -> Result<Self> {
        check_dims(d, horizon)?;
        let params = PrivacyParams::pure(epsilon, beta)?;
        let hist = CumulativeHistogram::laplace(d, doubling_cap(horizon).max(1), epsilon)?;
        Self::build(stat, hist, horizon, params)
    }

    /// Gaussian variant: `N(0, 2d ln(2e^{eps/2}/delta)/eps^2)` per coordinate
    /// per close. Requires `delta > 0`.
    pub fn gaussian(stat: G, d: usize, horizon: usize, params: PrivacyParams) -> Result<Self> {
        check_dims(d, horizon)?;
        if params.is_pure() {
            return Err(invalid("the gaussian doubling segmenter needs delta > 0"));
        }
        let hist = CumulativeHistogram::gaussian(d, doubling_cap(horizon).max(1), params.epsilon, params.delta)?;
        Self::build(stat, hist, horizon, params)
    }

    fn build(stat: G, hist: CumulativeHistogram, horizon: usize, params: PrivacyParams) -> Result<Self> {
        let part = Partitioner::new(
            hist,
            stat,
            PartitionConfig {
                schedule: ThresholdSchedule::Doubling,
                svt: SvtNoise::standard(params.epsilon),
                cap: doubling_cap(horizon),
                horizon,
                offset: None,
            },
        )?;
        Ok(Self { params, part })
    }

    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<Option<SegmentReport>> {
        Ok(match self.part.step(row, noise)? {
            StepEvent::Closed => self.part.closes().last().map(SegmentReport::from),
            StepEvent::Continue => None,
        })
    }

    pub fn segments(&self) -> Vec<SegmentReport> {
        self.part.closes().iter().map(SegmentReport::from).collect()
    }

    pub fn num_segments(&self) -> usize {
        self.part.num_closes()
    }

    /// Running noisy histogram `s`.
    pub fn state(&self) -> &[f64] {
        self.part.state()
    }

    pub fn params(&self) -> PrivacyParams {
        self.params
    }

    pub fn partitioner(&self) -> &Partitioner<CumulativeHistogram, G> {
        &self.part
    }

    /// Bound on `|s_i - c_i|` after `l` segments, with failure `beta/3`.
    pub fn gap_bound(&self, l: f64) -> f64 {
        let d = self.part.histogram().dim();
        let horizon = self.part.horizon();
        if self.params.is_pure() {
            alpha_gamma(d, l, horizon, self.params.epsilon, self.params.beta)
        } else {
            alpha_gamma_gaussian(d, l, horizon, &self.params)
        }
    }
}

/// Parameters of [`ModifiedKnownMax`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedConfig {
    /// Start time `t_0`; the mechanism accepts rows `t_0+1 ..= T`.
    pub t0: usize,
    /// Noisy histogram at `t_0`.
    pub s0: Vec<f64>,
    /// Error bound on `s0`.
    pub alpha_gamma: f64,
    /// Bound on how much the maximum may still increase.
    pub delta_bound: f64,
    pub horizon: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub k_override: Option<f64>,
}

impl ModifiedConfig {
    /// Integer interval cap `floor(Delta)`, at least one.
    pub fn cap(&self) -> usize {
        (self.delta_bound.floor() as usize).max(1)
    }

    pub fn hist_params(&self) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon / 2.0,
            delta: 0.0,
            beta: self.beta,
        }
    }

    /// `3(alpha_gamma + err(Delta) + (8/eps) log(3T/beta) + (4/eps) log(3 Delta/beta))`.
    pub fn k(&self) -> f64 {
        self.k_override.unwrap_or_else(|| {
            let err = tree_histogram_err(self.s0.len(), self.cap(), &self.hist_params(), self.beta);
            3.0 * (self.alpha_gamma
                + err
                + alpha_mu(self.horizon, self.epsilon, self.beta)
                + alpha_tau(self.delta_bound, self.epsilon, self.beta))
        })
    }
}

/// Bounded mechanism started from a noisy histogram `s0` at time `t0`.
#[derive(Debug, Clone)]
pub struct ModifiedKnownMax {
    config: ModifiedConfig,
    part: Partitioner<BinaryTreeHistogram, Query>,
}

impl ModifiedKnownMax {
    pub fn new(config: ModifiedConfig) -> Result<Self> {
        let d = config.s0.len();
        check_dims(d, config.horizon)?;
        PrivacyParams::pure(config.epsilon, config.beta)?;
        if config.t0 >= config.horizon {
            return Err(invalid(format!("start time {} leaves no rows before T={}", config.t0, config.horizon)));
        }
        if !(config.delta_bound > 0.0) {
            return Err(invalid("Delta must be positive"));
        }
        let cap = config.cap();
        let k = config.k();
        let start = Query::MaxSum.value(&config.s0);
        let hist = BinaryTreeHistogram::new(d, cap, config.hist_params())?;
        let part = Partitioner::new(
            hist,
            Query::MaxSum,
            PartitionConfig {
                schedule: ThresholdSchedule::Additive { first: start + k, step: k },
                svt: SvtNoise::standard(config.epsilon),
                cap,
                horizon: config.horizon - config.t0,
                offset: Some(config.s0.clone()),
            },
        )?;
        Ok(Self { config, part })
    }

    pub fn config(&self) -> &ModifiedConfig {
        &self.config
    }

    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<f64> {
        self.part.step(row, noise)?;
        Ok(self.part.output())
    }

    pub fn output(&self) -> f64 {
        self.part.output()
    }

    pub fn num_closes(&self) -> usize {
        self.part.num_closes()
    }

    pub fn partitioner(&self) -> &Partitioner<BinaryTreeHistogram, Query> {
        &self.part
    }
}

/// Derived constants of the two-level mechanisms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelConstants {
    /// Segment bound used for calibration, `log T`.
    pub l: f64,
    pub alpha_gamma: f64,
    /// `(12/eps) log(3T/beta) + alpha_gamma + L`.
    pub alpha_dm: f64,
}

impl TwoLevelConstants {
    pub fn laplace(d: usize, horizon: usize, epsilon: f64, beta: f64) -> Self {
        let l = (horizon as f64).log2();
        Self::with_gamma(l, alpha_gamma(d, l, horizon, epsilon, beta), horizon, epsilon, beta)
    }

    pub fn gaussian(d: usize, horizon: usize, params: &PrivacyParams) -> Self {
        let l = (horizon as f64).log2();
        let gamma = alpha_gamma_gaussian(d, l, horizon, params);
        Self::with_gamma(l, gamma, horizon, params.epsilon, params.beta)
    }

    fn with_gamma(l: f64, alpha_gamma: f64, horizon: usize, epsilon: f64, beta: f64) -> Self {
        let alpha_dm = 12.0 / epsilon * (3.0 * horizon as f64 / beta).log2() + alpha_gamma + l;
        Self { l, alpha_gamma, alpha_dm }
    }

    /// Inner bound `Delta_j = 2^{j-1} + 2 alpha_DM` for segment `j`.
    pub fn delta_j(&self, j: usize) -> f64 {
        2f64.powi(j as i32 - 1) + 2.0 * self.alpha_dm
    }
}

/// Two-level mechanism: doubling segmentation outside, a fresh
/// [`ModifiedKnownMax`] inside every segment.
#[derive(Debug, Clone)]
pub struct TwoLevelMaxSum {
    consts: TwoLevelConstants,
    epsilon: f64,
    beta: f64,
    outer: DoublingSegmenter<Query>,
    inner: ModifiedKnownMax,
    t: usize,
    inner_closes: usize,
    output: f64,
}

impl TwoLevelMaxSum {
    pub fn new(d: usize, horizon: usize, epsilon: f64, beta: f64) -> Result<Self> {
        let outer = DoublingSegmenter::new(Query::MaxSum, d, horizon, epsilon, beta)?;
        let consts = TwoLevelConstants::laplace(d, horizon, epsilon, beta);
        let inner = Self::inner(&consts, 0, vec![0.0; d], 1, horizon, epsilon, beta)?;
        Ok(Self {
            consts,
            epsilon,
            beta,
            outer,
            inner,
            t: 0,
            inner_closes: 0,
            output: 0.0,
        })
    }

    fn inner(
        consts: &TwoLevelConstants,
        t0: usize,
        s0: Vec<f64>,
        j: usize,
        horizon: usize,
        epsilon: f64,
        beta: f64,
    ) -> Result<ModifiedKnownMax> {
        ModifiedKnownMax::new(ModifiedConfig {
            t0,
            s0,
            alpha_gamma: consts.alpha_gamma,
            delta_bound: consts.delta_j(j),
            horizon,
            epsilon,
            beta,
            k_override: None,
        })
    }

    pub fn constants(&self) -> &TwoLevelConstants {
        &self.consts
    }

    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<f64> {
        self.t += 1;
        let horizon = self.outer.partitioner().horizon();
        match self.outer.step(row, noise)? {
            Some(seg) => {
                self.output = Query::MaxSum.value(&seg.hist);
                self.inner_closes += self.inner.num_closes();
                if self.t < horizon {
                    self.inner = Self::inner(&self.consts, self.t, seg.hist, seg.j + 1, horizon, self.epsilon, self.beta)?;
                }
            }
            None => self.output = self.inner.step(row, noise)?,
        }
        Ok(self.output)
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    pub fn num_segments(&self) -> usize {
        self.outer.num_segments()
    }

    /// Closes of all inner instances so far.
    pub fn num_inner_closes(&self) -> usize {
        self.inner_closes + self.inner.num_closes()
    }

    pub fn outer(&self) -> &DoublingSegmenter<Query> {
        &self.outer
    }

    pub fn current_inner(&self) -> &ModifiedKnownMax {
        &self.inner
    }
}
