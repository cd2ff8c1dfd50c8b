//! Mechanisms answering `k` monotone queries at once.
//!
//! [`KQuery`] keeps one threshold per query with a shared threshold noise.
//! It covers the from-scratch and the restarted (modified) mechanisms in
//! both privacy regimes. [`KDoubling`] and [`KTwoLevel`] build the
//! unbounded variants on top of it.

use crate::error::{invalid, Error, Result};
use crate::histogram::{tree_histogram_err, BinaryTreeHistogram, ContinualHistogram};
use crate::maxsum::{DoublingSegmenter, TwoLevelConstants};
use crate::noise::{Noise, NoiseSource, PrivacyParams};
use crate::queries::{MaxOfQueries, QuerySet};
use crate::streams::Row;

/// Privacy regime of a k-query mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Pure differential privacy, Laplace noise throughout.
    Pure,
    /// `(eps, delta)` privacy: Gaussian histogram and threshold-update noise.
    Approx,
}

/// Restart data for the modified mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub t0: usize,
    /// Noisy histogram at `t0`.
    pub s0: Vec<f64>,
    /// Error bound on `s0`.
    pub alpha_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KQueryConfig {
    pub queries: QuerySet,
    pub horizon: usize,
    /// `c_max` for a fresh mechanism, `Delta` for a restarted one.
    pub bound: f64,
    pub params: PrivacyParams,
    pub variant: Variant,
    pub restart: Option<Restart>,
    pub c_override: Option<f64>,
    pub k_override: Option<f64>,
}

impl KQueryConfig {
    pub fn new(queries: QuerySet, horizon: usize, c_max: usize, params: PrivacyParams, variant: Variant) -> Self {
        Self {
            queries,
            horizon,
            bound: c_max as f64,
            params,
            variant,
            restart: None,
            c_override: None,
            k_override: None,
        }
    }

    pub fn restarted(mut self, restart: Restart, delta_bound: f64) -> Self {
        self.restart = Some(restart);
        self.bound = delta_bound;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c_override = Some(c);
        self
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k_override = Some(k);
        self
    }

    fn kf(&self) -> f64 {
        self.queries.k() as f64
    }

    /// Maximum number of closes, `floor(k * bound)`, at least one.
    pub fn cap(&self) -> usize {
        ((self.kf() * self.bound).floor() as usize).max(1)
    }

    /// Budget of the histogram: `eps/3`, with `delta / (2 e^{2eps/3})` in
    /// the approximate regime.
    pub fn hist_params(&self) -> PrivacyParams {
        let eps = self.params.epsilon;
        let delta = match self.variant {
            Variant::Pure => 0.0,
            Variant::Approx => self.params.delta / (2.0 * (2.0 * eps / 3.0).exp()),
        };
        self.params.with_budget(eps / 3.0, delta)
    }

    /// `(12/eps)(ln(6 k B / beta) + ln(6T/beta))`.
    pub fn alpha_sv(&self) -> f64 {
        let PrivacyParams { epsilon, beta, .. } = self.params;
        12.0 / epsilon * ((6.0 * self.kf() * self.bound / beta).ln() + (6.0 * self.horizon as f64 / beta).ln())
    }

    /// `sqrt(k ln(12 e^{2eps/3} k B / (beta delta)))`, shared by the
    /// approximate-regime constants.
    fn gauss_root(&self) -> f64 {
        let PrivacyParams { epsilon, delta, beta } = self.params;
        let arg = 12.0 * (2.0 * epsilon / 3.0).exp() * self.kf() * self.bound / (beta * delta);
        (self.kf() * arg.ln()).sqrt()
    }

    /// `(6/eps) sqrt(k ln(12 e^{2eps/3} k B / (beta delta)))`.
    pub fn alpha_u(&self) -> f64 {
        6.0 / self.params.epsilon * self.gauss_root()
    }

    /// Threshold-update slack `C`.
    pub fn c(&self) -> f64 {
        if let Some(c) = self.c_override {
            return c;
        }
        let PrivacyParams { epsilon, beta, .. } = self.params;
        let (k, b, t) = (self.kf(), self.bound, self.horizon as f64);
        match (self.variant, self.restart.is_some()) {
            (Variant::Pure, _) => 18.0 / epsilon * (k * (6.0 * k * b / beta).ln() + (6.0 * t / beta).ln()),
            (Variant::Approx, false) => self.alpha_sv() + self.alpha_u(),
            (Variant::Approx, true) => {
                12.0 / epsilon * (self.gauss_root() + (6.0 * k * b / beta).ln() + (6.0 * t / beta).ln())
            }
        }
    }

    /// `err(k B)` of the histogram.
    pub fn err(&self) -> f64 {
        tree_histogram_err(self.queries.dim(), self.cap(), &self.hist_params(), self.params.beta)
    }

    /// Threshold step `K = 3(C + err(k B) [+ alpha_gamma])`.
    pub fn k(&self) -> f64 {
        self.k_override.unwrap_or_else(|| {
            let gamma = self.restart.as_ref().map_or(0.0, |r| r.alpha_gamma);
            3.0 * (self.c() + self.err() + gamma)
        })
    }

    /// Noise on each query value when deciding which thresholds to raise.
    pub fn update_noise(&self) -> Noise {
        let PrivacyParams { epsilon, delta, .. } = self.params;
        let k = self.kf();
        match self.variant {
            Variant::Pure => Noise::Laplace(3.0 * k / epsilon),
            Variant::Approx => {
                let var = 18.0 * k * ((4.0 / delta).ln() + 2.0 * epsilon / 3.0) / (epsilon * epsilon);
                Noise::Gaussian(var.sqrt())
            }
        }
    }
}

/// One close of a [`KQuery`].
#[derive(Debug, Clone, PartialEq)]
pub struct KClose {
    pub j: usize,
    pub t: usize,
    /// Shared threshold noise in force at the close.
    pub tau: f64,
    /// Thresholds `K_(i)` before the update.
    pub thresholds: Vec<f64>,
    /// Query values of the running state just before the close.
    pub values: Vec<f64>,
    /// Which thresholds were raised.
    pub raised: Vec<bool>,
}

/// Per-query thresholds with one shared noisy offset.
#[derive(Debug, Clone)]
pub struct KQuery {
    config: KQueryConfig,
    c: f64,
    k: f64,
    cap: usize,
    horizon: usize,
    update_noise: Noise,
    hist: BinaryTreeHistogram,
    offset: Vec<f64>,
    thresholds: Vec<f64>,
    tau: Option<f64>,
    t: usize,
    counts: Vec<u64>,
    state: Vec<f64>,
    out: Vec<f64>,
    closes: Vec<KClose>,
}

impl KQuery {
    pub fn new(config: KQueryConfig) -> Result<Self> {
        let d = config.queries.dim();
        if config.horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if !(config.bound >= 1.0) {
            return Err(invalid(format!("query bound must be at least 1, got {}", config.bound)));
        }
        if config.variant == Variant::Approx && config.params.is_pure() {
            return Err(invalid("the (eps, delta) variant needs delta > 0"));
        }
        let (t0, offset) = match &config.restart {
            Some(r) if r.s0.len() != d => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.s0.len(),
                })
            }
            Some(r) if r.t0 >= config.horizon => {
                return Err(invalid(format!("start time {} leaves no rows before T={}", r.t0, config.horizon)))
            }
            Some(r) => (r.t0, r.s0.clone()),
            None => (0, vec![0.0; d]),
        };
        let cap = config.cap();
        let k = config.k();
        let hist = BinaryTreeHistogram::new(d, cap, config.hist_params())?;
        let out = config.queries.values(&offset);
        Ok(Self {
            c: config.c(),
            k,
            cap,
            horizon: config.horizon - t0,
            update_noise: config.update_noise(),
            hist,
            thresholds: out.iter().map(|g| g + k).collect(),
            tau: None,
            t: 0,
            counts: vec![0; d],
            state: offset.clone(),
            offset,
            out,
            closes: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &KQueryConfig {
        &self.config
    }

    /// Feeds one row and returns the k outputs for this step.
    ///
    /// Draw order: pending `tau`, then `mu`; on a close the histogram noise,
    /// then the k update noises in query order.
    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<&[f64]> {
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
        let eps = self.config.params.epsilon;
        let open = self.closes.len() < self.cap;
        let tau = match (open, self.tau) {
            (false, _) => 0.0,
            (true, Some(tau)) => tau,
            (true, None) => {
                let tau = noise.laplace(6.0 / eps)?;
                self.tau = Some(tau);
                tau
            }
        };
        let mu = noise.laplace(12.0 / eps)?;
        let values = self.config.queries.values(&self.state);
        let crossed = values.iter().zip(&self.thresholds).any(|(g, k)| g + mu > k + tau);
        if !(open && crossed) {
            return Ok(&self.out);
        }

        self.hist.insert(&self.counts, noise)?;
        self.counts.iter_mut().for_each(|c| *c = 0);
        let before = self.thresholds.clone();
        let mut raised = Vec::with_capacity(values.len());
        for (g, k) in values.iter().zip(&mut self.thresholds) {
            let noisy = g + noise.sample(self.update_noise)?;
            let raise = noisy > *k - self.c;
            if raise {
                *k += self.k;
            }
            raised.push(raise);
        }
        self.tau = None;
        for ((s, h), o) in self.state.iter_mut().zip(self.hist.current()).zip(&self.offset) {
            *s = h + o;
        }
        self.out = self.config.queries.values(&self.state);
        self.closes.push(KClose {
            j: self.closes.len() + 1,
            t: self.t,
            tau,
            thresholds: before,
            values,
            raised,
        });
        Ok(&self.out)
    }

    pub fn output(&self) -> &[f64] {
        &self.out
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// `K_(i) + tau` for the open interval, once `tau` has been drawn.
    pub fn noisy_thresholds(&self) -> Option<Vec<f64>> {
        self.tau.map(|tau| self.thresholds.iter().map(|k| k + tau).collect())
    }

    /// Shared threshold noise of the open interval, once drawn.
    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn closes(&self) -> &[KClose] {
        &self.closes
    }

    pub fn num_closes(&self) -> usize {
        self.closes.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn k_step(&self) -> f64 {
        self.k
    }

    /// Running noisy histogram.
    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

/// Doubling segmentation on `max_i g_i`.
pub type KDoubling = DoublingSegmenter<MaxOfQueries>;

impl KDoubling {
    pub fn for_queries(queries: QuerySet, horizon: usize, params: PrivacyParams, variant: Variant) -> Result<Self> {
        let d = queries.dim();
        match variant {
            Variant::Pure => Self::new(MaxOfQueries(queries), d, horizon, params.epsilon, params.beta),
            Variant::Approx => Self::gaussian(MaxOfQueries(queries), d, horizon, params),
        }
    }
}

/// Two-level k-query mechanism: doubling segmentation on `max_i g_i`
/// outside, a restarted [`KQuery`] inside every segment.
#[derive(Debug, Clone)]
pub struct KTwoLevel {
    queries: QuerySet,
    params: PrivacyParams,
    variant: Variant,
    consts: TwoLevelConstants,
    outer: KDoubling,
    inner: KQuery,
    t: usize,
    inner_closes: usize,
    output: Vec<f64>,
}

impl KTwoLevel {
    pub fn new(queries: QuerySet, horizon: usize, params: PrivacyParams, variant: Variant) -> Result<Self> {
        let d = queries.dim();
        let outer = KDoubling::for_queries(queries.clone(), horizon, params, variant)?;
        let consts = match variant {
            Variant::Pure => TwoLevelConstants::laplace(d, horizon, params.epsilon, params.beta),
            Variant::Approx => TwoLevelConstants::gaussian(d, horizon, &params),
        };
        let inner = Self::inner(&queries, params, variant, &consts, 0, vec![0.0; d], 1, horizon)?;
        Ok(Self {
            output: vec![0.0; queries.k()],
            queries,
            params,
            variant,
            consts,
            outer,
            inner,
            t: 0,
            inner_closes: 0,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn inner(
        queries: &QuerySet,
        params: PrivacyParams,
        variant: Variant,
        consts: &TwoLevelConstants,
        t0: usize,
        s0: Vec<f64>,
        j: usize,
        horizon: usize,
    ) -> Result<KQuery> {
        let restart = Restart {
            t0,
            s0,
            alpha_gamma: consts.alpha_gamma,
        };
        let cfg = KQueryConfig::new(queries.clone(), horizon, 1, params, variant).restarted(restart, consts.delta_j(j));
        KQuery::new(cfg)
    }

    pub fn constants(&self) -> &TwoLevelConstants {
        &self.consts
    }

    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<&[f64]> {
        self.t += 1;
        let horizon = self.outer.partitioner().horizon();
        match self.outer.step(row, noise)? {
            Some(seg) => {
                self.output = self.queries.values(&seg.hist);
                self.inner_closes += self.inner.num_closes();
                if self.t < horizon {
                    self.inner = Self::inner(
                        &self.queries,
                        self.params,
                        self.variant,
                        &self.consts,
                        self.t,
                        seg.hist,
                        seg.j + 1,
                        horizon,
                    )?;
                }
            }
            None => {
                let out = self.inner.step(row, noise)?;
                self.output.clear();
                self.output.extend_from_slice(out);
            }
        }
        Ok(&self.output)
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn num_segments(&self) -> usize {
        self.outer.num_segments()
    }

    pub fn num_inner_closes(&self) -> usize {
        self.inner_closes + self.inner.num_closes()
    }

    pub fn outer(&self) -> &KDoubling {
        &self.outer
    }

    pub fn current_inner(&self) -> &KQuery {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::Query;

    fn params() -> PrivacyParams {
        PrivacyParams::new(1.0, 1e-6, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn alternating_rows_zero_noise() {
        let qs = QuerySet::new(2, vec![Query::MaxSum, Query::MinSum]).unwrap();
        let cfg = KQueryConfig::new(qs, 20, 20, PrivacyParams::pure(1.0, 1.0 / 3.0).unwrap(), Variant::Pure)
            .with_c(0.0)
            .with_k(2.0);
        let mut m = KQuery::new(cfg).unwrap();
        let mut noise = NoiseSource::disabled();
        let rows = [Row::new(vec![1, 0]).unwrap(), Row::new(vec![0, 1]).unwrap()];
        let mut first = None;
        for t in 1..=20 {
            m.step(&rows[(t - 1) % 2], &mut noise).unwrap();
            if first.is_none() && m.num_closes() == 1 {
                first = Some(t);
            }
        }
        // Max sum first exceeds 2 at t = 5 (sums (3,2)).
        assert_eq!(first, Some(5));
        let c = &m.closes()[0];
        assert_eq!(c.values, vec![3.0, 2.0]);
        // With C = 0 only the max threshold is raised: min is 2, not > 2.
        assert_eq!(c.raised, vec![true, false]);
    }

    #[test]
    fn outputs_start_at_zero_and_hold_between_closes() {
        let qs = QuerySet::parse(3, "max,min,quantile:0.5").unwrap();
        let cfg = KQueryConfig::new(qs, 200, 200, PrivacyParams::pure(4.0, 0.3).unwrap(), Variant::Pure).with_k(5.0);
        let mut m = KQuery::new(cfg).unwrap();
        assert_eq!(m.output(), &[0.0, 0.0, 0.0]);
        let mut noise = NoiseSource::live(3);
        let row = Row::new(vec![1, 1, 0]).unwrap();
        let mut prev = m.output().to_vec();
        let mut closes = 0;
        for _ in 0..200 {
            let out = m.step(&row, &mut noise).unwrap().to_vec();
            if m.num_closes() == closes {
                assert_eq!(out, prev);
            }
            closes = m.num_closes();
            prev = out;
        }
        assert!(closes > 0);
    }

    #[test]
    fn constants_match_formulas() {
        let qs = QuerySet::parse(2, "max,min,col:0,col:1").unwrap();
        let pure = KQueryConfig::new(qs.clone(), 1024, 64, PrivacyParams::pure(1.0, 1.0 / 3.0).unwrap(), Variant::Pure);
        let c = 18.0 * (4.0 * (6.0f64 * 4.0 * 64.0 * 3.0).ln() + (6.0f64 * 1024.0 * 3.0).ln());
        assert!((pure.c() - c).abs() < 1e-9);
        assert_eq!(pure.cap(), 256);
        assert_eq!(pure.update_noise(), Noise::Laplace(12.0));
        assert!((pure.k() - 3.0 * (c + pure.err())).abs() < 1e-9);

        let approx = KQueryConfig::new(qs, 1024, 64, params(), Variant::Approx);
        let alpha_u = 6.0 * (4.0 * (12.0 * (2.0f64 / 3.0).exp() * 4.0 * 64.0 * 3.0 * 1e6).ln()).sqrt();
        assert!((approx.alpha_u() - alpha_u).abs() < 1e-9);
        let alpha_sv = 12.0 * ((6.0f64 * 4.0 * 64.0 * 3.0).ln() + (6.0f64 * 1024.0 * 3.0).ln());
        assert!((approx.c() - (alpha_sv + alpha_u)).abs() < 1e-9);
        let hp = approx.hist_params();
        assert!((hp.epsilon - 1.0 / 3.0).abs() < 1e-12);
        assert!((hp.delta - 1e-6 / (2.0 * (2.0f64 / 3.0).exp())).abs() < 1e-18);
        let var = 18.0 * 4.0 * (4.0 * (2.0f64 / 3.0).exp() / 1e-6).ln();
        match approx.update_noise() {
            Noise::Gaussian(s) => assert!((s * s - var).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn approx_rejects_zero_delta() {
        let qs = QuerySet::single(2, Query::MaxSum).unwrap();
        let cfg = KQueryConfig::new(qs.clone(), 10, 10, PrivacyParams::pure(1.0, 0.3).unwrap(), Variant::Approx);
        assert!(KQuery::new(cfg).is_err());
        assert!(KTwoLevel::new(qs.clone(), 10, PrivacyParams::pure(1.0, 0.3).unwrap(), Variant::Approx).is_err());
        assert!(KDoubling::for_queries(qs, 10, PrivacyParams::pure(1.0, 0.3).unwrap(), Variant::Approx).is_err());
    }

    #[test]
    fn restarted_thresholds_start_above_offset() {
        let qs = QuerySet::parse(2, "max,min").unwrap();
        let restart = Restart {
            t0: 5,
            s0: vec![7.0, 3.0],
            alpha_gamma: 1.5,
        };
        let cfg = KQueryConfig::new(qs, 100, 1, PrivacyParams::pure(1.0, 0.3).unwrap(), Variant::Pure).restarted(restart, 10.0);
        assert_eq!(cfg.cap(), 20);
        let k = cfg.k();
        assert!((k - 3.0 * (cfg.c() + cfg.err() + 1.5)).abs() < 1e-9);
        let m = KQuery::new(cfg).unwrap();
        assert_eq!(m.output(), &[7.0, 3.0]);
        assert_eq!(m.thresholds(), &[7.0 + k, 3.0 + k]);
    }

    #[test]
    fn two_level_zero_stream_is_zero() {
        let qs = QuerySet::parse(2, "max,min").unwrap();
        for (p, v) in [(PrivacyParams::pure(1.0, 0.3).unwrap(), Variant::Pure), (params(), Variant::Approx)] {
            let mut m = KTwoLevel::new(qs.clone(), 128, p, v).unwrap();
            let mut noise = NoiseSource::disabled();
            for _ in 0..128 {
                assert_eq!(m.step(&Row::zeros(2), &mut noise).unwrap(), &[0.0, 0.0]);
            }
        }
    }
}
