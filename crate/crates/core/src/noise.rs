//! Randomness primitives: seeded sources, Laplace and Gaussian draws with a
//! switchable noise mode, and the tail bounds used to size every mechanism's
//! error budget.
//!
//! Log conventions: functions here use the natural log wherever a tail
//! probability is inverted. The mechanism modules use base 2 wherever their
//! calibration formulas write `log`, which only makes those bounds larger.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Open01, StandardNormal};

use crate::error::{invalid, Error, Result};

/// A seeded, reproducible stream of random bits.
///
/// Two sources built from the same seed produce identical sequences.
/// [`RandomSource::split`] derives a child with its own state.
#[derive(Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Source for trial `trial` of an experiment seeded with `seed`.
    ///
    /// Every trial reads its own ChaCha stream, so trials can run in any
    /// order or in parallel without changing their draws.
    pub fn for_trial(seed: u64, trial: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(trial.wrapping_add(1));
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child source. The parent advances, so
    /// successive splits differ.
    pub fn split(&mut self) -> RandomSource {
        let child_seed = self.rng.next_u64();
        let mut rng = ChaCha20Rng::seed_from_u64(child_seed);
        rng.set_stream(self.rng.next_u64());
        RandomSource {
            seed: child_seed,
            rng,
        }
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomSource").field("seed", &self.seed).finish()
    }
}

/// How a [`NoiseSource`] produces its samples.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseMode {
    /// Fresh draws from the requested distribution.
    Live,
    /// Every sample is exactly zero.
    Disabled,
    /// Replays the given values in order, regardless of the requested
    /// distribution. Running out is an error.
    Recorded(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Laplace,
    Gaussian,
}

/// One sample handed out by a [`NoiseSource`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub kind: NoiseKind,
    /// Laplace scale `b` or Gaussian standard deviation.
    pub scale: f64,
    pub value: f64,
}

/// The noise generator a mechanism owns. Sub-mechanisms borrow it, so one
/// top-level mechanism consumes a single canonical sequence of draws that
/// can be logged and replayed through [`NoiseMode::Recorded`].
#[derive(Debug, Clone)]
pub struct NoiseSource {
    mode: NoiseMode,
    rng: RandomSource,
    cursor: usize,
    log: Option<Vec<NoiseDraw>>,
}

impl NoiseSource {
    pub fn new(mode: NoiseMode, rng: RandomSource) -> Self {
        Self {
            mode,
            rng,
            cursor: 0,
            log: None,
        }
    }

    pub fn live(seed: u64) -> Self {
        Self::new(NoiseMode::Live, RandomSource::new(seed))
    }

    pub fn disabled() -> Self {
        Self::new(NoiseMode::Disabled, RandomSource::new(0))
    }

    pub fn recorded(values: Vec<f64>) -> Self {
        Self::new(NoiseMode::Recorded(values), RandomSource::new(0))
    }

    /// Keep a log of every sample handed out from now on.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> &NoiseMode {
        &self.mode
    }

    pub fn log(&self) -> Option<&[NoiseDraw]> {
        self.log.as_deref()
    }

    /// Values of the logged draws, suitable for [`NoiseMode::Recorded`].
    pub fn logged_values(&self) -> Vec<f64> {
        self.log
            .as_ref()
            .map(|l| l.iter().map(|d| d.value).collect())
            .unwrap_or_default()
    }

    /// Number of samples handed out so far.
    pub fn consumed(&self) -> usize {
        self.cursor
    }

    /// A draw from Lap(0, scale), by inverse CDF in live mode.
    pub fn laplace(&mut self, scale: f64) -> Result<f64> {
        check_scale(scale, "laplace scale")?;
        let value = match &self.mode {
            NoiseMode::Live => laplace_from_uniform(scale, self.rng.uniform_open()),
            NoiseMode::Disabled => 0.0,
            NoiseMode::Recorded(values) => replay(values, self.cursor)?,
        };
        self.record(NoiseKind::Laplace, scale, value);
        Ok(value)
    }

    /// A draw from N(0, sigma^2).
    pub fn gaussian(&mut self, sigma: f64) -> Result<f64> {
        check_scale(sigma, "gaussian sigma")?;
        let value = match &self.mode {
            NoiseMode::Live => sigma * self.rng.standard_normal(),
            NoiseMode::Disabled => 0.0,
            NoiseMode::Recorded(values) => replay(values, self.cursor)?,
        };
        self.record(NoiseKind::Gaussian, sigma, value);
        Ok(value)
    }

    /// A draw from the given distribution.
    pub fn sample(&mut self, dist: Noise) -> Result<f64> {
        match dist {
            Noise::Laplace(b) => self.laplace(b),
            Noise::Gaussian(sigma) => self.gaussian(sigma),
        }
    }

    fn record(&mut self, kind: NoiseKind, scale: f64, value: f64) {
        self.cursor += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(NoiseDraw { kind, scale, value });
        }
    }
}

fn replay(values: &[f64], cursor: usize) -> Result<f64> {
    values
        .get(cursor)
        .copied()
        .ok_or(Error::NoiseExhausted { consumed: cursor })
}

fn check_scale(scale: f64, what: &str) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be positive and finite, got {scale}")))
    }
}

/// A noise distribution with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Laplace with scale `b`.
    Laplace(f64),
    /// Gaussian with standard deviation `sigma`.
    Gaussian(f64),
}

/// Inverse CDF of Lap(0, scale) at `u` in (0, 1).
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// `P(|Y| >= t*b)` for `Y ~ Lap(b)`, which is `exp(-t)` for any scale.
pub fn laplace_tail(t: f64) -> f64 {
    (-t).exp()
}

/// Upper bound on `P(X >= t)` for `X ~ N(0, sigma^2)`: `exp(-t^2 / (2 sigma^2))`.
pub fn gaussian_tail_bound(t: f64, sigma: f64) -> f64 {
    (-(t * t) / (2.0 * sigma * sigma)).exp()
}

/// Bound exceeded with probability at most `beta_s` by a sum of `k`
/// independent Lap(`scale`) variables:
/// `2 b sqrt(2 ln(2/beta_s)) max(sqrt(k), sqrt(ln(2/beta_s)))`.
pub fn sum_laplace_bound(k: usize, scale: f64, beta_s: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("sum_laplace_bound needs k >= 1"));
    }
    check_scale(scale, "laplace scale")?;
    if !(beta_s > 0.0 && beta_s < 1.0) {
        return Err(invalid(format!("beta_s must lie in (0,1), got {beta_s}")));
    }
    let l = (2.0 / beta_s).ln();
    Ok(2.0 * scale * (2.0 * l).sqrt() * (k as f64).sqrt().max(l.sqrt()))
}

/// Privacy and accuracy parameters shared by every mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    /// Zero selects the pure-DP code paths.
    pub delta: f64,
    /// Failure probability of the accuracy guarantees.
    pub beta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, beta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid(format!("delta must lie in [0,1), got {delta}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("beta must lie in (0,1), got {beta}")));
        }
        Ok(Self {
            epsilon,
            delta,
            beta,
        })
    }

    pub fn pure(epsilon: f64, beta: f64) -> Result<Self> {
        Self::new(epsilon, 0.0, beta)
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }

    /// Same accuracy target with a different privacy budget.
    pub(crate) fn with_budget(&self, epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            beta: self.beta,
        }
    }
}

/// Reads a sample log: one real per line, blank lines and `#` comments
/// ignored.
pub fn read_sample_log(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    parse_sample_log(&text)
}

pub fn parse_sample_log(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad sample {l:?}: {e}")))
        })
        .collect()
}

pub fn write_sample_log(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for v in values {
        // `{:?}` prints the shortest representation that round-trips.
        writeln!(f, "{v:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_inverse_cdf_points() {
        assert_eq!(laplace_from_uniform(1.0, 0.5), 0.0);
        assert!((laplace_from_uniform(1.0, 0.75) - 2f64.ln()).abs() < 1e-12);
        assert!((laplace_from_uniform(1.0, 0.25) + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disabled_mode_is_zero() {
        let mut n = NoiseSource::disabled().with_log();
        assert_eq!(n.laplace(2.0).unwrap(), 0.0);
        assert_eq!(n.gaussian(3.0).unwrap(), 0.0);
        assert!(n.log().unwrap().iter().all(|d| d.value == 0.0));
    }

    #[test]
    fn bad_scales_rejected() {
        let mut n = NoiseSource::live(1);
        assert!(matches!(n.laplace(0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(n.laplace(-1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(n.gaussian(0.0), Err(Error::InvalidParameter(_))));
        assert!(n.gaussian(f64::NAN).is_err());
    }

    #[test]
    fn recorded_replays_then_errors() {
        let mut n = NoiseSource::recorded(vec![0.5, -1.0]);
        assert_eq!(n.laplace(1.0).unwrap(), 0.5);
        assert_eq!(n.gaussian(1.0).unwrap(), -1.0);
        assert_eq!(n.laplace(1.0), Err(Error::NoiseExhausted { consumed: 2 }));
    }

    #[test]
    fn live_log_replays_identically() {
        let mut live = NoiseSource::live(7).with_log();
        let a: Vec<f64> = (0..20).map(|i| {
            if i % 2 == 0 { live.laplace(1.5).unwrap() } else { live.gaussian(0.5).unwrap() }
        }).collect();
        let mut replay = NoiseSource::recorded(live.logged_values());
        let b: Vec<f64> = (0..20).map(|_| replay.laplace(1.0).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_samples() {
        let mut a = NoiseSource::live(42);
        let mut b = NoiseSource::live(42);
        for _ in 0..100 {
            assert_eq!(a.laplace(1.0).unwrap().to_bits(), b.laplace(1.0).unwrap().to_bits());
        }
    }

    #[test]
    fn split_children_differ() {
        let mut parent = RandomSource::new(3);
        let mut c1 = parent.split();
        let mut c2 = parent.split();
        let x: Vec<f64> = (0..8).map(|_| c1.uniform_open()).collect();
        let y: Vec<f64> = (0..8).map(|_| c2.uniform_open()).collect();
        assert_ne!(x, y);
        let mut t0 = RandomSource::for_trial(3, 0);
        let mut t1 = RandomSource::for_trial(3, 1);
        assert_ne!(t0.uniform_open(), t1.uniform_open());
    }

    #[test]
    fn tail_formulas() {
        assert_eq!(laplace_tail(0.0), 1.0);
        assert!((laplace_tail(1.0) - 0.36787944117144233).abs() < 1e-15);
        let (t, beta) = (1024.0f64, 1.0 / 3.0);
        let x = (2.0 * t / beta).ln();
        assert!((laplace_tail(x) - beta / (2.0 * t)).abs() < 1e-15);
    }

    #[test]
    fn sum_laplace_bound_plugged() {
        let beta_s = 2.0 / std::f64::consts::E.powi(2);
        let v = sum_laplace_bound(1, 1.0, beta_s).unwrap();
        assert!((v - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(sum_laplace_bound(0, 1.0, 0.1).is_err());
        assert!(sum_laplace_bound(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn privacy_params_validation() {
        assert!(PrivacyParams::new(0.0, 0.0, 0.3).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 0.3).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 0.0).is_err());
        assert!(PrivacyParams::new(1.0, 1e-6, 0.3).unwrap().delta > 0.0);
        assert!(PrivacyParams::pure(1.0, 0.3).unwrap().is_pure());
    }

    #[test]
    fn sample_log_round_trip() {
        let dir = std::env::temp_dir().join(format!("contobs-noise-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.txt");
        let values = vec![0.1, -2.5e-300, 3.0, f64::MIN_POSITIVE];
        write_sample_log(&path, &values).unwrap();
        assert_eq!(read_sample_log(&path).unwrap(), values);
        assert!(parse_sample_log("# c\n1.0\n\nx\n").is_err());
    }
}
