//! Continual histogram mechanisms: a running, noisy `d`-vector of sums over
//! a stream of at most `n` count vectors.
//!
//! The partitioning mechanisms feed these one interval at a time and read
//! the noisy running sums back, so every implementation here only ever
//! sees inputs chosen after its own previous outputs.

use crate::error::{invalid, Error, Result};
use crate::noise::{Noise, NoiseSource, PrivacyParams};

/// Uniform contract of a continual histogram mechanism.
pub trait ContinualHistogram {
    fn dim(&self) -> usize;

    /// Maximum number of inserts.
    fn capacity(&self) -> usize;

    /// Inserts so far.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feeds the next count vector.
    fn insert(&mut self, counts: &[u64], noise: &mut NoiseSource) -> Result<()>;

    /// Noisy running sums after the inserts so far.
    fn current(&self) -> &[f64];

    /// Additive bound on every output over a stream of `n` inserts, holding
    /// with probability at least `1 - beta/3`.
    fn err_bound(&self, n: usize, beta: f64) -> f64;
}

/// A node `[(k-1) 2^level + 1, k 2^level]` of the dyadic tree over `[1, n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicInterval {
    pub level: u32,
    /// 1-based position among the nodes of its level.
    pub index: usize,
}

impl DyadicInterval {
    pub fn start(&self) -> usize {
        (self.index - 1) * (1usize << self.level) + 1
    }

    pub fn end(&self) -> usize {
        self.index * (1usize << self.level)
    }
}

/// Disjoint dyadic intervals covering `[1, t]`, largest first. There is one
/// interval per set bit of `t`.
pub fn dyadic_decomposition(t: usize, n: usize) -> Result<Vec<DyadicInterval>> {
    if t == 0 || t > n {
        return Err(Error::OutOfRange { index: t, bound: n });
    }
    let mut out = Vec::with_capacity(t.count_ones() as usize);
    let mut covered = 0usize;
    for level in (0..usize::BITS - t.leading_zeros()).rev() {
        if t & (1 << level) != 0 {
            out.push(DyadicInterval {
                level,
                index: covered / (1 << level) + 1,
            });
            covered += 1 << level;
        }
    }
    Ok(out)
}

fn floor_log2(n: usize) -> u32 {
    usize::BITS - 1 - n.leading_zeros()
}

/// Number of tree levels, `floor(log2 n) + 1`.
pub fn tree_levels(n: usize) -> u32 {
    floor_log2(n.max(1)) + 1
}

/// Additive error of a single binary-tree counter at privacy `epsilon`:
/// `4 log n log(2n/beta) / epsilon`, exceeded with probability `beta`.
pub fn counter_err_bound(n: usize, epsilon: f64, beta: f64) -> f64 {
    let n = n as f64;
    4.0 * n.log2() * (2.0 * n / beta).log2() / epsilon
}

/// Binary tree mechanism for one counter. Node noise is drawn when a node
/// completes, so only nodes inside `[1, n]` ever hold noise.
#[derive(Debug, Clone)]
pub struct BinaryTreeCounter {
    capacity: usize,
    noise: Noise,
    t: usize,
    /// Exact sum of the latest completed node per level.
    exact: Vec<u64>,
    /// Noisy sum of the latest completed node per level.
    noisy: Vec<f64>,
    current: f64,
}

impl BinaryTreeCounter {
    /// Counter for `n` inserts with per-node noise `noise`.
    pub fn with_noise(n: usize, noise: Noise) -> Result<Self> {
        if n == 0 {
            return Err(invalid("binary tree needs n >= 1"));
        }
        let levels = tree_levels(n) as usize;
        Ok(Self {
            capacity: n,
            noise,
            t: 0,
            exact: vec![0; levels],
            noisy: vec![0.0; levels],
            current: 0.0,
        })
    }

    /// Counter at `(epsilon, delta)`: per-node Lap((floor(log n)+1)/eps) when
    /// `delta = 0`, otherwise N(0, 2 ln(1.25/delta)(floor(log n)+1)/eps^2).
    pub fn new(n: usize, epsilon: f64, delta: f64) -> Result<Self> {
        Self::with_noise(n, node_noise(n, epsilon, delta, 1)?)
    }

    pub fn node_noise(&self) -> Noise {
        self.noise
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn insert(&mut self, x: u64, noise: &mut NoiseSource) -> Result<()> {
        if self.t >= self.capacity {
            return Err(Error::HorizonExceeded {
                horizon: self.capacity,
            });
        }
        self.t += 1;
        let level = self.t.trailing_zeros() as usize;
        // The new node spans the latest nodes of all lower levels plus x.
        let exact = x + self.exact[..level].iter().sum::<u64>();
        self.exact[level] = exact;
        self.noisy[level] = exact as f64 + noise.sample(self.noise)?;
        self.current = (0..self.noisy.len())
            .filter(|&l| self.t & (1 << l) != 0)
            .map(|l| self.noisy[l])
            .sum();
        Ok(())
    }

    pub fn current(&self) -> f64 {
        self.current
    }
}

/// Per-node noise for a counter that is one of `share` counters composed
/// into an `(epsilon, delta)` histogram under L-infinity neighbors.
fn node_noise(n: usize, epsilon: f64, delta: f64, share: usize) -> Result<Noise> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let levels = f64::from(tree_levels(n));
    let share = share as f64;
    if delta == 0.0 {
        Ok(Noise::Laplace(levels * share / epsilon))
    } else if delta > 0.0 && delta < 1.0 {
        let var = 2.0 * (1.25 / delta).ln() * levels * share / (epsilon * epsilon);
        Ok(Noise::Gaussian(var.sqrt()))
    } else {
        Err(invalid(format!("delta must lie in [0,1), got {delta}")))
    }
}

/// `d` binary-tree counters composed into an `(epsilon, delta)` histogram.
///
/// Neighboring inputs may differ in every coordinate of one insert, so the
/// per-counter budget is `epsilon / d` for Laplace noise and the Gaussian
/// variance scales with `d`.
#[derive(Debug, Clone)]
pub struct BinaryTreeHistogram {
    params: PrivacyParams,
    counters: Vec<BinaryTreeCounter>,
    current: Vec<f64>,
}

impl BinaryTreeHistogram {
    pub fn new(d: usize, n: usize, params: PrivacyParams) -> Result<Self> {
        if d == 0 {
            return Err(invalid("histogram needs d >= 1"));
        }
        let noise = node_noise(n, params.epsilon, params.delta, d)?;
        let counter = BinaryTreeCounter::with_noise(n, noise)?;
        Ok(Self {
            params,
            counters: vec![counter; d],
            current: vec![0.0; d],
        })
    }

    pub fn params(&self) -> PrivacyParams {
        self.params
    }

    pub fn node_noise(&self) -> Noise {
        self.counters[0].node_noise()
    }
}

/// `err(n)` for the composed tree histogram.
///
/// Pure: `4 d log(n) log(6 d n / beta) / epsilon`.
/// Approximate: `4 sqrt(d) log(n) sqrt((ln n + ln(3d/beta)) ln(1.25/delta)) / epsilon`.
pub fn tree_histogram_err(d: usize, n: usize, params: &PrivacyParams, beta: f64) -> f64 {
    let (df, nf) = (d as f64, n as f64);
    if params.is_pure() {
        4.0 * df * nf.log2() * (6.0 * df * nf / beta).log2() / params.epsilon
    } else {
        let spread = (nf.ln() + (3.0 * df / beta).ln()) * (1.25 / params.delta).ln();
        4.0 * df.sqrt() * nf.log2() * spread.sqrt() / params.epsilon
    }
}

impl ContinualHistogram for BinaryTreeHistogram {
    fn dim(&self) -> usize {
        self.counters.len()
    }

    fn capacity(&self) -> usize {
        self.counters[0].capacity
    }

    fn len(&self) -> usize {
        self.counters[0].len()
    }

    fn insert(&mut self, counts: &[u64], noise: &mut NoiseSource) -> Result<()> {
        check_dim(self.dim(), counts)?;
        if self.len() >= self.capacity() {
            return Err(Error::HorizonExceeded {
                horizon: self.capacity(),
            });
        }
        for ((counter, &x), out) in self.counters.iter_mut().zip(counts).zip(&mut self.current) {
            counter.insert(x, noise)?;
            *out = counter.current();
        }
        Ok(())
    }

    fn current(&self) -> &[f64] {
        &self.current
    }

    fn err_bound(&self, n: usize, beta: f64) -> f64 {
        tree_histogram_err(self.dim(), n, &self.params, beta)
    }
}

fn check_dim(d: usize, counts: &[u64]) -> Result<()> {
    if counts.len() != d {
        Err(Error::DimensionMismatch {
            expected: d,
            got: counts.len(),
        })
    } else {
        Ok(())
    }
}

/// Running sums with fresh noise added to every coordinate on every insert,
/// so the noise after `j` inserts is a sum of `j` draws.
#[derive(Debug, Clone)]
pub struct CumulativeHistogram {
    capacity: usize,
    noise: Noise,
    kind: Cumulative,
    inserts: usize,
    sums: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cumulative {
    Laplace { d: f64, epsilon: f64 },
    Gaussian { d: f64, epsilon: f64, delta: f64 },
}

impl CumulativeHistogram {
    /// Lap(2d/epsilon) per coordinate per insert.
    pub fn laplace(d: usize, n: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let df = d as f64;
        Self::build(d, n, Noise::Laplace(2.0 * df / epsilon), Cumulative::Laplace { d: df, epsilon })
    }

    /// N(0, 2d ln(2e^{eps/2}/delta)/eps^2) per coordinate per insert.
    pub fn gaussian(d: usize, n: usize, epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("gaussian histogram needs delta in (0,1), got {delta}")));
        }
        let df = d as f64;
        let var = 2.0 * df * gaussian_log_term(epsilon, delta) / (epsilon * epsilon);
        Self::build(
            d,
            n,
            Noise::Gaussian(var.sqrt()),
            Cumulative::Gaussian { d: df, epsilon, delta },
        )
    }

    fn build(d: usize, n: usize, noise: Noise, kind: Cumulative) -> Result<Self> {
        if d == 0 {
            return Err(invalid("histogram needs d >= 1"));
        }
        Ok(Self {
            capacity: n,
            noise,
            kind,
            inserts: 0,
            sums: vec![0.0; d],
        })
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    /// Bound on the accumulated noise `|Gamma_i^j|` of every coordinate
    /// after `j` inserts, union-bounded over `segments` inserts and `d`
    /// coordinates with total failure `beta/3`.
    ///
    /// Laplace: `(4d/eps) sqrt(2j) log(3 d segments / beta)`.
    /// Gaussian: `(2/eps) sqrt(j d ln(2e^{eps/2}/delta) log(3 d segments / beta))`.
    pub fn gap_bound(&self, j: usize, segments: f64, beta: f64) -> f64 {
        let j = j as f64;
        match self.kind {
            Cumulative::Laplace { d, epsilon } => {
                4.0 * d / epsilon * (2.0 * j).sqrt() * (3.0 * d * segments / beta).log2()
            }
            Cumulative::Gaussian { d, epsilon, delta } => {
                2.0 / epsilon
                    * (j * d * gaussian_log_term(epsilon, delta) * (3.0 * d * segments / beta).log2()).sqrt()
            }
        }
    }
}

/// `ln(2 e^{eps/2} / delta)`.
pub(crate) fn gaussian_log_term(epsilon: f64, delta: f64) -> f64 {
    (2.0 / delta).ln() + epsilon / 2.0
}

impl ContinualHistogram for CumulativeHistogram {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn capacity(&self) -> usize {
        self.capacity
    }

    fn len(&self) -> usize {
        self.inserts
    }

    fn insert(&mut self, counts: &[u64], noise: &mut NoiseSource) -> Result<()> {
        check_dim(self.dim(), counts)?;
        if self.inserts >= self.capacity {
            return Err(Error::HorizonExceeded {
                horizon: self.capacity,
            });
        }
        self.inserts += 1;
        for (s, &c) in self.sums.iter_mut().zip(counts) {
            *s += c as f64 + noise.sample(self.noise)?;
        }
        Ok(())
    }

    fn current(&self) -> &[f64] {
        &self.sums
    }

    fn err_bound(&self, n: usize, beta: f64) -> f64 {
        self.gap_bound(n, n as f64, beta)
    }
}
