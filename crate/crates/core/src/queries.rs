//! Monotone sensitivity-1 histogram queries, index selection, and the two
//! error metrics (value error and top-k selection error).

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::streams::Stream;

/// Slack for deciding `ceil(q * d)` when `q * d` is integral up to rounding.
const RANK_EPS: f64 = 1e-9;

/// A monotone histogram query with sensitivity 1 and `g(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Query {
    MaxSum,
    MinSum,
    /// Smallest `c_j` with `|{i : c_i <= c_j}| >= q d`, for `q` in (0, 1].
    Quantile(f64),
    /// The sum of one column (0-based).
    CountColumn(usize),
    /// The `r`-th largest column sum, `r` in `1..=d`.
    TopKValue(usize),
}

impl Query {
    /// Checks that the query makes sense for dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Query::Quantile(q) if !(q > 0.0 && q <= 1.0) => {
                Err(invalid(format!("quantile q must lie in (0,1], got {q}")))
            }
            Query::CountColumn(i) if i >= d => Err(Error::OutOfRange { index: i, bound: d }),
            Query::TopKValue(r) if r == 0 || r > d => {
                Err(invalid(format!("top-k rank must lie in 1..={d}, got {r}")))
            }
            _ => Ok(()),
        }
    }

    /// The query value on `sums`, with the dimension taken from `sums`.
    pub fn eval(&self, sums: &[f64]) -> Result<f64> {
        if sums.is_empty() {
            return Err(invalid("query on an empty histogram"));
        }
        self.validate(sums.len())?;
        Ok(self.value(sums))
    }

    /// Like [`Query::eval`] for a query already validated against
    /// `sums.len()`.
    pub fn value(&self, sums: &[f64]) -> f64 {
        let d = sums.len();
        match *self {
            Query::MaxSum => sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Query::MinSum => sums.iter().copied().fold(f64::INFINITY, f64::min),
            Query::Quantile(q) => order_statistic(sums, quantile_rank(q, d)),
            Query::CountColumn(i) => sums[i],
            Query::TopKValue(r) => order_statistic(sums, d + 1 - r),
        }
    }
}

/// Rank `m = ceil(q d)` (1-based, ascending) selected by the quantile rule.
fn quantile_rank(q: f64, d: usize) -> usize {
    ((q * d as f64 - RANK_EPS).ceil() as usize).clamp(1, d)
}

/// The `m`-th smallest entry (1-based).
fn order_statistic(sums: &[f64], m: usize) -> f64 {
    let mut v = sums.to_vec();
    let (_, x, _) = v.select_nth_unstable_by(m - 1, |a, b| a.total_cmp(b));
    *x
}

/// `Quantile_q` of a vector: the smallest `c_j` with
/// `|{i : c_i <= c_j}| >= q d`. `q * d` that is not an integer rounds up.
pub fn quantile(q: f64, sums: &[f64]) -> Result<f64> {
    Query::Quantile(q).eval(sums)
}

/// Anything that maps a (possibly noisy) histogram to one real.
pub trait Statistic {
    fn value(&self, sums: &[f64]) -> f64;
}

impl Statistic for Query {
    fn value(&self, sums: &[f64]) -> f64 {
        Query::value(self, sums)
    }
}

/// `max_i g_i(s)` over a query set, the statistic the k-query segmenters
/// double on.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxOfQueries(pub QuerySet);

impl Statistic for MaxOfQueries {
    fn value(&self, sums: &[f64]) -> f64 {
        self.0
            .queries()
            .iter()
            .map(|q| q.value(sums))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `k >= 1` queries over histograms of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    d: usize,
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn new(d: usize, queries: Vec<Query>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("query set needs d >= 1"));
        }
        if queries.is_empty() {
            return Err(invalid("query set needs at least one query"));
        }
        for q in &queries {
            q.validate(d)?;
        }
        Ok(Self { d, queries })
    }

    pub fn single(d: usize, query: Query) -> Result<Self> {
        Self::new(d, vec![query])
    }

    /// Parses `max,min,quantile:0.5,col:0,topkval:3`.
    pub fn parse(d: usize, spec: &str) -> Result<Self> {
        let queries = spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Query>>>()?;
        Self::new(d, queries)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.queries.len()
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    /// All query values on `sums`.
    pub fn eval(&self, sums: &[f64]) -> Result<Vec<f64>> {
        if sums.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: sums.len(),
            });
        }
        Ok(self.values(sums))
    }

    pub(crate) fn values(&self, sums: &[f64]) -> Vec<f64> {
        self.queries.iter().map(|q| q.value(sums)).collect()
    }
}

impl FromStr for Query {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = || arg.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let int = || arg.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        match name {
            "max" | "maxsum" => Ok(Query::MaxSum),
            "min" | "minsum" => Ok(Query::MinSum),
            "quantile" | "q" => Ok(Query::Quantile(num()?)),
            "median" => Ok(Query::Quantile(0.5)),
            "col" | "count" => Ok(Query::CountColumn(int()?)),
            "topkval" | "top" => Ok(Query::TopKValue(int()?)),
            _ => Err(Error::Parse(format!("unknown query {s:?}"))),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::MaxSum => write!(f, "max"),
            Query::MinSum => write!(f, "min"),
            Query::Quantile(q) => write!(f, "quantile:{q}"),
            Query::CountColumn(i) => write!(f, "col:{i}"),
            Query::TopKValue(r) => write!(f, "topkval:{r}"),
        }
    }
}

impl fmt::Display for QuerySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.queries.iter().map(|q| q.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Indices (0-based) of the `k` largest sums, largest first. Ties go to the
/// lowest index.
pub fn select_indices(noisy_sums: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > noisy_sums.len() {
        return Err(invalid(format!(
            "cannot select {k} indices from {} sums",
            noisy_sums.len()
        )));
    }
    let mut idx: Vec<usize> = (0..noisy_sums.len()).collect();
    // Stable sort keeps ascending index order among equal values.
    idx.sort_by(|&a, &b| noisy_sums[b].total_cmp(&noisy_sums[a]));
    idx.truncate(k);
    Ok(idx)
}

/// Per-run error of a mechanism against the exact oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `max_t max_i |g_i(h^t) - a_i^t|`.
    pub max_abs_error: f64,
    /// `errors[t-1][i] = |g_i(h^t) - a_i^t|`.
    pub errors: Vec<Vec<f64>>,
}

/// Compares `outputs[t-1]` (one k-vector per step) with the true query
/// values on `stream`.
pub fn general_error(outputs: &[Vec<f64>], stream: &Stream, queries: &QuerySet) -> Result<ErrorReport> {
    if outputs.len() != stream.len() {
        return Err(Error::DimensionMismatch {
            expected: stream.len(),
            got: outputs.len(),
        });
    }
    if stream.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: queries.dim(),
            got: stream.dim(),
        });
    }
    let mut max_abs_error = 0.0f64;
    let mut errors = Vec::with_capacity(outputs.len());
    for (out, truth) in outputs.iter().zip(stream.prefixes()) {
        if out.len() != queries.k() {
            return Err(Error::DimensionMismatch {
                expected: queries.k(),
                got: out.len(),
            });
        }
        let truth: Vec<f64> = truth.iter().map(|&c| c as f64).collect();
        let row: Vec<f64> = queries
            .values(&truth)
            .iter()
            .zip(out)
            .map(|(g, a)| (g - a).abs())
            .collect();
        max_abs_error = row.iter().copied().fold(max_abs_error, f64::max);
        errors.push(row);
    }
    Ok(ErrorReport {
        max_abs_error,
        errors,
    })
}

/// `max_t max_l |c^t_{j_l} - c^t_{i_l}|`: the true sum of the `l`-th
/// reported index against the `l`-th largest true sum.
pub fn topk_select_error(index_outputs: &[Vec<usize>], stream: &Stream, k: usize) -> Result<f64> {
    if index_outputs.len() != stream.len() {
        return Err(Error::DimensionMismatch {
            expected: stream.len(),
            got: index_outputs.len(),
        });
    }
    let d = stream.dim();
    if k > d {
        return Err(invalid(format!("k = {k} exceeds d = {d}")));
    }
    let mut worst = 0u64;
    for (reported, truth) in index_outputs.iter().zip(stream.prefixes()) {
        if reported.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: reported.len(),
            });
        }
        let mut sorted = truth.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        for (l, &i) in reported.iter().enumerate() {
            let c = *truth.get(i).ok_or(Error::OutOfRange { index: i, bound: d })?;
            worst = worst.max(sorted[l].abs_diff(c));
        }
    }
    Ok(worst as f64)
}

/// Empirical `alpha` at failure probability `beta` over independent runs:
/// the smallest observed error exceeded by at most a `beta` fraction of
/// the runs.
pub fn empirical_alpha(max_errors: &[f64], beta: f64) -> f64 {
    if max_errors.is_empty() {
        return 0.0;
    }
    let mut v = max_errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let idx = ((1.0 - beta) * n as f64 - 1e-9).ceil() as usize;
    v[idx.clamp(1, n) - 1]
}
