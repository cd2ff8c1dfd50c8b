//! Streams of `d`-bit rows, synthetic generators, the text file format, and
//! the exact column-sum oracle.
//!
//! Time steps are 1-based (`t = 1..=T`) wherever a function takes a time.
//! Column indices are 0-based.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::noise::RandomSource;

/// One element of the data universe `{0,1}^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Row(Vec<u8>);

impl Row {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid(format!("row entries must be 0 or 1, got {b}")));
        }
        Ok(Row(bits))
    }

    pub fn zeros(d: usize) -> Self {
        Row(vec![0; d])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Row with coordinate `i` flipped.
    pub fn flipped(&self, i: usize) -> Result<Row> {
        if i >= self.0.len() {
            return Err(Error::OutOfRange {
                index: i,
                bound: self.0.len(),
            });
        }
        let mut bits = self.0.clone();
        bits[i] ^= 1;
        Ok(Row(bits))
    }
}

/// A stream of at most `horizon` rows, each of dimension `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    d: usize,
    horizon: usize,
    rows: Vec<Row>,
}

impl Stream {
    pub fn new(d: usize, horizon: usize) -> Result<Self> {
        if d == 0 || horizon == 0 {
            return Err(invalid("stream needs d >= 1 and T >= 1"));
        }
        Ok(Self {
            d,
            horizon,
            rows: Vec::new(),
        })
    }

    pub fn from_rows(d: usize, horizon: usize, rows: Vec<Row>) -> Result<Self> {
        let mut s = Self::new(d, horizon)?;
        for r in rows {
            s.push(r)?;
        }
        Ok(s)
    }

    /// Builds a full-horizon stream from 0/1 slices.
    pub fn from_bits(d: usize, rows: &[&[u8]]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| Row::new(r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(d, rows.len().max(1), rows)
    }

    /// Appends a row. Rows beyond the horizon are rejected.
    pub fn push(&mut self, row: Row) -> Result<()> {
        if row.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.dim(),
            });
        }
        if self.rows.len() >= self.horizon {
            return Err(Error::HorizonExceeded {
                horizon: self.horizon,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Row at 1-based time `t`.
    pub fn row(&self, t: usize) -> Result<&Row> {
        if t == 0 || t > self.rows.len() {
            return Err(Error::OutOfRange {
                index: t,
                bound: self.rows.len(),
            });
        }
        Ok(&self.rows[t - 1])
    }

    /// Exact histograms after each row, `h^1, ..., h^len`.
    pub fn prefixes(&self) -> Prefixes<'_> {
        Prefixes {
            rows: self.rows.iter(),
            sums: vec![0; self.d],
        }
    }

    /// Largest column sum at the end of the stream.
    pub fn max_column_sum(&self) -> u64 {
        exact_prefix(self, self.len())
            .map(|h| h.sums.iter().copied().max().unwrap_or(0))
            .unwrap_or(0)
    }
}

pub struct Prefixes<'a> {
    rows: std::slice::Iter<'a, Row>,
    sums: Vec<u64>,
}

impl Iterator for Prefixes<'_> {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Vec<u64>> {
        let row = self.rows.next()?;
        for (s, &b) in self.sums.iter_mut().zip(row.bits()) {
            *s += u64::from(b);
        }
        Some(self.sums.clone())
    }
}

/// True column sums `c_i^t = sum_{t' <= t} x_i^{t'}` at time `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactHistogram {
    pub t: usize,
    pub sums: Vec<u64>,
}

impl ExactHistogram {
    pub fn as_f64(&self) -> Vec<f64> {
        self.sums.iter().map(|&c| c as f64).collect()
    }
}

/// The exact histogram after the first `t` rows; `t = 0` gives zeros.
pub fn exact_prefix(stream: &Stream, t: usize) -> Result<ExactHistogram> {
    if t > stream.len() {
        return Err(Error::OutOfRange {
            index: t,
            bound: stream.len(),
        });
    }
    let mut sums = vec![0u64; stream.dim()];
    for row in &stream.rows[..t] {
        for (s, &b) in sums.iter_mut().zip(row.bits()) {
            *s += u64::from(b);
        }
    }
    Ok(ExactHistogram { t, sums })
}

/// Replaces the row at time `t_star` (1-based) by `new_row`. The result is
/// an event-level neighbor of `stream`.
pub fn make_neighbors(stream: &Stream, t_star: usize, new_row: Row) -> Result<Stream> {
    if new_row.dim() != stream.dim() {
        return Err(Error::DimensionMismatch {
            expected: stream.dim(),
            got: new_row.dim(),
        });
    }
    stream.row(t_star)?;
    let mut out = stream.clone();
    out.rows[t_star - 1] = new_row;
    Ok(out)
}

/// Flips column `i` at time `flip_times[i]` (1-based) for every column with
/// a flip time. The result differs from `stream` in at most one entry per
/// column, possibly at different times.
pub fn make_independent_neighbors(stream: &Stream, flip_times: &[Option<usize>]) -> Result<Stream> {
    if flip_times.len() != stream.dim() {
        return Err(Error::DimensionMismatch {
            expected: stream.dim(),
            got: flip_times.len(),
        });
    }
    let mut out = stream.clone();
    for (i, t) in flip_times.iter().enumerate() {
        if let Some(t) = *t {
            let flipped = stream.row(t)?.flipped(i)?;
            out.rows[t - 1].0[i] = flipped.0[i];
        }
    }
    Ok(out)
}

/// Synthetic stream families.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    /// Each entry is 1 independently with its column's probability. A single
    /// probability applies to all columns. With `cap`, a column stops
    /// receiving ones once its sum reaches the cap.
    Bernoulli { p: Vec<f64>, cap: Option<u64> },
    /// Alternating blocks of `block` rows; entries are 1 with probability
    /// `on` in active blocks and `off` in quiet ones.
    Bursty { block: usize, on: f64, off: f64 },
    /// Every column has exactly `ones` ones at uniformly chosen times.
    Scattered { ones: usize },
    AllZero,
    /// Only column `i` is ever 1, at every step.
    SingleHotColumn(usize),
}

impl GeneratorSpec {
    fn validate(&self, d: usize, horizon: usize) -> Result<()> {
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(invalid(format!("probability {p} outside [0,1]")))
            }
        };
        match self {
            GeneratorSpec::Bernoulli { p, .. } => {
                if p.len() != 1 && p.len() != d {
                    return Err(invalid(format!(
                        "bernoulli needs 1 or {d} probabilities, got {}",
                        p.len()
                    )));
                }
                p.iter().try_for_each(|&x| prob(x))
            }
            GeneratorSpec::Bursty { block, on, off } => {
                if *block == 0 {
                    return Err(invalid("bursty block length must be positive"));
                }
                prob(*on)?;
                prob(*off)
            }
            GeneratorSpec::Scattered { ones } => {
                if *ones > horizon {
                    Err(invalid(format!("cannot place {ones} ones in {horizon} steps")))
                } else {
                    Ok(())
                }
            }
            GeneratorSpec::AllZero => Ok(()),
            GeneratorSpec::SingleHotColumn(i) => {
                if *i >= d {
                    Err(Error::OutOfRange { index: *i, bound: d })
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Generates a full stream of `horizon` rows.
pub fn generate(spec: &GeneratorSpec, d: usize, horizon: usize, rng: &mut RandomSource) -> Result<Stream> {
    if d == 0 || horizon == 0 {
        return Err(invalid("generator needs d >= 1 and T >= 1"));
    }
    spec.validate(d, horizon)?;
    let mut bits = vec![vec![0u8; d]; horizon];
    match spec {
        GeneratorSpec::Bernoulli { p, cap } => {
            let mut sums = vec![0u64; d];
            for row in bits.iter_mut() {
                for i in 0..d {
                    let pi = if p.len() == 1 { p[0] } else { p[i] };
                    if rng.bernoulli(pi) && cap.is_none_or(|c| sums[i] < c) {
                        row[i] = 1;
                        sums[i] += 1;
                    }
                }
            }
        }
        GeneratorSpec::Bursty { block, on, off } => {
            for (t, row) in bits.iter_mut().enumerate() {
                let p = if (t / block) % 2 == 0 { *on } else { *off };
                for b in row.iter_mut() {
                    *b = u8::from(rng.bernoulli(p));
                }
            }
        }
        GeneratorSpec::Scattered { ones } => {
            for i in 0..d {
                // Partial Fisher-Yates over the time indices.
                let mut times: Vec<usize> = (0..horizon).collect();
                for k in 0..*ones {
                    let j = k + rng.below(horizon - k);
                    times.swap(k, j);
                    bits[times[k]][i] = 1;
                }
            }
        }
        GeneratorSpec::AllZero => {}
        GeneratorSpec::SingleHotColumn(i) => {
            for row in bits.iter_mut() {
                row[*i] = 1;
            }
        }
    }
    let rows = bits.into_iter().map(Row).collect();
    Stream::from_rows(d, horizon, rows)
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    /// Parses `bernoulli:p=0.3`, `bernoulli:p=0.1/0.5,cap=32`,
    /// `bursty:block=64,on=0.9,off=0`, `scattered:ones=32`, `zero`, `hot:i=1`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let kv = parse_kv(args)?;
        let get = |k: &str| -> Result<&str> {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Parse(format!("generator {name:?} needs {k}=...")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{k}: {e}")))
        };
        match name.trim() {
            "bernoulli" => {
                let p = get("p")?
                    .split('/')
                    .map(|x| x.parse::<f64>().map_err(|e| Error::Parse(format!("p: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let cap = match kv.iter().find(|(k, _)| k == "cap") {
                    Some(_) => Some(int("cap")? as u64),
                    None => None,
                };
                Ok(GeneratorSpec::Bernoulli { p, cap })
            }
            "bursty" => Ok(GeneratorSpec::Bursty {
                block: int("block")?,
                on: num("on")?,
                off: num("off")?,
            }),
            "scattered" => Ok(GeneratorSpec::Scattered { ones: int("ones")? }),
            "zero" | "allzero" => Ok(GeneratorSpec::AllZero),
            "hot" => Ok(GeneratorSpec::SingleHotColumn(int("i")?)),
            other => Err(Error::Parse(format!("unknown generator {other:?}"))),
        }
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::Bernoulli { p, cap } => {
                let ps: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "bernoulli:p={}", ps.join("/"))?;
                if let Some(c) = cap {
                    write!(f, ",cap={c}")?;
                }
                Ok(())
            }
            GeneratorSpec::Bursty { block, on, off } => {
                write!(f, "bursty:block={block},on={on},off={off}")
            }
            GeneratorSpec::Scattered { ones } => write!(f, "scattered:ones={ones}"),
            GeneratorSpec::AllZero => write!(f, "zero"),
            GeneratorSpec::SingleHotColumn(i) => write!(f, "hot:i={i}"),
        }
    }
}

fn parse_kv(args: &str) -> Result<Vec<(String, String)>> {
    args.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("expected key=value, got {a:?}")))
        })
        .collect()
}

/// Serializes a stream: a `d=<d> T=<T>` header, then one comma-separated
/// 0/1 row per line.
pub fn format_stream(stream: &Stream) -> String {
    let mut out = format!("d={} T={}\n", stream.d, stream.horizon);
    for row in &stream.rows {
        let cells: Vec<&str> = row.0.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_stream(text: &str) -> Result<Stream> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty stream file".into()))?;
    let mut d = None;
    let mut horizon = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("d", v)) => d = v.parse::<usize>().ok(),
            Some(("T", v)) => horizon = v.parse::<usize>().ok(),
            _ => return Err(Error::Parse(format!("bad header field {field:?}"))),
        }
    }
    let (d, horizon) = match (d, horizon) {
        (Some(d), Some(t)) => (d, t),
        _ => return Err(Error::Parse(format!("header must be 'd=<d> T=<T>', got {header:?}"))),
    };
    let mut stream = Stream::new(d, horizon)?;
    for line in lines {
        let bits = line
            .split(',')
            .map(|c| match c.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Parse(format!("bad cell {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        stream.push(Row(bits))?;
    }
    Ok(stream)
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<Stream> {
    parse_stream(&fs::read_to_string(path)?)
}

pub fn write_stream(path: impl AsRef<Path>, stream: &Stream) -> Result<()> {
    fs::write(path, format_stream(stream))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RandomSource {
        RandomSource::new(11)
    }

    #[test]
    fn all_zero_and_single_hot() {
        let s = generate(&GeneratorSpec::AllZero, 3, 5, &mut rng()).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.rows().iter().all(|r| r.bits() == [0, 0, 0]));
        let s = generate(&GeneratorSpec::SingleHotColumn(1), 3, 4, &mut rng()).unwrap();
        assert!(s.rows().iter().all(|r| r.bits() == [0, 1, 0]));
        assert_eq!(exact_prefix(&s, 4).unwrap().sums, vec![0, 4, 0]);
    }

    #[test]
    fn bernoulli_concentrates() {
        let spec: GeneratorSpec = "bernoulli:p=0.5".parse().unwrap();
        let s = generate(&spec, 2, 10_000, &mut rng()).unwrap();
        for c in exact_prefix(&s, 10_000).unwrap().sums {
            assert!((c as f64 - 5000.0).abs() <= 3.0 * 2500f64.sqrt(), "{c}");
        }
    }

    #[test]
    fn capped_and_scattered() {
        let spec: GeneratorSpec = "bernoulli:p=0.9,cap=7".parse().unwrap();
        let s = generate(&spec, 3, 100, &mut rng()).unwrap();
        assert_eq!(exact_prefix(&s, 100).unwrap().sums, vec![7, 7, 7]);
        let spec: GeneratorSpec = "scattered:ones=32".parse().unwrap();
        let s = generate(&spec, 2, 1024, &mut rng()).unwrap();
        assert_eq!(exact_prefix(&s, 1024).unwrap().sums, vec![32, 32]);
    }

    #[test]
    fn generator_errors() {
        assert!(generate(&GeneratorSpec::AllZero, 0, 5, &mut rng()).is_err());
        assert!(generate(&GeneratorSpec::AllZero, 2, 0, &mut rng()).is_err());
        assert!(generate(&GeneratorSpec::SingleHotColumn(3), 3, 5, &mut rng()).is_err());
        assert!("nope".parse::<GeneratorSpec>().is_err());
        assert!("bernoulli:q=1".parse::<GeneratorSpec>().is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["bernoulli:p=0.1/0.5,cap=32", "bursty:block=64,on=0.9,off=0", "scattered:ones=3", "zero", "hot:i=1"] {
            let spec: GeneratorSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<GeneratorSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn exact_prefix_small() {
        let s = Stream::from_bits(2, &[&[1, 0], &[0, 1], &[1, 1]]).unwrap();
        assert_eq!(exact_prefix(&s, 3).unwrap().sums, vec![2, 2]);
        assert_eq!(exact_prefix(&s, 0).unwrap().sums, vec![0, 0]);
        assert!(exact_prefix(&s, 4).is_err());
        let all: Vec<Vec<u64>> = s.prefixes().collect();
        assert_eq!(all, vec![vec![1, 0], vec![1, 1], vec![2, 2]]);
    }

    #[test]
    fn horizon_and_dimension_enforced() {
        let mut s = Stream::new(2, 1).unwrap();
        assert!(matches!(s.push(Row::zeros(3)), Err(Error::DimensionMismatch { .. })));
        s.push(Row::zeros(2)).unwrap();
        assert_eq!(s.push(Row::zeros(2)), Err(Error::HorizonExceeded { horizon: 1 }));
        assert!(Row::new(vec![0, 2]).is_err());
    }

    #[test]
    fn neighbors() {
        let s = Stream::from_bits(2, &[&[1, 0], &[0, 1], &[1, 1]]).unwrap();
        let y = make_neighbors(&s, 2, Row::new(vec![1, 1]).unwrap()).unwrap();
        let differ: Vec<usize> = (1..=3).filter(|&t| s.row(t).unwrap() != y.row(t).unwrap()).collect();
        assert_eq!(differ, vec![2]);
        assert!(make_neighbors(&s, 4, Row::zeros(2)).is_err());
        assert!(make_neighbors(&s, 0, Row::zeros(2)).is_err());

        let z = make_independent_neighbors(&s, &[Some(1), Some(3)]).unwrap();
        assert_eq!(z.row(1).unwrap().bits(), [0, 0]);
        assert_eq!(z.row(2).unwrap().bits(), [0, 1]);
        assert_eq!(z.row(3).unwrap().bits(), [1, 0]);
        assert!(make_independent_neighbors(&s, &[Some(1)]).is_err());
        assert!(make_independent_neighbors(&s, &[Some(9), None]).is_err());
    }

    #[test]
    fn neighbor_histograms_differ_by_at_most_one() {
        // Every 0/1 stream with d = 2, T = 4 against every single-row change.
        let d = 2;
        let horizon = 4;
        let rows: Vec<Row> = (0..4u8).map(|m| Row::new(vec![m & 1, (m >> 1) & 1]).unwrap()).collect();
        for code in 0..(1usize << (d * horizon)) {
            let bits: Vec<Row> = (0..horizon).map(|t| rows[(code >> (2 * t)) & 3].clone()).collect();
            let x = Stream::from_rows(d, horizon, bits).unwrap();
            for t_star in 1..=horizon {
                for r in &rows {
                    let y = make_neighbors(&x, t_star, r.clone()).unwrap();
                    for (hx, hy) in x.prefixes().zip(y.prefixes()) {
                        let gap = hx.iter().zip(&hy).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
                        assert!(gap <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn file_format_round_trip() {
        let s = generate(&"bernoulli:p=0.4".parse().unwrap(), 3, 9, &mut rng()).unwrap();
        let text = format_stream(&s);
        assert!(text.starts_with("d=3 T=9\n"));
        assert_eq!(parse_stream(&text).unwrap(), s);
        assert!(parse_stream("d=2 T=1\n1,0\n0,1\n").is_err());
        assert!(parse_stream("d=2\n1,0\n").is_err());
        assert!(parse_stream("d=2 T=3\n1,2\n").is_err());
    }
}
