//! Uniform wrapper over the library mechanisms.

use contobs::kquery::{KDoubling, KQuery, KQueryConfig, KTwoLevel, Variant};
use contobs::maxsum::{BoundedConfig, BoundedMaxSum, DoublingSegmenter, SegmentReport, TwoLevelMaxSum};
use contobs::noise::{NoiseSource, PrivacyParams};
use contobs::queries::{Query, QuerySet};
use contobs::streams::Row;

use crate::config::MechanismKind;
use crate::HarnessError;

/// Parameters needed to build one mechanism instance.
#[derive(Debug, Clone)]
pub struct BuildParams {
    pub kind: MechanismKind,
    pub queries: QuerySet,
    pub horizon: usize,
    pub params: PrivacyParams,
    pub c_max: usize,
    pub k_override: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Instance {
    Bounded(BoundedMaxSum),
    Doubling(DoublingSegmenter<Query>),
    TwoLevel(TwoLevelMaxSum),
    KQuery(KQuery),
    KDoubling(KDoubling),
    KTwoLevel(KTwoLevel),
}

/// A mechanism plus the bookkeeping the harness reads after every step.
#[derive(Debug, Clone)]
pub struct Running {
    pub instance: Instance,
    queries: QuerySet,
    params: PrivacyParams,
    output: Vec<f64>,
    cap_ok: bool,
}

pub fn validate(kind: MechanismKind, queries: &QuerySet, params: &PrivacyParams) -> Result<(), HarnessError> {
    if kind.max_only() && queries.queries() != [Query::MaxSum] {
        return Err(HarnessError::Config(format!(
            "mechanism {kind} answers only the query 'max', got '{queries}'"
        )));
    }
    if kind.needs_delta() && params.is_pure() {
        return Err(HarnessError::Config(format!("mechanism {kind} needs delta > 0")));
    }
    Ok(())
}

impl Running {
    pub fn build(p: &BuildParams) -> Result<Self, HarnessError> {
        validate(p.kind, &p.queries, &p.params)?;
        let d = p.queries.dim();
        let PrivacyParams { epsilon, beta, .. } = p.params;
        let variant = if p.kind.needs_delta() { Variant::Approx } else { Variant::Pure };
        let instance = match p.kind {
            MechanismKind::Bounded => {
                let mut cfg = BoundedConfig::new(d, p.horizon, p.c_max, epsilon, beta)?;
                cfg.k_override = p.k_override;
                Instance::Bounded(BoundedMaxSum::new(cfg)?)
            }
            MechanismKind::Doubling => {
                Instance::Doubling(DoublingSegmenter::new(Query::MaxSum, d, p.horizon, epsilon, beta)?)
            }
            MechanismKind::TwoLevel => Instance::TwoLevel(TwoLevelMaxSum::new(d, p.horizon, epsilon, beta)?),
            MechanismKind::Kquery | MechanismKind::KqueryEd => {
                let mut cfg = KQueryConfig::new(p.queries.clone(), p.horizon, p.c_max, p.params, variant);
                cfg.k_override = p.k_override;
                Instance::KQuery(KQuery::new(cfg)?)
            }
            MechanismKind::Kdoubling | MechanismKind::KdoublingEd => {
                Instance::KDoubling(KDoubling::for_queries(p.queries.clone(), p.horizon, p.params, variant)?)
            }
            MechanismKind::KtwoLevel | MechanismKind::KtwoLevelEd => {
                Instance::KTwoLevel(KTwoLevel::new(p.queries.clone(), p.horizon, p.params, variant)?)
            }
        };
        Ok(Self {
            instance,
            output: vec![0.0; p.queries.k()],
            queries: p.queries.clone(),
            params: p.params,
            cap_ok: true,
        })
    }

    /// Feeds one row and returns the k answers for this step. Segmenters
    /// answer from the histogram of their latest segment.
    pub fn step(&mut self, row: &Row, noise: &mut NoiseSource) -> Result<&[f64], HarnessError> {
        match &mut self.instance {
            Instance::Bounded(m) => {
                self.output[0] = m.step(row, noise)?;
                self.cap_ok &= m.num_closes() <= m.partitioner().cap();
            }
            Instance::Doubling(m) => {
                if let Some(seg) = m.step(row, noise)? {
                    self.output = self.queries.eval(&seg.hist)?;
                }
                self.cap_ok &= m.num_segments() <= m.partitioner().cap();
            }
            Instance::KDoubling(m) => {
                if let Some(seg) = m.step(row, noise)? {
                    self.output = self.queries.eval(&seg.hist)?;
                }
                self.cap_ok &= m.num_segments() <= m.partitioner().cap();
            }
            Instance::TwoLevel(m) => {
                self.output[0] = m.step(row, noise)?;
                let inner = m.current_inner();
                self.cap_ok &= inner.num_closes() <= inner.partitioner().cap();
                self.cap_ok &= m.num_segments() <= m.outer().partitioner().cap();
            }
            Instance::KQuery(m) => {
                self.output.copy_from_slice(m.step(row, noise)?);
                self.cap_ok &= m.num_closes() <= m.cap();
            }
            Instance::KTwoLevel(m) => {
                self.output.copy_from_slice(m.step(row, noise)?);
                let inner = m.current_inner();
                self.cap_ok &= inner.num_closes() <= inner.cap();
                self.cap_ok &= m.num_segments() <= m.outer().partitioner().cap();
            }
        }
        Ok(&self.output)
    }

    /// Closes of bounded-style partitioners, all instances combined.
    pub fn intervals(&self) -> usize {
        match &self.instance {
            Instance::Bounded(m) => m.num_closes(),
            Instance::KQuery(m) => m.num_closes(),
            Instance::TwoLevel(m) => m.num_inner_closes(),
            Instance::KTwoLevel(m) => m.num_inner_closes(),
            Instance::Doubling(_) | Instance::KDoubling(_) => 0,
        }
    }

    /// Doubling segments, zero for single-level bounded mechanisms.
    pub fn segments(&self) -> usize {
        self.segment_reports().map_or(0, |s| s.len())
    }

    pub fn segment_reports(&self) -> Option<Vec<SegmentReport>> {
        match &self.instance {
            Instance::Doubling(m) => Some(m.segments()),
            Instance::KDoubling(m) => Some(m.segments()),
            Instance::TwoLevel(m) => Some(m.outer().segments()),
            Instance::KTwoLevel(m) => Some(m.outer().segments()),
            Instance::Bounded(_) | Instance::KQuery(_) => None,
        }
    }

    /// Bound on the doubling histogram's noise after `l` segments.
    pub fn gap_bound(&self, l: f64) -> Option<f64> {
        match &self.instance {
            Instance::Doubling(m) => Some(m.gap_bound(l)),
            Instance::KDoubling(m) => Some(m.gap_bound(l)),
            Instance::TwoLevel(m) => Some(m.outer().gap_bound(l)),
            Instance::KTwoLevel(m) => Some(m.outer().gap_bound(l)),
            Instance::Bounded(_) | Instance::KQuery(_) => None,
        }
    }

    pub fn params(&self) -> PrivacyParams {
        self.params
    }

    /// False once any partitioner exceeded its close cap.
    pub fn cap_ok(&self) -> bool {
        self.cap_ok
    }
}
