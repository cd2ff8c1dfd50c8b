//! Differentially private continual observation of histogram queries.
//!
//! Streams of `d`-bit rows arrive one per time step. The mechanisms here
//! release, at every step, noisy estimates of monotone queries over the
//! running column sums: the maximum, quantiles, single columns, or any set
//! of `k` such queries.

pub mod error;
pub mod histogram;
pub mod kquery;
pub mod maxsum;
pub mod noise;
pub mod partition;
pub mod queries;
pub mod streams;

pub use error::{Error, Result};
pub use histogram::{BinaryTreeCounter, BinaryTreeHistogram, ContinualHistogram, CumulativeHistogram};
pub use kquery::{KDoubling, KQuery, KQueryConfig, KTwoLevel, Variant};
pub use maxsum::{BoundedConfig, BoundedMaxSum, DoublingSegmenter, ModifiedKnownMax, SegmentReport, TwoLevelMaxSum};
pub use noise::{Noise, NoiseMode, NoiseSource, PrivacyParams, RandomSource};
pub use partition::{Partitioner, ThresholdSchedule};
pub use queries::{Query, QuerySet, Statistic};
pub use streams::{Row, Stream};
