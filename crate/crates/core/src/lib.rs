//! Auditing occupation classifiers for social norm bias: whether a
//! classifier's confidence tracks how strongly a biography follows the gender
//! norms of its occupation, and how group-fairness interventions change that.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod corpus;
pub mod error;
pub mod features;
pub mod interventions;
pub mod linear;
pub mod metrics;
pub mod norm;
pub mod seed;
pub mod synth;
pub mod text;

pub use corpus::{Biography, Corpus, DatasetSplit, IndicatorSet, PronounGroup, SplitRatios};
pub use error::{ErrorClass, Result, SnobError};
pub use features::{FeatureSpace, FeatureVector, Featurizer};
pub use interventions::InterventionKind;
pub use linear::{LinearModel, OccupationModelSet, TrainConfig};
pub use metrics::{AuditReport, Correlation};
pub use norm::NormClassifier;
pub use text::{EmbeddingTable, Repr, Vocabulary};
