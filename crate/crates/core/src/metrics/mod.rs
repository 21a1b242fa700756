//! Group-fairness metrics over perceived-attribute predictions.
//!
//! Disparate impact compares how often two groups are predicted:
//! `DI = P(X' = x1) / P(X' = x2)`, with `x2` the stereotypically favored
//! group. `DI >= τ` (default 0.8) is fair. Images labeled `none_present` or
//! `unparseable` are left out of the probabilities and reported separately.

mod accuracy;
mod disparate;
mod marginal;
mod report;

pub use accuracy::{classifier_accuracy, read_labels, write_labels, AccuracyReport, LabelRecord};
pub use disparate::{disparate_impact, relative_improvement, DisparateImpactResult, Verdict, DEFAULT_THRESHOLD};
pub use marginal::{marginal_distribution, MarginalDistribution};
pub use report::{build_report, Comparison, FairnessReport, PairShare, CANONICAL_PAIRS};

use crate::jsonl::JsonlError;
use crate::labels::{Label, LabelError, PerceivedAxis};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("label `{label}` is not a group of axis {axis}")]
    UnknownGroup { axis: PerceivedAxis, label: Label },
    #[error("disparate impact needs two different groups, got `{0}` twice")]
    SameGroup(Label),
    #[error("relative improvement is undefined for a zero baseline (raw delta {raw_delta})")]
    UndefinedImprovement { raw_delta: f64 },
    #[error("baseline disparate impact must be positive")]
    NegativeBaseline,
    #[error("no prediction/label pairs to compare")]
    NoPairs,
    #[error("image `{0}` has more than one prediction on this axis")]
    DuplicatePrediction(String),
    #[error("no predictions to report on")]
    EmptyPredictions,
    #[error("predictions mix model tags `{expected}` and `{found}`")]
    MixedModelTag { expected: String, found: String },
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("line {line}: {source}")]
    InvalidLabel {
        line: usize,
        #[source]
        source: LabelError,
    },
    #[error(transparent)]
    Io(#[from] JsonlError),
}

impl MetricsError {
    pub fn line(&self) -> Option<usize> {
        match self {
            MetricsError::InvalidLabel { line, .. } => Some(*line),
            MetricsError::Io(e) => e.line(),
            _ => None,
        }
    }
}
