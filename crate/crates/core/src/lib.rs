//! Bias auditing for text-to-image models.
//!
//! The crate covers the whole loop around a diversity-finetuning run:
//! building attribute-balanced prompt corpora ([`taxonomy`]), driving an
//! image generator over them ([`orchestrator`]), asking a VQA model for the
//! perceived gender and skin tone of every image ([`inference`]), scoring the
//! predictions for group fairness ([`metrics`]), picking composition-targeted
//! training subsets ([`balancer`]) and collecting human labels to validate
//! the VQA model ([`annotation`]). [`pipeline`] chains the stages with
//! on-disk checkpoints.

pub mod annotation;
pub mod balancer;
pub mod config;
pub mod inference;
pub mod jsonl;
pub mod labels;
pub mod metrics;
pub mod num;
pub mod orchestrator;
pub mod pipeline;
pub mod report;
pub mod services;
pub mod taxonomy;

pub use labels::{Label, PerceivedAxis};
pub use num::{Rational64, Scalar};

/// Marginal over `f64`, the precision reports are stored in.
pub type Marginal = metrics::MarginalDistribution<f64>;
/// Marginal over exact rationals.
pub type ExactMarginal = metrics::MarginalDistribution<Rational64>;
pub type DiResult = metrics::DisparateImpactResult<f64>;
pub type ExactDiResult = metrics::DisparateImpactResult<Rational64>;
pub type Target = balancer::CompositionTarget<f64>;
pub type ExactTarget = balancer::CompositionTarget<Rational64>;
