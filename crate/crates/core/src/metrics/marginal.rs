use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::inference::PredictionRecord;
use crate::labels::{Label, PerceivedAxis};
use crate::num::{count_ratio, Scalar};

/// Predicted-label shares over the images that show a recognizable person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDistribution<S = f64> {
    pub axis: PerceivedAxis,
    /// One entry per substantive label of the axis; empty when `support == 0`.
    pub probabilities: BTreeMap<Label, S>,
    /// Raw counts, sink labels included.
    pub counts: BTreeMap<Label, u64>,
    pub support: u64,
    pub excluded: u64,
}

impl<S: Scalar> MarginalDistribution<S> {
    /// Build from raw label counts. Labels outside the axis vocabulary are
    /// ignored.
    pub fn from_counts(axis: PerceivedAxis, counts: &BTreeMap<Label, u64>) -> Self {
        let counts: BTreeMap<Label, u64> =
            counts.iter().filter(|(l, _)| axis.accepts(**l)).map(|(l, c)| (*l, *c)).collect();
        let support: u64 = counts.iter().filter(|(l, _)| !l.is_sink()).map(|(_, c)| c).sum();
        let excluded: u64 = counts.iter().filter(|(l, _)| l.is_sink()).map(|(_, c)| c).sum();
        let probabilities = if support == 0 {
            BTreeMap::new()
        } else {
            axis.substantive_labels()
                .iter()
                .map(|&l| {
                    let c = counts.get(&l).copied().unwrap_or(0);
                    (l, count_ratio::<S>(c, support).expect("support is positive"))
                })
                .collect()
        };
        MarginalDistribution { axis, probabilities, counts, support, excluded }
    }

    pub fn count(&self, label: Label) -> u64 {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn probability(&self, label: Label) -> Option<S> {
        self.probabilities.get(&label).copied()
    }

    /// Same counts, different scalar.
    pub fn convert<T: Scalar>(&self) -> MarginalDistribution<T> {
        MarginalDistribution::from_counts(self.axis, &self.counts)
    }
}

pub fn marginal_distribution<S: Scalar>(preds: &[PredictionRecord], axis: PerceivedAxis) -> MarginalDistribution<S> {
    let mut counts = BTreeMap::new();
    for p in preds.iter().filter(|p| p.axis == axis) {
        *counts.entry(p.label).or_insert(0u64) += 1;
    }
    MarginalDistribution::from_counts(axis, &counts)
}
