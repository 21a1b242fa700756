use serde::{Deserialize, Serialize};

use super::{disparate_impact, marginal_distribution, relative_improvement, DisparateImpactResult, MarginalDistribution, MetricsError};
use crate::inference::PredictionRecord;
use crate::labels::{Label, PerceivedAxis};

/// `(axis, x1, x2)` with `x2` the group the baseline tends to favor.
pub const CANONICAL_PAIRS: [(PerceivedAxis, Label, Label); 3] = [
    (PerceivedAxis::PerceivedGender, Label::Female, Label::Male),
    (PerceivedAxis::PerceivedSkinTone, Label::Dark, Label::Light),
    (PerceivedAxis::PerceivedSkinTone, Label::Medium, Label::Light),
];

/// Shares of a pair renormalized over the two groups alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShare {
    pub axis: PerceivedAxis,
    pub group_x1: Label,
    pub group_x2: Label,
    pub share_x1: Option<f64>,
    pub share_x2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub axis: PerceivedAxis,
    pub group_x1: Label,
    pub group_x2: Label,
    pub di_before: Option<f64>,
    pub di_after: Option<f64>,
    /// Percentage; `None` when the baseline DI is missing or zero.
    pub relative_improvement: Option<f64>,
    pub raw_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub model_tag: String,
    pub tau: f64,
    pub marginals: Vec<MarginalDistribution>,
    pub pair_shares: Vec<PairShare>,
    pub di_results: Vec<DisparateImpactResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<Vec<Comparison>>,
}

impl FairnessReport {
    pub fn di(&self, axis: PerceivedAxis, x1: Label, x2: Label) -> Option<&DisparateImpactResult> {
        self.di_results.iter().find(|r| r.axis == axis && r.group_x1 == x1 && r.group_x2 == x2)
    }

    pub fn marginal(&self, axis: PerceivedAxis) -> Option<&MarginalDistribution> {
        self.marginals.iter().find(|m| m.axis == axis)
    }
}

/// Marginals and canonical-pair DI for one model's predictions, plus
/// improvement rows against `baseline` when given. Only axes that occur in
/// `preds` are reported.
pub fn build_report(
    preds: &[PredictionRecord],
    model_tag: &str,
    baseline: Option<&FairnessReport>,
    tau: f64,
) -> Result<FairnessReport, MetricsError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(MetricsError::InvalidThreshold(tau));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyPredictions);
    }
    if let Some(p) = preds.iter().find(|p| p.model_tag != model_tag) {
        return Err(MetricsError::MixedModelTag { expected: model_tag.to_string(), found: p.model_tag.clone() });
    }
    let marginals: Vec<MarginalDistribution> = PerceivedAxis::ALL
        .iter()
        .filter(|&&axis| preds.iter().any(|p| p.axis == axis))
        .map(|&axis| marginal_distribution(preds, axis))
        .collect();

    let mut pair_shares = Vec::new();
    let mut di_results = Vec::new();
    for (axis, x1, x2) in CANONICAL_PAIRS {
        let Some(m) = marginals.iter().find(|m| m.axis == axis) else { continue };
        let (c1, c2) = (m.count(x1), m.count(x2));
        let pair = c1 + c2;
        pair_shares.push(PairShare {
            axis,
            group_x1: x1,
            group_x2: x2,
            share_x1: (pair > 0).then(|| c1 as f64 / pair as f64),
            share_x2: (pair > 0).then(|| c2 as f64 / pair as f64),
        });
        di_results.push(disparate_impact(m, x1, x2, tau)?);
    }

    let comparisons = baseline.map(|base| {
        di_results
            .iter()
            .map(|after| {
                let di_before = base.di(after.axis, after.group_x1, after.group_x2).and_then(|r| r.di);
                let di_after = after.di;
                let raw_delta = di_before.zip(di_after).map(|(b, a)| a - b);
                let relative_improvement =
                    di_before.zip(di_after).and_then(|(b, a)| relative_improvement(b, a).ok());
                Comparison {
                    axis: after.axis,
                    group_x1: after.group_x1,
                    group_x2: after.group_x2,
                    di_before,
                    di_after,
                    relative_improvement,
                    raw_delta,
                }
            })
            .collect()
    });

    Ok(FairnessReport { model_tag: model_tag.to_string(), tau, marginals, pair_shares, di_results, comparisons })
}
