use serde::{Deserialize, Serialize};

use super::{MarginalDistribution, MetricsError};
use crate::labels::{Label, PerceivedAxis};
use crate::num::{count_ratio, Scalar};

/// The 80% rule.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Fair,
    Biased,
    Undefined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Fair => "fair",
            Verdict::Biased => "biased",
            Verdict::Undefined => "undefined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparateImpactResult<S = f64> {
    pub axis: PerceivedAxis,
    pub group_x1: Label,
    pub group_x2: Label,
    /// `None` when the reference group was never predicted.
    pub di: Option<S>,
    pub threshold: S,
    pub verdict: Verdict,
}

/// `P(x1) / P(x2)` over `marginal`, judged against `threshold` (inclusive).
///
/// Computed from the integer counts, which is the same ratio with fewer
/// rounding steps: equal counts give exactly 1, counts 4 and 5 exactly 0.8.
pub fn disparate_impact<S: Scalar>(
    marginal: &MarginalDistribution<S>,
    x1: Label,
    x2: Label,
    threshold: S,
) -> Result<DisparateImpactResult<S>, MetricsError> {
    let axis = marginal.axis;
    for label in [x1, x2] {
        if !axis.substantive_labels().contains(&label) {
            return Err(MetricsError::UnknownGroup { axis, label });
        }
    }
    if x1 == x2 {
        return Err(MetricsError::SameGroup(x1));
    }
    let di = if marginal.support == 0 { None } else { count_ratio::<S>(marginal.count(x1), marginal.count(x2)) };
    let verdict = match di {
        None => Verdict::Undefined,
        Some(v) if v >= threshold => Verdict::Fair,
        Some(_) => Verdict::Biased,
    };
    Ok(DisparateImpactResult { axis, group_x1: x1, group_x2: x2, di, threshold, verdict })
}

/// Percentage change `100 * (after - before) / before`.
pub fn relative_improvement<S: Scalar>(di_before: S, di_after: S) -> Result<S, MetricsError> {
    let zero = S::zero();
    if di_before == zero {
        return Err(MetricsError::UndefinedImprovement { raw_delta: (di_after - di_before).to_f64() });
    }
    if di_before < zero {
        return Err(MetricsError::NegativeBaseline);
    }
    Ok(S::percent() * (di_after - di_before) / di_before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rational_from_decimal, Rational64};
    use num_rational::Ratio;
    use std::collections::BTreeMap;

    fn gender(female: u64, male: u64) -> MarginalDistribution {
        MarginalDistribution::from_counts(
            PerceivedAxis::PerceivedGender,
            &BTreeMap::from([(Label::Female, female), (Label::Male, male)]),
        )
    }

    #[test]
    fn baseline_gender_example() {
        // long division: 31 / 69 = 0.44927...
        let r = disparate_impact(&gender(31, 69), Label::Female, Label::Male, 0.8).unwrap();
        let di = r.di.unwrap();
        assert!((di - 0.449_275_362_318_840_6).abs() < 1e-12);
        assert_eq!(format!("{di:.2}"), "0.45");
        assert_eq!(r.verdict, Verdict::Biased);
    }

    #[test]
    fn symmetric_and_boundary() {
        let r = disparate_impact(&gender(7, 7), Label::Female, Label::Male, 0.8).unwrap();
        assert_eq!((r.di, r.verdict), (Some(1.0), Verdict::Fair));
        let r = disparate_impact(&gender(4, 5), Label::Female, Label::Male, 0.8).unwrap();
        assert_eq!((r.di, r.verdict), (Some(0.8), Verdict::Fair));
        let r = disparate_impact(&gender(40, 50), Label::Female, Label::Male, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.verdict, Verdict::Fair);
    }

    #[test]
    fn zero_groups() {
        let r = disparate_impact(&gender(3, 0), Label::Female, Label::Male, 0.8).unwrap();
        assert_eq!((r.di, r.verdict), (None, Verdict::Undefined));
        let r = disparate_impact(&gender(0, 3), Label::Female, Label::Male, 0.8).unwrap();
        assert_eq!((r.di, r.verdict), (Some(0.0), Verdict::Biased));
        let r = disparate_impact(&gender(0, 0), Label::Female, Label::Male, 0.8).unwrap();
        assert_eq!(r.verdict, Verdict::Undefined);
    }

    #[test]
    fn group_errors() {
        assert!(matches!(
            disparate_impact(&gender(1, 1), Label::Dark, Label::Male, 0.8),
            Err(MetricsError::UnknownGroup { .. })
        ));
        assert!(matches!(
            disparate_impact(&gender(1, 1), Label::Male, Label::Male, 0.8),
            Err(MetricsError::SameGroup(Label::Male))
        ));
        assert!(matches!(
            disparate_impact(&gender(1, 1), Label::NonePresent, Label::Male, 0.8),
            Err(MetricsError::UnknownGroup { .. })
        ));
    }

    #[test]
    fn exact_relative_improvements() {
        let d = |s| rational_from_decimal(s).unwrap();
        assert_eq!(relative_improvement(d("0.22"), d("0.55")).unwrap(), Ratio::from_integer(150));
        assert_eq!(relative_improvement(d("0.02"), d("0.66")).unwrap(), Ratio::from_integer(3200));
        let gender: Rational64 = relative_improvement(d("0.45"), d("0.89")).unwrap();
        assert_eq!(gender, Ratio::new(880, 9));
        let f = relative_improvement(0.45f64, 0.89).unwrap();
        assert!((f - 97.777_777_777_777_78).abs() < 1e-9);
    }

    #[test]
    fn zero_baseline_reports_raw_delta() {
        match relative_improvement(0.0f64, 0.4) {
            Err(MetricsError::UndefinedImprovement { raw_delta }) => assert!((raw_delta - 0.4).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(relative_improvement(-0.1f64, 0.4), Err(MetricsError::NegativeBaseline)));
    }

    #[test]
    fn f32_instantiation() {
        let m: MarginalDistribution<f32> = gender(4, 5).convert();
        let r = disparate_impact(&m, Label::Female, Label::Male, 0.8f32).unwrap();
        assert_eq!(r.verdict, Verdict::Fair);
    }
}
