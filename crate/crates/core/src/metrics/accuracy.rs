use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MetricsError;
use crate::inference::PredictionRecord;
use crate::jsonl;
use crate::labels::{Label, PerceivedAxis};

/// One human judgment, as exported by the annotation service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_ref: String,
    pub axis: PerceivedAxis,
    pub label: Label,
    pub annotator_id: String,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub axis: PerceivedAxis,
    pub n: u64,
    pub accuracy: f64,
    /// `(human, predicted) -> count`.
    #[serde(serialize_with = "confusion_out", deserialize_with = "confusion_in")]
    pub confusion: BTreeMap<(Label, Label), u64>,
    pub unmatched_predictions: u64,
    pub unmatched_labels: u64,
}

#[derive(Serialize, Deserialize)]
struct Cell {
    human: Label,
    predicted: Label,
    count: u64,
}

fn confusion_out<S: Serializer>(map: &BTreeMap<(Label, Label), u64>, s: S) -> Result<S::Ok, S::Error> {
    let cells: Vec<Cell> = map.iter().map(|(&(human, predicted), &count)| Cell { human, predicted, count }).collect();
    cells.serialize(s)
}

fn confusion_in<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(Label, Label), u64>, D::Error> {
    let cells = Vec::<Cell>::deserialize(d)?;
    Ok(cells.into_iter().map(|c| ((c.human, c.predicted), c.count)).collect())
}

impl AccuracyReport {
    pub fn trace(&self) -> u64 {
        self.confusion.iter().filter(|((h, p), _)| h == p).map(|(_, c)| c).sum()
    }
}

/// Agreement between model predictions and human labels on one axis.
///
/// Pairs are joined on `image_ref`; every human label with a matching
/// prediction is one pair. An `unparseable` prediction never agrees.
pub fn classifier_accuracy(
    preds: &[PredictionRecord],
    labels: &[LabelRecord],
    axis: PerceivedAxis,
) -> Result<AccuracyReport, MetricsError> {
    let mut predicted: HashMap<&str, Label> = HashMap::new();
    for p in preds.iter().filter(|p| p.axis == axis) {
        if predicted.insert(p.image_ref.as_str(), p.label).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.image_ref.clone()));
        }
    }
    let mut confusion = BTreeMap::new();
    let mut matched: HashSet<&str> = HashSet::new();
    let mut unmatched_labels = 0;
    for l in labels.iter().filter(|l| l.axis == axis) {
        match predicted.get(l.image_ref.as_str()) {
            Some(&p) => {
                *confusion.entry((l.label, p)).or_insert(0u64) += 1;
                matched.insert(l.image_ref.as_str());
            }
            None => unmatched_labels += 1,
        }
    }
    let n: u64 = confusion.values().sum();
    if n == 0 {
        return Err(MetricsError::NoPairs);
    }
    let agree: u64 = confusion.iter().filter(|((h, p), _)| h == p && *p != Label::Unparseable).map(|(_, c)| c).sum();
    Ok(AccuracyReport {
        axis,
        n,
        accuracy: agree as f64 / n as f64,
        confusion,
        unmatched_predictions: (predicted.len() - matched.len()) as u64,
        unmatched_labels,
    })
}

/// Read a labels file, rejecting labels outside the record's axis.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, MetricsError> {
    parse_label_rows(jsonl::read_numbered(path)?)
}

pub(crate) fn parse_label_rows(rows: Vec<(usize, LabelRecord)>) -> Result<Vec<LabelRecord>, MetricsError> {
    rows.into_iter()
        .map(|(line, rec)| {
            rec.axis.check(rec.label).map_err(|source| MetricsError::InvalidLabel { line, source })?;
            Ok(rec)
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<(), MetricsError> {
    Ok(jsonl::write(path, labels)?)
}
