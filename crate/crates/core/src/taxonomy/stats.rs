use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Origin, PromptRecord};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: u64,
    pub per_axis_histograms: BTreeMap<String, BTreeMap<String, u64>>,
    pub paraphrase_fraction: f64,
}

pub fn corpus_stats(records: &[PromptRecord]) -> CorpusStats {
    let mut per_axis_histograms: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut paraphrases = 0u64;
    for record in records {
        if record.origin == Origin::Paraphrase {
            paraphrases += 1;
        }
        for (axis, value) in &record.assignment {
            *per_axis_histograms.entry(axis.clone()).or_default().entry(value.clone()).or_default() += 1;
        }
    }
    let total = records.len() as u64;
    let paraphrase_fraction = if total == 0 { 0.0 } else { paraphrases as f64 / total as f64 };
    CorpusStats { total, per_axis_histograms, paraphrase_fraction }
}
