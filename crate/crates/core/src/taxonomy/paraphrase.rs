//! LLM paraphrase augmentation of template prompts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{collapse_whitespace, Origin, PromptRecord};
use crate::services::{bounded_map, ParaphraseClient, ParaphraseRequest, RetryPolicy};

/// System instruction sent with every paraphrase request.
pub const PARAPHRASE_INSTRUCTION: &str = "You are a prompt generator. Given a sentence, you will paraphrase that sentence to create 2000 new prompts. The gender and the clothing of the person in the sentence should be different in each new prompt. The person should be always wearing cloth. The location and the job of the person and the camera position can be different in each prompt. The race of the person should be kept the same. The camera focus and camera shot should be changed in each prompt. Use creativity to add details in the prompts for the environment and the person.";

#[derive(Debug, Clone)]
pub struct ParaphraseOptions {
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    pub system_instruction: String,
    /// Axis whose value must survive in every accepted paraphrase.
    pub anchor_axis: String,
}

impl Default for ParaphraseOptions {
    fn default() -> Self {
        ParaphraseOptions {
            max_parallel: 8,
            retry: RetryPolicy::default(),
            system_instruction: PARAPHRASE_INSTRUCTION.to_string(),
            anchor_axis: "profession".to_string(),
        }
    }
}

/// A parent prompt (or one of its variants) that produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseFailure {
    pub parent_id: String,
    /// `None` when the whole request failed.
    pub variant: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParaphraseOutcome {
    pub records: Vec<PromptRecord>,
    pub failures: Vec<ParaphraseFailure>,
}

/// Ask `client` for up to `n_variants` rewrites of every template record.
///
/// Variants inherit the parent's full assignment. A variant is accepted if
/// it is non-empty and still mentions the parent's anchor value (the
/// profession by default), compared case-insensitively. Output is ordered
/// by parent then variant index.
pub fn paraphrase_corpus<C: ParaphraseClient>(
    records: &[PromptRecord],
    client: &C,
    n_variants: u32,
    options: &ParaphraseOptions,
) -> ParaphraseOutcome {
    let per_parent = bounded_map(records, options.max_parallel, |_, parent| {
        paraphrase_one(parent, client, n_variants.max(1), options)
    });
    let mut outcome = ParaphraseOutcome::default();
    for (records, failures) in per_parent {
        outcome.records.extend(records);
        outcome.failures.extend(failures);
    }
    outcome
}

fn paraphrase_one<C: ParaphraseClient>(
    parent: &PromptRecord,
    client: &C,
    n_variants: u32,
    options: &ParaphraseOptions,
) -> (Vec<PromptRecord>, Vec<ParaphraseFailure>) {
    let fail = |variant: Option<u32>, reason: String| ParaphraseFailure {
        parent_id: parent.prompt_id.clone(),
        variant,
        reason,
    };
    if parent.origin != Origin::Template {
        return (Vec::new(), vec![fail(None, "parent is not a template record".into())]);
    }
    let request = ParaphraseRequest {
        system_instruction: options.system_instruction.clone(),
        prompt: parent.text.clone(),
        n_variants,
    };
    let (response, attempts) = options.retry.run(|_| client.paraphrase(&request));
    let response = match response {
        Ok(r) => r,
        Err(e) => return (Vec::new(), vec![fail(None, format!("{} after {attempts} attempt(s): {e}", e.kind()))]),
    };

    let anchor = parent.assignment.get(&options.anchor_axis).map(|v| v.to_lowercase());
    let mut out = Vec::new();
    let mut failures = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in response.variants.iter().take(n_variants as usize).enumerate() {
        let idx = idx as u32;
        let text = collapse_whitespace(raw);
        if text.is_empty() {
            failures.push(fail(Some(idx), "empty paraphrase".into()));
            continue;
        }
        if let Some(anchor) = &anchor {
            if !text.to_lowercase().contains(anchor.as_str()) {
                failures.push(fail(Some(idx), format!("paraphrase dropped `{}`", options.anchor_axis)));
                continue;
            }
        }
        if !seen.insert(text.clone()) {
            failures.push(fail(Some(idx), "duplicate paraphrase".into()));
            continue;
        }
        out.push(PromptRecord::new(text, parent.assignment.clone(), Origin::Paraphrase, Some(parent.prompt_id.clone())));
    }
    let returned = response.variants.len().min(n_variants as usize) as u32;
    for idx in returned..n_variants {
        failures.push(fail(Some(idx), "variant not returned".into()));
    }
    (out, failures)
}
