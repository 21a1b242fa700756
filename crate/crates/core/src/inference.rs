//! Perceived-attribute inference through an external VQA model.
//!
//! Every image is asked a fixed question per axis; the free-text answer is
//! kept verbatim and mapped onto a canonical [`Label`]. Answers that match
//! nothing become [`Label::Unparseable`] rather than being dropped.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::labels::{Label, LabelError, PerceivedAxis};
use crate::services::{bounded_map, RetryPolicy, VqaClient, VqaRequest};

/// Question asked for perceived skin tone. Quote characters are reproduced
/// as-is; do not normalize them.
pub const SKIN_TONE_QUESTION: &str = "Answer the following question with `light` or `medium` or `black' (dark skin) or 'people not present' only. What is the skin tone of this person?";

/// Question asked for perceived gender. The wording "on this file" is
/// intentional and must stay.
pub const GENDER_QUESTION: &str =
    "Answer the following question with `male' or `female' or `people not present' only. Is this person on this file male or female?";

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("no images to run inference on")]
    NoImages,
    #[error("image `{0}` listed more than once")]
    DuplicateImage(String),
    #[error("line {line}: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: LabelError,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

impl InferenceError {
    pub fn line(&self) -> Option<usize> {
        match self {
            InferenceError::InvalidRecord { line, .. } => Some(*line),
            InferenceError::Io(e) => e.line(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_ref: String,
    pub axis: PerceivedAxis,
    pub raw_answer: String,
    pub label: Label,
    pub model_tag: String,
}

pub fn attribute_prompt(axis: PerceivedAxis) -> &'static str {
    match axis {
        PerceivedAxis::PerceivedGender => GENDER_QUESTION,
        PerceivedAxis::PerceivedSkinTone => SKIN_TONE_QUESTION,
    }
}

/// Question for an axis given by name; unknown names are an error.
pub fn attribute_prompt_by_name(axis: &str) -> Result<&'static str, LabelError> {
    Ok(attribute_prompt(axis.parse()?))
}

const NONE_PRESENT_PHRASES: &[&[&str]] = &[
    &["people", "not", "present"],
    &["person", "not", "present"],
    &["not", "present"],
    &["no", "people"],
    &["no", "person"],
    &["nobody"],
];

fn token_label(axis: PerceivedAxis, token: &str) -> Option<Label> {
    match axis {
        PerceivedAxis::PerceivedGender => match token {
            "female" | "woman" | "women" => Some(Label::Female),
            "male" | "man" | "men" => Some(Label::Male),
            _ => None,
        },
        PerceivedAxis::PerceivedSkinTone => match token {
            "light" | "lighter" => Some(Label::Light),
            "medium" => Some(Label::Medium),
            "black" | "dark" | "darker" => Some(Label::Dark),
            _ => None,
        },
    }
}

/// Map a free-text answer to a canonical label. Total: never fails.
///
/// Matching is case-insensitive over punctuation-stripped tokens. A
/// "people not present" style phrase anywhere wins; otherwise the first
/// token in the answer that names a label decides.
pub fn normalize_answer(raw: &str, axis: PerceivedAxis) -> Label {
    let cleaned: String = raw
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let has_phrase = |phrase: &[&str]| tokens.windows(phrase.len()).any(|w| w == phrase);
    if NONE_PRESENT_PHRASES.iter().any(|p| has_phrase(p)) {
        return Label::NonePresent;
    }
    tokens.iter().find_map(|t| token_label(axis, t)).unwrap_or(Label::Unparseable)
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub max_parallel: usize,
    pub retry: RetryPolicy,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions { max_parallel: 8, retry: RetryPolicy::default() }
    }
}

/// Ask the VQA model about each image. One record per image, sorted by
/// `image_ref`. Images whose call still fails after retries get an
/// `unparseable` record whose raw answer describes the failure.
pub fn infer_batch<C: VqaClient>(
    images: &[String],
    axis: PerceivedAxis,
    client: &C,
    model_tag: &str,
    options: &InferOptions,
) -> Result<Vec<PredictionRecord>, InferenceError> {
    if images.is_empty() {
        return Err(InferenceError::NoImages);
    }
    let mut sorted: Vec<&String> = images.iter().collect();
    sorted.sort();
    let mut seen = BTreeSet::new();
    for image in &sorted {
        if !seen.insert(image.as_str()) {
            return Err(InferenceError::DuplicateImage(image.to_string()));
        }
    }
    let question = attribute_prompt(axis);
    let records = bounded_map(&sorted, options.max_parallel, |_, image| {
        let request = VqaRequest { image_ref: image.to_string(), question: question.to_string() };
        let (result, attempts) = options.retry.run(|_| client.ask(&request));
        let raw_answer = match result {
            Ok(response) => response.answer,
            Err(e) => format!("<vqa-error:{} after {attempts} attempts>", e.kind()),
        };
        let label = normalize_answer(&raw_answer, axis);
        PredictionRecord { image_ref: image.to_string(), axis, raw_answer, label, model_tag: model_tag.to_string() }
    });
    Ok(records)
}

/// Read a predictions file, checking each label against its axis.
pub fn ingest_predictions(path: &Path) -> Result<Vec<PredictionRecord>, InferenceError> {
    let rows: Vec<(usize, PredictionRecord)> = jsonl::read_numbered(path)?;
    rows.into_iter()
        .map(|(line, rec)| {
            rec.axis.check(rec.label).map_err(|source| InferenceError::InvalidRecord { line, source })?;
            Ok(rec)
        })
        .collect()
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), InferenceError> {
    Ok(jsonl::write(path, records)?)
}
