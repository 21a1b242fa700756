//! Caption/image manifest and hyper-parameters handed to an external
//! finetuning job.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenerationRecord, OrchestratorError};
use crate::jsonl;
use crate::taxonomy::{collapse_whitespace, render_with_mode, CorpusSpec, Origin, PromptRecord, QualifierMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedPrecision {
    No,
    Fp16,
    Bf16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduler {
    Constant,
    ConstantWithWarmup,
    Linear,
    Cosine,
    CosineWithRestarts,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub max_train_steps: u32,
    pub mixed_precision: MixedPrecision,
    pub learning_rate: f64,
    pub allow_tf32: bool,
    pub train_batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub lr_scheduler: LrScheduler,
    pub lr_warmup_steps: u32,
    pub resolution: u32,
}

impl TrainingConfig {
    /// Stable Diffusion 1.5 finetuning preset.
    pub fn sd15() -> Self {
        TrainingConfig {
            max_train_steps: 3000,
            mixed_precision: MixedPrecision::Fp16,
            learning_rate: 3e-5,
            allow_tf32: true,
            train_batch_size: 16,
            gradient_accumulation_steps: 2,
            lr_scheduler: LrScheduler::Polynomial,
            lr_warmup_steps: 0,
            resolution: 512,
        }
    }

    /// Stable Diffusion XL finetuning preset.
    pub fn sdxl() -> Self {
        TrainingConfig {
            max_train_steps: 5000,
            mixed_precision: MixedPrecision::Fp16,
            learning_rate: 1e-4,
            allow_tf32: true,
            train_batch_size: 6,
            gradient_accumulation_steps: 4,
            lr_scheduler: LrScheduler::Polynomial,
            lr_warmup_steps: 0,
            resolution: 768,
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.to_string()));
        if self.max_train_steps == 0 {
            return bad("max_train_steps must be positive");
        }
        if self.train_batch_size == 0 {
            return bad("train_batch_size must be positive");
        }
        if self.gradient_accumulation_steps == 0 {
            return bad("gradient_accumulation_steps must be positive");
        }
        if self.resolution == 0 {
            return bad("resolution must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be a positive number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHeader {
    pub config: TrainingConfig,
    pub qualifier_mode: QualifierMode,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub caption: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub header: TrainingHeader,
    pub pairs: Vec<CaptionPair>,
}

impl TrainingManifest {
    pub fn to_jsonl(&self) -> Result<String, OrchestratorError> {
        let mut out = serde_json::to_string(&self.header).map_err(crate::jsonl::JsonlError::from)?;
        out.push('\n');
        out.push_str(&jsonl::to_string(&self.pairs)?);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<(), OrchestratorError> {
        Ok(jsonl::write_atomic(path, self.to_jsonl()?.as_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| jsonl::JsonlError::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or(OrchestratorError::EmptyManifest)?;
        let header: TrainingHeader = serde_json::from_str(header_line)
            .map_err(|e| jsonl::JsonlError::Parse { line: 1, message: e.to_string() })?;
        let pairs = jsonl::parse_lines::<CaptionPair, _>(text.lines().skip(1).collect::<Vec<_>>().join("\n").as_bytes())
            .map_err(|e| match e {
                jsonl::JsonlError::Parse { line, message } => jsonl::JsonlError::Parse { line: line + 1, message },
                other => other,
            })?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        Ok(TrainingManifest { header, pairs })
    }
}

/// Remove protected values from free text, matching whole words
/// case-insensitively.
fn strip_protected(text: &str, spec: &CorpusSpec, record: &PromptRecord) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let norm = |w: &str| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-').to_lowercase();
    for axis in spec.protected_axes() {
        let Some(value) = record.assignment.get(&axis.name) else { continue };
        let needle: Vec<String> = value.split_whitespace().map(norm).collect();
        if needle.is_empty() {
            continue;
        }
        let mut i = 0;
        while i + needle.len() <= words.len() {
            if words[i..i + needle.len()].iter().map(|w| norm(w)).eq(needle.iter().cloned()) {
                words.drain(i..i + needle.len());
            } else {
                i += 1;
            }
        }
    }
    collapse_whitespace(&words.join(" "))
}

/// Join generated images to their prompts and caption them per `mode`.
///
/// Template prompts are re-rendered from their assignment; paraphrased ones
/// have protected values removed from the free text.
pub fn emit_training_manifest(
    records: &[PromptRecord],
    images: &[GenerationRecord],
    config: &TrainingConfig,
    spec: &CorpusSpec,
    mode: QualifierMode,
) -> Result<TrainingManifest, OrchestratorError> {
    config.validate()?;
    let by_id: HashMap<&str, &PromptRecord> = records.iter().map(|r| (r.prompt_id.as_str(), r)).collect();
    let orphans: Vec<String> = images
        .iter()
        .filter(|img| !by_id.contains_key(img.prompt_id.as_str()))
        .map(|img| img.image_ref.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(OrchestratorError::Orphan(orphans));
    }
    let mut pairs = Vec::with_capacity(images.len());
    for image in images {
        let record = by_id[image.prompt_id.as_str()];
        let caption = match (mode, record.origin) {
            (QualifierMode::WithProtectedQualifiers, _) => record.text.clone(),
            (QualifierMode::WithoutProtectedQualifiers, Origin::Template) => {
                render_with_mode(&record.assignment, spec, mode)?
            }
            (QualifierMode::WithoutProtectedQualifiers, Origin::Paraphrase) => strip_protected(&record.text, spec, record),
        };
        pairs.push(CaptionPair { caption, image_ref: image.image_ref.clone() });
    }
    Ok(TrainingManifest { header: TrainingHeader { config: config.clone(), qualifier_mode: mode, pairs: pairs.len() }, pairs })
}
