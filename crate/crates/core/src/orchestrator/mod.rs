//! Generation job planning, execution and checkpointing.
//!
//! A plan is a list of `(prompt, seed)` jobs persisted as a line-delimited
//! status journal. [`run_jobs`] dispatches the non-done jobs with bounded
//! parallelism, appends every status change to the journal from a single
//! writer, and compacts the file when the run ends. Re-running against the
//! same manifest resumes where the previous run stopped.

mod journal;
mod plan;
mod run;
mod training;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use journal::{load_manifest, write_manifest, JobEntry};
pub use plan::plan_eval_jobs;
pub use run::{run_jobs, RunOptions, RunSummary};
pub use training::{
    emit_training_manifest, CaptionPair, LrScheduler, MixedPrecision, TrainingConfig, TrainingHeader,
    TrainingManifest,
};

use crate::jsonl::JsonlError;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("cannot plan jobs for an empty prompt list")]
    EmptyPrompts,
    #[error("seeds_per_prompt must be positive")]
    NoSeeds,
    #[error("prompt `{0}` appears more than once")]
    DuplicatePrompt(String),
    #[error("job for prompt `{prompt_id}` with seed {seed} appears more than once")]
    DuplicateJob { prompt_id: String, seed: u64 },
    #[error("seed range overflows u64")]
    SeedOverflow,
    #[error("manifest has no jobs")]
    EmptyManifest,
    #[error("invalid status transition {from:?} -> {to:?} for job `{job_id}`")]
    Transition { job_id: String, from: JobStatus, to: JobStatus },
    #[error("model_tag must not be empty")]
    MissingModelTag,
    #[error("manifest holds results for model `{found}` but this run is tagged `{expected}`")]
    MixedModelTag { expected: String, found: String },
    #[error("images without a matching prompt: {0:?}")]
    Orphan(Vec<String>),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Taxonomy(#[from] crate::taxonomy::TaxonomyError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub prompt_id: String,
    /// Text sent to the generator; carried so a manifest is self-contained.
    pub prompt: String,
    pub seed: u64,
    pub status: JobStatus,
    pub attempt: u32,
}

impl GenerationJob {
    pub fn new(prompt_id: &str, prompt: &str, seed: u64) -> Self {
        GenerationJob {
            job_id: format!("{prompt_id}:{seed}"),
            prompt_id: prompt_id.to_string(),
            prompt: prompt.to_string(),
            seed,
            status: JobStatus::Pending,
            attempt: 0,
        }
    }

    /// Move to `to`, allowing only pending→running→{done, failed} and
    /// failed→pending.
    ///
    /// `running→pending` is also accepted: it is how a job left running by a
    /// crashed run is recovered.
    pub fn transition(&mut self, to: JobStatus) -> Result<(), OrchestratorError> {
        use JobStatus::*;
        let ok = matches!(
            (self.status, to),
            (Pending, Running) | (Running, Done) | (Running, Failed) | (Failed, Pending) | (Running, Pending)
        );
        if !ok {
            return Err(OrchestratorError::Transition { job_id: self.job_id.clone(), from: self.status, to });
        }
        if to == Running {
            self.attempt += 1;
        }
        self.status = to;
        Ok(())
    }
}

/// Result of a done job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub job_id: String,
    pub prompt_id: String,
    pub seed: u64,
    pub image_ref: String,
    pub model_tag: String,
    pub created_at: DateTime<Utc>,
}
