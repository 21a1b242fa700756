//! Job manifest: one JSON object per line, last write wins per `job_id`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenerationJob, GenerationRecord, OrchestratorError};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEntry {
    #[serde(flatten)]
    pub job: GenerationJob,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<GenerationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JobEntry {
    pub fn new(job: GenerationJob) -> Self {
        JobEntry { job, output: None, error: None }
    }
}

/// Replay the journal. Entries keep the order in which each job first
/// appeared; the latest line for a job wins. A line torn by a crash is
/// dropped.
pub fn load_manifest(path: &Path) -> Result<Vec<JobEntry>, OrchestratorError> {
    if !path.exists() {
        return Err(jsonl::JsonlError::io(path, std::io::ErrorKind::NotFound.into()).into());
    }
    let lines: Vec<JobEntry> = jsonl::read_journal(path)?;
    Ok(compact(lines))
}

pub(crate) fn compact(lines: Vec<JobEntry>) -> Vec<JobEntry> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<JobEntry> = Vec::new();
    for entry in lines {
        match index.get(&entry.job.job_id) {
            Some(&i) => out[i] = entry,
            None => {
                index.insert(entry.job.job_id.clone(), out.len());
                out.push(entry);
            }
        }
    }
    out
}

/// Write a compacted manifest atomically.
pub fn write_manifest(path: &Path, entries: &[JobEntry]) -> Result<(), OrchestratorError> {
    Ok(jsonl::write(path, entries)?)
}
