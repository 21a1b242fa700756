//! Human labeling of perceived attributes.
//!
//! Tasks are sampled from a generation manifest, labels are journaled to disk
//! before they are acknowledged, and the export is a labels file that
//! [`crate::metrics::read_labels`] accepts.

mod server;
mod store;

pub use server::{start, ServerHandle, ServerOptions};
pub use store::{LabelEvent, Progress, SubmitError, TaskStore, DEFAULT_LEASE};

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::labels::{Label, PerceivedAxis};
use crate::orchestrator::GenerationRecord;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("cannot sample {requested} tasks from {available} images")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("tasks must request at least one axis")]
    NoAxes,
    #[error("task `{0}` appears more than once")]
    DuplicateTask(String),
    #[error("cannot bind annotation service: {0}")]
    Bind(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    #[default]
    Open,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub image_ref: String,
    /// Which generator produced the image, so either arm can be audited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
    pub axes: Vec<PerceivedAxis>,
    #[serde(default)]
    pub status: TaskStatus,
    #[serde(default)]
    pub labels: BTreeMap<PerceivedAxis, Label>,
}

impl AnnotationTask {
    pub fn new(task_id: impl Into<String>, image_ref: impl Into<String>, axes: Vec<PerceivedAxis>) -> Self {
        AnnotationTask {
            task_id: task_id.into(),
            image_ref: image_ref.into(),
            model_tag: None,
            axes,
            status: TaskStatus::Open,
            labels: BTreeMap::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.axes.iter().all(|a| self.labels.contains_key(a))
    }
}

/// Uniform sample of `n` images without replacement, in manifest order.
pub fn sample_annotation_tasks(
    manifest: &[GenerationRecord],
    n: usize,
    seed: u64,
    axes: &[PerceivedAxis],
) -> Result<Vec<AnnotationTask>, AnnotationError> {
    if axes.is_empty() {
        return Err(AnnotationError::NoAxes);
    }
    if n > manifest.len() {
        return Err(AnnotationError::SampleTooLarge { requested: n, available: manifest.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, manifest.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, idx)| {
            let rec = &manifest[idx];
            let mut task = AnnotationTask::new(format!("task-{:05}", i + 1), rec.image_ref.clone(), axes.to_vec());
            task.model_tag = Some(rec.model_tag.clone());
            task
        })
        .collect())
}

pub fn write_tasks(path: &Path, tasks: &[AnnotationTask]) -> Result<(), AnnotationError> {
    Ok(jsonl::write(path, tasks)?)
}

pub fn read_tasks(path: &Path) -> Result<Vec<AnnotationTask>, AnnotationError> {
    Ok(jsonl::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;
    use std::collections::HashSet;

    pub(crate) fn manifest(n: usize) -> Vec<GenerationRecord> {
        (0..n)
            .map(|i| GenerationRecord {
                job_id: format!("p{i}:0"),
                prompt_id: format!("p{i}"),
                seed: 0,
                image_ref: format!("img/{i:05}.png"),
                model_tag: "sd15".into(),
                created_at: DateTime::UNIX_EPOCH,
            })
            .collect()
    }

    #[test]
    fn seven_fifty_of_thirty_four_hundred() {
        let tasks = sample_annotation_tasks(&manifest(3400), 750, 1, &PerceivedAxis::ALL).unwrap();
        assert_eq!(tasks.len(), 750);
        let images: HashSet<_> = tasks.iter().map(|t| &t.image_ref).collect();
        assert_eq!(images.len(), 750);
        assert!(tasks.iter().all(|t| t.status == TaskStatus::Open && t.model_tag.as_deref() == Some("sd15")));
    }

    #[test]
    fn full_sample_and_determinism() {
        let m = manifest(40);
        let all = sample_annotation_tasks(&m, 40, 9, &PerceivedAxis::ALL).unwrap();
        assert_eq!(all.iter().map(|t| t.image_ref.clone()).collect::<Vec<_>>(), m.iter().map(|r| r.image_ref.clone()).collect::<Vec<_>>());
        let a = sample_annotation_tasks(&m, 10, 9, &PerceivedAxis::ALL).unwrap();
        let b = sample_annotation_tasks(&m, 10, 9, &PerceivedAxis::ALL).unwrap();
        assert_eq!(a, b);
        let c = sample_annotation_tasks(&m, 10, 10, &PerceivedAxis::ALL).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_many() {
        assert!(matches!(
            sample_annotation_tasks(&manifest(3), 4, 0, &PerceivedAxis::ALL),
            Err(AnnotationError::SampleTooLarge { requested: 4, available: 3 })
        ));
        assert!(matches!(sample_annotation_tasks(&manifest(3), 1, 0, &[]), Err(AnnotationError::NoAxes)));
    }

    #[test]
    fn tasks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks = sample_annotation_tasks(&manifest(5), 3, 0, &[PerceivedAxis::PerceivedGender]).unwrap();
        write_tasks(&path, &tasks).unwrap();
        assert_eq!(read_tasks(&path).unwrap(), tasks);
    }
}
