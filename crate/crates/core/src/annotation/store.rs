use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AnnotationError, AnnotationTask, TaskStatus};
use crate::jsonl::{self, JsonlError, LineAppender};
use crate::labels::{Label, PerceivedAxis};
use crate::metrics::LabelRecord;

/// How long a handed-out task stays reserved for its annotator.
pub const DEFAULT_LEASE: Duration = Duration::from_secs(300);

/// One journal line. Every submission is kept, superseded ones included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub task_id: String,
    pub axis: PerceivedAxis,
    pub label: Label,
    pub annotator_id: String,
    pub annotated_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("no task `{0}`")]
    UnknownTask(String),
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("task `{task_id}` does not ask for {axis}")]
    AxisNotRequested { task_id: String, axis: PerceivedAxis },
    #[error("`{label}` is not a valid {axis} label")]
    InvalidLabel { axis: PerceivedAxis, label: String, options: Vec<Label> },
    #[error("annotator id is required")]
    MissingAnnotator,
    #[error("journal write failed: {0}")]
    Journal(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub done: usize,
    pub open: usize,
    /// Tasks with a label on each axis.
    pub per_axis: BTreeMap<PerceivedAxis, usize>,
}

struct Inner {
    tasks: Vec<AnnotationTask>,
    index: HashMap<String, usize>,
    current: BTreeMap<(usize, PerceivedAxis), LabelEvent>,
    claims: HashMap<usize, (String, Instant)>,
    journal: LineAppender,
}

impl Inner {
    fn apply(&mut self, idx: usize, event: LabelEvent) {
        let task = &mut self.tasks[idx];
        task.labels.insert(event.axis, event.label);
        task.status = if task.is_complete() { TaskStatus::Done } else { TaskStatus::Open };
        if task.status == TaskStatus::Done {
            self.claims.remove(&idx);
        }
        self.current.insert((idx, event.axis), event);
    }
}

/// Tasks plus their label journal. Safe to share across request threads.
pub struct TaskStore {
    inner: Mutex<Inner>,
    lease: Duration,
}

impl TaskStore {
    /// Load `tasks` and replay the journal at `journal` (created if absent).
    pub fn open(mut tasks: Vec<AnnotationTask>, journal: &Path) -> Result<Self, AnnotationError> {
        let mut index = HashMap::new();
        for (i, t) in tasks.iter_mut().enumerate() {
            if index.insert(t.task_id.clone(), i).is_some() {
                return Err(AnnotationError::DuplicateTask(t.task_id.clone()));
            }
            // the journal is authoritative for labels
            t.labels.clear();
            t.status = TaskStatus::Open;
        }
        let events: Vec<LabelEvent> = jsonl::read_journal(journal)?;
        let mut inner = Inner {
            tasks,
            index,
            current: BTreeMap::new(),
            claims: HashMap::new(),
            journal: LineAppender::open(journal, true)?,
        };
        for ev in events {
            match inner.index.get(&ev.task_id) {
                Some(&idx) => inner.apply(idx, ev),
                None => log::warn!("journal names unknown task `{}`", ev.task_id),
            }
        }
        Ok(TaskStore { inner: Mutex::new(inner), lease: DEFAULT_LEASE })
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Validate, journal (fsynced), then apply. Returns the updated task.
    pub fn submit(&self, task_id: &str, axis: &str, label: &str, annotator: &str) -> Result<AnnotationTask, SubmitError> {
        let annotator = annotator.trim();
        if annotator.is_empty() {
            return Err(SubmitError::MissingAnnotator);
        }
        let axis: PerceivedAxis = axis.parse().map_err(|_| SubmitError::UnknownAxis(axis.to_string()))?;
        let options = axis.annotator_labels();
        let parsed = label.parse::<Label>().ok().filter(|l| options.contains(l));
        let Some(label) = parsed else {
            return Err(SubmitError::InvalidLabel { axis, label: label.to_string(), options });
        };
        let mut inner = self.lock();
        let idx = *inner.index.get(task_id).ok_or_else(|| SubmitError::UnknownTask(task_id.to_string()))?;
        if !inner.tasks[idx].axes.contains(&axis) {
            return Err(SubmitError::AxisNotRequested { task_id: task_id.to_string(), axis });
        }
        let event = LabelEvent {
            task_id: task_id.to_string(),
            axis,
            label,
            annotator_id: annotator.to_string(),
            annotated_at: Utc::now(),
        };
        inner.journal.append(&event)?;
        inner.apply(idx, event);
        Ok(inner.tasks[idx].clone())
    }

    /// Next open task for `annotator`, reserving it for the lease period.
    /// A task the annotator already holds comes back first.
    pub fn next_task(&self, annotator: &str) -> Option<AnnotationTask> {
        let now = Instant::now();
        let lease = self.lease;
        let mut inner = self.lock();
        let free = |inner: &Inner, i: usize| match inner.claims.get(&i) {
            None => true,
            Some((who, at)) => who == annotator || now.duration_since(*at) >= lease,
        };
        let open: Vec<usize> = (0..inner.tasks.len()).filter(|&i| inner.tasks[i].status == TaskStatus::Open).collect();
        let held = open.iter().copied().find(|i| inner.claims.get(i).is_some_and(|(who, _)| who == annotator));
        let pick = held.or_else(|| open.iter().copied().find(|&i| free(&inner, i)))?;
        inner.claims.insert(pick, (annotator.to_string(), now));
        Some(inner.tasks[pick].clone())
    }

    pub fn task(&self, task_id: &str) -> Option<AnnotationTask> {
        let inner = self.lock();
        inner.index.get(task_id).map(|&i| inner.tasks[i].clone())
    }

    pub fn tasks(&self) -> Vec<AnnotationTask> {
        self.lock().tasks.clone()
    }

    pub fn progress(&self) -> Progress {
        let inner = self.lock();
        let done = inner.tasks.iter().filter(|t| t.status == TaskStatus::Done).count();
        let mut per_axis = BTreeMap::new();
        for t in &inner.tasks {
            for axis in &t.axes {
                *per_axis.entry(*axis).or_insert(0) += usize::from(t.labels.contains_key(axis));
            }
        }
        Progress { total: inner.tasks.len(), done, open: inner.tasks.len() - done, per_axis }
    }

    /// Current label per (task, axis), in task order.
    pub fn export(&self) -> Vec<LabelRecord> {
        let inner = self.lock();
        inner
            .current
            .iter()
            .map(|(&(idx, _), ev)| LabelRecord {
                image_ref: inner.tasks[idx].image_ref.clone(),
                axis: ev.axis,
                label: ev.label,
                annotator_id: ev.annotator_id.clone(),
                annotated_at: ev.annotated_at,
            })
            .collect()
    }
}
