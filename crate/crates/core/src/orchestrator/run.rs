use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread;

use chrono::Utc;

use super::journal::{load_manifest, write_manifest, JobEntry};
use super::{GenerationRecord, JobStatus, OrchestratorError};
use crate::jsonl::LineAppender;
use crate::services::{ClientError, GenerationClient, GenerationRequest, RetryPolicy};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    /// Identifies the generator configuration; stamped on every record.
    pub model_tag: String,
    pub width: u32,
    pub height: u32,
    /// When set, no new job or retry is dispatched; in-flight calls finish.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    pub fn new(model_tag: impl Into<String>) -> Self {
        RunOptions {
            max_parallel: 4,
            retry: RetryPolicy::default(),
            model_tag: model_tag.into(),
            width: 512,
            height: 512,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    /// Records of every done job in the manifest, in plan order.
    pub records: Vec<GenerationRecord>,
    pub done: usize,
    pub failed: usize,
    pub pending: usize,
    /// Client calls issued by this invocation.
    pub calls: u64,
    pub interrupted: bool,
}

/// Execute every non-done job in the manifest at `manifest`.
pub fn run_jobs<C: GenerationClient>(
    manifest: &Path,
    client: &C,
    options: &RunOptions,
) -> Result<RunSummary, OrchestratorError> {
    if options.model_tag.trim().is_empty() {
        return Err(OrchestratorError::MissingModelTag);
    }
    let entries = load_manifest(manifest)?;
    if entries.is_empty() {
        return Err(OrchestratorError::EmptyManifest);
    }
    let mut pairs = HashSet::new();
    for e in &entries {
        if !pairs.insert((e.job.prompt_id.as_str(), e.job.seed)) {
            return Err(OrchestratorError::DuplicateJob { prompt_id: e.job.prompt_id.clone(), seed: e.job.seed });
        }
        if let Some(out) = &e.output {
            if out.model_tag != options.model_tag {
                return Err(OrchestratorError::MixedModelTag {
                    expected: options.model_tag.clone(),
                    found: out.model_tag.clone(),
                });
            }
        }
    }

    let todo: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].job.status != JobStatus::Done).collect();
    let position: HashMap<String, usize> =
        entries.iter().enumerate().map(|(i, e)| (e.job.job_id.clone(), i)).collect();

    let stop = AtomicBool::new(false);
    let stopped = || stop.load(Ordering::SeqCst) || options.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
    let next = AtomicUsize::new(0);
    let calls = AtomicU64::new(0);
    let mut latest = entries.clone();
    let mut write_error = None;

    {
        let mut journal = LineAppender::open(manifest, false)?;
        let (tx, rx) = mpsc::channel::<JobEntry>();
        let workers = options.max_parallel.max(1).min(todo.len().max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, todo, entries, calls, stopped) = (&next, &todo, &entries, &calls, &stopped);
                scope.spawn(move || loop {
                    if stopped() {
                        break;
                    }
                    let slot = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&idx) = todo.get(slot) else { break };
                    execute(entries[idx].clone(), client, options, &tx, calls, stopped);
                });
            }
            drop(tx);
            // single writer: every status change funnels through here
            for entry in rx {
                if write_error.is_none() {
                    if let Err(e) = journal.append(&entry) {
                        stop.store(true, Ordering::SeqCst);
                        write_error = Some(e);
                    }
                }
                let i = position[&entry.job.job_id];
                latest[i] = entry;
            }
        });
    }
    if let Some(e) = write_error {
        return Err(e.into());
    }
    write_manifest(manifest, &latest)?;

    let count = |s: JobStatus| latest.iter().filter(|e| e.job.status == s).count();
    let pending = count(JobStatus::Pending) + count(JobStatus::Running);
    Ok(RunSummary {
        records: latest.iter().filter_map(|e| e.output.clone()).collect(),
        done: count(JobStatus::Done),
        failed: count(JobStatus::Failed),
        pending,
        calls: calls.load(Ordering::SeqCst),
        interrupted: stopped() && pending > 0,
    })
}

fn execute<C: GenerationClient>(
    mut entry: JobEntry,
    client: &C,
    options: &RunOptions,
    tx: &Sender<JobEntry>,
    calls: &AtomicU64,
    stopped: &dyn Fn() -> bool,
) {
    let emit = |e: &JobEntry| {
        let _ = tx.send(e.clone());
    };
    let step = |entry: &mut JobEntry, to| entry.job.transition(to).expect("dispatcher only issues legal transitions");

    entry.error = None;
    entry.output = None;
    if matches!(entry.job.status, JobStatus::Failed | JobStatus::Running) {
        step(&mut entry, JobStatus::Pending);
        emit(&entry);
    }
    let request = GenerationRequest {
        prompt: entry.job.prompt.clone(),
        seed: entry.job.seed,
        width: options.width,
        height: options.height,
    };
    let mut retries = 0;
    loop {
        step(&mut entry, JobStatus::Running);
        emit(&entry);
        calls.fetch_add(1, Ordering::SeqCst);
        let result = client.generate(&request).and_then(|r| {
            if r.image_ref.trim().is_empty() {
                Err(ClientError::Malformed("empty image_ref".into()))
            } else {
                Ok(r)
            }
        });
        match result {
            Ok(response) => {
                step(&mut entry, JobStatus::Done);
                entry.output = Some(GenerationRecord {
                    job_id: entry.job.job_id.clone(),
                    prompt_id: entry.job.prompt_id.clone(),
                    seed: entry.job.seed,
                    image_ref: response.image_ref,
                    model_tag: options.model_tag.clone(),
                    created_at: Utc::now(),
                });
                emit(&entry);
                return;
            }
            Err(err) => {
                step(&mut entry, JobStatus::Failed);
                entry.error = Some(format!("{}: {err}", err.kind()));
                emit(&entry);
                if !err.is_retryable() || retries >= options.retry.max_retries || stopped() {
                    return;
                }
                retries += 1;
                let delay = options.retry.delay(retries);
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
                step(&mut entry, JobStatus::Pending);
                entry.error = None;
                emit(&entry);
            }
        }
    }
}
