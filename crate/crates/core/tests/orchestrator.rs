mod common;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use common::ScriptedGenerator;
use fairgen_core::orchestrator::{
    load_manifest, plan_eval_jobs, run_jobs, write_manifest, JobEntry, JobStatus, RunOptions,
};
use fairgen_core::services::{ClientError, RetryPolicy};
use fairgen_core::taxonomy::{Assignment, Origin, PromptRecord};

fn prompts(n: usize) -> Vec<PromptRecord> {
    (0..n)
        .map(|i| {
            let assignment: Assignment = [("profession".to_string(), format!("job{i}"))].into();
            PromptRecord::new(format!("a photo of job{i}"), assignment, Origin::Template, None)
        })
        .collect()
}

fn manifest(dir: &std::path::Path, n_prompts: usize, seeds: u32) -> std::path::PathBuf {
    let path = dir.join("jobs.jsonl");
    let jobs = plan_eval_jobs(&prompts(n_prompts), seeds, 0).unwrap();
    write_manifest(&path, &jobs.into_iter().map(JobEntry::new).collect::<Vec<_>>()).unwrap();
    path
}

fn options() -> RunOptions {
    let mut o = RunOptions::new("sd15");
    o.retry = RetryPolicy::immediate(3);
    o.max_parallel = 3;
    o
}

#[test]
fn all_jobs_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 3, 2);
    let gen = ScriptedGenerator::default();
    let summary = run_jobs(&path, &gen, &options()).unwrap();
    assert_eq!((summary.done, summary.failed, summary.pending, summary.calls), (6, 0, 0, 6));
    assert_eq!(summary.records.len(), 6);
    let entries = load_manifest(&path).unwrap();
    assert!(entries.iter().all(|e| e.job.status == JobStatus::Done && e.job.attempt == 1));
    assert!(summary.records.iter().all(|r| r.model_tag == "sd15"));
}

#[test]
fn transient_failures_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 3, 2);
    let gen = ScriptedGenerator::default();
    let third = &load_manifest(&path).unwrap()[2].job;
    gen.fail(&third.prompt, third.seed, [ClientError::Timeout, ClientError::Status { code: 503, body: String::new() }]);
    let summary = run_jobs(&path, &gen, &options()).unwrap();
    assert_eq!((summary.done, summary.calls), (6, 8));
    let entries = load_manifest(&path).unwrap();
    assert_eq!(entries[2].job.attempt, 3);
    assert_eq!(entries[2].job.status, JobStatus::Done);
    assert!(entries.iter().enumerate().all(|(i, e)| i == 2 || e.job.attempt == 1));
}

#[test]
fn permanent_failure_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 3, 2);
    let gen = ScriptedGenerator::default();
    let second = load_manifest(&path).unwrap()[1].job.clone();
    gen.fail(&second.prompt, second.seed, [ClientError::Status { code: 400, body: "bad prompt".into() }]);
    let summary = run_jobs(&path, &gen, &options()).unwrap();
    assert_eq!((summary.done, summary.failed), (5, 1));
    let entries = load_manifest(&path).unwrap();
    assert_eq!(entries[1].job.status, JobStatus::Failed);
    assert!(entries[1].error.as_deref().unwrap().starts_with("rejected"));

    // resume: only the failed job is retried, done jobs cost nothing
    let gen2 = ScriptedGenerator::default();
    let summary = run_jobs(&path, &gen2, &options()).unwrap();
    assert_eq!((summary.done, summary.failed, summary.calls), (6, 0, 1));
    assert_eq!(gen2.calls.lock().unwrap()[0], (second.prompt.clone(), second.seed));

    let gen3 = ScriptedGenerator::default();
    let summary = run_jobs(&path, &gen3, &options()).unwrap();
    assert_eq!((summary.done, summary.calls), (6, 0));
}

#[test]
fn cancel_then_resume_has_no_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 5, 4);
    let flag = Arc::new(AtomicBool::new(false));
    let gen = ScriptedGenerator { cancel_after: Some((7, Arc::clone(&flag))), ..Default::default() };
    let mut opts = options();
    opts.cancel = Some(Arc::clone(&flag));
    let first = run_jobs(&path, &gen, &opts).unwrap();
    assert!(first.interrupted);
    assert!(first.done >= 7 && first.done < 20, "done {}", first.done);

    let gen2 = ScriptedGenerator::default();
    let second = run_jobs(&path, &gen2, &options()).unwrap();
    assert_eq!(second.done, 20);
    assert_eq!(second.calls as usize, 20 - first.done);
    let mut all = gen.successes_per_job();
    for (k, n) in gen2.successes_per_job() {
        *all.entry(k).or_insert(0) += n;
    }
    assert_eq!(all.len(), 20);
    assert!(all.values().all(|&n| n == 1));
}

#[test]
fn crash_leftovers_are_requeued() {
    let dir = tempfile::tempdir().unwrap();
    let path = manifest(dir.path(), 2, 2);
    // a crash leaves jobs marked running in the journal
    let mut entries = load_manifest(&path).unwrap();
    for e in entries.iter_mut().take(2) {
        e.job.transition(JobStatus::Running).unwrap();
    }
    write_manifest(&path, &entries).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .and_then(|mut f| std::io::Write::write_all(&mut f, b"{\"job_id\":\"torn"))
        .unwrap();

    let gen = ScriptedGenerator::default();
    let summary = run_jobs(&path, &gen, &options()).unwrap();
    assert_eq!((summary.done, summary.calls), (4, 4));
    let entries = load_manifest(&path).unwrap();
    assert_eq!(entries[0].job.attempt, 2);
    assert_eq!(entries[3].job.attempt, 1);
}

#[test]
fn eval_plan_size() {
    let jobs = plan_eval_jobs(&prompts(340), 10, 0).unwrap();
    assert_eq!(jobs.len(), 3400);
    let unique: std::collections::HashSet<_> = jobs.iter().map(|j| (&j.prompt_id, j.seed)).collect();
    assert_eq!(unique.len(), 3400);
}
