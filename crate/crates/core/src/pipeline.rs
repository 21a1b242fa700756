//! End-to-end audit: corpus, jobs, generations, predictions, report.
//!
//! Each stage persists its output under the manifest directory and is
//! skipped on the next run when that output already exists, so an
//! interrupted run picks up after the last completed stage.

use std::collections::BTreeSet;
use std::error::Error as StdError;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use crate::config::PipelineConfig;
use crate::inference::{infer_batch, ingest_predictions, write_predictions, InferOptions, PredictionRecord};
use crate::jsonl;
use crate::labels::PerceivedAxis;
use crate::metrics::{build_report, FairnessReport};
use crate::orchestrator::{plan_eval_jobs, run_jobs, write_manifest, GenerationRecord, JobEntry, RunOptions};
use crate::report::{parse_structured, render_report, ReportFormat};
use crate::services::{GenerationClient, VqaClient};
use crate::taxonomy::{expand_template, sample_corpus, CorpusSpec, PromptRecord, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Corpus,
    Jobs,
    Generation,
    Inference,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Jobs => "jobs",
            Stage::Generation => "generation",
            Stage::Inference => "inference",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed (last checkpoint: {}): {source}", checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
pub struct PipelineError {
    pub stage: Stage,
    /// Newest stage output known to be complete on disk.
    pub checkpoint: Option<PathBuf>,
    #[source]
    pub source: Box<dyn StdError + Send + Sync>,
}

/// Files a run reads and writes, all under `manifest_dir`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub corpus: PathBuf,
    pub jobs: PathBuf,
    pub images: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            corpus: dir.join("corpus.jsonl"),
            jobs: dir.join("jobs.jsonl"),
            images: dir.join("images.jsonl"),
            report_json: dir.join("report.json"),
            report_text: dir.join("report.txt"),
            dir: dir.to_path_buf(),
        }
    }

    pub fn predictions(&self, axis: PerceivedAxis) -> PathBuf {
        self.dir.join(format!("predictions_{}.jsonl", axis.short_name()))
    }
}

pub struct Clients<'a> {
    pub generation: &'a dyn GenerationClient,
    pub vqa: &'a dyn VqaClient,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Stop cleanly once this stage's output is on disk.
    pub stop_after: Option<Stage>,
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub paths: RunPaths,
    /// `None` when the run stopped before the report stage.
    pub report: Option<FairnessReport>,
    pub completed: Vec<Stage>,
    pub generation_calls: u64,
    /// Images sent to the VQA model by this invocation, over all axes.
    pub vqa_images: usize,
}

#[derive(Debug, thiserror::Error)]
enum StageFailure {
    #[error("{failed} generation jobs failed and {pending} are still pending")]
    Incomplete { failed: usize, pending: usize },
    #[error("interrupted")]
    Interrupted,
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    paths: RunPaths,
    checkpoint: Option<PathBuf>,
}

impl Runner<'_> {
    fn fail<E: Into<Box<dyn StdError + Send + Sync>>>(&self, stage: Stage) -> impl FnOnce(E) -> PipelineError + '_ {
        move |e| PipelineError { stage, checkpoint: self.checkpoint.clone(), source: e.into() }
    }

    fn corpus(&mut self) -> Result<Vec<PromptRecord>, PipelineError> {
        let path = self.paths.corpus.clone();
        if path.exists() {
            log::info!("corpus: reusing {}", path.display());
            let records = jsonl::read(&path).map_err(self.fail(Stage::Corpus))?;
            self.checkpoint = Some(path);
            return Ok(records);
        }
        let spec = CorpusSpec::from_path(&self.config.corpus_spec).map_err(self.fail(Stage::Corpus))?;
        let records = match spec.sampling {
            Sampling::FullCrossProduct => expand_template(&spec),
            Sampling::Stratified => sample_corpus(&spec),
        }
        .map_err(self.fail(Stage::Corpus))?;
        jsonl::write(&path, &records).map_err(self.fail(Stage::Corpus))?;
        log::info!("corpus: {} prompts", records.len());
        self.checkpoint = Some(path);
        Ok(records)
    }

    fn jobs(&mut self, prompts: &[PromptRecord]) -> Result<(), PipelineError> {
        let path = self.paths.jobs.clone();
        if !path.exists() {
            let jobs = plan_eval_jobs(prompts, self.config.seeds_per_prompt, self.config.seed_base)
                .map_err(self.fail(Stage::Jobs))?;
            let entries: Vec<JobEntry> = jobs.into_iter().map(JobEntry::new).collect();
            write_manifest(&path, &entries).map_err(self.fail(Stage::Jobs))?;
            log::info!("jobs: planned {}", entries.len());
        }
        self.checkpoint = Some(path);
        Ok(())
    }

    fn generation(
        &mut self,
        client: &dyn GenerationClient,
        cancel: Option<Arc<AtomicBool>>,
    ) -> Result<(Vec<GenerationRecord>, u64), PipelineError> {
        let images = self.paths.images.clone();
        if images.exists() {
            let records = jsonl::read(&images).map_err(self.fail(Stage::Generation))?;
            self.checkpoint = Some(images);
            return Ok((records, 0));
        }
        let mut options = RunOptions::new(&self.config.model_tag);
        options.max_parallel = self.config.max_parallel;
        options.retry = self.config.retry;
        options.width = self.config.width;
        options.height = self.config.height;
        options.cancel = cancel;
        let summary = run_jobs(&self.paths.jobs, &client, &options).map_err(self.fail(Stage::Generation))?;
        if summary.interrupted {
            return Err(self.fail(Stage::Generation)(StageFailure::Interrupted));
        }
        if summary.failed > 0 || summary.pending > 0 {
            return Err(self.fail(Stage::Generation)(StageFailure::Incomplete {
                failed: summary.failed,
                pending: summary.pending,
            }));
        }
        jsonl::write(&images, &summary.records).map_err(self.fail(Stage::Generation))?;
        self.checkpoint = Some(images);
        Ok((summary.records, summary.calls))
    }

    /// Predictions for one axis, asking only about images without a
    /// usable answer on disk.
    fn inference(
        &mut self,
        axis: PerceivedAxis,
        images: &[GenerationRecord],
        client: &dyn VqaClient,
    ) -> Result<(Vec<PredictionRecord>, usize), PipelineError> {
        let path = self.paths.predictions(axis);
        let wanted: BTreeSet<&str> = images.iter().map(|r| r.image_ref.as_str()).collect();
        let mut kept: Vec<PredictionRecord> = if path.exists() {
            ingest_predictions(&path).map_err(self.fail(Stage::Inference))?
        } else {
            Vec::new()
        };
        kept.retain(|p| wanted.contains(p.image_ref.as_str()) && !p.raw_answer.starts_with("<vqa-error:"));
        let have: BTreeSet<&str> = kept.iter().map(|p| p.image_ref.as_str()).collect();
        let missing: Vec<String> = wanted.iter().filter(|i| !have.contains(*i)).map(|i| i.to_string()).collect();
        let asked = missing.len();
        if !missing.is_empty() {
            let options = InferOptions { max_parallel: self.config.max_parallel, retry: self.config.retry };
            let fresh = infer_batch(&missing, axis, &client, &self.config.model_tag, &options)
                .map_err(self.fail(Stage::Inference))?;
            kept.extend(fresh);
        }
        kept.sort_by(|a, b| a.image_ref.cmp(&b.image_ref));
        if asked > 0 || !path.exists() {
            write_predictions(&path, &kept).map_err(self.fail(Stage::Inference))?;
        }
        self.checkpoint = Some(path);
        Ok((kept, asked))
    }

    fn report(&mut self, preds: &[PredictionRecord]) -> Result<FairnessReport, PipelineError> {
        let baseline = match &self.config.baseline_report {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(self.fail(Stage::Report))?;
                Some(parse_structured(&text).map_err(self.fail(Stage::Report))?)
            }
            None => None,
        };
        let report = build_report(preds, &self.config.model_tag, baseline.as_ref(), self.config.tau)
            .map_err(self.fail(Stage::Report))?;
        let json = render_report(&report, ReportFormat::Structured);
        jsonl::write_atomic(&self.paths.report_json, json.as_bytes()).map_err(self.fail(Stage::Report))?;
        let text = render_report(&report, ReportFormat::TextTable);
        jsonl::write_atomic(&self.paths.report_text, text.as_bytes()).map_err(self.fail(Stage::Report))?;
        self.checkpoint = Some(self.paths.report_json.clone());
        Ok(report)
    }
}

pub fn run_pipeline(
    config: &PipelineConfig,
    clients: &Clients<'_>,
    options: &PipelineOptions,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate().map_err(|e| PipelineError { stage: Stage::Corpus, checkpoint: None, source: e.into() })?;
    std::fs::create_dir_all(&config.manifest_dir)
        .map_err(|e| PipelineError { stage: Stage::Corpus, checkpoint: None, source: e.into() })?;
    let paths = RunPaths::new(&config.manifest_dir);
    let mut runner = Runner { config, paths: paths.clone(), checkpoint: None };
    let mut outcome =
        PipelineOutcome { paths, report: None, completed: Vec::new(), generation_calls: 0, vqa_images: 0 };
    let stop = |stage: Stage| options.stop_after == Some(stage);

    let prompts = runner.corpus()?;
    outcome.completed.push(Stage::Corpus);
    if stop(Stage::Corpus) {
        return Ok(outcome);
    }
    runner.jobs(&prompts)?;
    outcome.completed.push(Stage::Jobs);
    if stop(Stage::Jobs) {
        return Ok(outcome);
    }
    let (images, calls) = runner.generation(clients.generation, options.cancel.clone())?;
    outcome.generation_calls = calls;
    outcome.completed.push(Stage::Generation);
    if stop(Stage::Generation) {
        return Ok(outcome);
    }
    let mut preds = Vec::new();
    for &axis in &config.axes {
        let (p, asked) = runner.inference(axis, &images, clients.vqa)?;
        outcome.vqa_images += asked;
        preds.extend(p);
    }
    outcome.completed.push(Stage::Inference);
    if stop(Stage::Inference) {
        return Ok(outcome);
    }
    outcome.report = Some(runner.report(&preds)?);
    outcome.completed.push(Stage::Report);
    Ok(outcome)
}
