use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fairgen_core::annotation::{self, ServerOptions, TaskStore};
use fairgen_core::balancer::{
    balance_subset, composition_report, default_uniform_budget, write_subset, BalanceMode, CompositionTarget,
    SubsetHeader,
};
use fairgen_core::config::{Endpoints, PipelineConfig};
use fairgen_core::inference::{infer_batch, ingest_predictions, write_predictions, InferOptions, PredictionRecord};
use fairgen_core::jsonl;
use fairgen_core::labels::{Label, PerceivedAxis};
use fairgen_core::metrics::{build_report, classifier_accuracy, read_labels, write_labels, DEFAULT_THRESHOLD};
use fairgen_core::orchestrator::{plan_eval_jobs, run_jobs, write_manifest, GenerationRecord, JobEntry, RunOptions};
use fairgen_core::pipeline::{run_pipeline, Clients, PipelineOptions, Stage};
use fairgen_core::report::{parse_structured, render_report, ReportFormat};
use fairgen_core::services::offline::{OfflineGenerator, OfflineParaphraser, OfflineVqa};
use fairgen_core::services::{Endpoint, GenerationClient, HttpService, ParaphraseClient, RetryPolicy, VqaClient};
use fairgen_core::taxonomy::{
    corpus_stats, expand_template, paraphrase_corpus, sample_corpus, CorpusSpec, ParaphraseOptions, PromptRecord,
    Sampling,
};

use crate::{AnnotateCmd, BalanceArgs, Cli, Command, CorpusCmd, InferCmd, JobsCmd, Limits, MetricsCmd, ModeArg, PipelineCmd, ReportCmd};

pub fn parse_stage(s: &str) -> Result<Stage, String> {
    [Stage::Corpus, Stage::Jobs, Stage::Generation, Stage::Inference, Stage::Report]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown stage `{s}`"))
}

/// Service and run settings shared by every verb: the config file when
/// given, `FAIRGEN_*` environment overrides otherwise.
struct Settings {
    config: Option<PipelineConfig>,
    endpoints: Endpoints,
    retry: RetryPolicy,
    max_parallel: usize,
    seed: Option<u64>,
    dry_run: bool,
}

impl Settings {
    fn new(cli: &Cli) -> Result<Self> {
        let config = cli.config.as_deref().map(PipelineConfig::load).transpose()?;
        let endpoints = match &config {
            Some(c) => c.endpoints.clone(),
            None => {
                let mut scratch = PipelineConfig::new("", "", "-");
                scratch.apply_env(|k| std::env::var(k).ok());
                scratch.endpoints
            }
        };
        Ok(Settings {
            retry: config.as_ref().map(|c| c.retry).unwrap_or_default(),
            max_parallel: config.as_ref().map_or(4, |c| c.max_parallel),
            endpoints,
            config,
            seed: cli.seed,
            dry_run: cli.dry_run,
        })
    }

    fn limits(&self, limits: &Limits) -> (usize, RetryPolicy) {
        let mut retry = self.retry;
        if let Some(n) = limits.max_retries {
            retry.max_retries = n;
        }
        (limits.max_parallel.unwrap_or(self.max_parallel).max(1), retry)
    }

    fn endpoint(&self, slot: &Option<Endpoint>, name: &str) -> Result<HttpService> {
        match slot {
            Some(e) if !e.url.trim().is_empty() => Ok(HttpService::new(e.clone())),
            _ => bail!("no {name} endpoint configured; set it in --config or FAIRGEN_{}_URL, or pass --dry-run", name.to_uppercase()),
        }
    }

    fn generation(&self) -> Result<Box<dyn GenerationClient>> {
        if self.dry_run {
            return Ok(Box::new(OfflineGenerator));
        }
        Ok(Box::new(self.endpoint(&self.endpoints.generation, "generation")?))
    }

    fn vqa(&self) -> Result<Box<dyn VqaClient>> {
        if self.dry_run {
            return Ok(Box::new(OfflineVqa));
        }
        Ok(Box::new(self.endpoint(&self.endpoints.vqa, "vqa")?))
    }

    fn paraphrase(&self) -> Result<Box<dyn ParaphraseClient>> {
        if self.dry_run {
            return Ok(Box::new(OfflineParaphraser));
        }
        Ok(Box::new(self.endpoint(&self.endpoints.paraphrase, "paraphrase")?))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let settings = Settings::new(&cli)?;
    match cli.command {
        Command::Corpus(cmd) => corpus(&settings, cmd),
        Command::Jobs(cmd) => jobs(&settings, cmd),
        Command::Infer(cmd) => infer(&settings, cmd),
        Command::Metrics(cmd) => metrics(cmd),
        Command::Balance(args) => balance(&settings, args),
        Command::Annotate(cmd) => annotate(&settings, cmd),
        Command::Report(cmd) => report(cmd),
        Command::Pipeline(cmd) => pipeline(&settings, cmd),
    }
}

fn corpus(settings: &Settings, cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Generate { spec, out } => {
            let mut spec = CorpusSpec::from_path(&spec)?;
            if let Some(seed) = settings.seed {
                spec.seed = seed;
            }
            let records = match spec.sampling {
                Sampling::FullCrossProduct => expand_template(&spec)?,
                Sampling::Stratified => sample_corpus(&spec)?,
            };
            jsonl::write(&out, &records)?;
            println!("{} prompts -> {}", records.len(), out.display());
        }
        CorpusCmd::Paraphrase { input, variants, out, failures } => {
            if variants == 0 {
                bail!("--variants must be at least 1");
            }
            let records: Vec<PromptRecord> = jsonl::read(&input)?;
            let client = settings.paraphrase()?;
            let options = ParaphraseOptions { max_parallel: settings.max_parallel, retry: settings.retry, ..Default::default() };
            let outcome = paraphrase_corpus(&records, &&*client, variants, &options);
            let added = outcome.records.len();
            jsonl::write(&out, records.iter().chain(&outcome.records))?;
            if let Some(path) = failures {
                jsonl::write(&path, &outcome.failures)?;
            }
            println!("{} templates + {added} paraphrases -> {} ({} failed)", records.len(), out.display(), outcome.failures.len());
        }
        CorpusCmd::Stats { input, json } => {
            let records: Vec<PromptRecord> = jsonl::read(&input)?;
            let stats = corpus_stats(&records);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("records: {}   paraphrased: {:.1}%", stats.total, stats.paraphrase_fraction * 100.0);
                for (axis, hist) in &stats.per_axis_histograms {
                    println!("{axis}");
                    for (value, n) in hist {
                        println!("  {value:<32} {n:>8}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn jobs(settings: &Settings, cmd: JobsCmd) -> Result<()> {
    match cmd {
        JobsCmd::Plan { corpus, seeds, out } => {
            let prompts: Vec<PromptRecord> = jsonl::read(&corpus)?;
            let jobs = plan_eval_jobs(&prompts, seeds, settings.seed.unwrap_or(0))?;
            let entries: Vec<JobEntry> = jobs.into_iter().map(JobEntry::new).collect();
            write_manifest(&out, &entries)?;
            println!("{} jobs -> {}", entries.len(), out.display());
        }
        JobsCmd::Run { manifest, model_tag, out, limits } => {
            let tag = model_tag
                .or_else(|| settings.config.as_ref().map(|c| c.model_tag.clone()))
                .context("--model-tag is required without --config")?;
            let (max_parallel, retry) = settings.limits(&limits);
            let mut options = RunOptions::new(tag);
            options.max_parallel = max_parallel;
            options.retry = retry;
            if let Some(c) = &settings.config {
                options.width = c.width;
                options.height = c.height;
            }
            let client = settings.generation()?;
            let summary = run_jobs(&manifest, &&*client, &options)?;
            jsonl::write(&out, &summary.records)?;
            println!(
                "done {}  failed {}  pending {}  calls {} -> {}",
                summary.done,
                summary.failed,
                summary.pending,
                summary.calls,
                out.display()
            );
            if summary.failed > 0 || summary.pending > 0 {
                bail!("{} jobs did not finish; rerun to retry them", summary.failed + summary.pending);
            }
        }
    }
    Ok(())
}

fn infer(settings: &Settings, cmd: InferCmd) -> Result<()> {
    let InferCmd::Run { images, axis, out, model_tag, limits } = cmd;
    let records: Vec<GenerationRecord> = jsonl::read(&images)?;
    let tags: BTreeSet<&str> = records.iter().map(|r| r.model_tag.as_str()).collect();
    let tag = match (model_tag, tags.len()) {
        (Some(t), _) => t,
        (None, 1) => tags.iter().next().unwrap().to_string(),
        (None, _) => bail!("images carry {} model tags; pass --model-tag", tags.len()),
    };
    let refs: Vec<String> = records.iter().map(|r| r.image_ref.clone()).collect();
    let (max_parallel, retry) = settings.limits(&limits);
    let client = settings.vqa()?;
    let preds = infer_batch(&refs, axis, &&*client, &tag, &InferOptions { max_parallel, retry })?;
    write_predictions(&out, &preds)?;
    let failed = preds.iter().filter(|p| p.raw_answer.starts_with("<vqa-error:")).count();
    println!("{} predictions ({failed} failed calls) -> {}", preds.len(), out.display());
    Ok(())
}

fn read_preds(paths: &[impl AsRef<Path>]) -> Result<Vec<PredictionRecord>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(ingest_predictions(p.as_ref()).with_context(|| p.as_ref().display().to_string())?);
    }
    Ok(all)
}

fn metrics(cmd: MetricsCmd) -> Result<()> {
    match cmd {
        MetricsCmd::Audit { preds, baseline, tau, out, format } => {
            let preds = read_preds(&preds)?;
            let tags: BTreeSet<&str> = preds.iter().map(|p| p.model_tag.as_str()).collect();
            let tag = tags.iter().next().copied().unwrap_or_default().to_string();
            let baseline = baseline
                .map(|p| -> Result<_> { Ok(parse_structured(&std::fs::read_to_string(&p)?)?) })
                .transpose()?;
            let report = build_report(&preds, &tag, baseline.as_ref(), tau.unwrap_or(DEFAULT_THRESHOLD))?;
            jsonl::write_atomic(&out, render_report(&report, ReportFormat::Structured).as_bytes())?;
            print!("{}", render_report(&report, format));
        }
        MetricsCmd::Accuracy { preds, labels, axis, json } => {
            let preds = read_preds(&[preds])?;
            let labels = read_labels(&labels)?;
            let r = classifier_accuracy(&preds, &labels, axis)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("{axis}: {}/{} agree, accuracy {:.3}", r.trace(), r.n, r.accuracy);
                println!("unmatched predictions {}, unmatched labels {}", r.unmatched_predictions, r.unmatched_labels);
                for ((human, predicted), n) in &r.confusion {
                    println!("  human {:<14} predicted {:<14} {n:>6}", human.as_str(), predicted.as_str());
                }
            }
        }
    }
    Ok(())
}

fn balance(settings: &Settings, args: BalanceArgs) -> Result<()> {
    let preds = read_preds(&[&args.preds])?;
    let pool: Vec<(String, Label)> =
        preds.iter().filter(|p| p.axis == args.axis).map(|p| (p.image_ref.clone(), p.label)).collect();
    let mode = match args.mode {
        ModeArg::Exact => BalanceMode::Exact,
        ModeArg::BestEffort => BalanceMode::BestEffort,
    };
    let budget = match args.budget {
        Some(b) => b,
        None if args.target == "uniform" => default_uniform_budget(&pool, args.axis)?,
        None => bail!("--budget is required unless --target is uniform"),
    };
    let target: CompositionTarget = if args.target == "uniform" {
        CompositionTarget::uniform(args.axis, budget, mode)?
    } else if let Some(name) = args.target.strip_prefix("only-") {
        let label: Label = name.parse()?;
        CompositionTarget::only(label, budget, mode)?
    } else {
        let text = std::fs::read_to_string(&args.target).with_context(|| format!("target file {}", args.target))?;
        CompositionTarget::from_json(&text, budget, mode)?
    };
    if target.axis != args.axis {
        bail!("target is for {} but --axis is {}", target.axis, args.axis);
    }
    let seed = settings.seed.unwrap_or(0);
    let subset = balance_subset(&pool, &target, seed)?;
    let achieved = composition_report(&subset, &pool, args.axis, Some(&target))?;
    for (label, n) in &achieved.counts {
        println!("{:<8} {n:>6}  {:.3}", label.as_str(), achieved.ratios.get(label).copied().unwrap_or(0.0));
    }
    write_subset(&args.out, &SubsetHeader { target, achieved, seed }, &subset)?;
    println!("{} records -> {}", subset.len(), args.out.display());
    Ok(())
}

fn annotate(settings: &Settings, cmd: AnnotateCmd) -> Result<()> {
    match cmd {
        AnnotateCmd::Sample { images, n, axis, out } => {
            let records: Vec<GenerationRecord> = jsonl::read(&images)?;
            let axes = if axis.is_empty() { PerceivedAxis::ALL.to_vec() } else { axis };
            let tasks = annotation::sample_annotation_tasks(&records, n, settings.seed.unwrap_or(0), &axes)?;
            annotation::write_tasks(&out, &tasks)?;
            println!("{} tasks -> {}", tasks.len(), out.display());
        }
        AnnotateCmd::Serve { tasks, journal, addr, static_dir, image_root, workers } => {
            let store = TaskStore::open(annotation::read_tasks(&tasks)?, &journal)?;
            let handle = annotation::start(Arc::new(store), ServerOptions { addr, static_dir, image_root, workers })?;
            println!("annotation service at {}", handle.url());
            handle.wait();
        }
        AnnotateCmd::Export { tasks, journal, out } => {
            let store = TaskStore::open(annotation::read_tasks(&tasks)?, &journal)?;
            let labels = store.export();
            write_labels(&out, &labels)?;
            let p = store.progress();
            println!("{} labels from {}/{} done tasks -> {}", labels.len(), p.done, p.total, out.display());
        }
    }
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    let ReportCmd::Render { report, format, out } = cmd;
    let parsed = parse_structured(&std::fs::read_to_string(&report)?)?;
    let text = render_report(&parsed, format);
    match out {
        Some(path) => jsonl::write_atomic(&path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn pipeline(settings: &Settings, cmd: PipelineCmd) -> Result<()> {
    let PipelineCmd::Run { tau, stop_after } = cmd;
    let mut config = settings.config.clone().context("pipeline run needs --config")?;
    if let Some(t) = tau {
        config = config.with_tau(t)?;
    }
    if let Some(seed) = settings.seed {
        config.seed_base = seed;
    }
    let (generation, vqa) = (settings.generation()?, settings.vqa()?);
    let clients = Clients { generation: &*generation, vqa: &*vqa };
    let outcome = run_pipeline(&config, &clients, &PipelineOptions { stop_after, cancel: None })?;
    let last = outcome.completed.last().map_or("none", |s| s.as_str());
    println!(
        "stages through {last}; {} generation calls, {} vqa images",
        outcome.generation_calls, outcome.vqa_images
    );
    if let Some(report) = &outcome.report {
        print!("{}", render_report(report, ReportFormat::TextTable));
        println!("report -> {}", outcome.paths.report_json.display());
    }
    Ok(())
}
