//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any FAIL.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use common::{four_prompt_spec, ScriptedGenerator, ScriptedVqa};
use fairgen_core::balancer::{apportion, balance_subset, BalanceMode, CompositionTarget};
use fairgen_core::config::PipelineConfig;
use fairgen_core::inference::{normalize_answer, PredictionRecord};
use fairgen_core::metrics::{
    classifier_accuracy, disparate_impact, marginal_distribution, relative_improvement, LabelRecord,
    MarginalDistribution, Verdict,
};
use fairgen_core::num::rational_from_decimal;
use fairgen_core::orchestrator::plan_eval_jobs;
use fairgen_core::pipeline::{run_pipeline, Clients, PipelineOptions, Stage};
use fairgen_core::services::RetryPolicy;
use fairgen_core::taxonomy::{expand_template, AttributeAxis, CorpusSpec, CrossProduct, Origin, PromptRecord};
use fairgen_core::{Label, PerceivedAxis, Rational64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(detail.into())
    }
}

fn relative_improvements() -> Outcome {
    let cases = [
        ("0.22", "0.55", 150.0, 0.0),
        ("0.45", "0.89", 97.7, 0.2),
        ("0.02", "0.66", 3200.0, 0.0),
        ("0.22", "0.85", 286.6, 0.3),
    ];
    let mut shown = Vec::new();
    for (before, after, reported, tol) in cases {
        let (b, a) = (rational_from_decimal(before).unwrap(), rational_from_decimal(after).unwrap());
        let exact = relative_improvement::<Rational64>(b, a).map_err(|e| e.to_string())?;
        let value = *exact.numer() as f64 / *exact.denom() as f64;
        if tol == 0.0 {
            check(exact == Rational64::from_integer(reported as i64), format!("{before}->{after} gave {exact}"))?;
        } else {
            check((value - reported).abs() <= tol, format!("{before}->{after} gave {value:.3}, reported {reported}"))?;
        }
        let float = relative_improvement::<f64>(before.parse().unwrap(), after.parse().unwrap()).unwrap();
        check((float - value).abs() < 1e-9, format!("{before}->{after}: float {float} vs exact {value}"))?;
        shown.push(format!("{before}->{after}={value:+.2}%"));
    }
    Ok(shown.join(" "))
}

fn skin_marginal<S: fairgen_core::Scalar>(counts: &[u64; 5]) -> MarginalDistribution<S> {
    let labels = [Label::Light, Label::Medium, Label::Dark, Label::NonePresent, Label::Unparseable];
    MarginalDistribution::from_counts(PerceivedAxis::PerceivedSkinTone, &labels.into_iter().zip(*counts).collect())
}

fn pred(image: String, axis: PerceivedAxis, label: Label) -> PredictionRecord {
    PredictionRecord { image_ref: image, axis, raw_answer: label.to_string(), label, model_tag: "m".into() }
}

fn di_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let groups = [Label::Light, Label::Medium, Label::Dark];
    let mut compared = 0usize;
    for case in 0..1000 {
        let counts: [u64; 5] = std::array::from_fn(|i| if i < 3 && rng.random_bool(0.1) { 0 } else { rng.random_range(0..120) });
        let m = skin_marginal::<f64>(&counts);
        let k = rng.random_range(2..9u64);
        let scaled = skin_marginal::<f64>(&counts.map(|c| c * k));

        // tally oracle over shuffled individual predictions
        let mut preds = Vec::new();
        let all = [Label::Light, Label::Medium, Label::Dark, Label::NonePresent, Label::Unparseable];
        for (label, &c) in all.iter().zip(&counts) {
            for i in 0..c {
                preds.push(pred(format!("{label}-{i}"), PerceivedAxis::PerceivedSkinTone, *label));
            }
        }
        preds.shuffle(&mut rng);
        let tallied = marginal_distribution::<f64>(&preds, PerceivedAxis::PerceivedSkinTone);

        for &x1 in &groups {
            for &x2 in &groups {
                if x1 == x2 {
                    continue;
                }
                let r = disparate_impact(&m, x1, x2, 0.8).unwrap();
                let back = disparate_impact(&m, x2, x1, 0.8).unwrap();
                let (n1, n2) = (preds.iter().filter(|p| p.label == x1).count(), preds.iter().filter(|p| p.label == x2).count());
                let support = preds.iter().filter(|p| !p.label.is_sink()).count();
                let oracle = (n2 > 0 && support > 0).then(|| (n1 as f64 / support as f64) / (n2 as f64 / support as f64));
                let via_tally = disparate_impact(&tallied, x1, x2, 0.8).unwrap();
                match (r.di, oracle) {
                    (None, None) => check(r.verdict == Verdict::Undefined, format!("case {case}: undefined verdict"))?,
                    (Some(d), Some(o)) => {
                        check((d - o).abs() <= 1e-12 * o.max(1.0), format!("case {case}: di {d} vs tally {o}"))?;
                        // integer form of n1/n2 >= 4/5
                        let want = if 5 * n1 >= 4 * n2 { Verdict::Fair } else { Verdict::Biased };
                        check(r.verdict == want, format!("case {case}: verdict {:?} for {n1}/{n2}", r.verdict))?;
                    }
                    other => return Err(format!("case {case}: definedness differs {other:?}")),
                }
                check(via_tally.di == r.di, format!("case {case}: tallied marginal differs"))?;
                if let (Some(a), Some(b)) = (r.di, back.di) {
                    check((a * b - 1.0).abs() <= 1e-9, format!("case {case}: reciprocity {a}*{b}"))?;
                }
                let s = disparate_impact(&scaled, x1, x2, 0.8).unwrap();
                match (r.di, s.di) {
                    (Some(a), Some(b)) => check((a - b).abs() <= 1e-12 * a.max(1.0), format!("case {case}: scale x{k}"))?,
                    (None, None) => {}
                    _ => return Err(format!("case {case}: scaling changed definedness")),
                }
                // exact route agrees with the float one
                let exact = disparate_impact(&m.convert::<Rational64>(), x1, x2, Rational64::new(4, 5)).unwrap();
                check(exact.verdict == r.verdict, format!("case {case}: exact verdict differs"))?;
                compared += 1;
            }
        }
    }
    for (c1, c2) in [(4, 5), (8, 10), (80, 100), (400, 500)] {
        let m = skin_marginal::<f64>(&[c2, 0, c1, 0, 0]);
        let r = disparate_impact(&m, Label::Dark, Label::Light, 0.8).unwrap();
        check(r.di == Some(0.8) && r.verdict == Verdict::Fair, format!("{c1}/{c2} not fair at 0.8"))?;
        let e = disparate_impact(&m.convert::<Rational64>(), Label::Dark, Label::Light, Rational64::new(4, 5)).unwrap();
        check(e.verdict == Verdict::Fair, format!("{c1}/{c2} exact not fair"))?;
    }
    let m = skin_marginal::<f64>(&[100, 0, 79, 0, 0]);
    check(disparate_impact(&m, Label::Dark, Label::Light, 0.8).unwrap().verdict == Verdict::Biased, "79/100 not biased")?;
    Ok(format!("1000 vectors, {compared} ordered pairs, inclusive at 0.8"))
}

fn random_spec(rng: &mut ChaCha8Rng) -> CorpusSpec {
    let n_axes = rng.random_range(1..=4);
    let axes: Vec<AttributeAxis> = (0..n_axes)
        .map(|a| {
            let n = rng.random_range(1..=5);
            AttributeAxis::new(&format!("axis{a}"), (0..n).map(|v| format!("a{a}v{v}")), rng.random_bool(0.5))
        })
        .collect();
    let mut template: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    template.shuffle(rng);
    let mut spec = CorpusSpec::seven_qualifier(["x"], ["y"]);
    spec.axes = axes;
    spec.template = template;
    spec
}

fn expand_cardinality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let spec = random_spec(&mut rng);
        let sizes: Vec<usize> = (0..4).map(|i| spec.axes.get(i).map_or(1, |a| a.values.len())).collect();
        let mut oracle = BTreeSet::new();
        for i0 in 0..sizes[0] {
            for i1 in 0..sizes[1] {
                for i2 in 0..sizes[2] {
                    for i3 in 0..sizes[3] {
                        let idx = [i0, i1, i2, i3];
                        let a: BTreeMap<String, String> =
                            spec.axes.iter().zip(idx).map(|(ax, i)| (ax.name.clone(), ax.values[i].clone())).collect();
                        oracle.insert(a);
                    }
                }
            }
        }
        let records = expand_template(&spec).map_err(|e| e.to_string())?;
        let got: BTreeSet<_> = records.iter().map(|r| r.assignment.clone()).collect();
        check(records.len() == oracle.len() && got == oracle, format!("case {case}: {} vs {}", records.len(), oracle.len()))?;
        check(spec.cross_product_size().unwrap() == oracle.len() as u128, format!("case {case}: size"))?;
    }
    let ethnicities: Vec<String> = (0..57).map(|i| format!("ethnicity-{i:02}")).collect();
    let professions: Vec<String> = (0..170).map(|i| format!("profession-{i:03}")).collect();
    let full = CorpusSpec::seven_qualifier(ethnicities, professions);
    let lazy = CrossProduct::new(&full).map_err(|e| e.to_string())?;
    check(lazy.remaining() == 1_046_520, format!("full spec remaining {}", lazy.remaining()))?;
    let walked = lazy.count();
    check(walked == 1_046_520, format!("walked {walked}"))?;
    Ok(format!("200 random specs, full taxonomy {walked}"))
}

fn eval_jobs() -> Outcome {
    let prompts: Vec<PromptRecord> = (0..340)
        .map(|i| PromptRecord::new(format!("prompt {i}"), [("p".into(), i.to_string())].into(), Origin::Template, None))
        .collect();
    let jobs = plan_eval_jobs(&prompts, 10, 0).map_err(|e| e.to_string())?;
    let unique: BTreeSet<_> = jobs.iter().map(|j| (j.prompt_id.clone(), j.seed)).collect();
    check(jobs.len() == 3400 && unique.len() == 3400, format!("{} jobs, {} unique", jobs.len(), unique.len()))?;
    Ok("3400 unique (prompt, seed) jobs".into())
}

fn pipeline_config(dir: &std::path::Path) -> PipelineConfig {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&four_prompt_spec()).unwrap()).unwrap();
    let mut c = PipelineConfig::new(spec, dir.join("run"), "sd15");
    c.seeds_per_prompt = 2;
    c.retry = RetryPolicy::immediate(1);
    c
}

fn mocked_pipeline() -> Outcome {
    let run_clean = || -> Result<Vec<u8>, String> {
        let dir = tempfile::tempdir().unwrap();
        let cfg = pipeline_config(dir.path());
        let (gen, vqa) = (ScriptedGenerator::default(), ScriptedVqa::default());
        let out = run_pipeline(&cfg, &Clients { generation: &gen, vqa: &vqa }, &PipelineOptions::default())
            .map_err(|e| e.to_string())?;
        std::fs::read(out.paths.report_json).map_err(|e| e.to_string())
    };
    let (a, b) = (run_clean()?, run_clean()?);
    check(a == b, "report.json differs between runs")?;

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pipeline_config(dir.path());
    cfg.max_parallel = 1;
    let flag = Arc::new(AtomicBool::new(false));
    let first = ScriptedGenerator { cancel_after: Some((3, Arc::clone(&flag))), ..Default::default() };
    let vqa = ScriptedVqa::default();
    let opts = PipelineOptions { stop_after: None, cancel: Some(flag) };
    let err = run_pipeline(&cfg, &Clients { generation: &first, vqa: &vqa }, &opts)
        .err()
        .ok_or("interrupted run did not stop")?;
    check(err.stage == Stage::Generation, format!("interrupted at {}", err.stage))?;
    let second = ScriptedGenerator::default();
    let out = run_pipeline(&cfg, &Clients { generation: &second, vqa: &vqa }, &PipelineOptions::default())
        .map_err(|e| e.to_string())?;
    let mut per_job = first.successes_per_job();
    for (k, n) in second.successes_per_job() {
        *per_job.entry(k).or_default() += n;
    }
    check(per_job.len() == 8 && per_job.values().all(|&n| n == 1), format!("generation calls per job {per_job:?}"))?;
    let resumed = std::fs::read(out.paths.report_json).map_err(|e| e.to_string())?;
    check(resumed == a, "resumed report differs from an uninterrupted one")?;
    Ok(format!(
        "identical report ({} bytes), {} + {} generation calls after interrupt",
        a.len(),
        first.call_count(),
        second.call_count()
    ))
}

/// L1-closest integer vector to the quotas; ties go to the lexicographically
/// larger vector (earlier labels first).
fn apportion_oracle(budget: u64, parts: &[u64], den: u64) -> Vec<u64> {
    let n = parts.len();
    let mut best: Option<(u64, Vec<u64>)> = None;
    let mut a = vec![0u64; n];
    fn walk(i: usize, left: u64, a: &mut Vec<u64>, parts: &[u64], den: u64, budget: u64, best: &mut Option<(u64, Vec<u64>)>) {
        if i + 1 == a.len() {
            a[i] = left;
            let cost: u64 = a.iter().zip(parts).map(|(&x, &p)| (x * den).abs_diff(budget * p)).sum();
            let better = match best {
                None => true,
                Some((c, v)) => cost < *c || (cost == *c && *a > *v),
            };
            if better {
                *best = Some((cost, a.clone()));
            }
            return;
        }
        for x in 0..=left {
            a[i] = x;
            walk(i + 1, left - x, a, parts, den, budget, best);
        }
    }
    walk(0, budget, &mut a, parts, den, budget, &mut best);
    best.unwrap().1
}

fn compositions(total: u64, n: usize) -> Vec<Vec<u64>> {
    if n == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| compositions(total - first, n - 1).into_iter().map(move |mut rest| {
            rest.insert(0, first);
            rest
        }))
        .collect()
}

fn balancer_exact() -> Outcome {
    let labels = [Label::Female, Label::Male, Label::Dark, Label::Medium];
    let mut instances = 0usize;
    for (n, den) in [(1usize, 1u64), (2, 50), (3, 12), (4, 6)] {
        for parts in compositions(den, n) {
            let target: BTreeMap<Label, Rational64> =
                labels[..n].iter().zip(&parts).map(|(&l, &p)| (l, Rational64::new(p as i64, den as i64))).collect();
            for budget in 1..=50u64 {
                let got = apportion(budget, &target);
                let got: Vec<u64> = labels[..n].iter().map(|l| got[l]).collect();
                let want = apportion_oracle(budget, &parts, den);
                check(got == want, format!("weights {parts:?}/{den} budget {budget}: {got:?} vs {want:?}"))?;
                instances += 1;
            }
        }
    }
    let mut pool = Vec::new();
    for (label, n) in [(Label::Dark, 50), (Label::Medium, 30), (Label::Light, 20)] {
        pool.extend((0..n).map(|i| (format!("{label}-{i:02}"), label)));
    }
    let target = CompositionTarget::<f64>::uniform(PerceivedAxis::PerceivedSkinTone, 60, BalanceMode::Exact)
        .map_err(|e| e.to_string())?;
    let subset = balance_subset(&pool, &target, 0).map_err(|e| e.to_string())?;
    let index: BTreeMap<&str, Label> = pool.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for id in &subset {
        *counts.entry(index[id.as_str()]).or_default() += 1;
    }
    let want = BTreeMap::from([(Label::Dark, 20), (Label::Medium, 20), (Label::Light, 20)]);
    check(counts == want, format!("uniform pool gave {counts:?}"))?;
    Ok(format!("{instances} oracle instances, 50/30/20 pool -> 20/20/20"))
}

fn accuracy() -> Outcome {
    let axis = PerceivedAxis::PerceivedSkinTone;
    let groups = [Label::Light, Label::Medium, Label::Dark];
    let human: Vec<LabelRecord> = (0..750)
        .map(|i| LabelRecord {
            image_ref: format!("img{i:03}"),
            axis,
            label: groups[i % 3],
            annotator_id: "a".into(),
            annotated_at: chrono::DateTime::UNIX_EPOCH,
        })
        .collect();
    let preds: Vec<PredictionRecord> = human
        .iter()
        .enumerate()
        .map(|(i, h)| pred(h.image_ref.clone(), axis, if i < 474 { h.label } else { groups[(i + 1) % 3] }))
        .collect();
    let r = classifier_accuracy(&preds, &human, axis).map_err(|e| e.to_string())?;
    check(r.n == 750 && (r.accuracy - 0.632).abs() <= 0.002, format!("accuracy {} over {}", r.accuracy, r.n))?;
    let agree: Vec<PredictionRecord> = human.iter().map(|h| pred(h.image_ref.clone(), axis, h.label)).collect();
    let all = classifier_accuracy(&agree, &human, axis).map_err(|e| e.to_string())?;
    check(all.accuracy == 1.0, format!("all-agree accuracy {}", all.accuracy))?;
    Ok(format!("474/750 = {:.4}, all-agree = {}", r.accuracy, all.accuracy))
}

fn normalize_fuzz() -> Outcome {
    let pieces = [
        "black", "Light", "medium", "male", "FEMALE", "woman", "man", "people", "not", "present", "no", "person",
        "skin", "tone", "dark", "the", "is", "é", "漢字", "🙂", "\u{0}", "\t", "\n", ",", ".", "'", "`", "-", " ",
        "lightly", "females", "n/a", "?", "1234",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    for i in 0..10_000 {
        let mut s = String::new();
        for _ in 0..rng.random_range(0..12) {
            if rng.random_bool(0.3) {
                s.push(char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?'));
            } else {
                s.push_str(pieces[rng.random_range(0..pieces.len())]);
            }
        }
        for axis in PerceivedAxis::ALL {
            let label = catch_unwind(AssertUnwindSafe(|| normalize_answer(&s, axis)))
                .map_err(|_| format!("string {i} panicked: {s:?}"))?;
            check(axis.prediction_labels().contains(&label), format!("{s:?} -> {label:?} outside {axis}"))?;
        }
    }
    let skin = PerceivedAxis::PerceivedSkinTone;
    check(normalize_answer("black", skin) == Label::Dark, "black is not dark")?;
    for axis in PerceivedAxis::ALL {
        check(normalize_answer("people not present", axis) == Label::NonePresent, "phrase is not none_present")?;
    }
    Ok("10000 strings canonical on both axes, goldens hold".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("relative improvement arithmetic", relative_improvements),
        ("disparate impact properties", di_properties),
        ("template expansion cardinality", expand_cardinality),
        ("evaluation job plan", eval_jobs),
        ("mocked pipeline determinism and resume", mocked_pipeline),
        ("balancer exact apportionment", balancer_exact),
        ("classifier accuracy", accuracy),
        ("answer normalization fuzz", normalize_fuzz),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{ms} ms]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{ms} ms]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
