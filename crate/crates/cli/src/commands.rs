use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use guidemod::annotator::{annotate_corpus, AnnotateError};
use guidemod::corpus::{load_annotation_sets, load_corpus};
use guidemod::discrepancy::{analyze as analyze_corpus, ContextOptions};
use guidemod::eval::{evaluate_corpus_with, render_report, CorpusEvaluation, EvaluationRecord, ReportRow};
use guidemod::moderator::select_verified_tps;
use guidemod::orchestrator::{read_json, write_json, write_text, RunStatus, Runner, StopReason};
use guidemod::report::{render_costs, render_results, RunView};
use guidemod::stats::{render_significance, significance, PairedDocCounts};
use guidemod::{AnnotationSets, Corpus, EntitySchema, Exec, Provenance};

use crate::setup::Setup;
use crate::{AnalyzeArgs, AnnotateArgs, EvaluateArgs, LoopArgs, ModerateArgs, PairArgs, ReportArgs, StatsArgs};

pub enum Outcome {
    Success,
    BelowThreshold,
    Aborted,
}

impl Outcome {
    pub fn code(&self) -> ExitCode {
        ExitCode::from(match self {
            Outcome::Success => 0,
            Outcome::BelowThreshold => 2,
            Outcome::Aborted => 3,
        })
    }
}

fn predicted(iteration: u32, model_id: &str) -> Provenance {
    Provenance::Predicted {
        iteration,
        model_id: model_id.to_owned(),
    }
}

fn load_pair(pair: &PairArgs, model_id: &str) -> Result<(Corpus, AnnotationSets)> {
    let (corpus, _) = load_corpus(&pair.gold).with_context(|| format!("loading {}", pair.gold.display()))?;
    let preds = load_annotation_sets(&pair.pred, &corpus, predicted(0, model_id))
        .with_context(|| format!("loading {}", pair.pred.display()))?;
    Ok((corpus, preds))
}

fn label_table(e: &CorpusEvaluation) -> String {
    let mut out = String::from("label\tP\tR\tF1\tTP\tFP\tFN\n");
    for (label, s) in &e.per_label {
        let c = e.per_label_counts[label];
        out.push_str(&format!(
            "{label}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
            s.precision, s.recall, s.f1, c.tp, c.fp, c.fn_
        ));
    }
    out
}

pub fn annotate(a: AnnotateArgs) -> Result<Outcome> {
    let setup = Setup::load(&a.config)?;
    let corpus = setup.corpus(a.corpus.as_deref())?;
    let guideline = setup.guideline(a.guideline.as_deref(), a.iteration)?;
    let gateway = setup.gateway()?;
    let annotator = setup.annotator()?;
    let result = annotate_corpus(&gateway, &annotator, &guideline, &corpus, a.iteration, Some(&a.out));
    let mut ledger = gateway.ledger();
    ledger.normalize();
    write_json(&a.out.join("_ledger.json"), &ledger)?;
    let outcome = match result {
        Ok(o) => o,
        Err(AnnotateError::Gateway { doc_id, source }) => {
            eprintln!("aborted at annotate: {doc_id}: {source}");
            return Ok(Outcome::Aborted);
        }
        Err(e) => return Err(e.into()),
    };
    let entities: usize = outcome.sets.values().map(|s| s.len()).sum();
    println!(
        "{} documents, {entities} entities, {} repaired, {} dropped, {} unparseable; cost {:.4}, {:.2} min",
        outcome.sets.len(),
        outcome.repaired(),
        outcome.dropped(),
        outcome.failed_documents(),
        ledger.total_cost(),
        ledger.total_minutes()
    );
    Ok(Outcome::Success)
}

pub fn evaluate(a: EvaluateArgs, exec: Exec) -> Result<Outcome> {
    let (corpus, preds) = load_pair(&a.pair, &a.model)?;
    let evaluation = evaluate_corpus_with(&preds, corpus.gold(), exec)?;
    let labels: Vec<_> = evaluation.per_label_counts.keys().cloned().collect();
    let row = ReportRow {
        dataset: a.dataset,
        model: a.model,
        iteration: 0,
        evaluation: evaluation.clone(),
    };
    print!("{}", render_report(&[row], &labels));
    println!();
    print!("{}", label_table(&evaluation));
    if let Some(out) = a.out {
        write_json(&out, &EvaluationRecord::from(&evaluation))?;
    }
    Ok(Outcome::Success)
}

pub fn analyze(a: AnalyzeArgs, exec: Exec) -> Result<Outcome> {
    let (corpus, preds) = load_pair(&a.pair, "-")?;
    let schema = if a.labels.is_empty() {
        None
    } else {
        Some(EntitySchema::new(a.labels.iter().map(|l| (l.as_str(), "")))?)
    };
    let mut opts = ContextOptions::default();
    if let Some(w) = a.window {
        opts.window = w;
    }
    let report = analyze_corpus(&preds, &corpus, schema.as_ref(), &opts, exec)?;
    print!("{}", report.matrix.render());
    println!();
    println!("group\tcount");
    for g in &report.group_counts {
        println!("{}\t{}", g.key, g.count);
    }
    match &report.dominant {
        Some(key) => println!("dominant: {key} ({} cases)", report.count(key)),
        None => println!("dominant: none"),
    }
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    Ok(Outcome::Success)
}

pub fn moderate(a: ModerateArgs, exec: Exec) -> Result<Outcome> {
    let setup = Setup::load(&a.config)?;
    let corpus = setup.corpus(a.corpus.as_deref())?;
    let guideline = setup.guideline(a.guideline.as_deref(), a.iteration)?;
    let preds = load_annotation_sets(&a.pred, &corpus, predicted(a.iteration, &setup.model.model_id))
        .with_context(|| format!("loading {}", a.pred.display()))?;
    let cfg = &setup.config.loop_;
    let opts = ContextOptions {
        window: cfg.context_window,
        ..ContextOptions::default()
    };
    let report = analyze_corpus(&preds, &corpus, Some(&setup.schema), &opts, exec)?;
    let Some(key) = report.dominant.clone() else {
        println!("no discrepancies; nothing to moderate");
        return Ok(Outcome::Success);
    };
    let evaluation = evaluate_corpus_with(&preds, corpus.gold(), exec)?;
    let tps = select_verified_tps(
        &evaluation,
        &corpus,
        &key,
        cfg.tp_cap,
        cfg.seed.wrapping_add(u64::from(a.iteration)),
        &opts,
    );
    let gateway = setup.gateway()?;
    let moderator = setup.moderator()?;
    let result = moderator.moderate(&gateway, a.iteration, &key, &report.group_cases(&key), tps, &guideline);
    let mut ledger = gateway.ledger();
    ledger.normalize();
    write_json(&a.out.join("ledger.json"), &ledger)?;
    match result {
        Ok(record) => {
            write_json(&a.out.join("moderation.json"), &record)?;
            write_text(&a.out.join("guideline.md"), &record.guideline_after.text)?;
            println!("group: {key} ({} cases)", record.group_size);
            println!("pattern: {}", record.insight.pattern_name);
            println!("{}", record.principle.render());
            for added in &record.integrity.added {
                println!("added section: {}", added.heading);
            }
            println!("refined guideline: {}", a.out.join("guideline.md").display());
            Ok(Outcome::Success)
        }
        Err(abort) => {
            let stage = abort.error.stage().map_or_else(|| "-".to_owned(), |s| s.to_string());
            write_json(
                &a.out.join("moderation.json"),
                &json!({
                    "iteration": a.iteration,
                    "stage": stage,
                    "error": abort.error.to_string(),
                    "exchanges": abort.exchanges,
                }),
            )?;
            eprintln!("aborted at {stage}: {}", abort.error);
            Ok(Outcome::Aborted)
        }
    }
}

pub fn run_loop(a: LoopArgs, exec: Exec) -> Result<Outcome> {
    let setup = Setup::load(&a.config)?;
    let archive = a.archive.unwrap_or_else(|| setup.config.archive.clone());
    let corpus = setup.corpus(None)?;
    let g0 = setup.guideline(None, 0)?;
    let gateway = setup.gateway()?;
    let annotator = setup.annotator()?;
    let moderator = setup.moderator()?;
    let runner = Runner {
        gateway: &gateway,
        annotator: &annotator,
        moderator: &moderator,
        corpus: &corpus,
        config: setup.config.loop_.clone(),
        exec,
    };
    let summary = runner.run(&archive, &g0)?;
    let history: Vec<String> = summary.history.iter().map(|f| format!("{f:.4}")).collect();
    println!("F1 by iteration: {}", history.join(" "));
    println!(
        "accepted rounds: {}, final F1 {:.4}",
        summary.accepted_rounds, summary.final_score.f1
    );
    Ok(match &summary.status {
        RunStatus::Completed { reason } => {
            println!("completed: {}", reason_name(*reason));
            if summary.reached_threshold() {
                Outcome::Success
            } else {
                Outcome::BelowThreshold
            }
        }
        RunStatus::Aborted { iteration, stage, message } => {
            eprintln!("aborted at iteration {iteration}, stage {stage}: {message}");
            Outcome::Aborted
        }
    })
}

fn reason_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Threshold => "threshold reached",
        StopReason::NoGain => "no gain; previous guideline kept",
        StopReason::MaxIterations => "iteration cap",
        StopReason::NothingToModerate => "no discrepancies left",
    }
}

/// An evaluation record from a JSON file, or from iteration `k` of an
/// archive (`default_k` picks one from the run summary).
fn load_evaluation(
    path: &Path,
    k: Option<u32>,
    default_k: impl Fn(&RunView) -> u32,
) -> Result<(EvaluationRecord, Option<String>)> {
    if path.is_dir() {
        let view = RunView::load(path)?;
        let k = k.unwrap_or_else(|| default_k(&view));
        return Ok((view.evaluation(k)?, Some(view.summary.model_id.clone())));
    }
    let record = read_json(path)?.ok_or_else(|| anyhow!("{} not found", path.display()))?;
    Ok((record, None))
}

pub fn stats(a: StatsArgs, exec: Exec) -> Result<Outcome> {
    let (g, g_model) = load_evaluation(&a.g, a.g_iteration, |_| 0)?;
    let (m, m_model) = load_evaluation(&a.m, a.m_iteration, |v| v.summary.accepted_rounds)?;
    let paired = PairedDocCounts::from_records(&g, &m)?;
    let result = significance(&paired, a.bootstrap, a.permutations, a.seed, exec)?;
    let model = a.model.or(m_model).or(g_model).unwrap_or_else(|| "-".into());
    print!("{}", render_significance(&[(a.dataset, model, result)]));
    Ok(Outcome::Success)
}

fn dataset_path(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((d, p)) if !d.is_empty() && !p.is_empty() => Ok((d.to_owned(), PathBuf::from(p))),
        _ => bail!("expected DATASET=ARCHIVE, got {spec:?}"),
    }
}

pub fn report(a: ReportArgs) -> Result<Outcome> {
    let mut baselines = Vec::new();
    for spec in &a.baselines {
        let (dataset, path) = dataset_path(spec)?;
        baselines.push((dataset, RunView::load(&path)?));
    }
    let mut runs = Vec::new();
    for spec in &a.runs {
        let (dataset, path) = dataset_path(spec)?;
        runs.push((dataset, RunView::load(&path)?));
    }

    let mut rows = Vec::new();
    for (dataset, view) in &runs {
        for (d, b) in &baselines {
            if d == dataset && b.summary.model_id == view.summary.model_id {
                rows.push(b.baseline_row(d)?);
            }
        }
        rows.extend(view.result_rows(dataset)?);
    }
    print!("{}", render_results(&rows));

    if a.matrices {
        for (dataset, view) in &runs {
            for state in &view.states {
                println!("\n# {dataset} {} iteration {}", view.summary.model_id, state.k);
                print!("{}", view.matrix(state.k)?);
            }
        }
    }
    if a.costs {
        let mut costs = Vec::new();
        for (dataset, view) in &runs {
            costs.push((dataset.clone(), view.summary.model_id.clone(), view.cost()?));
        }
        println!();
        print!("{}", render_costs(&costs));
    }
    Ok(Outcome::Success)
}
