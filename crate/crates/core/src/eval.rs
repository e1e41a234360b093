//! Strict span-and-type scoring.
//!
//! A prediction is correct only when begin, end and label all equal a gold
//! entity. Scores are micro-averaged: counts are pooled over documents
//! before precision, recall and F1 are taken. A zero denominator yields 0.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, AnnotationSets, Entity, Label};
use crate::exec::Exec;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot compare prediction for {pred} with gold for {gold}")]
    DocMismatch { pred: String, gold: String },
    #[error("no prediction for gold document {0}")]
    MissingPrediction(String),
    #[error("prediction for {0} has no gold document")]
    UnexpectedPrediction(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        MatchCounts { tp, fp, fn_ }
    }

    pub fn gold_total(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn pred_total(&self) -> usize {
        self.tp + self.fp
    }

    pub fn score(&self) -> Score {
        score_from_counts(*self)
    }
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn score_from_counts(counts: MatchCounts) -> Score {
    let precision = ratio(counts.tp, counts.pred_total());
    let recall = ratio(counts.tp, counts.gold_total());
    Score {
        precision,
        recall,
        f1: f1_from(precision, recall),
    }
}

/// Result of strictly matching one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMatch {
    pub doc_id: String,
    pub counts: MatchCounts,
    /// Predicted entities that exactly match gold (verified true positives).
    pub matched: Vec<Entity>,
}

pub fn strict_match(pred: &AnnotationSet, gold: &AnnotationSet) -> Result<DocMatch, EvalError> {
    if pred.doc_id != gold.doc_id {
        return Err(EvalError::DocMismatch {
            pred: pred.doc_id.clone(),
            gold: gold.doc_id.clone(),
        });
    }
    let gold_keys: BTreeSet<_> = gold.entities().iter().map(Entity::triplet).collect();
    let matched: Vec<Entity> = pred
        .entities()
        .iter()
        .filter(|e| gold_keys.contains(&e.triplet()))
        .cloned()
        .collect();
    let tp = matched.len();
    Ok(DocMatch {
        doc_id: pred.doc_id.clone(),
        counts: MatchCounts::new(tp, pred.len() - tp, gold.len() - tp),
        matched,
    })
}

/// Corpus-level evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvaluation {
    pub pooled_counts: MatchCounts,
    pub pooled: Score,
    pub per_label_counts: BTreeMap<Label, MatchCounts>,
    pub per_label: BTreeMap<Label, Score>,
    /// Per-document results in doc_id order.
    pub documents: Vec<DocMatch>,
}

impl CorpusEvaluation {
    pub fn tp_per_label(&self) -> BTreeMap<Label, usize> {
        self.per_label_counts
            .iter()
            .map(|(l, c)| (l.clone(), c.tp))
            .collect()
    }

    pub fn doc_counts(&self) -> Vec<(String, MatchCounts)> {
        self.documents
            .iter()
            .map(|d| (d.doc_id.clone(), d.counts))
            .collect()
    }
}

/// Serializable form of a [`CorpusEvaluation`], without matched entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub pooled_counts: MatchCounts,
    pub pooled: Score,
    pub per_label_counts: BTreeMap<Label, MatchCounts>,
    pub per_label: BTreeMap<Label, Score>,
    pub documents: BTreeMap<String, MatchCounts>,
}

impl From<&CorpusEvaluation> for EvaluationRecord {
    fn from(e: &CorpusEvaluation) -> Self {
        EvaluationRecord {
            pooled_counts: e.pooled_counts,
            pooled: e.pooled,
            per_label_counts: e.per_label_counts.clone(),
            per_label: e.per_label.clone(),
            documents: e.documents.iter().map(|d| (d.doc_id.clone(), d.counts)).collect(),
        }
    }
}

fn label_counts(pred: &AnnotationSet, gold: &AnnotationSet, out: &mut BTreeMap<Label, MatchCounts>) {
    let gold_keys: BTreeSet<_> = gold.entities().iter().map(Entity::triplet).collect();
    let pred_keys: BTreeSet<_> = pred.entities().iter().map(Entity::triplet).collect();
    for e in pred.entities() {
        let c = out.entry(e.label.clone()).or_default();
        if gold_keys.contains(&e.triplet()) {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for e in gold.entities() {
        if !pred_keys.contains(&e.triplet()) {
            out.entry(e.label.clone()).or_default().fn_ += 1;
        }
    }
}

pub fn evaluate_corpus(preds: &AnnotationSets, golds: &AnnotationSets) -> Result<CorpusEvaluation, EvalError> {
    evaluate_corpus_with(preds, golds, Exec::default())
}

pub fn evaluate_corpus_with(
    preds: &AnnotationSets,
    golds: &AnnotationSets,
    exec: Exec,
) -> Result<CorpusEvaluation, EvalError> {
    if let Some(id) = golds.keys().find(|id| !preds.contains_key(*id)) {
        return Err(EvalError::MissingPrediction(id.clone()));
    }
    if let Some(id) = preds.keys().find(|id| !golds.contains_key(*id)) {
        return Err(EvalError::UnexpectedPrediction(id.clone()));
    }
    let pairs: Vec<(&AnnotationSet, &AnnotationSet)> =
        golds.iter().map(|(id, g)| (&preds[id], g)).collect();
    let documents = exec
        .map(&pairs, |(p, g)| strict_match(p, g))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut per_label_counts = BTreeMap::new();
    for (p, g) in &pairs {
        label_counts(p, g, &mut per_label_counts);
    }
    let pooled_counts: MatchCounts = documents.iter().map(|d| d.counts).sum();
    Ok(CorpusEvaluation {
        pooled: score_from_counts(pooled_counts),
        pooled_counts,
        per_label: per_label_counts
            .iter()
            .map(|(l, c)| (l.clone(), score_from_counts(*c)))
            .collect(),
        per_label_counts,
        documents,
    })
}

/// One row of the delimited evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub iteration: u32,
    pub evaluation: CorpusEvaluation,
}

/// Tab-separated report: dataset, model, iteration, P, R, F1, TP, then one
/// `TP:<label>` column per label in `labels`.
pub fn render_report(rows: &[ReportRow], labels: &[Label]) -> String {
    let mut out = String::from("dataset\tmodel\titeration\tP\tR\tF1\tTP");
    for l in labels {
        out.push_str(&format!("\tTP:{l}"));
    }
    out.push('\n');
    for row in rows {
        let e = &row.evaluation;
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}",
            row.dataset,
            row.model,
            row.iteration,
            e.pooled.precision,
            e.pooled.recall,
            e.pooled.f1,
            e.pooled_counts.tp
        ));
        for l in labels {
            let tp = e.per_label_counts.get(l).map_or(0, |c| c.tp);
            out.push_str(&format!("\t{tp}"));
        }
        out.push('\n');
    }
    out
}
