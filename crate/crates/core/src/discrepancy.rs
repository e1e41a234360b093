//! Categorization of prediction–gold disagreements.
//!
//! Strict matches are excluded first. The remaining entities are aligned by
//! character overlap and every one of them lands in exactly one case:
//!
//! 1. label mismatch: cross-type overlapping pairs, paired greedily by
//!    descending overlap (ties by gold begin, then predicted begin);
//! 2. boundary mismatch: the same procedure over same-type pairs among the
//!    survivors;
//! 3. false negative: a leftover gold entity overlapping no prediction;
//! 4. false positive: a leftover prediction overlapping no gold entity;
//! 5. any other leftover overlaps only entities that are already paired (or
//!    strictly matched); it becomes a mismatch against its maximum-overlap
//!    counterpart, which may then appear in more than one case.
//!
//! Cases are grouped by the directional `(gold label, predicted label)` pair
//! with `NONE` standing for a missing side.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationSet, AnnotationSets, Corpus, Document, Entity, Label};
use crate::eval::{self, EvalError};
use crate::exec::Exec;
use crate::schema::EntitySchema;

pub const DEFAULT_WINDOW: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    LabelMismatch,
    BoundaryMismatch,
    FalseNegative,
    FalsePositive,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::LabelMismatch => "label mismatch",
            Category::BoundaryMismatch => "boundary mismatch",
            Category::FalseNegative => "false negative",
            Category::FalsePositive => "false positive",
        })
    }
}

/// Directional gold→predicted label pair; `None` is the NONE side.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub gold: Option<Label>,
    pub pred: Option<Label>,
}

impl GroupKey {
    pub fn new(gold: Option<Label>, pred: Option<Label>) -> Self {
        debug_assert!(gold.is_some() || pred.is_some());
        GroupKey { gold, pred }
    }
}

/// NONE sorts after every label.
fn cmp_side(a: &Option<Label>, b: &Option<Label>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_side(&self.gold, &other.gold).then_with(|| cmp_side(&self.pred, &other.pred))
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &Option<Label>| s.as_ref().map_or("NONE".to_owned(), Label::to_string);
        write!(f, "{} -> {}", side(&self.gold), side(&self.pred))
    }
}

/// Surrounding text of a case, with the union span delimited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub left: String,
    pub mention: String,
    pub right: String,
    pub marked: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyCase {
    pub doc_id: String,
    pub category: Category,
    pub gold: Option<Entity>,
    pub pred: Option<Entity>,
    /// Gold mention text first (when present), then predicted.
    pub mention_strings: Vec<String>,
    pub context: Context,
}

impl DiscrepancyCase {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            gold: self.gold.as_ref().map(|e| e.label.clone()),
            pred: self.pred.as_ref().map(|e| e.label.clone()),
        }
    }

    /// Union of the involved spans.
    pub fn span(&self) -> (usize, usize) {
        let spans = self.gold.iter().chain(self.pred.iter());
        let begin = spans.clone().map(|e| e.begin).min().unwrap_or(0);
        let end = spans.map(|e| e.end).max().unwrap_or(0);
        (begin, end)
    }

    fn sort_key(&self) -> impl Ord + '_ {
        let (b, e) = self.span();
        (
            b,
            e,
            self.category,
            self.gold.as_ref().map(|g| (g.begin, g.end, &g.label)),
            self.pred.as_ref().map(|p| (p.begin, p.end, &p.label)),
        )
    }
}

pub fn overlap_length(a: &Entity, b: &Entity) -> usize {
    a.end.min(b.end).saturating_sub(a.begin.max(b.begin))
}

/// Delimiters placed around the mention in a context snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub open: String,
    pub close: String,
}

impl Default for Markers {
    fn default() -> Self {
        Markers {
            open: "⟦".into(),
            close: "⟧".into(),
        }
    }
}

impl Markers {
    /// Lengthen the markers until neither occurs in `text`.
    pub fn free_for(&self, text: &str) -> Markers {
        let mut m = self.clone();
        while text.contains(&m.open) || text.contains(&m.close) {
            m.open.push_str(&self.open);
            m.close.push_str(&self.close);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextOptions {
    /// Characters kept on each side of the span.
    pub window: usize,
    pub markers: Markers,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            window: DEFAULT_WINDOW,
            markers: Markers::default(),
        }
    }
}

/// Snippet of up to `window` chars on each side of `[begin, end)`.
pub fn extract_span_context(doc: &Document, begin: usize, end: usize, opts: &ContextOptions) -> Context {
    let end = end.min(doc.len());
    let begin = begin.min(end);
    let from = begin.saturating_sub(opts.window);
    let to = (end + opts.window).min(doc.len());
    let left = doc.slice(from, begin).unwrap_or_default().to_owned();
    let mention = doc.slice(begin, end).unwrap_or_default().to_owned();
    let right = doc.slice(end, to).unwrap_or_default().to_owned();
    let m = opts.markers.free_for(doc.text());
    let marked = format!("{left}{}{mention}{}{right}", m.open, m.close);
    Context {
        left,
        mention,
        right,
        marked,
    }
}

pub fn extract_context(doc: &Document, case: &DiscrepancyCase, opts: &ContextOptions) -> Context {
    let (b, e) = case.span();
    extract_span_context(doc, b, e, opts)
}

fn make_case(
    doc: &Document,
    category: Category,
    gold: Option<&Entity>,
    pred: Option<&Entity>,
    opts: &ContextOptions,
) -> DiscrepancyCase {
    let mention_strings = gold
        .iter()
        .chain(pred.iter())
        .map(|e| doc.slice(e.begin, e.end).unwrap_or_default().to_owned())
        .collect();
    let mut case = DiscrepancyCase {
        doc_id: doc.doc_id.clone(),
        category,
        gold: gold.cloned(),
        pred: pred.cloned(),
        mention_strings,
        context: Context {
            left: String::new(),
            mention: String::new(),
            right: String::new(),
            marked: String::new(),
        },
    };
    case.context = extract_context(doc, &case, opts);
    case
}

fn mismatch_category(gold: &Entity, pred: &Entity) -> Category {
    if gold.label == pred.label {
        Category::BoundaryMismatch
    } else {
        Category::LabelMismatch
    }
}

/// Categorize the disagreements of one document. Both sets are the full
/// gold and predicted sets; strict matches are removed here.
pub fn categorize(
    pred: &AnnotationSet,
    gold: &AnnotationSet,
    doc: &Document,
    opts: &ContextOptions,
) -> Vec<DiscrepancyCase> {
    let gold_keys: BTreeSet<_> = gold.entities().iter().map(Entity::triplet).collect();
    let pred_keys: BTreeSet<_> = pred.entities().iter().map(Entity::triplet).collect();
    // Sets are offset-sorted, so index order is (begin, end, label) order.
    let golds: Vec<&Entity> = gold
        .entities()
        .iter()
        .filter(|e| !pred_keys.contains(&e.triplet()))
        .collect();
    let preds: Vec<&Entity> = pred
        .entities()
        .iter()
        .filter(|e| !gold_keys.contains(&e.triplet()))
        .collect();

    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, g) in golds.iter().enumerate() {
        for (pi, p) in preds.iter().enumerate() {
            let ov = overlap_length(g, p);
            if ov > 0 {
                candidates.push((ov, gi, pi));
            }
        }
    }
    candidates.sort_by_key(|&(ov, gi, pi)| (Reverse(ov), golds[gi].begin, preds[pi].begin, gi, pi));

    let mut gold_used = vec![false; golds.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut cases = Vec::new();

    for same_label in [false, true] {
        for &(_, gi, pi) in &candidates {
            if gold_used[gi] || pred_used[pi] {
                continue;
            }
            if (golds[gi].label == preds[pi].label) != same_label {
                continue;
            }
            gold_used[gi] = true;
            pred_used[pi] = true;
            let category = if same_label {
                Category::BoundaryMismatch
            } else {
                Category::LabelMismatch
            };
            cases.push(make_case(doc, category, Some(golds[gi]), Some(preds[pi]), opts));
        }
    }

    // Steps 3-5 look at every entity on the other side, strict matches included.
    let best_counterpart = |e: &Entity, others: &[Entity]| -> Option<Entity> {
        others
            .iter()
            .filter(|o| overlap_length(e, o) > 0)
            .min_by_key(|o| (Reverse(overlap_length(e, o)), o.begin, o.end, o.label.clone()))
            .cloned()
    };

    for (gi, g) in golds.iter().enumerate() {
        if gold_used[gi] {
            continue;
        }
        match best_counterpart(g, pred.entities()) {
            None => cases.push(make_case(doc, Category::FalseNegative, Some(g), None, opts)),
            Some(p) => cases.push(make_case(doc, mismatch_category(g, &p), Some(g), Some(&p), opts)),
        }
    }
    for (pi, p) in preds.iter().enumerate() {
        if pred_used[pi] {
            continue;
        }
        match best_counterpart(p, gold.entities()) {
            None => cases.push(make_case(doc, Category::FalsePositive, None, Some(p), opts)),
            Some(g) => cases.push(make_case(doc, mismatch_category(&g, p), Some(&g), Some(p), opts)),
        }
    }

    cases.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    cases
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no discrepancies: nothing to moderate")]
pub struct NothingToModerate;

/// Tally cases per group and pick the most frequent; ties go to the
/// smallest key (labels ascending, NONE last).
pub fn group_and_select(
    cases: &[DiscrepancyCase],
) -> Result<(BTreeMap<GroupKey, usize>, GroupKey), NothingToModerate> {
    let mut counts = BTreeMap::new();
    for c in cases {
        *counts.entry(c.key()).or_insert(0usize) += 1;
    }
    let dominant = counts
        .iter()
        .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then_with(|| kb.cmp(ka)))
        .map(|(k, _)| k.clone())
        .ok_or(NothingToModerate)?;
    Ok((counts, dominant))
}

/// Gold (rows) × predicted (columns) counts with a trailing NONE row and
/// column, plus per-label true positives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyMatrix {
    pub labels: Vec<Label>,
    pub cells: Vec<Vec<usize>>,
    pub tp: BTreeMap<Label, usize>,
}

impl DiscrepancyMatrix {
    fn index(&self, side: Option<&Label>) -> Option<usize> {
        match side {
            None => Some(self.labels.len()),
            Some(l) => self.labels.iter().position(|x| x == l),
        }
    }

    pub fn cell(&self, gold: Option<&Label>, pred: Option<&Label>) -> usize {
        match (self.index(gold), self.index(pred)) {
            (Some(g), Some(p)) => self.cells[g][p],
            _ => 0,
        }
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    /// Plain-text table; labels are abbreviated to their first letter when
    /// that is unambiguous, NONE is `O`.
    pub fn render(&self) -> String {
        let initials: BTreeSet<String> = self
            .labels
            .iter()
            .map(|l| l.as_str().chars().take(1).collect())
            .collect();
        let short = initials.len() == self.labels.len() && !initials.contains("O");
        let name = |i: usize| -> String {
            if i == self.labels.len() {
                "O".into()
            } else if short {
                self.labels[i].as_str().chars().take(1).collect()
            } else {
                self.labels[i].to_string()
            }
        };
        let n = self.labels.len() + 1;
        let width = (0..n).map(|i| name(i).chars().count()).max().unwrap_or(1).max(3);
        let mut out = format!("{:>width$} |", "G\\P");
        for j in 0..n {
            out.push_str(&format!(" {:>width$}", name(j)));
        }
        out.push('\n');
        out.push_str(&"-".repeat(width + 2 + n * (width + 1)));
        out.push('\n');
        for i in 0..n {
            out.push_str(&format!("{:>width$} |", name(i)));
            for j in 0..n {
                out.push_str(&format!(" {:>width$}", self.cells[i][j]));
            }
            out.push('\n');
        }
        out.push_str("TP:");
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!(" {}={}", name(i), self.tp.get(l).copied().unwrap_or(0)));
        }
        out.push('\n');
        if short {
            let legend: Vec<String> = (0..self.labels.len())
                .map(|i| format!("{} = {}", name(i), self.labels[i]))
                .chain(std::iter::once("O = NONE".to_owned()))
                .collect();
            out.push_str(&legend.join(", "));
            out.push('\n');
        }
        out
    }
}

/// `labels` fixes the row/column order; labels seen only in cases are
/// appended in sorted order.
pub fn build_matrix(cases: &[DiscrepancyCase], tp_per_label: &BTreeMap<Label, usize>, labels: &[Label]) -> DiscrepancyMatrix {
    let mut all: Vec<Label> = labels.to_vec();
    let extra: BTreeSet<Label> = cases
        .iter()
        .flat_map(|c| c.gold.iter().chain(c.pred.iter()).map(|e| e.label.clone()))
        .chain(tp_per_label.keys().cloned())
        .filter(|l| !labels.contains(l))
        .collect();
    all.extend(extra);
    let n = all.len() + 1;
    let mut m = DiscrepancyMatrix {
        cells: vec![vec![0; n]; n],
        tp: all
            .iter()
            .map(|l| (l.clone(), tp_per_label.get(l).copied().unwrap_or(0)))
            .collect(),
        labels: all,
    };
    for c in cases {
        let key = c.key();
        let g = m.index(key.gold.as_ref()).expect("label registered");
        let p = m.index(key.pred.as_ref()).expect("label registered");
        m.cells[g][p] += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub key: GroupKey,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub cases: Vec<DiscrepancyCase>,
    pub group_counts: Vec<GroupCount>,
    pub dominant: Option<GroupKey>,
    pub matrix: DiscrepancyMatrix,
}

impl DiscrepancyReport {
    pub fn group_cases(&self, key: &GroupKey) -> Vec<&DiscrepancyCase> {
        self.cases.iter().filter(|c| &c.key() == key).collect()
    }

    pub fn count(&self, key: &GroupKey) -> usize {
        self.group_counts
            .iter()
            .find(|g| &g.key == key)
            .map_or(0, |g| g.count)
    }
}

/// Categorize a whole corpus and assemble the report in doc_id order.
pub fn analyze(
    preds: &AnnotationSets,
    corpus: &Corpus,
    schema: Option<&EntitySchema>,
    opts: &ContextOptions,
    exec: Exec,
) -> Result<DiscrepancyReport, EvalError> {
    let evaluation = eval::evaluate_corpus_with(preds, corpus.gold(), exec)?;
    let ids: Vec<&String> = corpus.gold().keys().collect();
    let cases: Vec<DiscrepancyCase> = exec
        .map(&ids, |id| {
            let doc = corpus.document(id).expect("gold sets belong to corpus documents");
            categorize(&preds[*id], &corpus.gold()[*id], doc, opts)
        })
        .into_iter()
        .flatten()
        .collect();
    let (counts, dominant) = match group_and_select(&cases) {
        Ok((c, d)) => (c, Some(d)),
        Err(NothingToModerate) => (BTreeMap::new(), None),
    };
    let labels: Vec<Label> = schema.map(|s| s.names().cloned().collect()).unwrap_or_default();
    let matrix = build_matrix(&cases, &evaluation.tp_per_label(), &labels);
    Ok(DiscrepancyReport {
        group_counts: counts
            .into_iter()
            .map(|(key, count)| GroupCount { key, count })
            .collect(),
        dominant,
        matrix,
        cases,
    })
}
