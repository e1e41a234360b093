//! Documents, entities and annotation sets in PubAnnotation JSON.
//!
//! Offsets are counted in Unicode scalar values (Rust `char`s), half-open
//! `[begin, end)`. A document is identified by `sourcedb:sourceid`.
//!
//! A corpus directory holds one `.json` file per document. When the
//! directory has a `gold/` child, documents are read from there; predicted
//! sets live in sibling `pred-iter-<k>/` directories in the same format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::exec::Exec;
use crate::schema::EntitySchema;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed document at `{field}`: {message}")]
    Malformed {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("document {doc_id}, entity {entity_id}: {reason}")]
    InvalidEntity {
        doc_id: String,
        entity_id: String,
        reason: String,
    },
    #[error("document {0}: text is empty")]
    EmptyText(String),
    #[error("document id {0} occurs more than once")]
    DuplicateDocument(String),
    #[error("document {0} is not part of the corpus")]
    UnknownDocument(String),
    #[error("document {doc_id}: text differs from the corpus copy")]
    TextMismatch { doc_id: String },
    #[error("requested {requested} documents but only {available} are available")]
    InsufficientDocuments { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Entity-type name, e.g. `SpecificDisease`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Label(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_owned())
    }
}

/// A source text. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub source_db: Option<String>,
    pub source_id: String,
    text: String,
    /// Byte offset of every char, plus a trailing `text.len()`.
    char_starts: Vec<usize>,
    /// Top-level fields we do not interpret, kept for round-tripping.
    pub extra: Map<String, Value>,
}

impl Document {
    pub fn new(source_db: Option<&str>, source_id: &str, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut char_starts: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        char_starts.push(text.len());
        Document {
            doc_id: doc_id_for(source_db, source_id),
            source_db: source_db.map(str::to_owned),
            source_id: source_id.to_owned(),
            text,
            char_starts,
            extra: Map::new(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Length in chars.
    pub fn len(&self) -> usize {
        self.char_starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Text of the char range `[begin, end)`, or `None` when out of bounds.
    pub fn slice(&self, begin: usize, end: usize) -> Option<&str> {
        if begin > end || end > self.len() {
            return None;
        }
        Some(&self.text[self.char_starts[begin]..self.char_starts[end]])
    }

    /// Char offset of a byte offset that falls on a char boundary.
    pub(crate) fn char_index_of_byte(&self, byte: usize) -> Option<usize> {
        self.char_starts.binary_search(&byte).ok()
    }
}

pub fn doc_id_for(source_db: Option<&str>, source_id: &str) -> String {
    format!("{}:{}", source_db.unwrap_or("local"), source_id)
}

/// One span annotation: `(begin, end, label)` plus an identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub begin: usize,
    pub end: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Entity {
    pub fn new(id: impl Into<String>, begin: usize, end: usize, label: impl Into<Label>) -> Self {
        Entity {
            id: id.into(),
            begin,
            end,
            label: label.into(),
            extra: Map::new(),
        }
    }

    /// The triplet used for strict matching.
    pub fn triplet(&self) -> (usize, usize, &Label) {
        (self.begin, self.end, &self.label)
    }

    pub(crate) fn check_bounds(&self, doc: &Document) -> std::result::Result<(), String> {
        if self.begin >= self.end {
            return Err(format!("begin {} is not before end {}", self.begin, self.end));
        }
        if self.end > doc.len() {
            return Err(format!(
                "end {} exceeds text length {}",
                self.end,
                doc.len()
            ));
        }
        Ok(())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    Predicted { iteration: u32, model_id: String },
}

/// Entities of one document. Exact `(begin, end, label)` duplicates are
/// collapsed on construction and entities are kept in offset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub doc_id: String,
    entities: Vec<Entity>,
    pub provenance: Provenance,
}

impl AnnotationSet {
    /// Returns the set and the number of duplicates collapsed.
    pub fn new(
        doc_id: impl Into<String>,
        entities: Vec<Entity>,
        provenance: Provenance,
    ) -> (Self, usize) {
        let doc_id = doc_id.into();
        let total = entities.len();
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(total);
        for e in entities {
            if seen.insert((e.begin, e.end, e.label.clone())) {
                kept.push(e);
            } else {
                log::warn!(
                    "{doc_id}: collapsing duplicate entity {} ({}, {}, {})",
                    e.id,
                    e.begin,
                    e.end,
                    e.label
                );
            }
        }
        kept.sort_by(|a, b| {
            (a.begin, a.end, &a.label, &a.id).cmp(&(b.begin, b.end, &b.label, &b.id))
        });
        let collapsed = total - kept.len();
        (
            AnnotationSet {
                doc_id,
                entities: kept,
                provenance,
            },
            collapsed,
        )
    }

    pub fn empty(doc_id: impl Into<String>, provenance: Provenance) -> Self {
        AnnotationSet {
            doc_id: doc_id.into(),
            entities: Vec::new(),
            provenance,
        }
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Check every entity against the document bounds.
    pub fn validate(&self, doc: &Document) -> Result<()> {
        for e in &self.entities {
            e.check_bounds(doc).map_err(|reason| CorpusError::InvalidEntity {
                doc_id: self.doc_id.clone(),
                entity_id: e.id.clone(),
                reason,
            })?;
        }
        Ok(())
    }
}

/// Annotation sets keyed by document id.
pub type AnnotationSets = BTreeMap<String, AnnotationSet>;

/// Documents plus their gold annotation sets, keyed by `doc_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    gold: AnnotationSets,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: Document, gold: AnnotationSet) -> Result<()> {
        if doc.is_empty() {
            return Err(CorpusError::EmptyText(doc.doc_id));
        }
        if self.documents.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateDocument(doc.doc_id));
        }
        gold.validate(&doc)?;
        self.gold.insert(doc.doc_id.clone(), gold);
        self.documents.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.documents.keys().map(String::as_str)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn gold(&self) -> &AnnotationSets {
        &self.gold
    }

    pub fn entity_count(&self) -> usize {
        self.gold.values().map(AnnotationSet::len).sum()
    }

    /// Sub-corpus restricted to `ids`.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Corpus> {
        let mut out = Corpus::new();
        for id in ids {
            let id = id.as_ref();
            let doc = self
                .documents
                .get(id)
                .ok_or_else(|| CorpusError::UnknownDocument(id.to_owned()))?;
            out.insert(doc.clone(), self.gold[id].clone())?;
        }
        Ok(out)
    }

    /// Reject gold labels that the schema does not declare.
    pub fn check_labels(&self, schema: &EntitySchema) -> Result<()> {
        for set in self.gold.values() {
            for e in set.entities() {
                if !schema.contains(&e.label) {
                    return Err(CorpusError::InvalidEntity {
                        doc_id: set.doc_id.clone(),
                        entity_id: e.id.clone(),
                        reason: format!("label {} is not in the entity schema", e.label),
                    });
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// PubAnnotation file format

/// On-disk PubAnnotation document. Unknown fields survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PubAnnotationDoc {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sourcedb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sourceid: Option<String>,
    #[serde(default)]
    pub denotations: Vec<Denotation>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denotation {
    pub id: String,
    pub span: Span,
    pub obj: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

/// Parse one PubAnnotation file, reporting the failing field path.
fn parse_pubannotation(path: &Path, raw: &str) -> Result<PubAnnotationDoc> {
    let malformed = |field: &str, message: &str| CorpusError::Malformed {
        path: path.to_owned(),
        field: field.to_owned(),
        message: message.to_owned(),
    };
    let value: Value = serde_json::from_str(raw).map_err(|e| malformed("<root>", &e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("<root>", "expected a JSON object"));
    };

    let text = match obj.remove("text") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(malformed("text", "expected a string")),
        None => return Err(malformed("text", "missing")),
    };
    let mut opt_string = |key: &str| -> Result<Option<String>> {
        match obj.remove(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            // PubMed ids are sometimes numeric.
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(_) => Err(malformed(key, "expected a string")),
        }
    };
    let sourcedb = opt_string("sourcedb")?;
    let sourceid = opt_string("sourceid")?;

    let raw_denotations = match obj.remove("denotations") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(malformed("denotations", "expected an array")),
    };
    let mut denotations = Vec::with_capacity(raw_denotations.len());
    for (i, item) in raw_denotations.into_iter().enumerate() {
        let at = |f: &str| format!("denotations[{i}]{f}");
        let Value::Object(mut d) = item else {
            return Err(malformed(&at(""), "expected an object"));
        };
        let id = match d.remove("id") {
            None | Some(Value::Null) => format!("T{}", i + 1),
            Some(Value::String(s)) => s,
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(malformed(&at(".id"), "expected a string")),
        };
        let obj_label = match d.remove("obj") {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(Value::String(_)) => return Err(malformed(&at(".obj"), "empty label")),
            Some(_) => return Err(malformed(&at(".obj"), "expected a string")),
            None => return Err(malformed(&at(".obj"), "missing")),
        };
        let Some(Value::Object(span)) = d.remove("span") else {
            return Err(malformed(&at(".span"), "missing or not an object"));
        };
        let offset = |key: &str| -> Result<usize> {
            match span.get(key) {
                Some(Value::Number(n)) => n
                    .as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| malformed(&at(&format!(".span.{key}")), "expected a non-negative integer")),
                Some(_) => Err(malformed(&at(&format!(".span.{key}")), "expected an integer")),
                None => Err(malformed(&at(&format!(".span.{key}")), "missing")),
            }
        };
        let begin = offset("begin")?;
        let end = offset("end")?;
        denotations.push(Denotation {
            id,
            span: Span { begin, end },
            obj: obj_label,
            extra: d,
        });
    }

    Ok(PubAnnotationDoc {
        text,
        sourcedb,
        sourceid,
        denotations,
        extra: obj,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn to_document_and_set(
    path: &Path,
    file: PubAnnotationDoc,
    provenance: Provenance,
) -> Result<(Document, AnnotationSet, usize)> {
    let source_id = file.sourceid.clone().unwrap_or_else(|| file_stem(path));
    let mut doc = Document::new(file.sourcedb.as_deref(), &source_id, file.text);
    doc.extra = file.extra;
    if doc.is_empty() {
        return Err(CorpusError::EmptyText(doc.doc_id));
    }
    let entities = file
        .denotations
        .into_iter()
        .map(|d| Entity {
            id: d.id,
            begin: d.span.begin,
            end: d.span.end,
            label: Label(d.obj),
            extra: d.extra,
        })
        .collect();
    let (set, collapsed) = AnnotationSet::new(doc.doc_id.clone(), entities, provenance);
    set.validate(&doc)?;
    Ok((doc, set, collapsed))
}

/// Serialize a document with the given annotation set.
pub fn to_pubannotation(doc: &Document, set: &AnnotationSet) -> PubAnnotationDoc {
    PubAnnotationDoc {
        text: doc.text.clone(),
        sourcedb: doc.source_db.clone(),
        sourceid: Some(doc.source_id.clone()),
        denotations: set
            .entities()
            .iter()
            .map(|e| Denotation {
                id: e.id.clone(),
                span: Span {
                    begin: e.begin,
                    end: e.end,
                },
                obj: e.label.0.clone(),
                extra: e.extra.clone(),
            })
            .collect(),
        extra: doc.extra.clone(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

/// `*.json` files of `dir`, sorted; names starting with `_` or `.` are
/// metadata and skipped.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with(['_', '.']));
        if path.is_file() && !hidden && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read_dir_sets(dir: &Path, provenance: &Provenance) -> Result<Vec<(Document, AnnotationSet, usize)>> {
    let files = json_files(dir)?;
    Exec::default()
        .map(&files, |path| {
            let raw = fs::read_to_string(path).map_err(io_err(path))?;
            let file = parse_pubannotation(path, &raw)?;
            to_document_and_set(path, file, provenance.clone())
        })
        .into_iter()
        .collect()
}

/// Summary of a corpus load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadStats {
    pub documents: usize,
    pub entities: usize,
    pub collapsed_duplicates: usize,
}

/// Load documents and gold sets from a corpus directory.
pub fn load_corpus(path: &Path) -> Result<(Corpus, LoadStats)> {
    let gold_dir = path.join("gold");
    let dir = if gold_dir.is_dir() { gold_dir } else { path.to_owned() };
    let loaded = read_dir_sets(&dir, &Provenance::Gold)?;
    let mut corpus = Corpus::new();
    let mut collapsed_duplicates = 0;
    // Files are sorted by name; BTreeMap storage orders by doc_id.
    for (doc, set, collapsed) in loaded {
        collapsed_duplicates += collapsed;
        corpus.insert(doc, set)?;
    }
    let stats = LoadStats {
        documents: corpus.len(),
        entities: corpus.entity_count(),
        collapsed_duplicates,
    };
    log::info!(
        "loaded {} documents, {} entities from {}",
        stats.documents,
        stats.entities,
        dir.display()
    );
    Ok((corpus, stats))
}

/// Load predicted (or any non-gold) sets and validate them against `corpus`.
pub fn load_annotation_sets(
    dir: &Path,
    corpus: &Corpus,
    provenance: Provenance,
) -> Result<AnnotationSets> {
    let mut out = AnnotationSets::new();
    for (doc, set, _) in read_dir_sets(dir, &provenance)? {
        let Some(known) = corpus.document(&doc.doc_id) else {
            return Err(CorpusError::UnknownDocument(doc.doc_id));
        };
        if known.text() != doc.text() {
            return Err(CorpusError::TextMismatch { doc_id: doc.doc_id });
        }
        if out.insert(doc.doc_id.clone(), set).is_some() {
            return Err(CorpusError::DuplicateDocument(doc.doc_id));
        }
    }
    Ok(out)
}

/// File name used for a document inside a corpus directory.
pub fn file_name_for(doc: &Document) -> String {
    let raw = match &doc.source_db {
        Some(db) => format!("{db}-{}", doc.source_id),
        None => doc.source_id.clone(),
    };
    let safe: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Write one file per set into `dir` (created if needed).
pub fn write_annotation_sets(dir: &Path, corpus: &Corpus, sets: &AnnotationSets) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (doc_id, set) in sets {
        let doc = corpus
            .document(doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.clone()))?;
        let path = dir.join(file_name_for(doc));
        let body = serde_json::to_string_pretty(&to_pubannotation(doc, set))
            .expect("PubAnnotation documents always serialize");
        fs::write(&path, body + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

/// Write the corpus documents with their gold sets.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_annotation_sets(dir, corpus, &corpus.gold)
}

// ---------------------------------------------------------------------------
// Splits and statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub dev_size: usize,
    pub eval_size: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            dev_size: 10,
            eval_size: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    /// Development ids in draw order.
    pub dev_ids: Vec<String>,
    /// Evaluation ids in draw order.
    pub eval_ids: Vec<String>,
    pub dev: Corpus,
    pub eval: Corpus,
}

/// Fisher-Yates over ChaCha8 seeded from `seed` on `stream`:
/// for `i` from `n-1` down to `1`, swap `i` with `next_u64() % (i+1)`.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64, stream: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Draw the development and evaluation sets.
///
/// With one pool, ids are sorted, shuffled with `spec.seed`, and the first
/// `dev_size` become dev and the next `eval_size` eval. With a separate
/// evaluation pool, each pool is shuffled on its own stream and dev ids are
/// excluded from the evaluation draw.
pub fn sample_splits(dev_pool: &Corpus, eval_pool: Option<&Corpus>, spec: SplitSpec) -> Result<Split> {
    let mut dev_candidates: Vec<String> = dev_pool.doc_ids().map(str::to_owned).collect();
    match eval_pool {
        None => {
            let needed = spec.dev_size + spec.eval_size;
            if needed > dev_candidates.len() {
                return Err(CorpusError::InsufficientDocuments {
                    requested: needed,
                    available: dev_candidates.len(),
                });
            }
            seeded_shuffle(&mut dev_candidates, spec.seed, 0);
            let eval_ids = dev_candidates[spec.dev_size..needed].to_vec();
            dev_candidates.truncate(spec.dev_size);
            Ok(Split {
                dev: dev_pool.subset(&dev_candidates)?,
                eval: dev_pool.subset(&eval_ids)?,
                dev_ids: dev_candidates,
                eval_ids,
            })
        }
        Some(eval_pool) => {
            if spec.dev_size > dev_candidates.len() {
                return Err(CorpusError::InsufficientDocuments {
                    requested: spec.dev_size,
                    available: dev_candidates.len(),
                });
            }
            seeded_shuffle(&mut dev_candidates, spec.seed, 0);
            dev_candidates.truncate(spec.dev_size);
            let taken: BTreeSet<&str> = dev_candidates.iter().map(String::as_str).collect();
            let mut eval_candidates: Vec<String> = eval_pool
                .doc_ids()
                .filter(|id| !taken.contains(id))
                .map(str::to_owned)
                .collect();
            if spec.eval_size > eval_candidates.len() {
                return Err(CorpusError::InsufficientDocuments {
                    requested: spec.eval_size,
                    available: eval_candidates.len(),
                });
            }
            seeded_shuffle(&mut eval_candidates, spec.seed, 1);
            eval_candidates.truncate(spec.eval_size);
            Ok(Split {
                dev: dev_pool.subset(&dev_candidates)?,
                eval: eval_pool.subset(&eval_candidates)?,
                dev_ids: dev_candidates,
                eval_ids: eval_candidates,
            })
        }
    }
}

pub fn entity_type_counts<'a, I>(sets: I) -> BTreeMap<Label, usize>
where
    I: IntoIterator<Item = &'a AnnotationSet>,
{
    let mut counts = BTreeMap::new();
    for set in sets {
        for e in set.entities() {
            *counts.entry(e.label.clone()).or_insert(0) += 1;
        }
    }
    counts
}
