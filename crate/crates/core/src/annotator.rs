//! Prompt rendering, document annotation and span validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{write_annotation_sets, AnnotationSet, AnnotationSets, Corpus, CorpusError, Document, Entity, Label, Provenance};
use crate::exec::Exec;
use crate::gateway::{extract_payload, CallTag, CompletionRequest, Gateway, GatewayError, ModelSpec, Stage};
use crate::guideline::Guideline;
use crate::schema::EntitySchema;
use crate::template::{Template, TemplateError};

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/annotation.txt");
pub const PLACEHOLDERS: [&str; 4] = ["entitySchema", "guidelines", "jsonSchema", "inputText"];

const FORMAT_REMINDER: &str = "\n\nYour previous reply could not be parsed. Reply with exactly one JSON object of the form {\"annotations\": [...]} and nothing else.";

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{doc_id}: {source}")]
    Gateway {
        doc_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub struct Annotator {
    template: Template,
    schema: EntitySchema,
    model: ModelSpec,
    pub decoding: BTreeMap<String, Value>,
}

impl Annotator {
    pub fn new(template: Template, schema: EntitySchema, model: ModelSpec) -> Result<Self, TemplateError> {
        template.require(&PLACEHOLDERS)?;
        Ok(Annotator {
            template,
            schema,
            model,
            decoding: BTreeMap::new(),
        })
    }

    pub fn with_default_template(schema: EntitySchema, model: ModelSpec) -> Result<Self, TemplateError> {
        Self::new(Template::parse("annotation", DEFAULT_TEMPLATE)?, schema, model)
    }

    pub fn schema(&self) -> &EntitySchema {
        &self.schema
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// JSON schema of one payload item, with the label enum from the schema.
    pub fn json_schema(&self) -> String {
        let labels: Vec<&str> = self.schema.names().map(Label::as_str).collect();
        let schema = json!({
            "type": "object",
            "properties": {
                "begin": {"type": "integer", "minimum": 0},
                "end": {"type": "integer", "minimum": 0},
                "label": {"type": "string", "enum": labels},
                "span_text": {"type": "string"},
            },
            "required": ["begin", "end", "label", "span_text"],
        });
        serde_json::to_string(&schema).expect("static schema serializes")
    }

    pub fn render_annotation_prompt(&self, guideline: &Guideline, doc: &Document) -> Result<CompletionRequest, TemplateError> {
        let text = doc.text();
        let mut template = &self.template;
        let widened;
        if let Some((open, close)) = self.template.delimiters_around("inputText") {
            if !open.is_empty() && (text.contains(&open) || text.contains(&close)) {
                let (o, c) = uniquify(&open, &close, text);
                widened = self.template.with_delimiters("inputText", &o, &c).expect("delimiters were found");
                template = &widened;
            }
        }
        let mut values = BTreeMap::new();
        values.insert("entitySchema", self.schema.render());
        values.insert("guidelines", guideline.text.clone());
        values.insert("jsonSchema", self.json_schema());
        values.insert("inputText", text.to_owned());
        let user = template.render(&values)?;
        let mut req = CompletionRequest::new(self.model.clone(), "", user);
        req.decoding = self.decoding.clone();
        Ok(req)
    }
}

/// Lengthen the delimiters by repeating their last char until neither
/// occurs in `text`.
fn uniquify(open: &str, close: &str, text: &str) -> (String, String) {
    let mut o = open.to_owned();
    let mut c = close.to_owned();
    let (lo, lc) = (open.chars().last().unwrap_or('-'), close.chars().last().unwrap_or('-'));
    while text.contains(&o) || text.contains(&c) {
        o.push(lo);
        c.push(lc);
    }
    (o, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub item: Value,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidatedAnnotations {
    pub entities: Vec<Entity>,
    pub repaired: usize,
    pub dropped: Vec<DroppedItem>,
}

/// Byte offsets of every (possibly overlapping) occurrence of `needle`.
fn occurrences(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle) {
        out.push(from + i);
        let step = hay[from + i..].chars().next().map_or(1, char::len_utf8);
        from += i + step;
    }
    out
}

fn offset(item: &Value, key: &str) -> Option<usize> {
    item.get(key).and_then(Value::as_u64).and_then(|v| usize::try_from(v).ok())
}

/// Check each payload item against the document and schema. Items whose
/// offsets disagree with `span_text` are realigned when the text occurs
/// exactly once.
pub fn validate_and_repair(items: &[Value], doc: &Document, schema: &EntitySchema) -> ValidatedAnnotations {
    let mut accepted: Vec<Entity> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut repaired = 0;
    let mut dropped = Vec::new();
    let mut drop = |item: &Value, reason: String| {
        dropped.push(DroppedItem {
            item: item.clone(),
            reason,
        })
    };

    for item in items {
        let Some(label) = item.get("label").and_then(Value::as_str) else {
            drop(item, "missing label".into());
            continue;
        };
        let label = Label::from(label);
        if !schema.contains(&label) {
            drop(item, format!("unknown label {label}"));
            continue;
        }
        let (begin, end) = (offset(item, "begin"), offset(item, "end"));
        let (span, was_repaired) = match item.get("span_text") {
            Some(Value::String(span_text)) => {
                let exact = match (begin, end) {
                    (Some(b), Some(e)) => doc.slice(b, e) == Some(span_text.as_str()),
                    _ => false,
                };
                if exact {
                    ((begin.unwrap(), end.unwrap()), false)
                } else if span_text.is_empty() {
                    drop(item, "empty span_text".into());
                    continue;
                } else {
                    match occurrences(doc.text(), span_text).as_slice() {
                        [] => {
                            drop(item, "text not found".into());
                            continue;
                        }
                        [at] => {
                            let b = doc.char_index_of_byte(*at).expect("match starts on a char boundary");
                            let e = doc
                                .char_index_of_byte(at + span_text.len())
                                .expect("match ends on a char boundary");
                            ((b, e), true)
                        }
                        many => {
                            drop(item, format!("ambiguous: text occurs {} times", many.len()));
                            continue;
                        }
                    }
                }
            }
            Some(_) => {
                drop(item, "span_text is not a string".into());
                continue;
            }
            None => match (begin, end) {
                (Some(b), Some(e)) => ((b, e), false),
                _ => {
                    drop(item, "missing or invalid offsets".into());
                    continue;
                }
            },
        };
        let entity = Entity::new("", span.0, span.1, label);
        if let Err(reason) = entity.check_bounds(doc) {
            drop(item, reason);
            continue;
        }
        if !seen.insert((entity.begin, entity.end, entity.label.clone())) {
            drop(item, "duplicate".into());
            continue;
        }
        if was_repaired {
            repaired += 1;
        }
        accepted.push(entity);
    }
    accepted.sort_by(|a, b| a.triplet().cmp(&b.triplet()));
    for (i, e) in accepted.iter_mut().enumerate() {
        e.id = format!("T{}", i + 1);
    }
    ValidatedAnnotations {
        entities: accepted,
        repaired,
        dropped,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocNote {
    pub repaired: usize,
    pub dropped: Vec<DroppedItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationOutcome {
    pub sets: AnnotationSets,
    pub notes: BTreeMap<String, DocNote>,
}

impl AnnotationOutcome {
    pub fn repaired(&self) -> usize {
        self.notes.values().map(|n| n.repaired).sum()
    }

    pub fn dropped(&self) -> usize {
        self.notes.values().map(|n| n.dropped.len()).sum()
    }

    pub fn failed_documents(&self) -> usize {
        self.notes.values().filter(|n| n.error.is_some()).count()
    }
}

fn annotate_document(
    gateway: &Gateway,
    annotator: &Annotator,
    guideline: &Guideline,
    doc: &Document,
    ledger_iteration: u32,
) -> Result<(Vec<Entity>, DocNote), AnnotateError> {
    let gw_err = |source| AnnotateError::Gateway {
        doc_id: doc.doc_id.clone(),
        source,
    };
    let request = annotator.render_annotation_prompt(guideline, doc)?;
    let tag = CallTag::new(ledger_iteration, Stage::Annotate).item(doc.doc_id.clone());
    let response = gateway.complete(&request, &tag).map_err(gw_err)?;
    let items = match extract_payload(&response.text) {
        Ok(items) => items,
        Err(first) => {
            log::warn!("{}: {}; asking again", doc.doc_id, first.message);
            let mut retry = request.clone();
            retry.user_text.push_str(FORMAT_REMINDER);
            let response = gateway.complete(&retry, &tag.clone().attempt(1)).map_err(gw_err)?;
            match extract_payload(&response.text) {
                Ok(items) => items,
                Err(second) => {
                    log::warn!("{}: {}; recording an empty prediction", doc.doc_id, second.message);
                    return Ok((
                        Vec::new(),
                        DocNote {
                            error: Some(second.message),
                            ..DocNote::default()
                        },
                    ));
                }
            }
        }
    };
    let v = validate_and_repair(&items, doc, annotator.schema());
    Ok((
        v.entities,
        DocNote {
            repaired: v.repaired,
            dropped: v.dropped,
            error: None,
        },
    ))
}

/// Annotate every document of `corpus` under `guideline` (version `k`).
/// Calls are charged to ledger iteration `k + 1`. When `out_dir` is given,
/// the sets and a `_notes.json` are written there before returning.
pub fn annotate_corpus(
    gateway: &Gateway,
    annotator: &Annotator,
    guideline: &Guideline,
    corpus: &Corpus,
    k: u32,
    out_dir: Option<&Path>,
) -> Result<AnnotationOutcome, AnnotateError> {
    let docs: Vec<&Document> = corpus.documents().collect();
    let results = Exec::Parallel.map_bounded(&docs, gateway.parallelism(), |doc| {
        annotate_document(gateway, annotator, guideline, doc, k + 1)
    });
    let provenance = Provenance::Predicted {
        iteration: k,
        model_id: annotator.model().model_id.clone(),
    };
    let mut outcome = AnnotationOutcome::default();
    for (doc, result) in docs.iter().zip(results) {
        let (entities, note) = result?;
        let (set, _) = AnnotationSet::new(doc.doc_id.clone(), entities, provenance.clone());
        outcome.sets.insert(doc.doc_id.clone(), set);
        outcome.notes.insert(doc.doc_id.clone(), note);
    }
    log::info!(
        "annotated {} documents at k={k}: {} repaired, {} dropped, {} failed",
        outcome.sets.len(),
        outcome.repaired(),
        outcome.dropped(),
        outcome.failed_documents()
    );
    if let Some(dir) = out_dir {
        write_annotation_sets(dir, corpus, &outcome.sets)?;
        let path = dir.join("_notes.json");
        let body = serde_json::to_string_pretty(&outcome.notes).expect("notes serialize");
        std::fs::write(&path, body + "\n").map_err(|e| AnnotateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(outcome)
}
