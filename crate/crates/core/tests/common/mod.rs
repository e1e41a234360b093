#![allow(dead_code)]

pub mod oracle;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use guidemod::annotator::Annotator;
use guidemod::corpus::{AnnotationSet, Corpus, Document, Entity, Provenance};
use guidemod::gateway::{
    CompletionRequest, CompletionResponse, Family, FixtureStore, FnProvider, Gateway, Mode, ModelSpec, ProviderError,
};
use guidemod::guideline::Guideline;
use guidemod::moderator::Moderator;
use guidemod::orchestrator::{LoopConfig, RunSummary, Runner};
use guidemod::schema::EntitySchema;
use guidemod::Exec;

/// Chars per token slot: five-char token plus a space.
pub const SLOT: usize = 6;

/// A document of `n` tokens `dNNtMMM`-style, so token `i` spans
/// `[i * SLOT, i * SLOT + 5)`.
pub fn token_doc(id: usize, n: usize) -> Document {
    let text = (0..n).map(|i| format!("{:02}t{:02}", id % 100, i % 100)).collect::<Vec<_>>().join(" ");
    Document::new(Some("SYN"), &format!("{id:03}"), text)
}

pub fn token(i: usize, label: &str) -> Entity {
    Entity::new(format!("T{i}"), i * SLOT, i * SLOT + 5, label)
}

pub fn set(doc: &Document, entities: Vec<Entity>, provenance: Provenance) -> AnnotationSet {
    AnnotationSet::new(doc.doc_id.clone(), entities, provenance).0
}

pub fn model() -> ModelSpec {
    let mut m = ModelSpec::new(Family::Other, "scripted-model");
    m.price_in = 1.0;
    m.price_out = 4.0;
    m
}

pub fn schema() -> EntitySchema {
    EntitySchema::new([("Disease", "a disease mention")]).unwrap()
}

/// Ten documents with ten gold `Disease` entities each, on even tokens.
pub fn scripted_corpus() -> Corpus {
    let mut corpus = Corpus::new();
    for d in 0..10 {
        let doc = token_doc(d, 20);
        let gold = (0..10).map(|j| token(2 * j, "Disease")).collect();
        let gold = set(&doc, gold, Provenance::Gold);
        corpus.insert(doc, gold).unwrap();
    }
    corpus
}

pub fn guideline_text(revision: usize) -> String {
    let mut text = format!("Guideline revision R{revision}.\n\n**1. Annotate diseases**\nMark every disease mention.\n");
    for r in 1..=revision {
        text.push_str(&format!("\n**{}. Added rule {r}**\nRule body {r}.\n", r + 1));
    }
    text
}

fn revision_in(prompt: &str) -> usize {
    let at = prompt.find("Guideline revision R").expect("prompt carries the guideline") + "Guideline revision R".len();
    prompt[at..].chars().take_while(char::is_ascii_digit).collect::<String>().parse().unwrap()
}

fn doc_index_in(prompt: &str) -> usize {
    let at = prompt.find("\n---\n").expect("delimited text") + 5;
    prompt[at..at + 2].parse().unwrap()
}

/// Annotation payload for document `d` when `tp` of the 100 gold entities
/// (taken in corpus order) are found. Each miss is replaced by a prediction
/// on the neighbouring odd token, keeping 100 predictions in total.
fn payload(d: usize, tp: usize) -> String {
    let items: Vec<String> = (0..10)
        .map(|j| {
            let global = d * 10 + j;
            let t = if global < tp { 2 * j } else { 2 * j + 1 };
            let (b, e) = (t * SLOT, t * SLOT + 5);
            format!(r#"{{"begin": {b}, "end": {e}, "label": "Disease", "span_text": "{:02}t{:02}"}}"#, d, t)
        })
        .collect();
    format!("```json\n{{\"annotations\": [{}]}}\n```", items.join(", "))
}

const INSIGHT: &str = "**Pattern Name:** Missed list items\n**Confusion Trigger:** items in lists\n**Contrastive Evidence:** heads are found\n**Rule (Proposed):** tag list items";
const PRINCIPLE: &str = "IF an item appears in a list\nTHEN annotate it\nEXCEPT when it is a process term";

/// Provider whose annotation quality follows `schedule[revision]` true
/// positives out of 100, and whose refinements add one section each.
pub fn scripted_provider(schedule: Vec<usize>, calls: Arc<AtomicUsize>) -> Arc<FnProvider<impl Fn(&CompletionRequest) -> Result<CompletionResponse, ProviderError> + Send + Sync>> {
    Arc::new(FnProvider(move |req: &CompletionRequest| {
        calls.fetch_add(1, Ordering::SeqCst);
        let p = &req.user_text;
        let text = if p.starts_with("SYSTEM INSTRUCTION") {
            payload(doc_index_in(p), schedule[revision_in(p)])
        } else if p.starts_with("You are reviewing") {
            INSIGHT.to_owned()
        } else if p.contains("OBSERVED ERROR PATTERN") {
            PRINCIPLE.to_owned()
        } else {
            guideline_text(revision_in(p) + 1)
        };
        Ok(CompletionResponse {
            input_tokens: p.chars().count() as u64,
            output_tokens: text.chars().count() as u64,
            latency_secs: 1.5,
            text,
        })
    }))
}

pub struct Session {
    pub corpus: Corpus,
    pub annotator: Annotator,
    pub moderator: Moderator,
    pub config: LoopConfig,
}

impl Session {
    pub fn new() -> Self {
        Session {
            corpus: scripted_corpus(),
            annotator: Annotator::with_default_template(schema(), model()).unwrap(),
            moderator: Moderator::new(model(), schema()),
            config: LoopConfig::default(),
        }
    }

    pub fn run(&self, gateway: &Gateway, archive: &Path) -> RunSummary {
        let runner = Runner {
            gateway,
            annotator: &self.annotator,
            moderator: &self.moderator,
            corpus: &self.corpus,
            config: self.config.clone(),
            exec: Exec::default(),
        };
        runner.run(archive, &Guideline::new(0, guideline_text(0))).unwrap()
    }
}

pub fn recording_gateway(fixtures: &Path, schedule: Vec<usize>, calls: Arc<AtomicUsize>) -> Gateway {
    Gateway::new(
        Mode::Record,
        Some(FixtureStore::open(fixtures).unwrap()),
        Some(scripted_provider(schedule, calls)),
    )
    .with_parallelism(4)
}

pub fn replay_gateway(fixtures: &Path) -> Gateway {
    Gateway::replay(FixtureStore::open(fixtures).unwrap()).with_parallelism(4)
}

/// Every file under `dir` with its bytes, in path order.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
