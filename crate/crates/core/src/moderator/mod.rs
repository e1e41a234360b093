//! The three moderation stages: pattern explanation, principle generation
//! and guideline refinement.
//!
//! Each stage renders a prompt, sends it through the gateway and parses the
//! reply. A reply that fails to parse (or, for refinement, fails the
//! integrity check) gets one re-ask naming the problem; a second failure is
//! a stage error and the guideline stays unchanged.

mod parse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use parse::{parse_insight, parse_principle, unfence, PatternInsight, Principle};

use crate::corpus::{seeded_shuffle, Corpus, Entity};
use crate::discrepancy::{extract_span_context, Context, ContextOptions, DiscrepancyCase, GroupKey};
use crate::eval::CorpusEvaluation;
use crate::gateway::{CallTag, CompletionRequest, Gateway, GatewayError, ModelSpec, Stage};
use crate::guideline::{check_integrity, Guideline, IntegrityOptions, IntegrityReport};
use crate::schema::EntitySchema;
use crate::template::{Template, TemplateError};

pub const EXPLAIN_TEMPLATE: &str = include_str!("../../templates/explain_pattern.txt");
pub const PRINCIPLE_TEMPLATE: &str = include_str!("../../templates/generate_principle.txt");
pub const REFINE_TEMPLATE: &str = include_str!("../../templates/refine_guideline.txt");

pub const DEFAULT_TP_CAP: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ModerationError {
    #[error("the selected group has no cases")]
    EmptyGroup,
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String, raw: String },
    #[error("{stage}: {source}")]
    Gateway {
        stage: Stage,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ModerationError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            ModerationError::Stage { stage, .. } | ModerationError::Gateway { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// A gold entity the annotator got right, shown as a contrast example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedTp {
    pub doc_id: String,
    pub entity: Entity,
    pub context: Context,
}

/// One prompt and its reply, kept for the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageExchange {
    pub stage: Stage,
    pub attempt: u32,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationRecord {
    pub iteration: u32,
    pub dominant: GroupKey,
    pub group_size: usize,
    pub insight: PatternInsight,
    pub principle: Principle,
    pub guideline_before: Guideline,
    pub guideline_after: Guideline,
    pub integrity: IntegrityReport,
    pub verified_tps: Vec<VerifiedTp>,
    pub exchanges: Vec<StageExchange>,
}

/// A moderation round that stopped at some stage.
#[derive(Debug)]
pub struct ModerationAbort {
    pub error: ModerationError,
    pub exchanges: Vec<StageExchange>,
}

/// Up to `cap` true positives sampled by seed, preferring labels that occur
/// in the group key. Returned in (doc, offset) order.
pub fn select_verified_tps(
    evaluation: &CorpusEvaluation,
    corpus: &Corpus,
    key: &GroupKey,
    cap: usize,
    seed: u64,
    opts: &ContextOptions,
) -> Vec<VerifiedTp> {
    let all: Vec<(&str, &Entity)> = evaluation
        .documents
        .iter()
        .flat_map(|d| d.matched.iter().map(move |e| (d.doc_id.as_str(), e)))
        .collect();
    let wanted = |e: &Entity| key.gold.as_ref() == Some(&e.label) || key.pred.as_ref() == Some(&e.label);
    let preferred: Vec<(&str, &Entity)> = all.iter().copied().filter(|(_, e)| wanted(e)).collect();
    let mut pool = if preferred.is_empty() { all } else { preferred };
    pool.sort_by(|a, b| (a.0, a.1.triplet()).cmp(&(b.0, b.1.triplet())));
    seeded_shuffle(&mut pool, seed, 0);
    pool.truncate(cap);
    pool.sort_by(|a, b| (a.0, a.1.triplet()).cmp(&(b.0, b.1.triplet())));
    pool.into_iter()
        .filter_map(|(doc_id, e)| {
            let doc = corpus.document(doc_id)?;
            Some(VerifiedTp {
                doc_id: doc_id.to_owned(),
                entity: e.clone(),
                context: extract_span_context(doc, e.begin, e.end, opts),
            })
        })
        .collect()
}

fn label_or_none(e: Option<&Entity>) -> String {
    e.map_or_else(|| "NONE".to_owned(), |e| e.label.to_string())
}

pub fn render_cases(cases: &[&DiscrepancyCase]) -> String {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mention = |e: Option<&Entity>, idx: usize| match e {
                Some(_) => format!(" \"{}\"", c.mention_strings.get(idx).map_or("", String::as_str)),
                None => String::new(),
            };
            let gold_idx = 0;
            let pred_idx = usize::from(c.gold.is_some());
            format!(
                "{}. [{}] {} | gold: {}{} | predicted: {}{}\n   context: {}",
                i + 1,
                c.doc_id,
                c.category,
                label_or_none(c.gold.as_ref()),
                mention(c.gold.as_ref(), gold_idx),
                label_or_none(c.pred.as_ref()),
                mention(c.pred.as_ref(), pred_idx),
                c.context.marked
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_tps(tps: &[VerifiedTp]) -> String {
    if tps.is_empty() {
        return "(none)".to_owned();
    }
    tps.iter()
        .enumerate()
        .map(|(i, t)| {
            format!(
                "{}. [{}] {} \"{}\"\n   context: {}",
                i + 1,
                t.doc_id,
                t.entity.label,
                t.context.mention,
                t.context.marked
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone)]
pub struct Moderator {
    explain: Template,
    principle: Template,
    refine: Template,
    model: ModelSpec,
    schema: EntitySchema,
    pub integrity: IntegrityOptions,
    pub decoding: BTreeMap<String, Value>,
}

impl Moderator {
    pub fn new(model: ModelSpec, schema: EntitySchema) -> Self {
        Self::with_templates(
            Template::parse("explain_pattern", EXPLAIN_TEMPLATE).expect("bundled template parses"),
            Template::parse("generate_principle", PRINCIPLE_TEMPLATE).expect("bundled template parses"),
            Template::parse("refine_guideline", REFINE_TEMPLATE).expect("bundled template parses"),
            model,
            schema,
        )
        .expect("bundled templates carry their placeholders")
    }

    pub fn with_templates(
        explain: Template,
        principle: Template,
        refine: Template,
        model: ModelSpec,
        schema: EntitySchema,
    ) -> Result<Self, TemplateError> {
        explain.require(&["guidelines", "cases", "verifiedTps"])?;
        principle.require(&["insight", "guidelines"])?;
        refine.require(&["guidelines", "principle", "cases", "verifiedTps"])?;
        Ok(Moderator {
            explain,
            principle,
            refine,
            model,
            schema,
            integrity: IntegrityOptions::default(),
            decoding: BTreeMap::new(),
        })
    }

    /// Send `prompt`, parse, and re-ask once on failure.
    #[allow(clippy::too_many_arguments)]
    fn ask<T>(
        &self,
        gateway: &Gateway,
        k: u32,
        stage: Stage,
        prompt: String,
        log: &mut Vec<StageExchange>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, ModerationError> {
        let mut prompt = prompt;
        let mut last = (String::new(), String::new());
        for attempt in 0..2u32 {
            let mut req = CompletionRequest::new(self.model.clone(), "", prompt.clone());
            req.decoding = self.decoding.clone();
            let tag = CallTag::new(k + 1, stage).attempt(attempt);
            let resp = gateway
                .complete(&req, &tag)
                .map_err(|source| ModerationError::Gateway { stage, source })?;
            log.push(StageExchange {
                stage,
                attempt,
                prompt: prompt.clone(),
                response: resp.text.clone(),
            });
            match parse(&resp.text) {
                Ok(v) => return Ok(v),
                Err(problem) => {
                    log::warn!("{stage} attempt {}: {problem}", attempt + 1);
                    prompt = format!(
                        "{prompt}\n\nYour previous reply was rejected: {problem}. Answer again, following the required format exactly."
                    );
                    last = (problem, resp.text);
                }
            }
        }
        Err(ModerationError::Stage {
            stage,
            message: last.0,
            raw: last.1,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn explain_pattern(
        &self,
        gateway: &Gateway,
        k: u32,
        key: &GroupKey,
        cases: &[&DiscrepancyCase],
        tps: &[VerifiedTp],
        guideline: &Guideline,
        log: &mut Vec<StageExchange>,
    ) -> Result<PatternInsight, ModerationError> {
        if cases.is_empty() {
            return Err(ModerationError::EmptyGroup);
        }
        let mut v = BTreeMap::new();
        v.insert("entitySchema", self.schema.render());
        v.insert("guidelines", guideline.text.clone());
        v.insert("groupKey", key.to_string());
        v.insert("caseCount", cases.len().to_string());
        v.insert("cases", render_cases(cases));
        v.insert("verifiedTps", render_tps(tps));
        let prompt = self.explain.render(&v)?;
        self.ask(gateway, k, Stage::ExplainPattern, prompt, log, parse_insight)
    }

    pub fn generate_principle(
        &self,
        gateway: &Gateway,
        k: u32,
        insight: &PatternInsight,
        guideline: &Guideline,
        log: &mut Vec<StageExchange>,
    ) -> Result<Principle, ModerationError> {
        let mut v = BTreeMap::new();
        v.insert("entitySchema", self.schema.render());
        v.insert("guidelines", guideline.text.clone());
        v.insert("insight", insight.render());
        let prompt = self.principle.render(&v)?;
        self.ask(gateway, k, Stage::GeneratePrinciple, prompt, log, parse_principle)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn refine_guideline(
        &self,
        gateway: &Gateway,
        k: u32,
        guideline: &Guideline,
        principle: &Principle,
        cases: &[&DiscrepancyCase],
        tps: &[VerifiedTp],
        log: &mut Vec<StageExchange>,
    ) -> Result<(Guideline, IntegrityReport), ModerationError> {
        let mut v = BTreeMap::new();
        v.insert("entitySchema", self.schema.render());
        v.insert("guidelines", guideline.text.clone());
        v.insert("principle", principle.render());
        v.insert("cases", render_cases(cases));
        v.insert("verifiedTps", render_tps(tps));
        let prompt = self.refine.render(&v)?;
        self.ask(gateway, k, Stage::RefineGuideline, prompt, log, |text| {
            let after = Guideline::new(guideline.version + 1, unfence(text));
            let report = check_integrity(guideline, &after, &self.integrity);
            if report.passed {
                Ok((after, report))
            } else {
                Err(format!("integrity check failed: {}", report.violations.join("; ")))
            }
        })
    }

    /// One full round on the group `key`.
    #[allow(clippy::too_many_arguments)]
    pub fn moderate(
        &self,
        gateway: &Gateway,
        k: u32,
        key: &GroupKey,
        cases: &[&DiscrepancyCase],
        tps: Vec<VerifiedTp>,
        guideline: &Guideline,
    ) -> Result<ModerationRecord, ModerationAbort> {
        let mut exchanges = Vec::new();
        let result = (|| {
            let insight = self.explain_pattern(gateway, k, key, cases, &tps, guideline, &mut exchanges)?;
            let principle = self.generate_principle(gateway, k, &insight, guideline, &mut exchanges)?;
            let (after, integrity) =
                self.refine_guideline(gateway, k, guideline, &principle, cases, &tps, &mut exchanges)?;
            Ok((insight, principle, after, integrity))
        })();
        match result {
            Ok((insight, principle, guideline_after, integrity)) => Ok(ModerationRecord {
                iteration: k,
                dominant: key.clone(),
                group_size: cases.len(),
                insight,
                principle,
                guideline_before: guideline.clone(),
                guideline_after,
                integrity,
                verified_tps: tps,
                exchanges,
            }),
            Err(error) => Err(ModerationAbort { error, exchanges }),
        }
    }
}
