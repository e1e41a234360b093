//! The annotate, evaluate, moderate loop.
//!
//! After each evaluation the loop stops when strict F1 reaches `tau`, when
//! a refinement failed to improve on its predecessor (that refinement is
//! discarded), or when `max_iterations` rounds have run. Every iteration is
//! persisted before the next begins, and a rerun resumes from the archive.

mod archive;
pub mod config;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use archive::{read_json, write_json, write_text, Archive};
pub use config::{GatewayConfig, RunConfig, TemplatePaths};

use crate::annotator::{annotate_corpus, AnnotateError, Annotator};
use crate::corpus::{Corpus, CorpusError};
use crate::discrepancy::{analyze, ContextOptions};
use crate::eval::{evaluate_corpus, EvalError, EvaluationRecord, MatchCounts, Score};
use crate::exec::Exec;
use crate::gateway::{CostLedger, Gateway, IterationCost, Mode, Stage};
use crate::guideline::{Guideline, IntegrityOptions};
use crate::moderator::{select_verified_tps, ModerationError, ModerationRecord, Moderator, StageExchange};

/// Slack for comparing a computed F1 against `tau`.
const TAU_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub tau: f64,
    pub max_iterations: u32,
    pub seed: u64,
    /// Verified true positives shown per moderation prompt.
    pub tp_cap: usize,
    pub context_window: usize,
    pub integrity: IntegrityOptions,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            tau: 0.9,
            max_iterations: 10,
            seed: 0,
            tp_cap: crate::moderator::DEFAULT_TP_CAP,
            context_window: crate::discrepancy::DEFAULT_WINDOW,
            integrity: IntegrityOptions::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LoopError::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if self.max_iterations < 1 {
            return Err(LoopError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    /// The last refinement did not improve; its predecessor is final.
    NoGain,
    MaxIterations,
    NothingToModerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum Decision {
    Continue,
    Stop(StopReason),
}

/// Apply the stopping rules to the F1 history `iaa[0..=k]`.
pub fn decide_termination(iaa: &[f64], tau: f64, max_iterations: u32) -> Decision {
    let Some(&last) = iaa.last() else {
        return Decision::Continue;
    };
    let k = iaa.len() - 1;
    if last + TAU_EPSILON >= tau {
        return Decision::Stop(StopReason::Threshold);
    }
    if k > 0 && last <= iaa[k - 1] {
        return Decision::Stop(StopReason::NoGain);
    }
    if k >= max_iterations as usize {
        return Decision::Stop(StopReason::MaxIterations);
    }
    Decision::Continue
}

/// Index of the final accepted guideline after stopping at `k`.
pub fn accepted_iteration(k: u32, reason: StopReason) -> u32 {
    match reason {
        StopReason::NoGain => k - 1,
        _ => k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub k: u32,
    pub score: Score,
    pub counts: MatchCounts,
    pub decision: Decision,
    pub moderated: bool,
    /// Ledger slice of this iteration (ledger key `k + 1`).
    pub cost: IterationCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    Completed { reason: StopReason },
    Aborted { iteration: u32, stage: Stage, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub model_id: String,
    /// F1 of each evaluated iteration.
    pub history: Vec<f64>,
    /// k of the final accepted guideline; also the number of accepted
    /// moderation rounds.
    pub accepted_rounds: u32,
    pub final_score: Score,
    pub config: LoopConfig,
}

impl RunSummary {
    pub fn reached_threshold(&self) -> bool {
        matches!(self.status, RunStatus::Completed { reason: StopReason::Threshold })
    }
}

/// What the moderation record file holds for a failed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailedModeration {
    iteration: u32,
    stage: Option<Stage>,
    error: String,
    exchanges: Vec<StageExchange>,
}

pub struct Runner<'a> {
    pub gateway: &'a Gateway,
    pub annotator: &'a Annotator,
    pub moderator: &'a Moderator,
    pub corpus: &'a Corpus,
    pub config: LoopConfig,
    pub exec: Exec,
}

impl Runner<'_> {
    fn context_options(&self) -> ContextOptions {
        ContextOptions {
            window: self.config.context_window,
            ..ContextOptions::default()
        }
    }

    /// Move the gateway's fresh calls into `ledger` and persist it.
    fn absorb(&self, archive: &Archive, ledger: &mut CostLedger, k: u32, started: Instant) -> Result<(), LoopError> {
        let fresh = self.gateway.with_ledger(std::mem::take);
        let measured = self.gateway.mode() != Mode::Replay && !fresh.calls().is_empty();
        ledger.merge(&fresh);
        if measured {
            ledger.add_wall(k + 1, started.elapsed().as_secs_f64());
        }
        ledger.normalize();
        archive.write_ledger(ledger)
    }

    pub fn run(&self, archive_dir: &Path, g0: &Guideline) -> Result<RunSummary, LoopError> {
        self.config.validate()?;
        let archive = Archive::open(archive_dir)?;
        let model_id = self.annotator.model().model_id.clone();
        if let Some(done) = archive.summary()? {
            if matches!(done.status, RunStatus::Completed { .. }) && done.config == self.config && done.model_id == model_id {
                log::info!("{} is complete; nothing to do", archive_dir.display());
                return Ok(done);
            }
        }
        let mut ledger = archive.ledger()?;
        let opts = self.context_options();
        let mut guideline = archive.guideline(0)?.unwrap_or_else(|| Guideline::new(0, g0.text.clone()));
        let mut history: Vec<f64> = Vec::new();
        let mut scores: Vec<Score> = Vec::new();
        let mut k: u32 = 0;

        loop {
            let started = Instant::now();
            write_text(&archive.iter_dir(k).join("guideline.md"), &guideline.text)?;
            let preds = if archive.has_evaluation(k) {
                archive.predictions(k, self.corpus, &model_id)?
            } else {
                match annotate_corpus(self.gateway, self.annotator, &guideline, self.corpus, k, Some(&archive.pred_dir(k))) {
                    Ok(out) => out.sets,
                    Err(AnnotateError::Gateway { doc_id, source }) => {
                        self.absorb(&archive, &mut ledger, k, started)?;
                        let message = format!("{doc_id}: {source}");
                        return self.abort(&archive, &ledger, k, Stage::Annotate, message, &history, &scores);
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            let evaluation = evaluate_corpus(&preds, self.corpus.gold())?;
            let dir = archive.iter_dir(k);
            write_json(&dir.join("evaluation.json"), &EvaluationRecord::from(&evaluation))?;
            self.absorb(&archive, &mut ledger, k, started)?;

            let report = analyze(&preds, self.corpus, Some(self.annotator.schema()), &opts, self.exec)?;
            write_json(&dir.join("discrepancy.json"), &report)?;
            write_text(&dir.join("matrix.txt"), &report.matrix.render())?;

            history.push(evaluation.pooled.f1);
            scores.push(evaluation.pooled);
            log::info!("iteration {k}: F1 {:.4}", evaluation.pooled.f1);
            let mut decision = decide_termination(&history, self.config.tau, self.config.max_iterations);
            if decision == Decision::Continue && report.dominant.is_none() {
                decision = Decision::Stop(StopReason::NothingToModerate);
            }
            let mut state = IterationState {
                k,
                score: evaluation.pooled,
                counts: evaluation.pooled_counts,
                decision,
                moderated: false,
                cost: IterationCost::default(),
            };
            if let Decision::Stop(reason) = decision {
                state.cost = ledger.iteration(k + 1).copied().unwrap_or_default();
                write_json(&dir.join("state.json"), &state)?;
                return self.finish(&archive, &ledger, k, reason, &history, &scores, &model_id);
            }

            let key = report.dominant.clone().expect("checked above");
            let moderation_path = dir.join("moderation.json");
            let record: Option<ModerationRecord> = read_json(&moderation_path).ok().flatten();
            let next = match record {
                Some(r) if r.iteration == k && r.guideline_before.text == guideline.text => r.guideline_after,
                _ => {
                    let tps = select_verified_tps(
                        &evaluation,
                        self.corpus,
                        &key,
                        self.config.tp_cap,
                        self.config.seed.wrapping_add(u64::from(k)),
                        &opts,
                    );
                    let cases = report.group_cases(&key);
                    let started = Instant::now();
                    match self.moderator.moderate(self.gateway, k, &key, &cases, tps, &guideline) {
                        Ok(rec) => {
                            write_json(&moderation_path, &rec)?;
                            self.absorb(&archive, &mut ledger, k, started)?;
                            rec.guideline_after
                        }
                        Err(abort) => {
                            write_json(
                                &moderation_path,
                                &FailedModeration {
                                    iteration: k,
                                    stage: abort.error.stage(),
                                    error: abort.error.to_string(),
                                    exchanges: abort.exchanges,
                                },
                            )?;
                            self.absorb(&archive, &mut ledger, k, started)?;
                            let stage = match &abort.error {
                                ModerationError::EmptyGroup | ModerationError::Template(_) => Stage::ExplainPattern,
                                e => e.stage().expect("stage errors carry their stage"),
                            };
                            state.cost = ledger.iteration(k + 1).copied().unwrap_or_default();
                            write_json(&dir.join("state.json"), &state)?;
                            return self.abort(&archive, &ledger, k, stage, abort.error.to_string(), &history, &scores);
                        }
                    }
                }
            };
            state.moderated = true;
            state.cost = ledger.iteration(k + 1).copied().unwrap_or_default();
            write_json(&dir.join("state.json"), &state)?;
            guideline = Guideline::new(k + 1, next.text);
            k += 1;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        archive: &Archive,
        ledger: &CostLedger,
        k: u32,
        reason: StopReason,
        history: &[f64],
        scores: &[Score],
        model_id: &str,
    ) -> Result<RunSummary, LoopError> {
        let accepted = accepted_iteration(k, reason);
        let final_text = archive.guideline(accepted)?.map(|g| g.text).unwrap_or_default();
        write_text(&archive.root().join("final-guideline.md"), &final_text)?;
        let summary = RunSummary {
            status: RunStatus::Completed { reason },
            model_id: model_id.to_owned(),
            history: history.to_vec(),
            accepted_rounds: accepted,
            final_score: scores[accepted as usize],
            config: self.config.clone(),
        };
        archive.write_ledger(ledger)?;
        archive.write_summary(&summary)?;
        Ok(summary)
    }

    #[allow(clippy::too_many_arguments)]
    fn abort(
        &self,
        archive: &Archive,
        ledger: &CostLedger,
        k: u32,
        stage: Stage,
        message: String,
        history: &[f64],
        scores: &[Score],
    ) -> Result<RunSummary, LoopError> {
        log::error!("iteration {k} aborted at {stage}: {message}");
        // G_k stays the current guideline; it is final only if it was scored.
        let accepted = if (k as usize) < history.len() { k } else { k.saturating_sub(1) };
        let final_text = archive.guideline(accepted)?.map(|g| g.text).unwrap_or_default();
        write_text(&archive.root().join("final-guideline.md"), &final_text)?;
        let summary = RunSummary {
            status: RunStatus::Aborted {
                iteration: k,
                stage,
                message,
            },
            model_id: self.annotator.model().model_id.clone(),
            history: history.to_vec(),
            accepted_rounds: accepted,
            final_score: scores.get(accepted as usize).copied().unwrap_or_default(),
            config: self.config.clone(),
        };
        archive.write_ledger(ledger)?;
        archive.write_summary(&summary)?;
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn termination_rules() {
        assert_eq!(decide_termination(&[0.92], 0.9, 10), Decision::Stop(StopReason::Threshold));
        assert_eq!(decide_termination(&[0.60, 0.55], 0.9, 10), Decision::Stop(StopReason::NoGain));
        assert_eq!(accepted_iteration(1, StopReason::NoGain), 0);
        assert_eq!(decide_termination(&[0.46, 0.73, 0.76], 0.9, 10), Decision::Continue);
        assert_eq!(decide_termination(&[0.5, 0.5], 0.9, 10), Decision::Stop(StopReason::NoGain));
        assert_eq!(decide_termination(&[0.1, 0.2], 0.9, 1), Decision::Stop(StopReason::MaxIterations));
        assert_eq!(decide_termination(&[0.1], 0.9, 1), Decision::Continue);
        assert_eq!(decide_termination(&[0.9], 0.9, 1), Decision::Stop(StopReason::Threshold));
    }

    #[test]
    fn config_bounds() {
        assert!(LoopConfig::default().validate().is_ok());
        let bad = LoopConfig {
            tau: 0.0,
            ..LoopConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LoopConfig {
            max_iterations: 0,
            ..LoopConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
