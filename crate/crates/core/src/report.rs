//! Tables built from run archives.

use std::path::Path;

use crate::eval::{EvaluationRecord, MatchCounts, Score};
use crate::gateway::CostLedger;
use crate::orchestrator::{read_json, Archive, IterationState, LoopError, RunSummary};
use crate::stats::{project_cost, CostProjection, StatsError};

/// One (dataset, model, mode) row: mode is `S` (no guideline), `G`
/// (initial guideline) or `M` (moderated).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub score: Score,
    pub counts: MatchCounts,
    /// Accepted moderation rounds, for `M` rows.
    pub iterations: Option<u32>,
}

pub fn render_results(rows: &[ResultRow]) -> String {
    let mut out = String::from("# #Iters counts accepted moderation rounds; a discarded final refinement is not counted.\n");
    out.push_str("dataset\tmodel\tmode\tP\tR\tF1\tTP\tgold\t#Iters\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
            r.dataset,
            r.model,
            r.mode,
            r.score.precision,
            r.score.recall,
            r.score.f1,
            r.counts.tp,
            r.counts.gold_total(),
            r.iterations.map_or_else(|| "-".to_owned(), |i| i.to_string())
        ));
    }
    out
}

/// A loaded run archive.
#[derive(Debug, Clone)]
pub struct RunView {
    pub archive: Archive,
    pub summary: RunSummary,
    pub states: Vec<IterationState>,
    pub ledger: CostLedger,
}

impl RunView {
    pub fn load(dir: &Path) -> Result<Self, LoopError> {
        let archive = Archive::open(dir)?;
        let summary = archive.summary()?.ok_or_else(|| LoopError::Io {
            path: dir.join("run.json").display().to_string(),
            message: "missing run summary".into(),
        })?;
        let states = archive.states()?;
        let ledger = archive.ledger()?;
        Ok(RunView {
            archive,
            summary,
            states,
            ledger,
        })
    }

    pub fn evaluation(&self, k: u32) -> Result<EvaluationRecord, LoopError> {
        let path = self.archive.iter_dir(k).join("evaluation.json");
        read_json(&path)?.ok_or_else(|| LoopError::Io {
            path: path.display().to_string(),
            message: "missing evaluation".into(),
        })
    }

    pub fn matrix(&self, k: u32) -> Result<String, LoopError> {
        let path = self.archive.iter_dir(k).join("matrix.txt");
        std::fs::read_to_string(&path).map_err(|e| LoopError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn row(&self, dataset: &str, mode: &str, k: u32, iterations: Option<u32>) -> Result<ResultRow, LoopError> {
        let e = self.evaluation(k)?;
        Ok(ResultRow {
            dataset: dataset.to_owned(),
            model: self.summary.model_id.clone(),
            mode: mode.to_owned(),
            score: e.pooled,
            counts: e.pooled_counts,
            iterations,
        })
    }

    /// The `G` row (iteration 0) and the `M` row (final accepted guideline).
    pub fn result_rows(&self, dataset: &str) -> Result<Vec<ResultRow>, LoopError> {
        let m = self.summary.accepted_rounds;
        Ok(vec![self.row(dataset, "G", 0, None)?, self.row(dataset, "M", m, Some(m))?])
    }

    /// An `S` row from a run started with an empty guideline.
    pub fn baseline_row(&self, dataset: &str) -> Result<ResultRow, LoopError> {
        self.row(dataset, "S", 0, None)
    }

    /// Projection from the last ledger iteration.
    pub fn cost(&self) -> Result<CostProjection, StatsError> {
        let last = self.ledger.iterations().map(|(k, _)| k).max().unwrap_or(0);
        project_cost(&self.ledger, last)
    }
}

pub fn render_costs(rows: &[(String, String, CostProjection)]) -> String {
    let mut out = String::from("dataset\tmodel\ti\tc_i\tt_i_min\tC_proc\tT_proc_min\tC_actual\tT_actual_min\n");
    for (dataset, model, p) in rows {
        let i = f64::from(p.iterations.max(1));
        out.push_str(&format!(
            "{dataset}\t{model}\t{}\t{:.4}\t{:.2}\t{:.4}\t{:.2}\t{:.4}\t{:.2}\n",
            p.iterations,
            p.projected_cost / i,
            p.projected_minutes / i,
            p.projected_cost,
            p.projected_minutes,
            p.actual_cost,
            p.actual_minutes
        ));
    }
    out
}
