//! Paired document-level significance tests and cost projection.
//!
//! Both tests compare two runs over the same documents (an unrefined run `G`
//! and a moderated run `M`) on the pooled strict F1 difference
//! `F1(M) - F1(G)`, one-sided for `M > G`. Every replicate draws from its own
//! ChaCha8 stream (`seed`, stream = replicate index), so results do not
//! depend on the execution strategy.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{score_from_counts, CorpusEvaluation, EvaluationRecord, MatchCounts};
use crate::exec::Exec;
use crate::gateway::CostLedger;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 5_000;
pub const DEFAULT_PERMUTATIONS: usize = 20_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 paired documents, got {0}")]
    TooFewDocuments(usize),
    #[error("the two runs cover different documents ({0})")]
    DocumentSetMismatch(String),
    #[error("replicate count must be positive")]
    NoReplicates,
    #[error("cost ledger has no entry for iteration {0}")]
    MissingIteration(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedDoc {
    pub doc_id: String,
    pub g: MatchCounts,
    pub m: MatchCounts,
}

/// Per-document counts of two runs over one document set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedDocCounts {
    pub docs: Vec<PairedDoc>,
}

impl PairedDocCounts {
    pub fn new(docs: Vec<PairedDoc>) -> Self {
        PairedDocCounts { docs }
    }

    /// Pair two evaluations of the same documents.
    pub fn from_evaluations(g: &CorpusEvaluation, m: &CorpusEvaluation) -> Result<Self, StatsError> {
        if g.documents.len() != m.documents.len() {
            return Err(StatsError::DocumentSetMismatch(format!(
                "{} vs {} documents",
                g.documents.len(),
                m.documents.len()
            )));
        }
        let docs = g
            .documents
            .iter()
            .zip(&m.documents)
            .map(|(a, b)| {
                if a.doc_id != b.doc_id {
                    return Err(StatsError::DocumentSetMismatch(format!("{} vs {}", a.doc_id, b.doc_id)));
                }
                Ok(PairedDoc {
                    doc_id: a.doc_id.clone(),
                    g: a.counts,
                    m: b.counts,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(PairedDocCounts { docs })
    }

    /// Pair two persisted evaluations; both must cover the same documents.
    pub fn from_records(g: &EvaluationRecord, m: &EvaluationRecord) -> Result<Self, StatsError> {
        if g.documents.keys().ne(m.documents.keys()) {
            return Err(StatsError::DocumentSetMismatch(format!(
                "{} vs {} documents with differing ids",
                g.documents.len(),
                m.documents.len()
            )));
        }
        Ok(PairedDocCounts {
            docs: g
                .documents
                .iter()
                .zip(m.documents.values())
                .map(|((id, a), b)| PairedDoc {
                    doc_id: id.clone(),
                    g: *a,
                    m: *b,
                })
                .collect(),
        })
    }

    /// The same data with the roles of the two runs exchanged.
    pub fn swapped(&self) -> Self {
        PairedDocCounts {
            docs: self
                .docs
                .iter()
                .map(|d| PairedDoc {
                    doc_id: d.doc_id.clone(),
                    g: d.m,
                    m: d.g,
                })
                .collect(),
        }
    }

    pub fn pooled(&self) -> (MatchCounts, MatchCounts) {
        (
            self.docs.iter().map(|d| d.g).sum(),
            self.docs.iter().map(|d| d.m).sum(),
        )
    }

    /// Observed `F1(M) - F1(G)`.
    pub fn delta(&self) -> f64 {
        let (g, m) = self.pooled();
        pooled_delta(g, m)
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.docs.len() < 2 {
            return Err(StatsError::TooFewDocuments(self.docs.len()));
        }
        Ok(())
    }
}

fn pooled_delta(g: MatchCounts, m: MatchCounts) -> f64 {
    score_from_counts(m).f1 - score_from_counts(g).f1
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

pub fn bootstrap_p(paired: &PairedDocCounts, iterations: usize, seed: u64) -> Result<f64, StatsError> {
    bootstrap_p_with(paired, iterations, seed, Exec::default())
}

/// `(#{Δ* ≤ 0} + 1) / (B + 1)` over `B` document resamples with replacement.
pub fn bootstrap_p_with(paired: &PairedDocCounts, iterations: usize, seed: u64, exec: Exec) -> Result<f64, StatsError> {
    paired.check()?;
    if iterations == 0 {
        return Err(StatsError::NoReplicates);
    }
    let n = paired.docs.len();
    let hits = exec
        .map_range(iterations, |r| {
            let mut rng = replicate_rng(seed, r);
            let mut g = MatchCounts::default();
            let mut m = MatchCounts::default();
            for _ in 0..n {
                let d = &paired.docs[rng.random_range(0..n)];
                g += d.g;
                m += d.m;
            }
            pooled_delta(g, m) <= 0.0
        })
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

pub fn randomization_p(paired: &PairedDocCounts, permutations: usize, seed: u64) -> Result<f64, StatsError> {
    randomization_p_with(paired, permutations, seed, Exec::default())
}

/// `(#{Δ_r ≥ Δ_obs} + 1) / (R + 1)` where each permutation swaps the two
/// runs' counts on every document independently with probability 1/2.
pub fn randomization_p_with(
    paired: &PairedDocCounts,
    permutations: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64, StatsError> {
    paired.check()?;
    if permutations == 0 {
        return Err(StatsError::NoReplicates);
    }
    let observed = paired.delta();
    let hits = exec
        .map_range(permutations, |r| {
            let mut rng = replicate_rng(seed, r);
            let mut g = MatchCounts::default();
            let mut m = MatchCounts::default();
            for d in &paired.docs {
                if rng.next_u64() & 1 == 1 {
                    g += d.m;
                    m += d.g;
                } else {
                    g += d.g;
                    m += d.m;
                }
            }
            pooled_delta(g, m) >= observed
        })
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub g_f1: f64,
    pub m_f1: f64,
    pub delta_observed: f64,
    pub p_bootstrap: f64,
    pub p_randomization: f64,
    pub bootstrap_iterations: usize,
    pub permutations: usize,
    pub seed: u64,
}

pub fn significance(
    paired: &PairedDocCounts,
    bootstrap_iterations: usize,
    permutations: usize,
    seed: u64,
    exec: Exec,
) -> Result<TestResult, StatsError> {
    let (g, m) = paired.pooled();
    Ok(TestResult {
        g_f1: score_from_counts(g).f1,
        m_f1: score_from_counts(m).f1,
        delta_observed: paired.delta(),
        p_bootstrap: bootstrap_p_with(paired, bootstrap_iterations, seed, exec)?,
        p_randomization: randomization_p_with(paired, permutations, seed, exec)?,
        bootstrap_iterations,
        permutations,
        seed,
    })
}

/// Tab-separated rows: dataset, model, G, M, Δ, bootstrap p, AR p.
pub fn render_significance(rows: &[(String, String, TestResult)]) -> String {
    let mut out = String::from("dataset\tmodel\tG\tM\tdelta\tbootstrap_p\tar_p\n");
    for (dataset, model, t) in rows {
        out.push_str(&format!(
            "{dataset}\t{model}\t{:.4}\t{:.4}\t{:+.4}\t{:.4}\t{:.5}\n",
            t.g_f1, t.m_f1, t.delta_observed, t.p_bootstrap, t.p_randomization
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProjection {
    pub iterations: u32,
    /// `i · c_i`
    pub projected_cost: f64,
    /// `i · t_i`, minutes
    pub projected_minutes: f64,
    /// Summed over every iteration in the ledger.
    pub actual_cost: f64,
    pub actual_minutes: f64,
}

/// Project total cost and time from the final iteration `i`.
pub fn project_cost(ledger: &CostLedger, iterations: u32) -> Result<CostProjection, StatsError> {
    let last = ledger
        .iteration(iterations)
        .ok_or(StatsError::MissingIteration(iterations))?;
    let i = f64::from(iterations);
    Ok(CostProjection {
        iterations,
        projected_cost: i * last.cost,
        projected_minutes: i * last.minutes(),
        actual_cost: ledger.total_cost(),
        actual_minutes: ledger.total_minutes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{record_cost, CompletionResponse, Family, ModelSpec};

    type Row = ((usize, usize, usize), (usize, usize, usize));

    fn paired(rows: &[Row]) -> PairedDocCounts {
        PairedDocCounts::new(
            rows.iter()
                .enumerate()
                .map(|(i, (g, m))| PairedDoc {
                    doc_id: format!("d{i}"),
                    g: MatchCounts::new(g.0, g.1, g.2),
                    m: MatchCounts::new(m.0, m.1, m.2),
                })
                .collect(),
        )
    }

    #[test]
    fn too_few_documents() {
        let one = paired(&[((1, 0, 0), (1, 0, 0))]);
        assert_eq!(bootstrap_p(&one, 10, 0), Err(StatsError::TooFewDocuments(1)));
        assert_eq!(randomization_p(&one, 10, 0), Err(StatsError::TooFewDocuments(1)));
    }

    #[test]
    fn identical_runs_are_not_significant() {
        let p = paired(&[((3, 1, 2), (3, 1, 2)), ((5, 0, 1), (5, 0, 1)), ((0, 2, 2), (0, 2, 2))]);
        assert_eq!(p.delta(), 0.0);
        assert_eq!(bootstrap_p(&p, 500, 1).unwrap(), 1.0);
        assert_eq!(randomization_p(&p, 500, 1).unwrap(), 1.0);
    }

    #[test]
    fn dominating_run_is_significant_and_one_sided() {
        let p = paired(&[
            ((3, 1, 2), (5, 1, 0)),
            ((5, 0, 1), (6, 0, 0)),
            ((2, 2, 2), (4, 2, 0)),
            ((1, 0, 3), (4, 0, 0)),
            ((4, 1, 1), (5, 1, 0)),
            ((2, 0, 2), (4, 0, 0)),
            ((3, 3, 3), (6, 3, 0)),
            ((1, 1, 1), (2, 1, 0)),
            ((6, 0, 2), (8, 0, 0)),
            ((2, 1, 4), (6, 1, 0)),
        ]);
        let b = bootstrap_p(&p, 2000, 3).unwrap();
        assert!(b <= 3.0 / 2001.0, "{b}");
        let rev = randomization_p(&p.swapped(), 2000, 3).unwrap();
        assert!(rev > 0.95, "{rev}");
    }

    #[test]
    fn strategies_agree() {
        let p = paired(&[((3, 1, 2), (4, 1, 1)), ((5, 0, 1), (4, 1, 2)), ((2, 2, 2), (3, 1, 1))]);
        assert_eq!(
            bootstrap_p_with(&p, 300, 9, Exec::Sequential).unwrap(),
            bootstrap_p_with(&p, 300, 9, Exec::Parallel).unwrap()
        );
        assert_eq!(
            randomization_p_with(&p, 300, 9, Exec::Sequential).unwrap(),
            randomization_p_with(&p, 300, 9, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn projection_at_one_iteration_is_identity() {
        let mut ledger = CostLedger::default();
        let mut model = ModelSpec::new(Family::Other, "m");
        model.price_in = 1.0;
        let resp = CompletionResponse {
            text: String::new(),
            input_tokens: 250_000,
            output_tokens: 0,
            latency_secs: 90.0,
        };
        record_cost(&mut ledger, &resp, &model, 1);
        let p = project_cost(&ledger, 1).unwrap();
        assert_eq!(p.projected_cost, 0.25);
        assert_eq!(p.projected_minutes, 1.5);
        assert_eq!(project_cost(&ledger, 2), Err(StatsError::MissingIteration(2)));
    }
}
