//! On-disk run archive.
//!
//! ```text
//! run.json                 summary, written when the run stops
//! ledger.json              cost ledger, rewritten after every step
//! final-guideline.md
//! iter-000/guideline.md    G_k
//! iter-000/evaluation.json scores of A_k against gold
//! iter-000/discrepancy.json
//! iter-000/matrix.txt
//! iter-000/moderation.json present when round k ran (or failed)
//! iter-000/state.json      written last; marks the iteration complete
//! pred-iter-0/             A_k in PubAnnotation form
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::{load_annotation_sets, AnnotationSets, Corpus, Provenance};
use crate::gateway::CostLedger;
use crate::guideline::Guideline;

use super::{IterationState, LoopError, RunSummary};

pub(crate) fn io_error(path: &Path, e: impl std::fmt::Display) -> LoopError {
    LoopError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LoopError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    write_text(path, &(body + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), LoopError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, LoopError> {
    match fs::read_to_string(path) {
        Ok(raw) => serde_json::from_str(&raw).map(Some).map_err(|e| io_error(path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_error(path, e)),
    }
}

#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
}

impl Archive {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LoopError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_error(&root, e))?;
        Ok(Archive { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn iter_dir(&self, k: u32) -> PathBuf {
        self.root.join(format!("iter-{k:03}"))
    }

    pub fn pred_dir(&self, k: u32) -> PathBuf {
        self.root.join(format!("pred-iter-{k}"))
    }

    pub fn summary(&self) -> Result<Option<RunSummary>, LoopError> {
        read_json(&self.root.join("run.json"))
    }

    pub fn write_summary(&self, summary: &RunSummary) -> Result<(), LoopError> {
        write_json(&self.root.join("run.json"), summary)
    }

    pub fn ledger(&self) -> Result<CostLedger, LoopError> {
        Ok(read_json(&self.root.join("ledger.json"))?.unwrap_or_default())
    }

    pub fn write_ledger(&self, ledger: &CostLedger) -> Result<(), LoopError> {
        write_json(&self.root.join("ledger.json"), ledger)
    }

    pub fn state(&self, k: u32) -> Result<Option<IterationState>, LoopError> {
        read_json(&self.iter_dir(k).join("state.json"))
    }

    pub fn states(&self) -> Result<Vec<IterationState>, LoopError> {
        let mut out = Vec::new();
        let mut k = 0;
        while let Some(s) = self.state(k)? {
            out.push(s);
            k += 1;
        }
        Ok(out)
    }

    pub fn guideline(&self, k: u32) -> Result<Option<Guideline>, LoopError> {
        let path = self.iter_dir(k).join("guideline.md");
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(Guideline::new(k, text))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_error(&path, e)),
        }
    }

    pub fn has_evaluation(&self, k: u32) -> bool {
        self.iter_dir(k).join("evaluation.json").is_file()
    }

    pub fn predictions(&self, k: u32, corpus: &Corpus, model_id: &str) -> Result<AnnotationSets, LoopError> {
        let provenance = Provenance::Predicted {
            iteration: k,
            model_id: model_id.to_owned(),
        };
        Ok(load_annotation_sets(&self.pred_dir(k), corpus, provenance)?)
    }
}
