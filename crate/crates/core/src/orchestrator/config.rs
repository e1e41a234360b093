//! TOML run configuration.
//!
//! ```toml
//! archive = "runs/ncbi-gpt5"
//! corpus = "data/ncbi/dev"
//! guideline = "data/ncbi/guideline.md"
//!
//! [[schema]]
//! name = "SpecificDisease"
//! definition = "A single, well-defined disease."
//!
//! [model]
//! family = "gpt"
//! model_id = "gpt-5-2025-08-07"
//! reasoning_options = { reasoning_effort = "high" }
//!
//! [provider]
//! endpoint = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [gateway]
//! mode = "replay"
//! fixtures = "fixtures/ncbi-gpt5"
//! parallelism = 4
//! price_table = "prices.csv"
//!
//! [loop]
//! tau = 0.9
//! max_iterations = 10
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::LoopConfig;
use crate::gateway::{Mode, ModelSpec, ProviderConfig};
use crate::schema::{EntitySchema, EntityType};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub annotation: Option<PathBuf>,
    pub explain_pattern: Option<PathBuf>,
    pub generate_principle: Option<PathBuf>,
    pub refine_guideline: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub mode: Mode,
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub price_table: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    4
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: Mode::Replay,
            fixtures: None,
            parallelism: default_parallelism(),
            price_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub archive: PathBuf,
    pub corpus: PathBuf,
    /// Initial guideline; absent means plain prompting with an empty one.
    pub guideline: Option<PathBuf>,
    pub schema: Vec<EntityType>,
    pub model: ModelSpec,
    #[serde(default)]
    pub decoding: BTreeMap<String, Value>,
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default, rename = "loop")]
    pub loop_: LoopConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.archive);
        resolve(base, &mut self.corpus);
        let optional = [
            &mut self.guideline,
            &mut self.templates.annotation,
            &mut self.templates.explain_pattern,
            &mut self.templates.generate_principle,
            &mut self.templates.refine_guideline,
            &mut self.gateway.fixtures,
            &mut self.gateway.price_table,
        ];
        for p in optional.into_iter().flatten() {
            resolve(base, p);
        }
    }

    pub fn entity_schema(&self) -> Result<EntitySchema, String> {
        let schema = EntitySchema {
            labels: self.schema.clone(),
        };
        schema.validate().map_err(|e| e.to_string())?;
        Ok(schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let text = r#"
archive = "out"
corpus = "dev"

[[schema]]
name = "Disease"
definition = "a disease"

[model]
family = "gemini"
model_id = "gemini-2.5-pro"
price_in = 1.25
price_out = 10.0

[gateway]
mode = "record"
fixtures = "fx"

[loop]
tau = 0.8
"#;
        let mut cfg = RunConfig::parse(text).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.archive, PathBuf::from("/base/out"));
        assert_eq!(cfg.gateway.fixtures, Some(PathBuf::from("/base/fx")));
        assert_eq!(cfg.gateway.mode, Mode::Record);
        assert_eq!(cfg.gateway.parallelism, 4);
        assert_eq!(cfg.loop_.tau, 0.8);
        assert_eq!(cfg.loop_.max_iterations, 10);
        assert_eq!(cfg.entity_schema().unwrap().labels.len(), 1);
        assert!(RunConfig::parse("archive = 1").is_err());
    }
}
