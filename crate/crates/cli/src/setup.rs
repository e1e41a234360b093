//! Building runtime objects from a run configuration.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use guidemod::annotator::{Annotator, DEFAULT_TEMPLATE};
use guidemod::corpus::load_corpus;
use guidemod::gateway::{FixtureStore, Gateway, Mode, ModelSpec, OpenAiCompatible, PriceTable, Provider};
use guidemod::moderator::{Moderator, EXPLAIN_TEMPLATE, PRINCIPLE_TEMPLATE, REFINE_TEMPLATE};
use guidemod::orchestrator::RunConfig;
use guidemod::template::Template;
use guidemod::{Corpus, EntitySchema, Guideline};

pub struct Setup {
    pub config: RunConfig,
    pub schema: EntitySchema,
    pub model: ModelSpec,
}

impl Setup {
    pub fn load(path: &Path) -> Result<Self> {
        let config = RunConfig::load(path).map_err(anyhow::Error::msg)?;
        let schema = config.entity_schema().map_err(anyhow::Error::msg)?;
        let mut model = config.model.clone();
        if let Some(table) = &config.gateway.price_table {
            let table = PriceTable::load(table).map_err(anyhow::Error::msg)?;
            if !table.apply(&mut model) {
                log::warn!("{} is not in the price table; costs use the configured prices", model.model_id);
            }
        }
        model.validate()?;
        Ok(Setup { config, schema, model })
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let gw = &self.config.gateway;
        let store = match &gw.fixtures {
            Some(dir) => Some(FixtureStore::open(dir).map_err(anyhow::Error::msg)?),
            None if gw.mode == Mode::Live => None,
            None => bail!("gateway mode {:?} needs a fixtures directory", gw.mode),
        };
        let provider: Option<Arc<dyn Provider>> = match (&self.config.provider, gw.mode) {
            (_, Mode::Replay) => None,
            (Some(p), _) => Some(Arc::new(OpenAiCompatible::new(p.clone())?)),
            (None, mode) => bail!("gateway mode {mode:?} needs a [provider] section"),
        };
        Ok(Gateway::new(gw.mode, store, provider).with_parallelism(gw.parallelism))
    }

    pub fn annotator(&self) -> Result<Annotator> {
        let template = template("annotation", self.config.templates.annotation.as_deref(), DEFAULT_TEMPLATE)?;
        let mut a = Annotator::new(template, self.schema.clone(), self.model.clone())?;
        a.decoding = self.config.decoding.clone();
        Ok(a)
    }

    pub fn moderator(&self) -> Result<Moderator> {
        let t = &self.config.templates;
        let mut m = Moderator::with_templates(
            template("explain_pattern", t.explain_pattern.as_deref(), EXPLAIN_TEMPLATE)?,
            template("generate_principle", t.generate_principle.as_deref(), PRINCIPLE_TEMPLATE)?,
            template("refine_guideline", t.refine_guideline.as_deref(), REFINE_TEMPLATE)?,
            self.model.clone(),
            self.schema.clone(),
        )?;
        m.integrity = self.config.loop_.integrity.clone();
        m.decoding = self.config.decoding.clone();
        Ok(m)
    }

    pub fn corpus(&self, over: Option<&Path>) -> Result<Corpus> {
        let dir = over.unwrap_or(&self.config.corpus);
        let (corpus, _) = load_corpus(dir).with_context(|| format!("loading {}", dir.display()))?;
        corpus.check_labels(&self.schema)?;
        Ok(corpus)
    }

    pub fn guideline(&self, over: Option<&Path>, version: u32) -> Result<Guideline> {
        match over.or(self.config.guideline.as_deref()) {
            Some(path) => read_guideline(path, version),
            None => Ok(Guideline::empty()),
        }
    }
}

pub fn read_guideline(path: &Path, version: u32) -> Result<Guideline> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Guideline::new(version, text))
}

fn template(name: &str, path: Option<&Path>, bundled: &str) -> Result<Template> {
    Ok(match path {
        Some(p) => Template::load(name, p)?,
        None => Template::parse(name, bundled)?,
    })
}
