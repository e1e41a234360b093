//! `{{name}}` placeholder templates.
//!
//! Substitution is single-pass: text inserted for one placeholder is never
//! scanned again, so documents containing `{{...}}` render verbatim.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    Unresolved { template: String, name: String },
    #[error("template {template}: required placeholder {{{{{name}}}}} is absent")]
    MissingPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    segments: Vec<Segment>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Template {
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self, TemplateError> {
        let name = name.into();
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut rest = source;
        let mut consumed = 0;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let Some(close) = after.find("}}") else {
                return Err(TemplateError::Unterminated {
                    template: name,
                    offset: consumed + open,
                });
            };
            let ident = after[..close].trim();
            if is_ident(ident) {
                text.push_str(&rest[..open]);
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Slot(ident.to_owned()));
                consumed += open + 2 + close + 2;
                rest = &after[close + 2..];
            } else {
                // Literal braces, e.g. `{"annotations": []}` examples.
                text.push_str(&rest[..open + 1]);
                consumed += open + 1;
                rest = &rest[open + 1..];
            }
        }
        text.push_str(rest);
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(Template { name, segments })
    }

    pub fn load(name: impl Into<String>, path: &std::path::Path) -> Result<Self, TemplateError> {
        let source = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(name, &source)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Text(_) => None,
            })
            .collect();
        out.dedup();
        out
    }

    pub fn require(&self, names: &[&str]) -> Result<(), TemplateError> {
        let have = self.placeholders();
        match names.iter().find(|n| !have.contains(n)) {
            Some(n) => Err(TemplateError::MissingPlaceholder {
                template: self.name.clone(),
                name: (*n).to_owned(),
            }),
            None => Ok(()),
        }
    }

    /// The literal line right before and right after the line holding
    /// `{{slot}}`, if the slot stands alone on its line.
    pub fn delimiters_around(&self, slot: &str) -> Option<(String, String)> {
        let idx = self
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Slot(n) if n == slot))?;
        let before = match idx.checked_sub(1).map(|i| &self.segments[i]) {
            Some(Segment::Text(t)) => t,
            _ => return None,
        };
        let after = match self.segments.get(idx + 1) {
            Some(Segment::Text(t)) => t,
            _ => return None,
        };
        let before = before.strip_suffix('\n')?;
        let open = before.rsplit('\n').next()?.to_owned();
        let after = after.strip_prefix('\n')?;
        let close = after.split('\n').next()?.to_owned();
        Some((open, close))
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let v = values.get(name.as_str()).ok_or_else(|| TemplateError::Unresolved {
                        template: self.name.clone(),
                        name: name.clone(),
                    })?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }

    /// Copy of the template with the delimiter lines around `slot` replaced.
    pub fn with_delimiters(&self, slot: &str, open: &str, close: &str) -> Option<Template> {
        let (old_open, old_close) = self.delimiters_around(slot)?;
        let idx = self
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Slot(n) if n == slot))?;
        let mut t = self.clone();
        if let Segment::Text(before) = &mut t.segments[idx - 1] {
            let cut = before.len() - 1 - old_open.len();
            *before = format!("{}{open}\n", &before[..cut]);
        }
        if let Segment::Text(after) = &mut t.segments[idx + 1] {
            *after = format!("\n{close}{}", &after[1 + old_close.len()..]);
        }
        Some(t)
    }
}
