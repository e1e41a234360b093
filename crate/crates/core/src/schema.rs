use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityType {
    pub name: Label,
    #[serde(default)]
    pub definition: String,
}

/// Ordered entity-type inventory of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySchema {
    pub labels: Vec<EntityType>,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("entity schema declares no labels")]
    Empty,
    #[error("entity schema has an empty label name")]
    EmptyName,
    #[error("entity schema declares {0} twice")]
    Duplicate(Label),
}

impl EntitySchema {
    pub fn new<I, N, D>(labels: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = (N, D)>,
        N: Into<String>,
        D: Into<String>,
    {
        let schema = EntitySchema {
            labels: labels
                .into_iter()
                .map(|(n, d)| EntityType {
                    name: Label::new(n),
                    definition: d.into(),
                })
                .collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.labels.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.labels {
            if t.name.as_str().trim().is_empty() {
                return Err(SchemaError::EmptyName);
            }
            if !seen.insert(&t.name) {
                return Err(SchemaError::Duplicate(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.labels.iter().any(|t| &t.name == label)
    }

    pub fn names(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter().map(|t| &t.name)
    }

    /// `- Name: definition` lines, one per label.
    pub fn render(&self) -> String {
        self.labels
            .iter()
            .map(|t| {
                if t.definition.is_empty() {
                    format!("- {}", t.name)
                } else {
                    format!("- {}: {}", t.name, t.definition)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_empty_names() {
        assert!(matches!(
            EntitySchema::new([("A", ""), ("A", "")]),
            Err(SchemaError::Duplicate(_))
        ));
        assert!(matches!(EntitySchema::new([(" ", "")]), Err(SchemaError::EmptyName)));
        let s = EntitySchema::new([("Chemical", "drugs"), ("Disease", "")]).unwrap();
        assert_eq!(s.render(), "- Chemical: drugs\n- Disease");
    }
}
