//! Guideline documents, their section structure, and integrity checks.
//!
//! A heading is either an ATX line (`# Title`, up to six `#`) or a line that
//! is bold as a whole (`**Title**` or `__Title__`). Headings compare after
//! normalization: markup and leading numbering are stripped, case and
//! whitespace folded, so renumbering alone is not a change.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guideline {
    pub version: u32,
    pub text: String,
    pub section_index: Vec<String>,
}

impl Guideline {
    pub fn new(version: u32, text: impl Into<String>) -> Self {
        let text = text.into();
        let section_index = parse_headings(&text);
        Guideline {
            version,
            text,
            section_index,
        }
    }

    /// The empty guideline used for plain prompting.
    pub fn empty() -> Self {
        Self::new(0, "")
    }

    pub fn sections(&self) -> Vec<Section> {
        split_sections(&self.text)
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Display text of a heading line, or `None` for ordinary lines.
pub fn heading_of(line: &str) -> Option<String> {
    let t = line.trim();
    let hashes = t.chars().take_while(|&c| c == '#').count();
    if (1..=6).contains(&hashes) {
        let rest = &t[hashes..];
        if rest.starts_with(char::is_whitespace) {
            let h = rest.trim().trim_end_matches('#').trim();
            return (!h.is_empty()).then(|| h.to_owned());
        }
    }
    for m in ["**", "__"] {
        if t.len() > 2 * m.len() && t.starts_with(m) && t.ends_with(m) {
            let inner = &t[m.len()..t.len() - m.len()];
            if !inner.contains(m) && !inner.trim().is_empty() {
                return Some(inner.trim().to_owned());
            }
        }
    }
    None
}

pub fn parse_headings(text: &str) -> Vec<String> {
    text.lines().filter_map(heading_of).collect()
}

fn numbering() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[#§\s]*(?:\d+(?:\.\d+)*(?:[.):]\s*|\s+))?").unwrap())
}

/// Comparison key for a heading.
pub fn normalize_heading(heading: &str) -> String {
    let plain: String = heading.chars().filter(|c| !matches!(c, '*' | '`')).collect();
    let stripped = numbering().replace(&plain, "");
    let folded = stripped.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    folded.trim_end_matches([':', '.']).trim().to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// `None` for text before the first heading.
    pub heading: Option<String>,
    pub body: String,
}

pub fn split_sections(text: &str) -> Vec<Section> {
    let mut out = Vec::new();
    let mut current = Section {
        heading: None,
        body: String::new(),
    };
    for line in text.lines() {
        if let Some(h) = heading_of(line) {
            if current.heading.is_some() || !current.body.trim().is_empty() {
                out.push(current);
            }
            current = Section {
                heading: Some(h),
                body: String::new(),
            };
        } else {
            current.body.push_str(line);
            current.body.push('\n');
        }
    }
    if current.heading.is_some() || !current.body.trim().is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityOptions {
    pub min_length_ratio: f64,
    /// Allowed heading renames, old heading to new heading.
    #[serde(default)]
    pub renames: BTreeMap<String, String>,
}

impl Default for IntegrityOptions {
    fn default() -> Self {
        IntegrityOptions {
            min_length_ratio: 0.9,
            renames: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionAddition {
    pub heading: String,
    /// Heading right before the new section, if any.
    pub after: Option<String>,
    /// Heading right after the new section, if any.
    pub before: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub passed: bool,
    pub missing: Vec<String>,
    pub renamed: Vec<(String, String)>,
    pub added: Vec<SectionAddition>,
    pub changed: Vec<String>,
    pub length_before: usize,
    pub length_after: usize,
    pub violations: Vec<String>,
}

fn folded_body(body: &str) -> String {
    body.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn check_integrity(before: &Guideline, after: &Guideline, opts: &IntegrityOptions) -> IntegrityReport {
    let after_keys: BTreeSet<String> = after.section_index.iter().map(|h| normalize_heading(h)).collect();
    let renames: BTreeMap<String, String> = opts
        .renames
        .iter()
        .map(|(a, b)| (normalize_heading(a), normalize_heading(b)))
        .collect();

    let mut missing = Vec::new();
    let mut renamed = Vec::new();
    let mut matched: BTreeSet<String> = BTreeSet::new();
    for h in &before.section_index {
        let key = normalize_heading(h);
        if after_keys.contains(&key) {
            matched.insert(key);
        } else if let Some(target) = renames.get(&key).filter(|t| after_keys.contains(*t)) {
            let shown = after
                .section_index
                .iter()
                .find(|a| normalize_heading(a) == *target)
                .cloned()
                .unwrap_or_default();
            renamed.push((h.clone(), shown));
            matched.insert(target.clone());
        } else {
            missing.push(h.clone());
        }
    }

    let mut added = Vec::new();
    for (i, h) in after.section_index.iter().enumerate() {
        if !matched.contains(&normalize_heading(h)) {
            added.push(SectionAddition {
                heading: h.clone(),
                after: i.checked_sub(1).map(|j| after.section_index[j].clone()),
                before: after.section_index.get(i + 1).cloned(),
            });
        }
    }

    let after_bodies: BTreeMap<String, String> = after
        .sections()
        .into_iter()
        .filter_map(|s| s.heading.map(|h| (normalize_heading(&h), folded_body(&s.body))))
        .collect();
    let mut changed = Vec::new();
    for s in before.sections() {
        let Some(h) = s.heading else { continue };
        let key = normalize_heading(&h);
        let key = renames.get(&key).cloned().unwrap_or(key);
        if let Some(body) = after_bodies.get(&key) {
            if *body != folded_body(&s.body) {
                changed.push(h);
            }
        }
    }

    let length_before = before.char_len();
    let length_after = after.char_len();
    let mut violations = Vec::new();
    for h in &missing {
        violations.push(format!("heading dropped: {h}"));
    }
    if (length_after as f64) < opts.min_length_ratio * length_before as f64 {
        violations.push(format!(
            "guideline shrank from {length_before} to {length_after} characters (minimum ratio {})",
            opts.min_length_ratio
        ));
    }
    IntegrityReport {
        passed: violations.is_empty(),
        missing,
        renamed,
        added,
        changed,
        length_before,
        length_after,
        violations,
    }
}
