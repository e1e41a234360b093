//! Fixed-format parsers for the moderation stage replies.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternInsight {
    pub pattern_name: String,
    pub confusion_trigger: String,
    pub contrastive_evidence: String,
    pub proposed_rule: String,
}

impl PatternInsight {
    pub fn render(&self) -> String {
        format!(
            "Pattern Name: {}\nConfusion Trigger: {}\nContrastive Evidence: {}\nRule (Proposed): {}",
            self.pattern_name, self.confusion_trigger, self.contrastive_evidence, self.proposed_rule
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principle {
    pub if_clause: String,
    pub then_clause: String,
    pub except_clause: String,
}

impl Principle {
    pub fn render(&self) -> String {
        format!("IF {}\nTHEN {}\nEXCEPT {}", self.if_clause, self.then_clause, self.except_clause)
    }
}

const INSIGHT_FIELDS: [&str; 4] = ["Pattern Name", "Confusion Trigger", "Contrastive Evidence", "Rule (Proposed)"];

fn insight_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s>#*_\-]*(pattern name|confusion trigger|contrastive evidence|rule \(proposed\)|proposed rule)[\s*_]*:[\s*_]*(.*)$",
        )
        .unwrap()
    })
}

fn principle_keyword() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\s>*_\-]*(IF|THEN|EXCEPT)\b[\s*_:]*(.*)$").unwrap())
}

fn inline_keyword() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(IF|THEN|EXCEPT)\b").unwrap())
}

/// Trim whitespace, stray emphasis markers and LaTeX-style line breaks.
fn clean(value: &str) -> String {
    let joined = value
        .lines()
        .map(|l| l.trim().trim_end_matches("\\\\").trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    joined.trim_matches(|c: char| c.is_whitespace() || c == '*' || c == '_').to_owned()
}

fn canonical_field(label: &str) -> usize {
    match label.to_lowercase().as_str() {
        "pattern name" => 0,
        "confusion trigger" => 1,
        "contrastive evidence" => 2,
        _ => 3,
    }
}

pub fn parse_insight(text: &str) -> Result<PatternInsight, String> {
    let mut fields: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(c) = insight_label().captures(line) {
            let idx = canonical_field(&c[1]);
            if fields[idx].is_some() {
                // A second pattern starts; only the first is kept.
                if idx == 0 {
                    break;
                }
                current = None;
                continue;
            }
            fields[idx] = Some(c[2].to_owned());
            current = Some(idx);
        } else if let Some(idx) = current {
            let f = fields[idx].as_mut().expect("current field is set");
            f.push('\n');
            f.push_str(line);
        }
    }
    let mut values = Vec::with_capacity(4);
    for (i, f) in fields.into_iter().enumerate() {
        match f.map(|v| clean(&v)) {
            Some(v) if !v.is_empty() => values.push(v),
            Some(_) => return Err(format!("field \"{}\" is empty", INSIGHT_FIELDS[i])),
            None => return Err(format!("missing field \"{}\"", INSIGHT_FIELDS[i])),
        }
    }
    let mut it = values.into_iter();
    Ok(PatternInsight {
        pattern_name: it.next().unwrap(),
        confusion_trigger: it.next().unwrap(),
        contrastive_evidence: it.next().unwrap(),
        proposed_rule: it.next().unwrap(),
    })
}

fn keyword_index(k: &str) -> usize {
    match k {
        "IF" => 0,
        "THEN" => 1,
        _ => 2,
    }
}

fn clauses_by_line(text: &str) -> [Option<String>; 3] {
    let mut clauses: [Option<String>; 3] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(c) = principle_keyword().captures(line) {
            let idx = keyword_index(&c[1]);
            if clauses[idx].is_some() {
                current = None;
                continue;
            }
            clauses[idx] = Some(c[2].to_owned());
            current = Some(idx);
        } else if let Some(idx) = current {
            let cl = clauses[idx].as_mut().expect("current clause is set");
            cl.push('\n');
            cl.push_str(line);
        }
    }
    clauses
}

fn clauses_inline(text: &str) -> [Option<String>; 3] {
    let mut clauses: [Option<String>; 3] = Default::default();
    let marks: Vec<(usize, usize, usize)> = inline_keyword()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(1).unwrap();
            (keyword_index(m.as_str()), m.start(), m.end())
        })
        .collect();
    for (n, &(idx, _, end)) in marks.iter().enumerate() {
        if clauses[idx].is_some() {
            continue;
        }
        let stop = marks.get(n + 1).map_or(text.len(), |m| m.1);
        clauses[idx] = Some(text[end..stop].to_owned());
    }
    clauses
}

fn clause(raw: Option<String>) -> Option<String> {
    raw.map(|c| {
        clean(&c)
            .trim_start_matches(':')
            .trim()
            .trim_end_matches([';', ','])
            .trim()
            .to_owned()
    })
    .filter(|c| !c.is_empty())
}

pub fn parse_principle(text: &str) -> Result<Principle, String> {
    let mut clauses = clauses_by_line(text);
    if clauses[0].is_none() {
        clauses = clauses_inline(text);
    }
    let [i, t, e] = clauses.map(clause);
    let if_clause = i.ok_or("missing IF clause")?;
    let then_clause = t.ok_or("missing THEN clause")?;
    let except_clause = e.ok_or("missing EXCEPT clause (a negative constraint is required)")?;
    Ok(Principle {
        if_clause,
        then_clause,
        except_clause,
    })
}

/// Body of a reply that is a single fenced block, else the trimmed reply.
pub fn unfence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        if let Some(inner) = rest.strip_suffix("```") {
            let body_start = inner.find('\n').map_or(inner.len(), |i| i + 1);
            return inner[body_start..].trim_end();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insight_plain_and_markdown() {
        let plain = "Pattern Name: A\nConfusion Trigger: B\nContrastive Evidence: C\nRule (Proposed): D\n";
        let md = "Sure.\n\n- **Pattern Name:** A\n- *Confusion Trigger*: B\n  continues\n### Contrastive Evidence: C\n**Proposed Rule**: D";
        let a = parse_insight(plain).unwrap();
        assert_eq!((a.pattern_name.as_str(), a.proposed_rule.as_str()), ("A", "D"));
        let b = parse_insight(md).unwrap();
        assert_eq!(b.confusion_trigger, "B continues");
        assert_eq!(b.proposed_rule, "D");
        assert_eq!(parse_insight(&a.render()).unwrap(), a);
    }

    #[test]
    fn insight_missing_field() {
        let err = parse_insight("Pattern Name: A\nConfusion Trigger: B\nRule (Proposed): D").unwrap_err();
        assert!(err.contains("Contrastive Evidence"));
        assert!(parse_insight("Pattern Name: \nConfusion Trigger: B\nContrastive Evidence: C\nRule (Proposed): D")
            .unwrap_err()
            .contains("empty"));
    }

    #[test]
    fn principle_forms() {
        let p = parse_principle("**IF** x holds,\nmore\n**THEN** do y;\n**EXCEPT** when z.").unwrap();
        assert_eq!(p.if_clause, "x holds, more");
        assert_eq!(p.then_clause, "do y");
        assert_eq!(p.except_clause, "when z.");
        let q = parse_principle("Principle: IF x THEN y EXCEPT z").unwrap();
        assert_eq!((q.if_clause.as_str(), q.then_clause.as_str(), q.except_clause.as_str()), ("x", "y", "z"));
        assert_eq!(parse_principle(&p.render()).unwrap(), p);
        assert!(parse_principle("IF x\nTHEN y").unwrap_err().contains("EXCEPT"));
        assert!(parse_principle("if x then y except z").is_err());
    }

    #[test]
    fn unfencing() {
        assert_eq!(unfence("```markdown\n# A\nb\n```"), "# A\nb");
        assert_eq!(unfence("  # A\n"), "# A");
    }
}
