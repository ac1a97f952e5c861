//! One quiz item per leaf, graded by exact match after normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ConceptId, OntologyGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BankError {
    #[error("bank parse error: {0}")]
    Parse(String),
    #[error("no question for leaf `{0}`")]
    MissingLeafQuestion(String),
    #[error("`{0}` is not a leaf of the ontology")]
    UnknownLeaf(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Passed,
    NotPassed,
}

impl Grade {
    pub fn as_str(self) -> &'static str {
        match self {
            Grade::Passed => "passed",
            Grade::NotPassed => "not_passed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "passed" => Some(Grade::Passed),
            "not_passed" => Some(Grade::NotPassed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizItem {
    pub leaf: ConceptId,
    pub prompt: String,
    /// Already normalized.
    pub accepted: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawItem {
    prompt: String,
    accepted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bank {
    items: BTreeMap<ConceptId, QuizItem>,
}

impl Bank {
    /// Parses the JSON bank and checks it covers exactly the ontology's leaves.
    pub fn load(text: &str, graph: &OntologyGraph) -> Result<Self, BankError> {
        let raw: BTreeMap<String, RawItem> =
            serde_json::from_str(text).map_err(|e| BankError::Parse(e.to_string()))?;
        let mut items = BTreeMap::new();
        for (key, item) in raw {
            let leaf = ConceptId::new(&key).map_err(|_| BankError::UnknownLeaf(key.clone()))?;
            if !graph.is_leaf(&leaf) {
                return Err(BankError::UnknownLeaf(key));
            }
            if item.accepted.is_empty() {
                return Err(BankError::Parse(format!("`{key}` has no accepted answers")));
            }
            let accepted = item.accepted.iter().map(|a| normalize(a)).collect();
            items.insert(
                leaf.clone(),
                QuizItem {
                    leaf,
                    prompt: item.prompt,
                    accepted,
                },
            );
        }
        if let Some(missing) = graph.all_leaves().find(|l| !items.contains_key(&l.id)) {
            return Err(BankError::MissingLeafQuestion(missing.id.to_string()));
        }
        Ok(Self { items })
    }

    pub fn question_for_leaf(&self, leaf: &ConceptId) -> Result<&QuizItem, BankError> {
        self.items
            .get(leaf)
            .ok_or_else(|| BankError::UnknownLeaf(leaf.to_string()))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Trim, collapse whitespace runs, drop trailing semicolons, then lowercase
/// everything outside `'...'` / `"..."` literals.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    while let Some(rest) = s.strip_suffix(';') {
        s = rest.trim_end();
    }

    let mut out = String::with_capacity(s.len());
    let mut quote: Option<char> = None;
    for ch in s.chars() {
        match quote {
            Some(q) => {
                out.push(ch);
                if ch == q {
                    quote = None;
                }
            }
            None => {
                if ch == '\'' || ch == '"' {
                    quote = Some(ch);
                    out.push(ch);
                } else {
                    out.extend(ch.to_lowercase());
                }
            }
        }
    }
    out
}

/// Single-shot grading: passed iff the normalized submission equals an accepted answer.
pub fn evaluate_answer(item: &QuizItem, submission: &str) -> Grade {
    let normalized = normalize(submission);
    if !normalized.is_empty() && item.accepted.contains(&normalized) {
        Grade::Passed
    } else {
        Grade::NotPassed
    }
}
