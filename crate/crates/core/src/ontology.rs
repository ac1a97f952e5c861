//! Regular prerequisite ontologies.
//!
//! An ontology is a single chain of parent concepts, each carrying the same
//! number of assessable leaves. Every node (parent or leaf) carries a content
//! URL. The on-disk form is a small line-based format:
//!
//! ```text
//! # comment
//! concept select
//! concept insert
//! hasPrerequisite insert select
//! hasLeaf insert insert_select
//! hasContent insert https://example.org/insert
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of states an assessment outcome can take (pass or fail).
pub const OUTCOME_ARITY: u32 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown predicate `{predicate}`")]
    UnknownPredicate { line: usize, predicate: String },
    #[error("line {line}: `{id}` is not a declared concept")]
    DanglingReference { line: usize, id: String },
    #[error("line {line}: `{id}` is declared twice")]
    Duplicate { line: usize, id: String },
    #[error("prerequisite cycle through `{0}`")]
    CycleDetected(String),
    #[error("node `{0}` has no content URL")]
    MissingContent(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("irregular ontology: `{concept}` has {found} leaves, expected {expected}")]
    IrregularLeafCount {
        concept: String,
        expected: usize,
        found: usize,
    },
    #[error("concept `{0}` has no leaves")]
    EmptyLeaves(String),
    #[error("prerequisites do not form a single chain: {0}")]
    BrokenChain(String),
}

/// Lowercase concept tag name, restricted to `[a-z0-9_]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    /// Canonicalizes `raw` (trimmed, lowercased) and checks the character set.
    pub fn new(raw: &str) -> Result<Self, InvalidConceptId> {
        let canonical = raw.trim().to_ascii_lowercase();
        if canonical.is_empty()
            || !canonical
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        {
            return Err(InvalidConceptId(raw.to_string()));
        }
        Ok(Self(canonical))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for ConceptId {
    type Error = InvalidConceptId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<ConceptId> for String {
    fn from(value: ConceptId) -> Self {
        value.0
    }
}

impl std::str::FromStr for ConceptId {
    type Err = InvalidConceptId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid concept id `{0}` (expected [a-z0-9_]+)")]
pub struct InvalidConceptId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafNode {
    pub id: ConceptId,
    pub content: String,
    /// 0-based position under its parent; this is the assessment order.
    pub declaration_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: ConceptId,
    pub leaves: Vec<LeafNode>,
    pub content: String,
}

/// Shape parameters of a regular ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularParams {
    /// Prerequisite class nodes: number of parents minus one.
    pub classes: u32,
    /// Leaves per parent, always at least one.
    pub leaves: u32,
}

impl RegularParams {
    pub fn outcome_arity(&self) -> u32 {
        OUTCOME_ARITY
    }
}

/// Immutable prerequisite graph. Parents are kept in declaration order,
/// which for a valid ontology is chain order starting at the least concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OntologyGraph {
    parents: Vec<ConceptNode>,
    /// (dependent, prerequisite) pairs in file order.
    prereq_edges: Vec<(ConceptId, ConceptId)>,
    #[serde(skip)]
    index: NodeIndex,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct NodeIndex {
    parents: HashMap<ConceptId, usize>,
    /// leaf id -> (parent position, leaf position)
    leaves: HashMap<ConceptId, (usize, usize)>,
}

impl NodeIndex {
    fn build(parents: &[ConceptNode]) -> Self {
        let mut index = NodeIndex::default();
        for (p, node) in parents.iter().enumerate() {
            index.parents.insert(node.id.clone(), p);
            for (l, leaf) in node.leaves.iter().enumerate() {
                index.leaves.insert(leaf.id.clone(), (p, l));
            }
        }
        index
    }
}

impl OntologyGraph {
    /// Parses the line-based ontology format.
    pub fn load(text: &str) -> Result<Self, OntologyError> {
        let mut parents: Vec<ConceptNode> = Vec::new();
        let mut parent_pos: HashMap<ConceptId, usize> = HashMap::new();
        let mut leaf_pos: HashMap<ConceptId, (usize, usize)> = HashMap::new();
        let mut edges: Vec<(ConceptId, ConceptId)> = Vec::new();
        let mut content: HashMap<ConceptId, String> = HashMap::new();
        // references are checked after the whole file is read, so directives may
        // appear in any order
        let mut pending_refs: Vec<(usize, ConceptId)> = Vec::new();
        let mut pending_leaves: Vec<(usize, ConceptId, ConceptId)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            // `#` opens a comment only at the start of a token, so URL fragments survive
            let tokens: Vec<&str> = raw
                .split_whitespace()
                .take_while(|tok| !tok.starts_with('#'))
                .collect();
            let Some((&predicate, args)) = tokens.split_first() else {
                continue;
            };
            let id = |tok: &str| {
                ConceptId::new(tok).map_err(|e| OntologyError::Parse {
                    line,
                    message: e.to_string(),
                })
            };
            let arity = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(OntologyError::Parse {
                        line,
                        message: format!("`{predicate}` takes {n} argument(s), got {}", args.len()),
                    })
                }
            };
            match predicate {
                "concept" => {
                    arity(1)?;
                    let c = id(args[0])?;
                    if parent_pos.contains_key(&c) {
                        return Err(OntologyError::Duplicate { line, id: c.0 });
                    }
                    parent_pos.insert(c.clone(), parents.len());
                    parents.push(ConceptNode {
                        id: c,
                        leaves: Vec::new(),
                        content: String::new(),
                    });
                }
                "hasPrerequisite" => {
                    arity(2)?;
                    let (a, b) = (id(args[0])?, id(args[1])?);
                    pending_refs.push((line, a.clone()));
                    pending_refs.push((line, b.clone()));
                    edges.push((a, b));
                }
                "hasLeaf" => {
                    arity(2)?;
                    let (parent, leaf) = (id(args[0])?, id(args[1])?);
                    pending_leaves.push((line, parent, leaf));
                }
                "hasContent" => {
                    arity(2)?;
                    let node = id(args[0])?;
                    if content.contains_key(&node) {
                        return Err(OntologyError::Duplicate { line, id: node.0 });
                    }
                    pending_refs.push((line, node.clone()));
                    content.insert(node, args[1].to_string());
                }
                other => {
                    return Err(OntologyError::UnknownPredicate {
                        line,
                        predicate: other.to_string(),
                    })
                }
            }
        }

        for (line, parent, leaf) in pending_leaves {
            let Some(&p) = parent_pos.get(&parent) else {
                return Err(OntologyError::DanglingReference { line, id: parent.0 });
            };
            if parent_pos.contains_key(&leaf) || leaf_pos.contains_key(&leaf) {
                return Err(OntologyError::Duplicate { line, id: leaf.0 });
            }
            let node = &mut parents[p];
            leaf_pos.insert(leaf.clone(), (p, node.leaves.len()));
            node.leaves.push(LeafNode {
                id: leaf,
                content: String::new(),
                declaration_index: node.leaves.len(),
            });
        }

        for (line, r) in &pending_refs {
            if !parent_pos.contains_key(r) && !leaf_pos.contains_key(r) {
                return Err(OntologyError::DanglingReference {
                    line: *line,
                    id: r.0.clone(),
                });
            }
        }
        for (child, _) in &edges {
            if leaf_pos.contains_key(child) {
                return Err(OntologyError::BrokenChain(format!(
                    "leaf `{child}` cannot have a prerequisite"
                )));
            }
        }

        detect_cycle(&edges)?;

        for node in &mut parents {
            node.content = content.remove(&node.id).unwrap_or_default();
            if node.content.is_empty() {
                return Err(OntologyError::MissingContent(node.id.0.clone()));
            }
            for leaf in &mut node.leaves {
                leaf.content = content.remove(&leaf.id).unwrap_or_default();
                if leaf.content.is_empty() {
                    return Err(OntologyError::MissingContent(leaf.id.0.clone()));
                }
            }
        }

        let index = NodeIndex::build(&parents);
        Ok(Self {
            parents,
            prereq_edges: edges,
            index,
        })
    }

    /// Builds a regular chain of `parents` concepts with `leaves` leaves each.
    /// Concepts are named `c0` (least) .. `c{parents-1}`, leaves `c{i}_l{j}`.
    pub fn regular_chain(parents: usize, leaves: usize) -> Result<Self, OntologyError> {
        let mut text = String::new();
        for p in 0..parents {
            let _ = writeln!(text, "concept c{p}");
            let _ = writeln!(text, "hasContent c{p} https://example.org/c{p}");
            if p > 0 {
                let _ = writeln!(text, "hasPrerequisite c{p} c{}", p - 1);
            }
            for l in 0..leaves {
                let _ = writeln!(text, "hasLeaf c{p} c{p}_l{l}");
                let _ = writeln!(text, "hasContent c{p}_l{l} https://example.org/c{p}/l{l}");
            }
        }
        Self::load(&text)
    }

    /// Re-serializes the graph in the file format accepted by [`load`](Self::load).
    pub fn to_ont_string(&self) -> String {
        let mut out = String::new();
        for node in &self.parents {
            let _ = writeln!(out, "concept {}", node.id);
        }
        for (a, b) in &self.prereq_edges {
            let _ = writeln!(out, "hasPrerequisite {a} {b}");
        }
        for node in &self.parents {
            for leaf in &node.leaves {
                let _ = writeln!(out, "hasLeaf {} {}", node.id, leaf.id);
            }
        }
        for node in &self.parents {
            let _ = writeln!(out, "hasContent {} {}", node.id, node.content);
            for leaf in &node.leaves {
                let _ = writeln!(out, "hasContent {} {}", leaf.id, leaf.content);
            }
        }
        out
    }

    pub fn parents(&self) -> &[ConceptNode] {
        &self.parents
    }

    pub fn prereq_edges(&self) -> &[(ConceptId, ConceptId)] {
        &self.prereq_edges
    }

    /// Checks regularity and the single-chain shape, returning (C, N).
    pub fn validate_regular(&self) -> Result<RegularParams, OntologyError> {
        let Some(first) = self.parents.first() else {
            return Err(OntologyError::BrokenChain("no parent concepts".into()));
        };
        for node in &self.parents {
            if node.leaves.is_empty() {
                return Err(OntologyError::EmptyLeaves(node.id.0.clone()));
            }
        }
        let expected = first.leaves.len();
        for node in &self.parents[1..] {
            if node.leaves.len() != expected {
                return Err(OntologyError::IrregularLeafCount {
                    concept: node.id.0.clone(),
                    expected,
                    found: node.leaves.len(),
                });
            }
        }

        let mut prereq_of: BTreeMap<&ConceptId, &ConceptId> = BTreeMap::new();
        let mut dependent_of: BTreeMap<&ConceptId, &ConceptId> = BTreeMap::new();
        for (a, b) in &self.prereq_edges {
            if prereq_of.insert(a, b).is_some_and(|prev| prev != b) {
                return Err(OntologyError::BrokenChain(format!(
                    "`{a}` has more than one prerequisite"
                )));
            }
            if dependent_of.insert(b, a).is_some_and(|prev| prev != a) {
                return Err(OntologyError::BrokenChain(format!(
                    "`{b}` is the prerequisite of more than one concept"
                )));
            }
        }
        if prereq_of.contains_key(&first.id) {
            return Err(OntologyError::BrokenChain(format!(
                "least concept `{}` must not have a prerequisite",
                first.id
            )));
        }
        for pair in self.parents.windows(2) {
            match prereq_of.get(&pair[1].id) {
                Some(&p) if *p == pair[0].id => {}
                _ => {
                    return Err(OntologyError::BrokenChain(format!(
                        "`{}` must have prerequisite `{}` (concepts are declared bottom-up)",
                        pair[1].id, pair[0].id
                    )))
                }
            }
        }
        if prereq_of.len() != self.parents.len() - 1 {
            return Err(OntologyError::BrokenChain("extra prerequisite edges".into()));
        }

        Ok(RegularParams {
            classes: (self.parents.len() - 1) as u32,
            leaves: expected as u32,
        })
    }

    /// The least concept: the only parent with no prerequisite.
    pub fn least_concept(&self) -> Option<&ConceptId> {
        self.parents
            .iter()
            .map(|n| &n.id)
            .find(|id| !self.prereq_edges.iter().any(|(a, _)| a == *id))
    }

    pub fn prerequisite_of(&self, concept: &ConceptId) -> Result<Option<&ConceptId>, OntologyError> {
        self.parent(concept)?;
        Ok(self
            .prereq_edges
            .iter()
            .find(|(a, _)| a == concept)
            .map(|(_, b)| b))
    }

    pub fn parent(&self, concept: &ConceptId) -> Result<&ConceptNode, OntologyError> {
        self.index
            .parents
            .get(concept)
            .map(|&p| &self.parents[p])
            .ok_or_else(|| OntologyError::UnknownConcept(concept.0.clone()))
    }

    pub fn leaves_of(&self, concept: &ConceptId) -> Result<&[LeafNode], OntologyError> {
        Ok(&self.parent(concept)?.leaves)
    }

    pub fn content_url(&self, node: &ConceptId) -> Result<&str, OntologyError> {
        if let Some(&p) = self.index.parents.get(node) {
            return Ok(&self.parents[p].content);
        }
        if let Some(&(p, l)) = self.index.leaves.get(node) {
            return Ok(&self.parents[p].leaves[l].content);
        }
        Err(OntologyError::UnknownConcept(node.0.clone()))
    }

    pub fn is_parent(&self, id: &ConceptId) -> bool {
        self.index.parents.contains_key(id)
    }

    pub fn is_leaf(&self, id: &ConceptId) -> bool {
        self.index.leaves.contains_key(id)
    }

    /// Case-insensitive existence check on a raw user string.
    pub fn concept_exists(&self, name: &str) -> bool {
        ConceptId::new(name).is_ok_and(|id| self.is_parent(&id) || self.is_leaf(&id))
    }

    /// All leaves of all parents, in chain then declaration order.
    pub fn all_leaves(&self) -> impl Iterator<Item = &LeafNode> {
        self.parents.iter().flat_map(|n| n.leaves.iter())
    }

    /// Every node id, parents first, then leaves.
    pub fn node_ids(&self) -> impl Iterator<Item = &ConceptId> {
        self.parents
            .iter()
            .map(|n| &n.id)
            .chain(self.all_leaves().map(|l| &l.id))
    }
}

fn detect_cycle(edges: &[(ConceptId, ConceptId)]) -> Result<(), OntologyError> {
    let mut adjacency: BTreeMap<&ConceptId, Vec<&ConceptId>> = BTreeMap::new();
    for (a, b) in edges {
        adjacency.entry(a).or_default().push(b);
    }
    let mut done: HashSet<&ConceptId> = HashSet::new();
    for &start in adjacency.keys() {
        let mut on_path: HashSet<&ConceptId> = HashSet::new();
        visit(start, &adjacency, &mut on_path, &mut done)?;
    }
    Ok(())
}

fn visit<'a>(
    node: &'a ConceptId,
    adjacency: &BTreeMap<&'a ConceptId, Vec<&'a ConceptId>>,
    on_path: &mut HashSet<&'a ConceptId>,
    done: &mut HashSet<&'a ConceptId>,
) -> Result<(), OntologyError> {
    if done.contains(node) {
        return Ok(());
    }
    if !on_path.insert(node) {
        return Err(OntologyError::CycleDetected(node.0.clone()));
    }
    for &next in adjacency.get(node).into_iter().flatten() {
        visit(next, adjacency, on_path, done)?;
    }
    on_path.remove(node);
    done.insert(node);
    Ok(())
}
