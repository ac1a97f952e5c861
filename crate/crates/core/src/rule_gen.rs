//! One-vs-all classified rules.
//!
//! For every concept `D` that has a prerequisite `P`, one rule per pass/fail
//! vector over `P`'s leaves; plus a single default rule for the least concept.
//! Exactly one rule matches any (desired concept, outcome vector) pair.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{ConceptId, OntologyError, OntologyGraph, RegularParams};
use crate::rule_calc::estimate_rules;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error(transparent)]
    IrregularOntology(#[from] OntologyError),
    #[error("no rules for concept `{0}`")]
    UnknownConcept(String),
    #[error("outcome vector for `{concept}` has length {found}, expected {expected}")]
    BadVectorLength {
        concept: String,
        expected: usize,
        found: usize,
    },
    #[error("{0} leaves per parent is too many to enumerate")]
    TooManyLeaves(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn is_pass(self) -> bool {
        self == Outcome::Pass
    }
}

/// Pass/fail results over the leaves of the assessed prerequisite, in leaf order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeVector(pub Vec<Outcome>);

impl OutcomeVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `P`/`F` per leaf, e.g. `PF`.
    pub fn to_pf(&self) -> String {
        self.0
            .iter()
            .map(|o| if o.is_pass() { 'P' } else { 'F' })
            .collect()
    }

    pub fn from_pf(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c.to_ascii_uppercase() {
                'P' => Some(Outcome::Pass),
                'F' => Some(Outcome::Fail),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(OutcomeVector)
    }

    /// Enumeration position: pass = 1, first leaf most significant, all-pass first.
    fn rank(&self) -> usize {
        let bits = self
            .0
            .iter()
            .fold(0usize, |acc, o| (acc << 1) | usize::from(o.is_pass()));
        (1usize << self.0.len()) - 1 - bits
    }

    fn from_rank(rank: usize, n: u32) -> Self {
        let bits = (1usize << n) - 1 - rank;
        OutcomeVector(
            (0..n)
                .rev()
                .map(|i| {
                    if bits >> i & 1 == 1 {
                        Outcome::Pass
                    } else {
                        Outcome::Fail
                    }
                })
                .collect(),
        )
    }
}

impl fmt::Display for OutcomeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_pf())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyPolicy {
    /// On an all-fail vector, send the learner one level further down the chain
    /// instead of recommending every failed leaf.
    pub deep_descent: bool,
    pub max_attempts: u32,
}

impl Default for ClassifyPolicy {
    fn default() -> Self {
        Self {
            deep_descent: false,
            max_attempts: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ReadyForDesired,
    RemediateLeaves,
    DescendPrerequisite,
    DirectContent,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ReadyForDesired => "ready_for_desired",
            Verdict::RemediateLeaves => "remediate_leaves",
            Verdict::DescendPrerequisite => "descend_prerequisite",
            Verdict::DirectContent => "direct_content",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Verdict::ReadyForDesired,
            Verdict::RemediateLeaves,
            Verdict::DescendPrerequisite,
            Verdict::DirectContent,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub concept: ConceptId,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Recommendation {
    pub verdict: Verdict,
    pub targets: Vec<Target>,
}

impl Recommendation {
    pub fn concepts(&self) -> Vec<&str> {
        self.targets.iter().map(|t| t.concept.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedRule {
    pub label: String,
    pub desired: ConceptId,
    /// `None` only for the default rule.
    pub assessed_prereq: Option<ConceptId>,
    pub condition: Option<OutcomeVector>,
    pub action: Recommendation,
}

impl ClassifiedRule {
    fn matches(&self, desired: &ConceptId, outcome: &OutcomeVector) -> bool {
        if &self.desired != desired {
            return false;
        }
        match &self.condition {
            Some(c) => c == outcome,
            None => outcome.is_empty(),
        }
    }
}

impl fmt::Display for ClassifiedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let condition = self
            .condition
            .as_ref()
            .map_or_else(|| "-".to_string(), OutcomeVector::to_pf);
        write!(
            f,
            "{} {} {} {} {}",
            self.label,
            self.desired,
            condition,
            self.action.verdict,
            self.action.concepts().join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleSet {
    rules: Vec<ClassifiedRule>,
    params: RegularParams,
    #[serde(skip)]
    by_desired: HashMap<ConceptId, (usize, usize)>,
}

impl RuleSet {
    /// Wraps an arbitrary rule list. Rules for one desired concept must be contiguous.
    pub fn new(rules: Vec<ClassifiedRule>, params: RegularParams) -> Self {
        let mut by_desired: HashMap<ConceptId, (usize, usize)> = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            by_desired
                .entry(rule.desired.clone())
                .and_modify(|span| span.1 = i + 1)
                .or_insert((i, i + 1));
        }
        Self {
            rules,
            params,
            by_desired,
        }
    }

    pub fn rules(&self) -> &[ClassifiedRule] {
        &self.rules
    }

    pub fn params(&self) -> RegularParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules_for(&self, desired: &ConceptId) -> &[ClassifiedRule] {
        self.by_desired
            .get(desired)
            .map_or(&[], |&(lo, hi)| &self.rules[lo..hi])
    }

    /// One line per rule: `label desired condition verdict targets`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for rule in &self.rules {
            let _ = writeln!(out, "{rule}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<RuleJson<'_>> = self.rules.iter().map(RuleJson::from).collect();
        serde_json::to_string_pretty(&rows).expect("rule rows serialize")
    }
}

#[derive(Serialize)]
struct RuleJson<'a> {
    label: &'a str,
    desired: &'a ConceptId,
    assessed_prereq: Option<&'a ConceptId>,
    condition: Option<String>,
    verdict: Verdict,
    targets: &'a [Target],
}

impl<'a> From<&'a ClassifiedRule> for RuleJson<'a> {
    fn from(r: &'a ClassifiedRule) -> Self {
        Self {
            label: &r.label,
            desired: &r.desired,
            assessed_prereq: r.assessed_prereq.as_ref(),
            condition: r.condition.as_ref().map(OutcomeVector::to_pf),
            verdict: r.action.verdict,
            targets: &r.action.targets,
        }
    }
}

fn target(graph: &OntologyGraph, id: &ConceptId) -> Result<Target, RuleError> {
    Ok(Target {
        concept: id.clone(),
        url: graph.content_url(id)?.to_string(),
    })
}

/// Largest N whose 2^N rules per concept we are willing to materialize.
const MAX_ENUMERATED_LEAVES: u32 = 24;

/// Materializes the full rule set for a regular ontology.
pub fn generate_rules(graph: &OntologyGraph, policy: &ClassifyPolicy) -> Result<RuleSet, RuleError> {
    let params = graph.validate_regular()?;
    if params.leaves > MAX_ENUMERATED_LEAVES {
        return Err(RuleError::TooManyLeaves(params.leaves));
    }
    let least = graph
        .least_concept()
        .ok_or_else(|| OntologyError::BrokenChain("no least concept".into()))?;

    let mut rules = Vec::new();
    rules.push(ClassifiedRule {
        label: format!("@{least}_default"),
        desired: least.clone(),
        assessed_prereq: None,
        condition: None,
        action: Recommendation {
            verdict: Verdict::DirectContent,
            targets: vec![target(graph, least)?],
        },
    });

    for node in graph.parents() {
        let Some(prereq) = graph.prerequisite_of(&node.id)? else {
            continue;
        };
        let leaves = graph.leaves_of(prereq)?;
        let deeper = graph.prerequisite_of(prereq)?;
        for rank in 0..1usize << params.leaves {
            let condition = OutcomeVector::from_rank(rank, params.leaves);
            let failed: Vec<Target> = leaves
                .iter()
                .zip(&condition.0)
                .filter(|(_, o)| !o.is_pass())
                .map(|(l, _)| target(graph, &l.id))
                .collect::<Result<_, _>>()?;
            let action = if failed.is_empty() {
                Recommendation {
                    verdict: Verdict::ReadyForDesired,
                    targets: vec![target(graph, &node.id)?],
                }
            } else if failed.len() == leaves.len() && policy.deep_descent && deeper.is_some() {
                Recommendation {
                    verdict: Verdict::DescendPrerequisite,
                    targets: vec![target(graph, deeper.expect("checked above"))?],
                }
            } else {
                Recommendation {
                    verdict: Verdict::RemediateLeaves,
                    targets: failed,
                }
            };
            rules.push(ClassifiedRule {
                label: format!("@{}_d{}", node.id, rank + 1),
                desired: node.id.clone(),
                assessed_prereq: Some(prereq.clone()),
                condition: Some(condition),
                action,
            });
        }
    }
    Ok(RuleSet::new(rules, params))
}

/// Selects the unique rule for `(desired, outcome)` and returns its action.
pub fn classify(
    rules: &RuleSet,
    desired: &ConceptId,
    outcome: &OutcomeVector,
) -> Result<Recommendation, RuleError> {
    let candidates = rules.rules_for(desired);
    let Some(first) = candidates.first() else {
        return Err(RuleError::UnknownConcept(desired.to_string()));
    };
    let expected = first.condition.as_ref().map_or(0, OutcomeVector::len);
    if outcome.len() != expected {
        return Err(RuleError::BadVectorLength {
            concept: desired.to_string(),
            expected,
            found: outcome.len(),
        });
    }
    // generated rule sets are in rank order; fall back to a scan for hand-built ones
    let direct = candidates
        .get(if expected == 0 { 0 } else { outcome.rank() })
        .filter(|r| r.matches(desired, outcome));
    direct
        .or_else(|| candidates.iter().find(|r| r.matches(desired, outcome)))
        .map(|r| r.action.clone())
        .ok_or_else(|| RuleError::UnknownConcept(desired.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub expected: u128,
    pub actual: u128,
    pub ok: bool,
}

/// Compares the materialized rule count with the closed form.
pub fn verify_count(rules: &RuleSet) -> CountReport {
    let p = rules.params();
    let expected = estimate_rules(p.classes.into(), p.leaves.into()).map_or(u128::MAX, |r| r.get());
    let actual = rules.len() as u128;
    CountReport {
        expected,
        actual,
        ok: expected == actual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = include_str!("../../../data/sql.ont");

    fn id(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn pf(s: &str) -> OutcomeVector {
        OutcomeVector::from_pf(s).unwrap()
    }

    fn sample_rules(deep: bool) -> RuleSet {
        let g = OntologyGraph::load(SAMPLE).unwrap();
        let policy = ClassifyPolicy {
            deep_descent: deep,
            ..ClassifyPolicy::default()
        };
        generate_rules(&g, &policy).unwrap()
    }

    #[test]
    fn rank_round_trip() {
        for n in 1..=5 {
            for rank in 0..1usize << n {
                assert_eq!(OutcomeVector::from_rank(rank, n).rank(), rank);
            }
        }
        assert_eq!(OutcomeVector::from_rank(0, 2), pf("PP"));
        assert_eq!(OutcomeVector::from_rank(1, 2), pf("PF"));
        assert_eq!(OutcomeVector::from_rank(2, 2), pf("FP"));
        assert_eq!(OutcomeVector::from_rank(3, 2), pf("FF"));
    }

    #[test]
    fn sample_has_thirteen_rules() {
        let rules = sample_rules(false);
        assert_eq!(rules.len(), 13);
        assert_eq!(
            verify_count(&rules),
            CountReport {
                expected: 13,
                actual: 13,
                ok: true
            }
        );
    }

    #[test]
    fn delete_labels_follow_enumeration() {
        let rules = sample_rules(false);
        let delete = rules.rules_for(&id("delete"));
        let labels: Vec<_> = delete.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["@delete_d1", "@delete_d2", "@delete_d3", "@delete_d4"]);
        assert_eq!(delete[0].condition, Some(pf("PP")));
        assert_eq!(delete[0].action.concepts(), ["delete"]);
    }

    #[test]
    fn single_parent_has_only_default() {
        let g = OntologyGraph::regular_chain(1, 2).unwrap();
        let rules = generate_rules(&g, &ClassifyPolicy::default()).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules.rules()[0].condition, None);
        let report = verify_count(&rules);
        assert_eq!((report.expected, report.actual, report.ok), (1, 1, true));
    }

    #[test]
    fn classify_examples() {
        let rules = sample_rules(false);
        let d = id("delete");
        let run = |v: &str| classify(&rules, &d, &pf(v)).unwrap();
        assert_eq!(run("PP").verdict, Verdict::ReadyForDesired);
        assert_eq!(run("PF").concepts(), ["insert_value"]);
        assert_eq!(run("FP").concepts(), ["insert_select"]);
        let ff = run("FF");
        assert_eq!(ff.verdict, Verdict::RemediateLeaves);
        assert_eq!(ff.concepts(), ["insert_select", "insert_value"]);

        let deep = sample_rules(true);
        let ff = classify(&deep, &d, &pf("FF")).unwrap();
        assert_eq!(ff.verdict, Verdict::DescendPrerequisite);
        assert_eq!(ff.concepts(), ["select"]);

        let least = classify(&rules, &id("select"), &OutcomeVector::default()).unwrap();
        assert_eq!(least.verdict, Verdict::DirectContent);
        assert_eq!(least.concepts(), ["select"]);
    }

    #[test]
    fn deep_descent_falls_back_above_least_concept() {
        // insert's prerequisite is select, which has nothing beneath it
        let deep = sample_rules(true);
        let ff = classify(&deep, &id("insert"), &pf("FF")).unwrap();
        assert_eq!(ff.verdict, Verdict::RemediateLeaves);
        assert_eq!(ff.concepts(), ["select_from", "select_where"]);
    }

    #[test]
    fn classify_errors() {
        let rules = sample_rules(false);
        assert!(matches!(
            classify(&rules, &id("ghost"), &pf("PP")),
            Err(RuleError::UnknownConcept(_))
        ));
        assert!(matches!(
            classify(&rules, &id("delete"), &pf("P")),
            Err(RuleError::BadVectorLength { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            classify(&rules, &id("select"), &pf("P")),
            Err(RuleError::BadVectorLength { expected: 0, .. })
        ));
    }

    #[test]
    fn deleted_rule_fails_count_check() {
        let rules = sample_rules(false);
        let mut kept = rules.rules().to_vec();
        kept.remove(5);
        let mutated = RuleSet::new(kept, rules.params());
        let report = verify_count(&mutated);
        assert_eq!((report.expected, report.actual, report.ok), (13, 12, false));
    }

    #[test]
    fn irregular_ontology_propagates() {
        let g = OntologyGraph::load("concept a\nhasContent a u\n").unwrap();
        assert!(matches!(
            generate_rules(&g, &ClassifyPolicy::default()),
            Err(RuleError::IrregularOntology(OntologyError::EmptyLeaves(_)))
        ));
    }

    #[test]
    fn text_and_json_dumps() {
        let rules = sample_rules(false);
        let text = rules.to_text();
        assert_eq!(text.lines().count(), 13);
        assert!(text.contains("@delete_d2 delete PF remediate_leaves insert_value\n"));
        assert!(text.starts_with("@select_default select - direct_content select\n"));
        let json: serde_json::Value = serde_json::from_str(&rules.to_json()).unwrap();
        let rows = json.as_array().unwrap();
        assert_eq!(rows.len(), 13);
        assert_eq!(rows[0]["condition"], serde_json::Value::Null);
        assert_eq!(rows[1]["condition"], "PP");
        assert_eq!(rows[1]["verdict"], "ready_for_desired");
    }
}
