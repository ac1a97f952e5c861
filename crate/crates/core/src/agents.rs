//! The five pre-assessment agents and their plan libraries.
//!
//! - `ag_interface` perceives user input and receives questions, feedback and material.
//! - `ag_support` drives the quiz (the session code acts on its behalf).
//! - `ag_modelling` classifies the learner from `passed`/`failed` beliefs.
//! - `ag_student` persists every attempt to the event log.
//! - `ag_material` holds the ontology facts and resolves recommendations to URLs.

use std::sync::Arc;

use crate::mas::{
    AgentId, BeliefBase, Bus, BusConfig, BusError, Literal, Pattern, Performative, Plan, Term,
    Trigger,
};
use crate::ontology::ConceptId;
use crate::question_bank::Grade;
use crate::rule_gen::{classify, Outcome, OutcomeVector, Recommendation, Verdict};
use crate::session::Engine;
use crate::student_model::{parse_timestamp, EventLog, StudentEvent, StudentId};

pub fn passed_text(leaf: &ConceptId) -> String {
    format!("The student has passed the {leaf} question.")
}

pub fn failed_text(leaf: &ConceptId) -> String {
    format!("The student has NOT passed the {leaf} question.")
}

/// Content literal of a `tell record(...)` to `ag_student`.
pub fn record_literal(e: &StudentEvent) -> Literal {
    Literal::new(
        "record",
        vec![
            Term::str(e.student.as_str()),
            Term::atom(e.desired.as_str()),
            Term::atom(e.question.as_str()),
            Term::Int(e.attempt.into()),
            Term::atom(e.outcome.as_str()),
            Term::str(crate::student_model::format_timestamp(&e.asked_at)),
            Term::str(crate::student_model::format_timestamp(&e.answered_at)),
        ],
    )
}

fn event_from_literal(lit: &Literal) -> Result<StudentEvent, String> {
    let [student, desired, question, attempt, outcome, asked, answered] = lit.args.as_slice() else {
        return Err(format!("record/{} has the wrong arity", lit.arity()));
    };
    let text = |t: &Term| t.as_text().map(str::to_string).ok_or("expected text term");
    let time = |t: &Term| {
        text(t).and_then(|s| parse_timestamp(&s).ok_or("bad timestamp"))
    };
    Ok(StudentEvent {
        student: StudentId::new(&text(student)?).map_err(|e| e.to_string())?,
        desired: ConceptId::new(&text(desired)?).map_err(|e| e.to_string())?,
        question: ConceptId::new(&text(question)?).map_err(|e| e.to_string())?,
        attempt: attempt
            .as_int()
            .and_then(|a| u32::try_from(a).ok())
            .ok_or("bad attempt")?,
        outcome: Grade::parse(&text(outcome)?).ok_or("bad outcome")?,
        asked_at: time(asked)?,
        answered_at: time(answered)?,
    })
}

/// The action literal `ag_modelling` sends to `ag_material` for a classification.
pub fn action_literal(desired: &ConceptId, prereq: Option<&ConceptId>, rec: &Recommendation) -> Literal {
    let atom = |c: &ConceptId| Term::atom(c.as_str());
    let prereq = prereq.map(atom);
    match rec.verdict {
        Verdict::ReadyForDesired => Literal::new(
            "has_prerequisite",
            vec![atom(desired)].into_iter().chain(prereq).collect(),
        ),
        Verdict::RemediateLeaves => Literal::new(
            "has_kb",
            prereq
                .into_iter()
                .chain(rec.targets.iter().map(|t| atom(&t.concept)))
                .collect(),
        ),
        Verdict::DescendPrerequisite => Literal::new(
            "descend_prerequisite",
            prereq
                .into_iter()
                .chain(rec.targets.iter().map(|t| atom(&t.concept)))
                .collect(),
        ),
        Verdict::DirectContent => Literal::new("direct_content", vec![atom(desired)]),
    }
}

fn ground(functor: &str, args: Vec<Term>) -> Pattern {
    Pattern::new(functor, args.into_iter().map(Some).collect())
}

/// Reads the support agent's classification attributes out of `ag_modelling`'s beliefs.
fn modelling_outcome(
    engine: &Engine,
    beliefs: &BeliefBase,
) -> Result<(ConceptId, Option<ConceptId>, OutcomeVector), String> {
    let support = AgentId::support();
    let pattern = Pattern::new("desired_concept", vec![None]);
    let desired = beliefs
        .matching(&pattern)
        .find(|b| b.source.as_ref() == Some(&support))
        .and_then(|b| b.args[0].as_text())
        .ok_or("no desired_concept belief")?;
    let desired = ConceptId::new(desired).map_err(|e| e.to_string())?;
    let prereq = engine
        .graph
        .prerequisite_of(&desired)
        .map_err(|e| e.to_string())?
        .cloned();
    let mut outcome = Vec::new();
    if let Some(p) = &prereq {
        for leaf in engine.graph.leaves_of(p).map_err(|e| e.to_string())? {
            let told = |functor: &str, text: String| {
                let lit = Literal::new(functor, vec![Term::Str(text)]).with_source(support.clone());
                beliefs.contains(&lit)
            };
            if told("passed", passed_text(&leaf.id)) {
                outcome.push(Outcome::Pass);
            } else if told("failed", failed_text(&leaf.id)) {
                outcome.push(Outcome::Fail);
            } else {
                return Err(format!("no outcome belief for `{}`", leaf.id));
            }
        }
    }
    Ok((desired, prereq, OutcomeVector(outcome)))
}

/// Targets named by an action literal, given its functor.
fn action_targets(lit: &Literal) -> Option<(Verdict, Vec<&str>)> {
    let texts: Vec<&str> = lit.args.iter().filter_map(Term::as_text).collect();
    match (lit.functor.as_str(), texts.as_slice()) {
        ("has_prerequisite", [desired, ..]) => Some((Verdict::ReadyForDesired, vec![*desired])),
        ("has_kb", [_, leaves @ ..]) if !leaves.is_empty() => {
            Some((Verdict::RemediateLeaves, leaves.to_vec()))
        }
        ("descend_prerequisite", [_, deeper]) => {
            Some((Verdict::DescendPrerequisite, vec![*deeper]))
        }
        ("direct_content", [concept]) => Some((Verdict::DirectContent, vec![*concept])),
        _ => None,
    }
}

/// Registers the five agents, seeds `ag_material` with the ontology and installs all plans.
pub fn standard_bus(engine: Arc<Engine>, log: Arc<EventLog>, config: BusConfig) -> Result<Bus, BusError> {
    let mut bus = Bus::new(config);
    for a in [
        AgentId::interface(),
        AgentId::support(),
        AgentId::modelling(),
        AgentId::student(),
        AgentId::material(),
    ] {
        bus.register(a)?;
    }

    let material = AgentId::material();
    for id in engine.graph.node_ids() {
        bus.seed_belief(&material, Literal::new("exists", vec![Term::str(id.as_str())]))?;
    }
    for (a, b) in engine.graph.prereq_edges() {
        bus.seed_belief(
            &material,
            Literal::new("has_prerequisite", vec![Term::atom(a.as_str()), Term::atom(b.as_str())]),
        )?;
    }
    for id in engine.graph.node_ids() {
        let url = engine.graph.content_url(id).expect("node ids come from the graph");
        bus.seed_belief(
            &material,
            Literal::new("has_content", vec![Term::atom(id.as_str()), Term::str(url)]),
        )?;
    }

    bus.add_plan(
        &AgentId::student(),
        Plan::new(Trigger::Tell, "record", move |_, msg| {
            let event = event_from_literal(&msg.content)?;
            log.record_event(&event).map_err(|e| e.to_string())
        }),
    )?;

    let classifier = engine.clone();
    bus.add_plan(
        &AgentId::modelling(),
        Plan::new(Trigger::Achieve, "recommend_material", move |ctx, _| {
            let (desired, prereq, outcome) = modelling_outcome(&classifier, ctx.beliefs())?;
            let rec = classify(&classifier.rules, &desired, &outcome).map_err(|e| e.to_string())?;
            let action = action_literal(&desired, prereq.as_ref(), &rec);
            ctx.send(AgentId::material(), Performative::Achieve, action);
            Ok(())
        }),
    )?;

    for functor in ["has_prerequisite", "has_kb", "descend_prerequisite", "direct_content"] {
        bus.add_plan(
            &material,
            Plan::new(Trigger::Achieve, functor, move |ctx, msg| {
                let (verdict, targets) = action_targets(&msg.content)
                    .ok_or_else(|| format!("malformed action {}", msg.content))?;
                for concept in targets {
                    let pattern = Pattern::new("has_content", vec![Some(Term::atom(concept)), None]);
                    let url = ctx
                        .beliefs()
                        .first_match(&pattern)
                        .and_then(|b| b.args[1].as_text())
                        .ok_or_else(|| format!("no content for `{concept}`"))?
                        .to_string();
                    ctx.send(
                        AgentId::interface(),
                        Performative::Tell,
                        Literal::new(
                            "material",
                            vec![Term::atom(verdict.as_str()), Term::atom(concept), Term::Str(url)],
                        ),
                    );
                }
                Ok(())
            }),
        )?;
    }

    Ok(bus)
}

/// Pattern used to check a desired concept against `ag_material`'s ontology facts.
pub fn exists_query(id: &ConceptId) -> Pattern {
    ground("exists", vec![Term::str(id.as_str())])
}
