//! One pre-assessment episode as a speech-act state machine.
//!
//! ```text
//! await_desired -> quiz_sorted -> question_asked -> answer_received -> feedback_given
//!                                      ^                                    |
//!                                      +------------------------------------+
//! feedback_given -> classified -> recommended -> done
//! await_desired  -> recommended            (least concept: no quiz)
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use chrono::{SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, failed_text, passed_text, record_literal};
use crate::mas::{AgentId, Bus, BusConfig, BusError, Literal, MessageTrace, Pattern, Performative, Term};
use crate::ontology::{ConceptId, OntologyError, OntologyGraph};
use crate::question_bank::{evaluate_answer, Bank, BankError, Grade};
use crate::rule_gen::{generate_rules, ClassifyPolicy, Outcome, OutcomeVector, Recommendation, RuleError, RuleSet, Target, Verdict};
use crate::student_model::{EventLog, StudentEvent, StudentId, StudentLogError, Timestamp};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown desired concept `{0}`")]
    UnknownDesiredConcept(String),
    #[error("operation not allowed in phase {actual}")]
    WrongPhase { actual: Phase },
    #[error("empty answer")]
    EmptyAnswer,
    #[error("outcome vector incomplete: {have} of {need} leaves resolved")]
    IncompleteOutcome { have: usize, need: usize },
    #[error("max_attempts must be at least 1")]
    InvalidPolicy,
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Log(#[from] StudentLogError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("material delivery produced no targets")]
    NoMaterial,
}

/// Read-only resources shared by every session.
#[derive(Debug)]
pub struct Engine {
    pub graph: OntologyGraph,
    pub rules: RuleSet,
    pub bank: Bank,
    pub policy: ClassifyPolicy,
}

impl Engine {
    /// Validates the ontology, generates rules and binds the bank.
    pub fn new(graph: OntologyGraph, bank: Bank, policy: ClassifyPolicy) -> Result<Self, SessionError> {
        if policy.max_attempts < 1 {
            return Err(SessionError::InvalidPolicy);
        }
        let rules = generate_rules(&graph, &policy)?;
        Ok(Self {
            graph,
            rules,
            bank,
            policy,
        })
    }

    /// Parses an ontology file and a bank file.
    pub fn from_texts(ontology: &str, bank: &str, policy: ClassifyPolicy) -> Result<Self, SessionError> {
        let graph = OntologyGraph::load(ontology)?;
        let bank = Bank::load(bank, &graph)?;
        Self::new(graph, bank, policy)
    }
}

/// Time source for question and answer stamps.
pub trait Clock: Send {
    fn now(&mut self) -> Timestamp;
}

/// Wall clock truncated to whole seconds.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> Timestamp {
        Utc::now().trunc_subsecs(0)
    }
}

/// Replays a fixed list of instants; the last one repeats once the list runs out.
#[derive(Debug, Clone)]
pub struct ScriptedClock {
    instants: VecDeque<Timestamp>,
    last: Timestamp,
}

impl ScriptedClock {
    pub fn new(instants: impl IntoIterator<Item = Timestamp>) -> Self {
        let instants: VecDeque<Timestamp> = instants.into_iter().collect();
        let last = instants.front().copied().unwrap_or_default();
        Self { instants, last }
    }
}

impl Clock for ScriptedClock {
    fn now(&mut self) -> Timestamp {
        if let Some(t) = self.instants.pop_front() {
            self.last = t;
        }
        self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitDesired,
    QuizSorted,
    QuestionAsked,
    AnswerReceived,
    FeedbackGiven,
    Classified,
    Recommended,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AwaitDesired => "await_desired",
            Phase::QuizSorted => "quiz_sorted",
            Phase::QuestionAsked => "question_asked",
            Phase::AnswerReceived => "answer_received",
            Phase::FeedbackGiven => "feedback_given",
            Phase::Classified => "classified",
            Phase::Recommended => "recommended",
            Phase::Done => "done",
        }
    }

    /// Whether `self -> next` is a legal transition.
    pub fn can_advance_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (AwaitDesired, QuizSorted)
                | (AwaitDesired, Recommended)
                | (QuizSorted, QuestionAsked)
                | (QuestionAsked, AnswerReceived)
                | (AnswerReceived, FeedbackGiven)
                | (FeedbackGiven, QuestionAsked)
                | (FeedbackGiven, Classified)
                | (Classified, Recommended)
                | (Recommended, Done)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizPrompt {
    pub leaf: ConceptId,
    pub attempt: u32,
    pub max_attempts: u32,
    pub prompt: String,
    pub asked_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalFeedback {
    pub leaf: ConceptId,
    pub attempt: u32,
    pub verdict: Grade,
    pub message: String,
    /// True when this leaf will be asked again.
    pub retry: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub student: StudentId,
    pub desired: ConceptId,
    pub assessed_prereq: Option<ConceptId>,
    /// Leaves still to resolve; the head is the one being asked.
    pub queue: VecDeque<ConceptId>,
    /// Attempt number for the head of the queue.
    pub head_attempt: u32,
    pub current: Option<(ConceptId, u32)>,
    pub asked_at: Option<Timestamp>,
    pub outcome: OutcomeVector,
    pub phase: Phase,
    pub phase_history: Vec<Phase>,
    pub question_events: u32,
    pub recommendation: Option<Recommendation>,
}

impl SessionState {
    fn advance(&mut self, next: Phase) -> Result<(), SessionError> {
        if !self.phase.can_advance_to(next) {
            return Err(SessionError::WrongPhase { actual: self.phase });
        }
        self.phase = next;
        self.phase_history.push(next);
        Ok(())
    }
}

/// A live pre-assessment. Owns its bus; single-threaded.
pub struct Session {
    engine: Arc<Engine>,
    bus: Bus,
    clock: Box<dyn Clock>,
    state: SessionState,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("state", &self.state).finish_non_exhaustive()
    }
}

impl Session {
    /// Checks the desired concept with `ag_material` and sorts the prerequisite quiz.
    pub fn start(
        engine: Arc<Engine>,
        log: Arc<EventLog>,
        student: StudentId,
        desired_raw: &str,
        clock: Box<dyn Clock>,
        bus_config: BusConfig,
    ) -> Result<Self, SessionError> {
        let mut bus = agents::standard_bus(engine.clone(), log, bus_config)?;
        let interface = AgentId::interface();
        let support = AgentId::support();

        bus.broadcast(&interface, Literal::new("value", vec![Term::str(desired_raw.trim())]))?;
        bus.dispatch_until_quiescent()?;

        let unknown = || SessionError::UnknownDesiredConcept(desired_raw.trim().to_string());
        let desired = ConceptId::new(desired_raw).map_err(|_| unknown())?;
        let known = bus.ask_one(&interface, &AgentId::material(), &agents::exists_query(&desired))?;
        if known.is_none() || !engine.graph.is_parent(&desired) {
            return Err(unknown());
        }

        let assessed_prereq = engine.graph.prerequisite_of(&desired)?.cloned();
        let mut state = SessionState {
            student,
            desired: desired.clone(),
            assessed_prereq: assessed_prereq.clone(),
            queue: VecDeque::new(),
            head_attempt: 1,
            current: None,
            asked_at: None,
            outcome: OutcomeVector::default(),
            phase: Phase::AwaitDesired,
            phase_history: vec![Phase::AwaitDesired],
            question_events: 0,
            recommendation: None,
        };

        bus.send(
            &support,
            &AgentId::modelling(),
            Performative::Tell,
            Literal::new("desired_concept", vec![Term::atom(desired.as_str())]),
        )?;

        let mut session = match assessed_prereq {
            None => {
                let mut s = Self {
                    engine,
                    bus,
                    clock,
                    state,
                };
                let rec = s.request_material()?;
                s.state.recommendation = Some(rec);
                s.state.advance(Phase::Recommended)?;
                s
            }
            Some(prereq) => {
                state.queue = engine
                    .graph
                    .leaves_of(&prereq)?
                    .iter()
                    .map(|l| l.id.clone())
                    .collect();
                bus.send(
                    &support,
                    &interface,
                    Performative::Tell,
                    Literal::new("quiz", vec![Term::atom(prereq.as_str())]),
                )?;
                state.advance(Phase::QuizSorted)?;
                Self {
                    engine,
                    bus,
                    clock,
                    state,
                }
            }
        };
        session.bus.dispatch_until_quiescent()?;
        Ok(session)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn trace(&self) -> MessageTrace {
        self.bus.history()
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn policy(&self) -> ClassifyPolicy {
        self.engine.policy
    }

    fn expect_phase(&self, allowed: &[Phase]) -> Result<(), SessionError> {
        if allowed.contains(&self.state.phase) {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                actual: self.state.phase,
            })
        }
    }

    /// The question for the head leaf, or `None` once every leaf is resolved (or there was no quiz).
    pub fn next_question(&mut self) -> Result<Option<QuizPrompt>, SessionError> {
        if matches!(self.state.phase, Phase::Recommended | Phase::Done) {
            return Ok(None);
        }
        self.expect_phase(&[Phase::QuizSorted, Phase::FeedbackGiven])?;
        let Some(leaf) = self.state.queue.front().cloned() else {
            return Ok(None);
        };
        let attempt = self.state.head_attempt;
        let item = self.engine.bank.question_for_leaf(&leaf)?;
        let asked_at = self.clock.now();
        self.bus.send(
            &AgentId::support(),
            &AgentId::interface(),
            Performative::Tell,
            Literal::new(
                "question",
                vec![Term::atom(leaf.as_str()), Term::Int(attempt.into())],
            ),
        )?;
        self.bus.dispatch_until_quiescent()?;
        self.state.advance(Phase::QuestionAsked)?;
        self.state.current = Some((leaf.clone(), attempt));
        self.state.asked_at = Some(asked_at);
        self.state.question_events += 1;
        Ok(Some(QuizPrompt {
            leaf,
            attempt,
            max_attempts: self.engine.policy.max_attempts,
            prompt: item.prompt.clone(),
            asked_at,
        }))
    }

    /// Grades one attempt, logs it and gives feedback.
    pub fn submit_answer(&mut self, answer_text: &str) -> Result<EvalFeedback, SessionError> {
        self.expect_phase(&[Phase::QuestionAsked])?;
        if answer_text.trim().is_empty() {
            return Err(SessionError::EmptyAnswer);
        }
        let (leaf, attempt) = self
            .state
            .current
            .clone()
            .expect("question_asked always has a current leaf");
        let asked_at = self.state.asked_at.expect("question_asked always has asked_at");
        let interface = AgentId::interface();
        let support = AgentId::support();

        self.bus.send(
            &interface,
            &support,
            Performative::Tell,
            Literal::new(
                "answer",
                vec![
                    Term::atom(leaf.as_str()),
                    Term::Int(attempt.into()),
                    Term::str(answer_text),
                ],
            ),
        )?;
        self.state.advance(Phase::AnswerReceived)?;

        let verdict = evaluate_answer(self.engine.bank.question_for_leaf(&leaf)?, answer_text);
        let answered_at = self.clock.now();
        let event = StudentEvent {
            student: self.state.student.clone(),
            desired: self.state.desired.clone(),
            question: leaf.clone(),
            attempt,
            outcome: verdict,
            asked_at,
            answered_at,
        };
        event.validate()?;
        self.bus
            .send(&support, &AgentId::student(), Performative::Tell, record_literal(&event))?;
        self.bus.send(
            &support,
            &interface,
            Performative::Tell,
            Literal::new(
                "feedback",
                vec![
                    Term::atom(leaf.as_str()),
                    Term::Int(attempt.into()),
                    Term::atom(verdict.as_str()),
                ],
            ),
        )?;
        self.bus.dispatch_until_quiescent()?;

        let retry = verdict == Grade::NotPassed && attempt < self.engine.policy.max_attempts;
        if retry {
            self.state.head_attempt += 1;
        } else {
            self.state.queue.pop_front();
            self.state.head_attempt = 1;
            self.state.outcome.0.push(if verdict == Grade::Passed {
                Outcome::Pass
            } else {
                Outcome::Fail
            });
        }
        self.state.current = None;
        self.state.asked_at = None;
        self.state.advance(Phase::FeedbackGiven)?;

        let label = if verdict == Grade::Passed {
            "Passed"
        } else {
            "Not Passed"
        };
        let max = self.engine.policy.max_attempts;
        Ok(EvalFeedback {
            message: format!("{label}: {leaf} (attempt {attempt} of {max})"),
            leaf,
            attempt,
            verdict,
            retry,
        })
    }

    /// Tells `ag_modelling` the classification attributes, asks for material and
    /// collects what `ag_material` delivers to `ag_interface`.
    fn request_material(&mut self) -> Result<Recommendation, SessionError> {
        let support = AgentId::support();
        let modelling = AgentId::modelling();
        if let Some(prereq) = &self.state.assessed_prereq {
            let leaves = self.engine.graph.leaves_of(prereq)?;
            for (leaf, outcome) in leaves.iter().zip(&self.state.outcome.0) {
                let lit = if outcome.is_pass() {
                    Literal::new("passed", vec![Term::Str(passed_text(&leaf.id))])
                } else {
                    Literal::new("failed", vec![Term::Str(failed_text(&leaf.id))])
                };
                self.bus.send(&support, &modelling, Performative::Tell, lit)?;
            }
        }
        self.bus.send(
            &support,
            &modelling,
            Performative::Achieve,
            Literal::new("recommend_material", vec![]),
        )?;
        self.bus.dispatch_until_quiescent()?;

        let delivered = Pattern::new("material", vec![None, None, None]);
        let mut verdict = None;
        let mut targets = Vec::new();
        for b in self.bus.beliefs(&AgentId::interface())?.matching(&delivered) {
            let (Some(v), Some(concept), Some(url)) = (
                b.args[0].as_text().and_then(Verdict::parse),
                b.args[1].as_text(),
                b.args[2].as_text(),
            ) else {
                continue;
            };
            verdict = Some(v);
            targets.push(Target {
                concept: ConceptId::new(concept).map_err(|_| SessionError::NoMaterial)?,
                url: url.to_string(),
            });
        }
        let verdict = verdict.ok_or(SessionError::NoMaterial)?;
        Ok(Recommendation { verdict, targets })
    }

    /// Classifies the completed outcome vector and returns the delivered material.
    pub fn finalize(&mut self) -> Result<Recommendation, SessionError> {
        if self.state.phase == Phase::Recommended {
            // least concept: material was delivered at start
            self.state.advance(Phase::Done)?;
            self.send_summary()?;
            return Ok(self.state.recommendation.clone().expect("set at start"));
        }
        self.expect_phase(&[Phase::FeedbackGiven, Phase::QuizSorted])?;
        let need = self.engine.rules.params().leaves as usize;
        if self.state.outcome.len() < need || !self.state.queue.is_empty() {
            return Err(SessionError::IncompleteOutcome {
                have: self.state.outcome.len(),
                need,
            });
        }
        self.state.advance(Phase::Classified)?;
        let rec = self.request_material()?;
        self.state.recommendation = Some(rec.clone());
        self.state.advance(Phase::Recommended)?;
        self.state.advance(Phase::Done)?;
        self.send_summary()?;
        Ok(rec)
    }

    fn send_summary(&mut self) -> Result<(), SessionError> {
        let rec = self
            .state
            .recommendation
            .as_ref()
            .expect("summary follows a recommendation");
        let mut args = vec![
            Term::str(self.state.student.as_str()),
            Term::atom(self.state.desired.as_str()),
            Term::atom(rec.verdict.as_str()),
        ];
        args.extend(rec.targets.iter().map(|t| Term::atom(t.concept.as_str())));
        self.bus.send(
            &AgentId::support(),
            &AgentId::student(),
            Performative::Tell,
            Literal::new("summary", args),
        )?;
        self.bus.dispatch_until_quiescent()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student_model::parse_timestamp;

    const ONT: &str = include_str!("../../../data/sql.ont");
    const BANK: &str = include_str!("../../../data/sql_bank.json");

    struct Fixture {
        engine: Arc<Engine>,
        log: Arc<EventLog>,
        _dir: tempfile::TempDir,
    }

    fn fixture(policy: ClassifyPolicy) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        Fixture {
            engine: Arc::new(Engine::from_texts(ONT, BANK, policy).unwrap()),
            log: Arc::new(EventLog::new(dir.path().join("log.txt"))),
            _dir: dir,
        }
    }

    fn start(f: &Fixture, desired: &str) -> Result<Session, SessionError> {
        let clock = ScriptedClock::new(
            (0..40).map(|i| parse_timestamp("2015-11-03T11:00:00Z").unwrap() + chrono::Duration::seconds(10 * i)),
        );
        Session::start(
            f.engine.clone(),
            f.log.clone(),
            StudentId::new("s1").unwrap(),
            desired,
            Box::new(clock),
            BusConfig::default(),
        )
    }

    fn correct(f: &Fixture, leaf: &ConceptId) -> String {
        f.engine.bank.question_for_leaf(leaf).unwrap().accepted[0].clone()
    }

    #[test]
    fn start_sorts_prerequisite_quiz() {
        let f = fixture(ClassifyPolicy::default());
        let s = start(&f, "UPDATE").unwrap();
        assert_eq!(s.state().assessed_prereq.as_ref().unwrap().as_str(), "delete");
        let q: Vec<_> = s.state().queue.iter().map(ConceptId::as_str).collect();
        assert_eq!(q, ["delete_select", "delete_where"]);
        assert_eq!(s.phase(), Phase::QuizSorted);
    }

    #[test]
    fn least_concept_skips_quiz() {
        let f = fixture(ClassifyPolicy::default());
        let mut s = start(&f, "select").unwrap();
        assert_eq!(s.phase(), Phase::Recommended);
        let rec = s.state().recommendation.clone().unwrap();
        assert_eq!(rec.verdict, Verdict::DirectContent);
        assert_eq!(rec.concepts(), ["select"]);
        assert!(s.next_question().unwrap().is_none());
        assert_eq!(s.finalize().unwrap(), rec);
        assert_eq!(s.phase(), Phase::Done);
    }

    #[test]
    fn unknown_desired() {
        let f = fixture(ClassifyPolicy::default());
        assert!(matches!(
            start(&f, "DROP"),
            Err(SessionError::UnknownDesiredConcept(s)) if s == "DROP"
        ));
        assert!(matches!(
            start(&f, "drop table"),
            Err(SessionError::UnknownDesiredConcept(_))
        ));
        // leaves are assessable sub-topics, not desired concepts
        assert!(matches!(
            start(&f, "delete_where"),
            Err(SessionError::UnknownDesiredConcept(_))
        ));
    }

    #[test]
    fn question_order_and_retries() {
        let f = fixture(ClassifyPolicy::default());
        let mut s = start(&f, "UPDATE").unwrap();
        let q = s.next_question().unwrap().unwrap();
        assert_eq!((q.leaf.as_str(), q.attempt), ("delete_select", 1));

        let fb = s.submit_answer("select 1").unwrap();
        assert_eq!(fb.verdict, Grade::NotPassed);
        assert!(fb.retry);
        assert!(fb.message.contains("delete_select"));

        let q = s.next_question().unwrap().unwrap();
        assert_eq!((q.leaf.as_str(), q.attempt), ("delete_select", 2));
        let fb = s.submit_answer(&correct(&f, &q.leaf)).unwrap();
        assert_eq!(fb.verdict, Grade::Passed);
        assert!(!fb.retry);

        let q = s.next_question().unwrap().unwrap();
        assert_eq!((q.leaf.as_str(), q.attempt), ("delete_where", 1));
        let fb = s.submit_answer(&correct(&f, &q.leaf)).unwrap();
        assert!(!fb.retry);
        assert!(s.next_question().unwrap().is_none());

        let rec = s.finalize().unwrap();
        assert_eq!(rec.verdict, Verdict::ReadyForDesired);
        assert_eq!(rec.concepts(), ["update"]);
        assert_eq!(s.state().question_events, 3);
        assert_eq!(f.log.load_all().unwrap().len(), 3);
    }

    #[test]
    fn phase_errors() {
        let f = fixture(ClassifyPolicy::default());
        let mut s = start(&f, "UPDATE").unwrap();
        assert!(matches!(s.submit_answer("x"), Err(SessionError::WrongPhase { .. })));
        assert!(matches!(
            s.finalize(),
            Err(SessionError::IncompleteOutcome { have: 0, need: 2 })
        ));
        s.next_question().unwrap();
        assert!(matches!(s.next_question(), Err(SessionError::WrongPhase { .. })));
        assert!(matches!(s.submit_answer("   "), Err(SessionError::EmptyAnswer)));
        assert_eq!(s.phase(), Phase::QuestionAsked);
    }

    #[test]
    fn partial_failure_remediates_failed_leaf() {
        let f = fixture(ClassifyPolicy::default());
        let mut s = start(&f, "delete").unwrap();
        let q = s.next_question().unwrap().unwrap();
        s.submit_answer(&correct(&f, &q.leaf)).unwrap();
        for _ in 0..2 {
            s.next_question().unwrap().unwrap();
            s.submit_answer("wrong").unwrap();
        }
        let rec = s.finalize().unwrap();
        assert_eq!(rec.verdict, Verdict::RemediateLeaves);
        assert_eq!(rec.concepts(), ["insert_value"]);
        assert_eq!(
            rec.targets[0].url,
            f.engine.graph.content_url(&ConceptId::new("insert_value").unwrap()).unwrap()
        );
    }

    #[test]
    fn deep_descent_session() {
        let f = fixture(ClassifyPolicy {
            deep_descent: true,
            max_attempts: 1,
        });
        let mut s = start(&f, "delete").unwrap();
        while s.next_question().unwrap().is_some() {
            s.submit_answer("wrong").unwrap();
        }
        let rec = s.finalize().unwrap();
        assert_eq!(rec.verdict, Verdict::DescendPrerequisite);
        assert_eq!(rec.concepts(), ["select"]);
        assert_eq!(s.state().question_events, 2);
    }

    #[test]
    fn phase_history_follows_transitions() {
        let f = fixture(ClassifyPolicy::default());
        let mut s = start(&f, "UPDATE").unwrap();
        while s.next_question().unwrap().is_some() {
            s.submit_answer("wrong").unwrap();
        }
        s.finalize().unwrap();
        let h = &s.state().phase_history;
        assert_eq!(h.first(), Some(&Phase::AwaitDesired));
        assert_eq!(h.last(), Some(&Phase::Done));
        assert!(h.windows(2).all(|w| w[0].can_advance_to(w[1])));
    }
}
