//! Ontology-driven prerequisite pre-assessment: rule-count calculus, one-vs-all
//! rule generation, a speech-act agent bus, quiz sessions and a student log.

pub mod agents;
pub mod chart;
pub mod mas;
pub mod ontology;
pub mod question_bank;
pub mod rule_calc;
pub mod rule_gen;
pub mod session;
pub mod student_model;

pub use chart::{emit_plot_svg, PlotAxis};
pub use ontology::{ConceptId, OntologyError, OntologyGraph, RegularParams};
pub use question_bank::{evaluate_answer, normalize, Bank, BankError, Grade, QuizItem};
pub use rule_calc::{estimate_rules, CalcError, Calculus, RuleCount, SweepGrid, SweepRow};
pub use rule_gen::{
    classify, generate_rules, ClassifiedRule, ClassifyPolicy, Outcome, OutcomeVector,
    Recommendation, RuleError, RuleSet, Target, Verdict,
};
pub use session::{
    Clock, Engine, EvalFeedback, Phase, QuizPrompt, ScriptedClock, Session, SessionError,
    SessionState, SystemClock,
};
pub use student_model::{
    analyze, EventLog, SessionSummary, StudentEvent, StudentId, StudentLogError, TaskAnalysis,
    Timestamp,
};
