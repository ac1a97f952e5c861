//! Append-only student activity log and per-session analytics.
//!
//! Each attempt at a quiz question is one line:
//!
//! ```text
//! record("s1","update","delete_select",1,"not_passed","2015-11-03T11:08:54Z","2015-11-03T11:09:27Z").
//! ```

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ConceptId;
use crate::question_bank::Grade;

pub type Timestamp = DateTime<Utc>;

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn format_timestamp(t: &Timestamp) -> String {
    t.format(TIME_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .ok()
        .map(|n| n.and_utc())
}

#[derive(Debug, Error)]
pub enum StudentLogError {
    #[error("log storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

/// Learner identifier: `[A-Za-z0-9_.@-]+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StudentId(String);

impl StudentId {
    pub fn new(raw: &str) -> Result<Self, StudentLogError> {
        let ok = !raw.is_empty()
            && raw
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '@' | '-'));
        if ok {
            Ok(Self(raw.to_string()))
        } else {
            Err(StudentLogError::InvalidEvent(format!(
                "invalid student id `{raw}`"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for StudentId {
    type Error = StudentLogError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<StudentId> for String {
    fn from(value: StudentId) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentEvent {
    pub student: StudentId,
    pub desired: ConceptId,
    pub question: ConceptId,
    pub attempt: u32,
    pub outcome: Grade,
    pub asked_at: Timestamp,
    pub answered_at: Timestamp,
}

impl StudentEvent {
    pub fn validate(&self) -> Result<(), StudentLogError> {
        if self.attempt < 1 {
            return Err(StudentLogError::InvalidEvent("attempt must be at least 1".into()));
        }
        if self.answered_at < self.asked_at {
            return Err(StudentLogError::InvalidEvent(format!(
                "answered_at {} precedes asked_at {}",
                format_timestamp(&self.answered_at),
                format_timestamp(&self.asked_at)
            )));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> i64 {
        (self.answered_at - self.asked_at).num_seconds()
    }

    /// The log line, without its trailing newline.
    pub fn to_line(&self) -> String {
        format!(
            r#"record("{}","{}","{}",{},"{}","{}","{}")."#,
            self.student,
            self.desired,
            self.question,
            self.attempt,
            self.outcome.as_str(),
            format_timestamp(&self.asked_at),
            format_timestamp(&self.answered_at)
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let body = line
            .strip_prefix("record(")
            .and_then(|s| s.strip_suffix(")."))
            .ok_or("expected `record(...).`")?;
        let fields: Vec<&str> = body.split(',').collect();
        let [student, desired, question, attempt, outcome, asked, answered] = fields.as_slice()
        else {
            return Err(format!("expected 7 fields, got {}", fields.len()));
        };
        let quoted = |s: &str| -> Result<String, String> {
            s.strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .map(str::to_string)
                .ok_or_else(|| format!("expected quoted field, got `{s}`"))
        };
        let time = |s: &str| -> Result<Timestamp, String> {
            let q = quoted(s)?;
            parse_timestamp(&q).ok_or_else(|| format!("bad timestamp `{q}`"))
        };
        let event = StudentEvent {
            student: StudentId::new(&quoted(student)?).map_err(|e| e.to_string())?,
            desired: ConceptId::new(&quoted(desired)?).map_err(|e| e.to_string())?,
            question: ConceptId::new(&quoted(question)?).map_err(|e| e.to_string())?,
            attempt: attempt
                .parse()
                .map_err(|e| format!("bad attempt `{attempt}`: {e}"))?,
            outcome: Grade::parse(&quoted(outcome)?)
                .ok_or_else(|| format!("bad outcome {outcome}"))?,
            asked_at: time(asked)?,
            answered_at: time(answered)?,
        };
        event.validate().map_err(|e| e.to_string())?;
        Ok(event)
    }
}

/// Append-only text log. Appends are serialized through an internal lock.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    writer: Mutex<()>,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            writer: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one line and syncs it to disk before returning.
    pub fn record_event(&self, event: &StudentEvent) -> Result<(), StudentLogError> {
        event.validate()?;
        let line = format!("{}\n", event.to_line());
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    /// Every event in file order. A missing file is an empty log.
    pub fn load_all(&self) -> Result<Vec<StudentEvent>, StudentLogError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                StudentEvent::parse_line(line.trim_end())
                    .map_err(|message| StudentLogError::Parse { line: i + 1, message })?,
            );
        }
        Ok(events)
    }

    pub fn load_history(&self, student: &StudentId) -> Result<Vec<StudentEvent>, StudentLogError> {
        let mut events = self.load_all()?;
        events.retain(|e| &e.student == student);
        Ok(events)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub asked_at: Timestamp,
    pub answered_at: Timestamp,
    pub outcome: Grade,
    pub duration_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnalysis {
    pub question: ConceptId,
    pub attempts: Vec<AttemptRecord>,
    pub attempt_durations: Vec<i64>,
    /// Arithmetic mean in seconds, rounded to the nearest half second.
    pub average_duration: f64,
    /// Passed if any attempt passed.
    pub final_outcome: Grade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub student: StudentId,
    pub desired: ConceptId,
    pub tasks: Vec<TaskAnalysis>,
    pub total_duration: i64,
    pub prepared: bool,
    pub recommended: Vec<ConceptId>,
    pub remark: String,
}

fn half_second_mean(durations: &[i64]) -> f64 {
    if durations.is_empty() {
        return 0.0;
    }
    let sum: i64 = durations.iter().sum();
    let halves = (2 * sum) as f64 / durations.len() as f64;
    halves.round() / 2.0
}

/// Remark for a finished pre-assessment.
pub fn remark(desired: &ConceptId, prepared: bool, recommended: &[ConceptId]) -> String {
    if prepared {
        format!("prepared to learn {desired}")
    } else {
        let names: Vec<&str> = recommended.iter().map(ConceptId::as_str).collect();
        format!(
            "not prepared to learn {desired}; recommended to learn {}",
            names.join("; and ")
        )
    }
}

/// Splits a chronological event list into sessions. A session ends when the
/// desired concept changes or a question restarts at attempt 1.
fn split_sessions(events: &[StudentEvent]) -> Vec<&[StudentEvent]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..events.len() {
        let cur = &events[i];
        let group = &events[start..i];
        let restart = cur.student != group[0].student
            || cur.desired != group[0].desired
            || (cur.attempt == 1 && group.iter().any(|e| e.question == cur.question));
        if restart {
            out.push(group);
            start = i;
        }
    }
    if start < events.len() {
        out.push(&events[start..]);
    }
    out
}

/// Per-session durations, averages and remark, computed from raw timestamps.
/// Failed leaves are the recommended material.
pub fn analyze(events: &[StudentEvent]) -> Vec<SessionSummary> {
    split_sessions(events)
        .into_iter()
        .map(|group| {
            let mut tasks: Vec<TaskAnalysis> = Vec::new();
            for e in group {
                let record = AttemptRecord {
                    attempt: e.attempt,
                    asked_at: e.asked_at,
                    answered_at: e.answered_at,
                    outcome: e.outcome,
                    duration_secs: e.duration_secs(),
                };
                match tasks.iter_mut().find(|t| t.question == e.question) {
                    Some(t) => t.attempts.push(record),
                    None => tasks.push(TaskAnalysis {
                        question: e.question.clone(),
                        attempts: vec![record],
                        attempt_durations: Vec::new(),
                        average_duration: 0.0,
                        final_outcome: Grade::NotPassed,
                    }),
                }
            }
            for t in &mut tasks {
                t.attempt_durations = t.attempts.iter().map(|a| a.duration_secs).collect();
                t.average_duration = half_second_mean(&t.attempt_durations);
                t.final_outcome = if t.attempts.iter().any(|a| a.outcome == Grade::Passed) {
                    Grade::Passed
                } else {
                    Grade::NotPassed
                };
            }
            let total_duration = tasks.iter().flat_map(|t| &t.attempt_durations).sum();
            let recommended: Vec<ConceptId> = tasks
                .iter()
                .filter(|t| t.final_outcome == Grade::NotPassed)
                .map(|t| t.question.clone())
                .collect();
            let prepared = recommended.is_empty();
            let desired = group[0].desired.clone();
            SessionSummary {
                student: group[0].student.clone(),
                remark: remark(&desired, prepared, &recommended),
                desired,
                tasks,
                total_duration,
                prepared,
                recommended,
            }
        })
        .collect()
}

/// `HH-MM-SS` rendering of a duration in seconds.
pub fn format_hms(secs: i64) -> String {
    format!("{:02}-{:02}-{:02}", secs / 3600, secs / 60 % 60, secs % 60)
}
