//! Subcommand bodies. Each returns the text to print so it can be tested without a process.

use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Arc;

use prereq_core::mas::BusConfig;
use prereq_core::rule_calc::emit_dataset_csv;
use prereq_core::student_model::{format_hms, format_timestamp};
use prereq_core::{
    analyze, emit_plot_svg, estimate_rules, generate_rules, Calculus, ClassifyPolicy, Engine,
    EventLog, Grade, OntologyGraph, PlotAxis, Recommendation, RuleCount, Session, SessionSummary,
    StudentId, SystemClock,
};

use crate::{read_file, write_file, CliError};

pub fn validate(ont: &Path) -> Result<String, CliError> {
    let graph = OntologyGraph::load(&read_file(ont)?)?;
    let p = graph.validate_regular()?;
    let r = estimate_rules(p.classes.into(), p.leaves.into())?;
    Ok(format!(
        "regular: {} parents, {} leaves each, C = {}, N = {}, R = {r}\n",
        graph.parents().len(),
        p.leaves,
        p.classes,
        p.leaves
    ))
}

pub fn estimate(c: i64, n: i64) -> Result<String, CliError> {
    Ok(format!("{}\n", estimate_rules(c, n)?))
}

fn calculus(raw: bool) -> Calculus {
    Calculus {
        check_consistency: !raw,
        ..Calculus::default()
    }
}

pub fn increment(r: u128, c: i64, n_new: i64, raw: bool) -> Result<String, CliError> {
    Ok(format!("{}\n", calculus(raw).increment_rules(RuleCount(r), c, n_new)?))
}

pub fn decrement(r: u128, c: i64, n_old: i64, raw: bool) -> Result<String, CliError> {
    Ok(format!("{}\n", calculus(raw).decrement_rules(RuleCount(r), c, n_old)?))
}

/// Writes the CSV/SVG files that were asked for; prints the CSV when no file is named.
pub fn sweep(
    c: RangeInclusive<i64>,
    n: RangeInclusive<i64>,
    csv: Option<&Path>,
    svg: Option<(&Path, PlotAxis)>,
) -> Result<String, CliError> {
    let grid = Calculus::default().sweep(c, n)?;
    let text = emit_dataset_csv(&grid)?;
    let mut out = String::new();
    match csv {
        Some(path) => {
            write_file(path, &text)?;
            out.push_str(&format!("wrote {} rows to {}\n", grid.rows().len(), path.display()));
        }
        None if svg.is_none() => out.push_str(&text),
        None => {}
    }
    if let Some((path, axis)) = svg {
        write_file(path, &emit_plot_svg(&grid, axis)?)?;
        out.push_str(&format!("wrote chart to {}\n", path.display()));
    }
    Ok(out)
}

pub fn rules(ont: &Path, deep_descent: bool, json: bool) -> Result<String, CliError> {
    let graph = OntologyGraph::load(&read_file(ont)?)?;
    let policy = ClassifyPolicy {
        deep_descent,
        ..ClassifyPolicy::default()
    };
    let rules = generate_rules(&graph, &policy)?;
    Ok(if json {
        rules.to_json() + "\n"
    } else {
        rules.to_text()
    })
}

fn outcome_label(g: Grade) -> &'static str {
    match g {
        Grade::Passed => "Passed",
        Grade::NotPassed => "Not Passed",
    }
}

/// Renders summaries as the history table: one row per attempt, then per-task averages.
pub fn history_table(summaries: &[SessionSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        out.push_str(&format!("student {}  desired_concept {}\n", s.student, s.desired));
        out.push_str(&format!(
            "{:<16} {:>7}  {:<20} {:<20} {:<10} {:>8}\n",
            "question", "attempt", "asked", "answered", "outcome", "spent"
        ));
        for t in &s.tasks {
            for a in &t.attempts {
                out.push_str(&format!(
                    "{:<16} {:>7}  {:<20} {:<20} {:<10} {:>8}\n",
                    t.question.as_str(),
                    a.attempt,
                    format_timestamp(&a.asked_at),
                    format_timestamp(&a.answered_at),
                    outcome_label(a.outcome),
                    format_hms(a.duration_secs)
                ));
            }
        }
        for t in &s.tasks {
            out.push_str(&format!(
                "  {}: average {} s, {}\n",
                t.question,
                t.average_duration,
                outcome_label(t.final_outcome)
            ));
        }
        out.push_str(&format!("  total {}\n  {}\n\n", format_hms(s.total_duration), s.remark));
    }
    out
}

pub fn analyze_log(log: &Path, student: &str, json: bool) -> Result<String, CliError> {
    let student = StudentId::new(student)?;
    let events = EventLog::new(log).load_history(&student)?;
    let summaries = analyze(&events);
    if json {
        return Ok(serde_json::to_string_pretty(&summaries).expect("summaries serialize") + "\n");
    }
    if summaries.is_empty() {
        return Ok(format!("no sessions recorded for {student}\n"));
    }
    Ok(history_table(&summaries))
}

fn recommendation_text(rec: &Recommendation) -> String {
    let mut out = format!("recommendation: {}\n", rec.verdict);
    for t in &rec.targets {
        out.push_str(&format!("  {}  {}\n", t.concept, t.url));
    }
    out
}

pub struct SessionArgs<'a> {
    pub ontology: &'a Path,
    pub bank: &'a Path,
    pub log: &'a Path,
    pub student: &'a str,
    pub desired: Option<&'a str>,
    pub policy: ClassifyPolicy,
}

fn read_line(input: &mut impl BufRead) -> Result<String, CliError> {
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(|source| CliError::Io {
        path: "<stdin>".into(),
        source,
    })?;
    if n == 0 {
        return Err(CliError::InputClosed);
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

/// Terminal pre-assessment: asks for the desired concept (unless given), then every question.
pub fn interactive_session(
    args: &SessionArgs<'_>,
    input: &mut impl BufRead,
    output: &mut impl Write,
) -> Result<(), CliError> {
    let engine = Arc::new(Engine::from_texts(
        &read_file(args.ontology)?,
        &read_file(args.bank)?,
        args.policy,
    )?);
    let log = Arc::new(EventLog::new(args.log));
    let student = StudentId::new(args.student)?;
    let io = |source| CliError::Io {
        path: "<stdout>".into(),
        source,
    };

    let desired = match args.desired {
        Some(d) => d.to_string(),
        None => {
            write!(output, "desired concept: ").map_err(io)?;
            output.flush().map_err(io)?;
            read_line(input)?
        }
    };
    let mut session = Session::start(
        engine,
        log,
        student,
        &desired,
        Box::new(SystemClock),
        BusConfig::default(),
    )?;
    if let Some(prereq) = &session.state().assessed_prereq {
        writeln!(output, "pre-assessing {prereq} before {}", session.state().desired).map_err(io)?;
    }
    while let Some(q) = session.next_question()? {
        write!(
            output,
            "[{} attempt {}/{}] {}\n> ",
            q.leaf, q.attempt, q.max_attempts, q.prompt
        )
        .map_err(io)?;
        output.flush().map_err(io)?;
        let feedback = loop {
            let answer = read_line(input)?;
            if answer.trim().is_empty() {
                write!(output, "> ").map_err(io)?;
                output.flush().map_err(io)?;
                continue;
            }
            break session.submit_answer(&answer)?;
        };
        writeln!(output, "{}", feedback.message).map_err(io)?;
    }
    let rec = session.finalize()?;
    write!(output, "{}", recommendation_text(&rec)).map_err(io)?;
    Ok(())
}
