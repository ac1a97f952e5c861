use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use prereq_cli::commands::{self, SessionArgs};
use prereq_cli::server::{self, ServerConfig};
use prereq_cli::{parse_range, CliError};
use prereq_core::{ClassifyPolicy, PlotAxis};

#[derive(Parser)]
#[command(name = "prereq", version, about = "Ontology-driven prerequisite pre-assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    C,
    N,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(clap::Args)]
struct PolicyArgs {
    /// On an all-fail outcome, point at the next prerequisite down instead of the failed leaves.
    #[arg(long)]
    deep_descent: bool,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    max_attempts: u32,
}

impl PolicyArgs {
    fn policy(&self) -> ClassifyPolicy {
        ClassifyPolicy {
            deep_descent: self.deep_descent,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check that an ontology file is regular.
    Validate { ontology: PathBuf },
    /// Number of rules for C classes and N leaves per parent.
    Estimate {
        #[arg(long)]
        c: i64,
        #[arg(long)]
        n: i64,
    },
    /// Rule count after adding a leaf to every parent.
    Increment {
        #[arg(long)]
        r: u128,
        #[arg(long)]
        c: i64,
        #[arg(long)]
        n_new: i64,
        /// Skip the check that R matches the closed form.
        #[arg(long)]
        raw: bool,
    },
    /// Rule count after removing a leaf from every parent.
    Decrement {
        #[arg(long)]
        r: u128,
        #[arg(long)]
        c: i64,
        #[arg(long)]
        n_old: i64,
        #[arg(long)]
        raw: bool,
    },
    /// Rule counts over a grid of C and N.
    Sweep {
        #[arg(long, value_parser = parse_range)]
        c: std::ops::RangeInclusive<i64>,
        #[arg(long, value_parser = parse_range)]
        n: std::ops::RangeInclusive<i64>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "c", requires = "svg")]
        axis: Axis,
    },
    /// Print the classified rule set of an ontology.
    Rules {
        ontology: PathBuf,
        #[arg(long)]
        deep_descent: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run a pre-assessment in the terminal.
    Session {
        ontology: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        student: String,
        /// Desired concept; asked interactively when omitted.
        #[arg(long)]
        desired: Option<String>,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Per-session history of a student from the event log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        student: String,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP/JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = prereq_core::rule_calc::DEFAULT_K_MAX)]
        k_max: u32,
        #[arg(long, default_value_t = prereq_core::mas::DEFAULT_MAX_MESSAGES)]
        max_messages: usize,
        /// Minutes before an untouched session is dropped.
        #[arg(long, default_value_t = 30)]
        idle_timeout_mins: u64,
        #[arg(long, hide = true)]
        allow_scripted_clock: bool,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Validate { ontology } => commands::validate(&ontology),
        Command::Estimate { c, n } => commands::estimate(c, n),
        Command::Increment { r, c, n_new, raw } => commands::increment(r, c, n_new, raw),
        Command::Decrement { r, c, n_old, raw } => commands::decrement(r, c, n_old, raw),
        Command::Sweep { c, n, csv, svg, axis } => {
            let axis = match axis {
                Axis::C => PlotAxis::CVsR,
                Axis::N => PlotAxis::NVsR,
            };
            commands::sweep(c, n, csv.as_deref(), svg.as_deref().map(|p| (p, axis)))
        }
        Command::Rules {
            ontology,
            deep_descent,
            format,
        } => commands::rules(&ontology, deep_descent, matches!(format, Format::Json)),
        Command::Session {
            ontology,
            bank,
            log,
            student,
            desired,
            policy,
        } => {
            let args = SessionArgs {
                ontology: &ontology,
                bank: &bank,
                log: &log,
                student: &student,
                desired: desired.as_deref(),
                policy: policy.policy(),
            };
            let stdin = std::io::stdin();
            commands::interactive_session(&args, &mut stdin.lock(), &mut std::io::stdout())?;
            Ok(String::new())
        }
        Command::Analyze { log, student, json } => commands::analyze_log(&log, &student, json),
        Command::Serve {
            port,
            ontology,
            bank,
            log,
            policy,
            k_max,
            max_messages,
            idle_timeout_mins,
            allow_scripted_clock,
        } => {
            let config = ServerConfig {
                port,
                policy: policy.policy(),
                k_max,
                max_messages,
                idle_timeout: Duration::from_secs(idle_timeout_mins * 60),
                allow_scripted_clock,
                ..ServerConfig::new(ontology, bank, log)
            };
            let rt = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
            rt.block_on(server::serve(config))?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
