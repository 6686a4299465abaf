//! `course-assistant` command-line entry point.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 I/O error,
//! 4 malformed input file, 5 port in use, 6 validation failure. Failures
//! print one JSON object on stderr: `{"error": kind, "message": text}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(name = "course-assistant", version, about = "Course assistant service and analytics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the documents listed in a manifest into a course.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        course: String,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Write a synthetic conversation export from a spec file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the usage report of an export file.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        window: ReportWindow,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Annotation CSV whose tables are added to CSV output.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// JSON file, or directory of CSV tables with `--format csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample conversation ids for manual annotation.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        course: Option<String>,
        /// Only conversations with at least this many rounds are eligible.
        #[arg(long, default_value_t = 1)]
        min_rounds: usize,
        #[arg(long)]
        developers: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate an annotation CSV and print its aggregate tables.
    AnnotateImport {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export stored conversations of a course as newline-delimited JSON.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        course: String,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
        #[arg(long)]
        developers: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportWindow {
    /// First day of week 0; defaults to the date of the earliest conversation.
    #[arg(long)]
    semester_start: Option<NaiveDate>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i32,
    /// Include developer conversations.
    #[arg(long)]
    developers: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { config, course, manifest } => commands::ingest(&config, &course, &manifest),
        Command::Serve { config, host, port } => commands::serve(&config, &host, port),
        Command::Simulate { spec, seed, out } => commands::simulate(&spec, seed, &out),
        Command::Report { input, window, format, annotations, out } => commands::report(
            &input,
            window.semester_start,
            window.utc_offset_minutes,
            window.developers,
            format == Format::Csv,
            annotations.as_deref(),
            out.as_deref(),
        ),
        Command::Sample { input, n, seed, course, min_rounds, developers, out } => {
            commands::sample(&input, n, seed, course.as_deref(), min_rounds, developers, out.as_deref())
        }
        Command::AnnotateImport { input, out } => commands::annotate_import(&input, out.as_deref()),
        Command::Export { config, course, from, to, developers, out } => {
            commands::export(&config, &course, from, to, developers, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return CliError::Usage(first.to_owned()).report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
