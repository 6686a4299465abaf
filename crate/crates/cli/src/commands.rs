use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde_json::json;
use thiserror::Error;

use course_assistant::analytics::{
    aggregate_annotations, compute_report, generate_synthetic_logs, import_annotations, report_table,
    sample_for_annotation, ReportOptions, SyntheticSpec, TABLE_NAMES,
};
use course_assistant::ids::CourseId;
use course_assistant::knowledge::{load_manifest, ManifestError};
use course_assistant::prompt::CourseConfig;
use course_assistant::service::{
    read_export, router, write_export, Caller, Conversation, ExportRange, ServiceError, ServiceSettings,
    SettingsError, UserKind,
};

const OPERATOR: &str = "cli-operator";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Malformed(String),
    #[error("{0} is already in use")]
    PortInUse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn kind(&self) -> (&'static str, u8) {
        match self {
            CliError::Other(_) => ("failure", 1),
            CliError::Usage(_) => ("usage", 2),
            CliError::Io { .. } => ("io", 3),
            CliError::Malformed(_) => ("malformed_input", 4),
            CliError::PortInUse(_) => ("port_in_use", 5),
            CliError::Validation(_) => ("validation", 6),
        }
    }

    pub fn report(&self) -> ExitCode {
        let (kind, code) = self.kind();
        eprintln!("{}", json!({ "error": kind, "message": self.to_string() }));
        ExitCode::from(code)
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

impl From<SettingsError> for CliError {
    fn from(e: SettingsError) -> Self {
        match e {
            SettingsError::Io { path, source } => CliError::Io { path, source },
            SettingsError::Parse(_) | SettingsError::Course { .. } => CliError::Malformed(e.to_string()),
            SettingsError::MissingKey(_) => CliError::Validation(e.to_string()),
            SettingsError::Provider(_) | SettingsError::Persist(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::NotFound(_) | ServiceError::Validation(_) | ServiceError::InvalidConfig(_) => {
                CliError::Validation(e.to_string())
            }
            ServiceError::Record(_) => CliError::Malformed(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_error(path))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(io_error(path)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io_error(Path::new("<stdout>"))),
    }
}

fn read_conversations(path: &Path) -> Result<Vec<Conversation>, CliError> {
    read_export(&read_text(path)?).map_err(|e| CliError::Malformed(format!("{}: {e}", path.display())))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))
}

fn load_settings(config: &Path) -> Result<ServiceSettings, CliError> {
    Ok(ServiceSettings::load(config)?)
}

fn persistent_settings(config: &Path) -> Result<ServiceSettings, CliError> {
    let settings = load_settings(config)?;
    if settings.data_dir.is_none() {
        return Err(CliError::Validation(format!("{}: data_dir must be set", config.display())));
    }
    Ok(settings)
}

pub fn ingest(config: &Path, course: &str, manifest: &Path) -> Result<(), CliError> {
    let settings = persistent_settings(config)?;
    let documents = load_manifest(manifest).map_err(|e| match e {
        ManifestError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Malformed(other.to_string()),
    })?;
    let assistant = settings.build()?;
    let operator = Caller::educator(OPERATOR);
    let course = CourseId::from(course);
    if assistant.course_config(&course).is_none() {
        assistant.put_course_config(&operator, &course, CourseConfig::new(course.clone()))?;
    }
    let summaries = runtime()?.block_on(assistant.upload_documents(&operator, &course, documents))?;
    let text = serde_json::to_string_pretty(&summaries).expect("summaries serialize");
    write_output(None, &format!("{text}\n"))
}

pub fn serve(config: &Path, host: &str, port: u16) -> Result<(), CliError> {
    let settings = load_settings(config)?;
    let assistant = Arc::new(settings.build()?);
    let address = format!("{host}:{port}");
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&address).await.map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                CliError::PortInUse(address.clone())
            } else {
                CliError::Io { path: address.clone().into(), source: e }
            }
        })?;
        tracing::info!(%address, "serving");
        eprintln!("{}", json!({ "listening": listener.local_addr().map(|a| a.to_string()).unwrap_or(address) }));
        axum::serve(listener, router(assistant))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Other(e.to_string()))
    })
}

pub fn simulate(spec_path: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    let text = read_text(spec_path)?;
    let spec: SyntheticSpec = if spec_path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", spec_path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", spec_path.display())))?
    };
    let conversations = generate_synthetic_logs(&spec, seed).map_err(|e| CliError::Validation(e.to_string()))?;
    write_output(Some(out), &write_export(&conversations))
}

pub fn report(
    input: &Path,
    semester_start: Option<NaiveDate>,
    utc_offset_minutes: i32,
    developers: bool,
    csv: bool,
    annotations: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let conversations = read_conversations(input)?;
    let semester_start = semester_start
        .or_else(|| conversations.iter().map(|c| c.started_at).min().map(|t| t.date_naive()))
        .unwrap_or_default();
    let options = ReportOptions {
        utc_offset_minutes,
        exclude_developers: !developers,
        ..ReportOptions::new(semester_start)
    };
    let usage = compute_report(&conversations, &options);
    let annotation_tables = match annotations {
        Some(path) => {
            let file = fs::File::open(path).map_err(io_error(path))?;
            let import = import_annotations(file).map_err(|e| CliError::Malformed(e.to_string()))?;
            Some(aggregate_annotations(&import.accepted))
        }
        None => None,
    };
    if !csv {
        let text = serde_json::to_string_pretty(&usage).expect("report serializes");
        return write_output(out, &format!("{text}\n"));
    }
    let dir = out.ok_or_else(|| CliError::Usage("--format csv needs --out DIR".into()))?;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    for name in TABLE_NAMES {
        if name == "annotations" && annotation_tables.is_none() {
            continue;
        }
        let table = report_table(name, &usage, annotation_tables.as_ref()).map_err(|e| CliError::Other(e.to_string()))?;
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, table.to_csv()).map_err(io_error(&path))?;
    }
    Ok(())
}

pub fn sample(
    input: &Path,
    n: usize,
    seed: u64,
    course: Option<&str>,
    min_rounds: usize,
    developers: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let conversations = read_conversations(input)?;
    let outcome = sample_for_annotation(&conversations, n, seed, |c| {
        course.is_none_or(|id| c.course_id.as_str() == id)
            && c.rounds() >= min_rounds
            && (developers || c.user_kind != UserKind::Developer)
    });
    let text: String = outcome.ids.iter().map(|id| format!("{id}\n")).collect();
    write_output(out, &text)?;
    eprintln!("{}", json!({ "sampled": outcome.ids.len(), "eligible": outcome.eligible, "shortfall": outcome.shortfall }));
    Ok(())
}

pub fn annotate_import(input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let file = fs::File::open(input).map_err(io_error(input))?;
    let import = import_annotations(file).map_err(|e| CliError::Malformed(e.to_string()))?;
    let tables = aggregate_annotations(&import.accepted);
    let body = json!({ "accepted": import.accepted.len(), "rejected": import.rejected, "tables": tables });
    write_output(out, &format!("{}\n", serde_json::to_string_pretty(&body).expect("tables serialize")))?;
    if import.rejected.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} annotation rows rejected", import.rejected.len())))
    }
}

pub fn export(
    config: &Path,
    course: &str,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    developers: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let assistant = persistent_settings(config)?.build()?;
    let text = runtime()?.block_on(assistant.export(
        &Caller::educator(OPERATOR),
        &course.into(),
        ExportRange { from, to },
        developers,
    ))?;
    write_output(out, &text)
}
