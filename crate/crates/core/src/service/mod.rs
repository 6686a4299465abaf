//! Conversation records, persistence, the orchestrating service and its
//! HTTP API.

mod assistant;
mod http;
mod model;
mod persist;
mod settings;

pub use assistant::{
    Caller, CallerRole, Clock, CourseAssistant, DocumentSummary, DocumentView, ExportRange, ManualClock,
    QuestionRequest, ServiceError, SystemClock, TurnOutcome, ADVISORY_NOTICE,
};
pub use http::{router, HEADER_DEVELOPER, HEADER_ROLE, HEADER_USER};
pub use model::{
    anonymize, export_order, is_anonymized, read_export, scan_for_pii, write_export, Conversation, Message,
    MessageMetadata, RecordError, UserKind, PII_DENY_LIST,
};
pub use persist::{DataDir, LoadedState, PersistError};
pub use settings::{EmbeddingSettings, LlmSettings, ServiceSettings, SettingsError};
