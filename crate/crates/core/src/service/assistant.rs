//! The orchestrating service: course configuration, document upload,
//! conversation lifecycle and the question pipeline.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use super::model::{anonymize, Conversation, Message, MessageMetadata, RecordError, UserKind};
use super::persist::{DataDir, PersistError};
use crate::analytics::{compute_report, ReportOptions, UsageReport};
use crate::dispatch::{ConversationMode, DispatchDecision, Dispatcher};
use crate::gateway::{CompletionRequest, LlmGateway};
use crate::ids::{ConversationId, CourseId, DocumentId, MessageId, UserRef};
use crate::knowledge::{DocumentKind, KnowledgeStore, NewDocument, RetrievalResult, StoreError};
use crate::prompt::{
    active_guidance, assemble, course_description_text, educator_rules_text, follow_up_directive,
    mode_instruction_for, select_history, ConfigError, CourseConfig, PromptSections, RetrievedContext, Role,
    TurnView,
};
use crate::response::{process, StructuredResponse};

pub const ADVISORY_NOTICE: &str =
    "This looks like a homework problem. Switch to homework mode to get hints tailored to the assignment.";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
pub struct ManualClock(parking_lot::Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(parking_lot::Mutex::new(start))
    }

    pub fn advance(&self, by: chrono::Duration) {
        *self.0.lock() += by;
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock() = at;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallerRole {
    Student,
    Educator,
}

/// An authenticated caller. `account` is the raw account id; it is hashed
/// before anything is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub account: String,
    pub role: CallerRole,
    pub developer: bool,
}

impl Caller {
    pub fn student(account: impl Into<String>) -> Self {
        Self { account: account.into(), role: CallerRole::Student, developer: false }
    }

    pub fn educator(account: impl Into<String>) -> Self {
        Self { account: account.into(), role: CallerRole::Educator, developer: false }
    }

    pub fn developer(mut self) -> Self {
        self.developer = true;
        self
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("not allowed: {0}")]
    Forbidden(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("invalid course config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Record(#[from] RecordError),
    /// The turn was recorded as an error turn; `message_id` identifies it.
    #[error("answer generation failed: {message}")]
    Generation { message_id: MessageId, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestionRequest {
    pub text: String,
    pub selected_documents: Vec<DocumentId>,
    /// Explicit route; when absent the route follows the selected documents,
    /// or stays on the conversation's current mode if none are selected.
    pub mode: Option<ConversationMode>,
}

impl QuestionRequest {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Default::default() }
    }

    pub fn in_mode(mut self, mode: ConversationMode) -> Self {
        self.mode = Some(mode);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub conversation_id: ConversationId,
    pub message_id: MessageId,
    pub mode: ConversationMode,
    pub response: StructuredResponse,
    pub advisory_shown: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory: Option<String>,
    pub dispatch: DispatchDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub id: DocumentId,
    pub title: String,
    pub kind: DocumentKind,
    pub version: u32,
    pub retired: bool,
    pub chunk_count: usize,
    pub uploaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentView {
    #[serde(flatten)]
    pub summary: DocumentSummary,
    pub raw_text: String,
}

/// Export window over `started_at`: `from` inclusive, `to` exclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl ExportRange {
    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| at >= f) && self.to.is_none_or(|t| at < t)
    }
}

pub struct CourseAssistant {
    store: Arc<KnowledgeStore>,
    gateway: Arc<LlmGateway>,
    dispatcher: Dispatcher,
    configs: RwLock<HashMap<CourseId, Arc<CourseConfig>>>,
    conversations: RwLock<HashMap<ConversationId, Arc<Mutex<Conversation>>>>,
    clock: Arc<dyn Clock>,
    salt: String,
    data: Option<DataDir>,
    knowledge_writes: Mutex<()>,
}

impl CourseAssistant {
    pub fn new(store: Arc<KnowledgeStore>, gateway: Arc<LlmGateway>, salt: impl Into<String>) -> Self {
        Self {
            dispatcher: Dispatcher::new(store.clone(), gateway.clone()),
            store,
            gateway,
            configs: RwLock::new(HashMap::new()),
            conversations: RwLock::new(HashMap::new()),
            clock: Arc::new(SystemClock),
            salt: salt.into(),
            data: None,
            knowledge_writes: Mutex::new(()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Persists every later change under `data` and loads what is already
    /// there. The knowledge snapshot must have been restored into the store
    /// by the caller (see [`DataDir::load`]).
    pub fn with_data_dir(mut self, data: DataDir, configs: Vec<CourseConfig>, conversations: Vec<Conversation>) -> Self {
        {
            let mut map = self.configs.write();
            for config in configs {
                self.store.ensure_course(&config.course_id);
                map.insert(config.course_id.clone(), Arc::new(config));
            }
        }
        {
            let mut map = self.conversations.write();
            for c in conversations {
                map.insert(c.id.clone(), Arc::new(Mutex::new(c)));
            }
        }
        self.data = Some(data);
        self
    }

    pub fn store(&self) -> &Arc<KnowledgeStore> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<LlmGateway> {
        &self.gateway
    }

    pub fn user_ref(&self, caller: &Caller) -> UserRef {
        anonymize(&caller.account, &self.salt)
    }

    pub fn course_config(&self, course: &CourseId) -> Option<Arc<CourseConfig>> {
        self.configs.read().get(course).cloned()
    }

    /// Registers a course config without an authorization check, for
    /// operator setup at startup.
    pub fn install_config(&self, config: CourseConfig) -> Result<(), ConfigError> {
        config.validate()?;
        self.store.ensure_course(&config.course_id);
        self.configs.write().insert(config.course_id.clone(), Arc::new(config));
        Ok(())
    }

    fn require_course(&self, course: &CourseId) -> Result<Arc<CourseConfig>, ServiceError> {
        self.course_config(course).ok_or_else(|| ServiceError::NotFound(format!("course {course}")))
    }

    fn require_educator(caller: &Caller, action: &str) -> Result<(), ServiceError> {
        match caller.role {
            CallerRole::Educator => Ok(()),
            CallerRole::Student => Err(ServiceError::Forbidden(format!("{action} requires the educator role"))),
        }
    }

    /// Creates or replaces a course's configuration. Later turns read the new
    /// config; turns already in flight finish with the snapshot they took.
    pub fn put_course_config(&self, caller: &Caller, course: &CourseId, mut config: CourseConfig) -> Result<(), ServiceError> {
        Self::require_educator(caller, "updating course config")?;
        if config.course_id.as_str().is_empty() {
            config.course_id = course.clone();
        }
        if &config.course_id != course {
            return Err(ServiceError::Validation(format!(
                "config is for course {} but was sent to {course}",
                config.course_id
            )));
        }
        config.validate()?;
        if let Some(data) = &self.data {
            data.save_config(&config)?;
        }
        self.store.ensure_course(course);
        self.configs.write().insert(course.clone(), Arc::new(config));
        Ok(())
    }

    pub async fn upload_documents(
        &self,
        caller: &Caller,
        course: &CourseId,
        documents: Vec<NewDocument>,
    ) -> Result<Vec<DocumentSummary>, ServiceError> {
        Self::require_educator(caller, "uploading documents")?;
        self.require_course(course)?;
        let ids = self.store.ingest_batch(course, documents).await?;
        if let Some(data) = &self.data {
            let _guard = self.knowledge_writes.lock().await;
            data.save_knowledge(&self.store.snapshot())?;
        }
        let index = self.store.index(course).expect("course indexed after ingest");
        Ok(ids.iter().filter_map(|id| summarize(&index, id)).collect())
    }

    pub fn list_documents(&self, course: &CourseId) -> Result<Vec<DocumentSummary>, ServiceError> {
        self.require_course(course)?;
        let Some(index) = self.store.index(course) else { return Ok(Vec::new()) };
        Ok(index.documents().filter_map(|d| summarize(&index, &d.id)).collect())
    }

    pub fn get_document(&self, course: &CourseId, id: &DocumentId) -> Result<DocumentView, ServiceError> {
        self.require_course(course)?;
        let not_found = || ServiceError::NotFound(format!("document {id}"));
        let index = self.store.index(course).ok_or_else(not_found)?;
        let summary = summarize(&index, id).ok_or_else(not_found)?;
        let raw_text = index.document(id).map(|d| d.raw_text.clone()).unwrap_or_default();
        Ok(DocumentView { summary, raw_text })
    }

    pub async fn start_conversation(
        &self,
        caller: &Caller,
        course: &CourseId,
        initial_mode: ConversationMode,
    ) -> Result<ConversationId, ServiceError> {
        self.require_course(course)?;
        let now = self.clock.now();
        let conversation = Conversation {
            id: ConversationId(format!("conv-{}", uuid::Uuid::new_v4().simple())),
            course_id: course.clone(),
            user_ref: self.user_ref(caller),
            user_kind: if caller.developer { UserKind::Developer } else { UserKind::Student },
            mode_at_start: initial_mode,
            started_at: now,
            last_activity_at: now,
            shared: false,
            messages: Vec::new(),
        };
        if let Some(data) = &self.data {
            data.save_conversation(&conversation)?;
        }
        let id = conversation.id.clone();
        self.conversations.write().insert(id.clone(), Arc::new(Mutex::new(conversation)));
        Ok(id)
    }

    fn conversation_handle(&self, id: &ConversationId) -> Result<Arc<Mutex<Conversation>>, ServiceError> {
        self.conversations.read().get(id).cloned().ok_or_else(|| ServiceError::NotFound(format!("conversation {id}")))
    }

    /// Owners always see their conversations; anyone else only while it is
    /// shared. Hidden conversations report not-found.
    pub async fn get_conversation(&self, caller: &Caller, id: &ConversationId) -> Result<Conversation, ServiceError> {
        let handle = self.conversation_handle(id)?;
        let conversation = handle.lock().await;
        if conversation.user_ref == self.user_ref(caller) || conversation.shared {
            Ok(conversation.clone())
        } else {
            Err(ServiceError::NotFound(format!("conversation {id}")))
        }
    }

    pub async fn set_shared(&self, caller: &Caller, id: &ConversationId, shared: bool) -> Result<(), ServiceError> {
        let handle = self.conversation_handle(id)?;
        let mut conversation = handle.lock().await;
        if conversation.user_ref != self.user_ref(caller) {
            return Err(ServiceError::Forbidden("only the owner can change sharing".into()));
        }
        let mut next = conversation.clone();
        next.shared = shared;
        if let Some(data) = &self.data {
            data.save_conversation(&next)?;
        }
        *conversation = next;
        Ok(())
    }

    /// Runs one question through dispatch, retrieval, prompt assembly,
    /// generation and post-processing, and records both turns together.
    /// Turns on the same conversation are serialized.
    pub async fn post_question(
        &self,
        caller: &Caller,
        id: &ConversationId,
        request: QuestionRequest,
    ) -> Result<TurnOutcome, ServiceError> {
        if request.text.trim().is_empty() {
            return Err(ServiceError::Validation("question text must not be empty".into()));
        }
        let handle = self.conversation_handle(id)?;
        let mut conversation = handle.lock().await;
        if conversation.user_ref != self.user_ref(caller) {
            return Err(ServiceError::NotFound(format!("conversation {id}")));
        }
        let course = conversation.course_id.clone();
        let config = self.require_course(&course)?;
        let index = self.store.index(&course);

        let mut selected_kinds = Vec::with_capacity(request.selected_documents.len());
        for doc in &request.selected_documents {
            let kind = index.as_ref().and_then(|i| i.document(doc)).map(|d| d.kind);
            selected_kinds.push(kind.ok_or_else(|| ServiceError::Validation(format!("unknown document {doc}")))?);
        }
        let current_mode = conversation.messages.last().map_or(conversation.mode_at_start, |m| m.metadata.mode);
        let explicit = request.mode.or((selected_kinds.is_empty()).then_some(current_mode));

        let asked_at = self.clock.now();
        let decision =
            self.dispatcher.dispatch(&course, &request.text, &selected_kinds, explicit, config.thresholds).await;
        let retrieval = self.retrieve(&course, &request.text, &config, &decision).await;

        let history = select_history(
            conversation.messages.iter().map(|m| TurnView { role: m.role, text: &m.text, is_error: m.is_error_turn() }),
            config.history_max_rounds,
        );
        let sections = PromptSections {
            developer_instructions: config.developer_instructions.clone(),
            course_description: course_description_text(&config),
            educator_rules: educator_rules_text(&config),
            active_time_guidance: active_guidance(&config, asked_at),
            mode_instruction: mode_instruction_for(&decision, &config),
            retrieved_contexts: retrieval
                .iter()
                .filter_map(|r| {
                    let index = index.as_ref()?;
                    Some(RetrievedContext {
                        title: index.document(&r.document_id)?.title.clone(),
                        text: index.chunk(&r.chunk_id)?.text.clone(),
                    })
                })
                .collect(),
            history,
            follow_up_directive: follow_up_directive(config.follow_up_policy),
            user_question: request.text.clone(),
        };

        let generated = match assemble(&sections, config.prompt_char_budget) {
            Ok(prompt) => {
                let rendered = prompt.rendered.clone();
                match self.gateway.complete(&CompletionRequest::new(prompt)).await {
                    Ok(result) => Ok((rendered, result.text)),
                    Err(e) => Err((Some(rendered), e.to_string())),
                }
            }
            Err(e) => Err((None, e.to_string())),
        };

        let user_index = conversation.messages.len();
        let user_message = Message {
            id: MessageId(format!("{id}-m{user_index}")),
            role: Role::User,
            text: request.text.clone(),
            created_at: asked_at,
            metadata: MessageMetadata::user(decision.mode),
        };
        let answered_at = self.clock.now().max(asked_at);
        let assistant_id = MessageId(format!("{id}-m{}", user_index + 1));
        let base_metadata = MessageMetadata {
            dispatch: Some(decision.clone()),
            retrieval: retrieval.clone(),
            advisory_shown: decision.advisory,
            ..MessageMetadata::user(decision.mode)
        };
        let (assistant_message, outcome) = match generated {
            Ok((prompt, raw)) => {
                let response = process(&raw, &retrieval, index.as_deref(), config.follow_up_policy);
                let message = Message {
                    id: assistant_id.clone(),
                    role: Role::Assistant,
                    text: raw,
                    created_at: answered_at,
                    metadata: MessageMetadata {
                        references: response.references.clone(),
                        has_follow_up: response.follow_up_question.is_some(),
                        prompt: Some(prompt),
                        ..base_metadata
                    },
                };
                let outcome = TurnOutcome {
                    conversation_id: id.clone(),
                    message_id: assistant_id,
                    mode: decision.mode,
                    response,
                    advisory_shown: decision.advisory,
                    advisory: decision.advisory.then(|| ADVISORY_NOTICE.to_owned()),
                    dispatch: decision,
                };
                (message, Ok(outcome))
            }
            Err((prompt, error)) => {
                tracing::warn!(conversation = %id, %error, "answer generation failed");
                let message = Message {
                    id: assistant_id.clone(),
                    role: Role::Assistant,
                    text: String::new(),
                    created_at: answered_at,
                    metadata: MessageMetadata { prompt, error: Some(error.clone()), ..base_metadata },
                };
                (message, Err(ServiceError::Generation { message_id: assistant_id, message: error }))
            }
        };

        let mut next = conversation.clone();
        next.messages.push(user_message);
        next.messages.push(assistant_message);
        next.last_activity_at = answered_at.max(next.last_activity_at);
        if let Some(data) = &self.data {
            data.save_conversation(&next)?;
        }
        *conversation = next;
        outcome
    }

    async fn retrieve(
        &self,
        course: &CourseId,
        question: &str,
        config: &CourseConfig,
        decision: &DispatchDecision,
    ) -> Vec<RetrievalResult> {
        if self.store.index(course).is_none_or(|i| i.chunks().is_empty()) {
            return Vec::new();
        }
        match self.store.retrieve(course, question, config.retrieval_k, decision.retrieval_kind_filter.as_ref()).await {
            Ok(results) => results,
            Err(error) => {
                tracing::warn!(course = %course, %error, "retrieval failed; answering without course materials");
                Vec::new()
            }
        }
    }

    /// Conversations of a course in export order, filtered by start time.
    pub async fn conversations_for(
        &self,
        course: &CourseId,
        range: ExportRange,
        include_developers: bool,
    ) -> Vec<Conversation> {
        let handles: Vec<_> = self.conversations.read().values().cloned().collect();
        let mut out = Vec::new();
        for handle in handles {
            let c = handle.lock().await;
            if &c.course_id == course
                && range.contains(c.started_at)
                && (include_developers || c.user_kind != UserKind::Developer)
            {
                out.push(c.clone());
            }
        }
        out.sort_by(super::model::export_order);
        out
    }

    pub async fn export(
        &self,
        caller: &Caller,
        course: &CourseId,
        range: ExportRange,
        include_developers: bool,
    ) -> Result<String, ServiceError> {
        Self::require_educator(caller, "exporting conversations")?;
        self.require_course(course)?;
        Ok(super::model::write_export(&self.conversations_for(course, range, include_developers).await))
    }

    /// Loads exported records. Existing conversations with the same id are
    /// replaced.
    pub async fn import(&self, caller: &Caller, export: &str) -> Result<usize, ServiceError> {
        Self::require_educator(caller, "importing conversations")?;
        let records = super::model::read_export(export)?;
        let count = records.len();
        for c in records {
            if let Some(data) = &self.data {
                data.save_conversation(&c)?;
            }
            self.conversations.write().insert(c.id.clone(), Arc::new(Mutex::new(c)));
        }
        Ok(count)
    }

    pub async fn usage_report(
        &self,
        caller: &Caller,
        course: &CourseId,
        include_developers: bool,
    ) -> Result<UsageReport, ServiceError> {
        Self::require_educator(caller, "viewing analytics")?;
        let config = self.require_course(course)?;
        let conversations = self.conversations_for(course, ExportRange::default(), true).await;
        let semester_start = config
            .semester_start
            .or_else(|| conversations.first().map(|c| c.started_at.date_naive()))
            .unwrap_or(NaiveDate::MIN);
        let options = ReportOptions {
            utc_offset_minutes: config.utc_offset_minutes,
            exclude_developers: !include_developers,
            ..ReportOptions::new(semester_start)
        };
        Ok(compute_report(&conversations, &options))
    }
}

fn summarize(index: &crate::knowledge::CourseIndex, id: &DocumentId) -> Option<DocumentSummary> {
    let d = index.document(id)?;
    Some(DocumentSummary {
        id: d.id.clone(),
        title: d.title.clone(),
        kind: d.kind,
        version: d.version,
        retired: d.retired,
        chunk_count: index.chunks_of(id).count(),
        uploaded_at: d.uploaded_at,
    })
}
