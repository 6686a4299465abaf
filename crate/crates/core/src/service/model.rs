//! Persisted conversation records and the newline-delimited export format.
//!
//! Export format: one JSON object per line, one conversation per object,
//! ordered by `started_at` then `id`. Fields:
//!
//! | field | type | notes |
//! |---|---|---|
//! | `id` | string | conversation id |
//! | `course_id` | string | |
//! | `user_ref` | string | anonymized, `u-` + 16 hex digits |
//! | `user_kind` | `student` \| `developer` | |
//! | `mode_at_start` | `general` \| `homework` \| `practice` | |
//! | `started_at`, `last_activity_at` | string | ISO-8601 UTC |
//! | `shared` | bool | |
//! | `messages` | array | see below |
//!
//! Each message has `id`, `role` (`user` \| `assistant`), `text`,
//! `created_at` and `metadata`: `mode`, and for assistant turns `dispatch`
//! (the full dispatch decision), `retrieval` (ranked chunk ids and scores),
//! `references`, `has_follow_up`, `advisory_shown`, optional `prompt` (the
//! rendered prompt) and optional `error` (present on error turns).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dispatch::{ConversationMode, DispatchDecision};
use crate::ids::{ConversationId, CourseId, MessageId, UserRef};
use crate::knowledge::RetrievalResult;
use crate::prompt::Role;
use crate::response::Reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Student,
    Developer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageMetadata {
    pub mode: ConversationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatch: Option<DispatchDecision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval: Vec<RetrievalResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<Reference>,
    #[serde(default)]
    pub has_follow_up: bool,
    #[serde(default)]
    pub advisory_shown: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MessageMetadata {
    pub fn user(mode: ConversationMode) -> Self {
        Self {
            mode,
            dispatch: None,
            retrieval: Vec::new(),
            references: Vec::new(),
            has_follow_up: false,
            advisory_shown: false,
            prompt: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub role: Role,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub metadata: MessageMetadata,
}

impl Message {
    pub fn is_error_turn(&self) -> bool {
        self.role == Role::Assistant && self.metadata.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: ConversationId,
    pub course_id: CourseId,
    pub user_ref: UserRef,
    pub user_kind: UserKind,
    pub mode_at_start: ConversationMode,
    pub started_at: DateTime<Utc>,
    pub last_activity_at: DateTime<Utc>,
    pub shared: bool,
    pub messages: Vec<Message>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("conversation {id}: message {index} breaks user/assistant alternation")]
    Alternation { id: ConversationId, index: usize },
    #[error("conversation {id}: last_activity_at precedes started_at")]
    Timestamps { id: ConversationId },
    #[error("conversation {id}: assistant message {index} lacks dispatch metadata")]
    MissingMetadata { id: ConversationId, index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Conversation {
    /// Number of user questions that received a (non-error) assistant reply.
    /// This is the single definition of a dialogue round.
    pub fn rounds(&self) -> usize {
        self.messages
            .windows(2)
            .filter(|w| w[0].role == Role::User && w[1].role == Role::Assistant && !w[1].is_error_turn())
            .count()
    }

    pub fn question_count(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::User).count()
    }

    pub fn duration(&self) -> chrono::Duration {
        self.last_activity_at - self.started_at
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.last_activity_at < self.started_at {
            return Err(RecordError::Timestamps { id: self.id.clone() });
        }
        for (index, message) in self.messages.iter().enumerate() {
            let expected = if index % 2 == 0 { Role::User } else { Role::Assistant };
            if message.role != expected {
                return Err(RecordError::Alternation { id: self.id.clone(), index });
            }
            if message.role == Role::Assistant && !message.is_error_turn() && message.metadata.dispatch.is_none() {
                return Err(RecordError::MissingMetadata { id: self.id.clone(), index });
            }
        }
        Ok(())
    }
}

/// Salted SHA-256 of an account identifier, truncated to 16 hex digits.
pub fn anonymize(account_id: &str, salt: &str) -> UserRef {
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update(b":");
    hasher.update(account_id.as_bytes());
    let digest = hex::encode(hasher.finalize());
    UserRef(format!("u-{}", &digest[..16]))
}

pub fn is_anonymized(user: &UserRef) -> bool {
    user.as_str()
        .strip_prefix("u-")
        .is_some_and(|h| h.len() == 16 && h.bytes().all(|b| b.is_ascii_hexdigit()))
}

/// Keys that must never appear in exported records.
pub const PII_DENY_LIST: [&str; 8] =
    ["name", "email", "account_id", "username", "user_name", "full_name", "student_id", "raw_user_id"];

/// JSON paths of deny-listed keys or non-anonymized user refs in one record.
pub fn scan_for_pii(record: &serde_json::Value) -> Vec<String> {
    fn walk(value: &serde_json::Value, path: String, out: &mut Vec<String>) {
        match value {
            serde_json::Value::Object(map) => {
                for (key, child) in map {
                    let child_path = format!("{path}.{key}");
                    if PII_DENY_LIST.contains(&key.to_ascii_lowercase().as_str()) {
                        out.push(child_path.clone());
                    }
                    if key == "user_ref" && !child.as_str().is_some_and(|s| is_anonymized(&UserRef::from(s))) {
                        out.push(child_path.clone());
                    }
                    walk(child, child_path, out);
                }
            }
            serde_json::Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(child, format!("{path}[{i}]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(record, "$".into(), &mut out);
    out
}

pub fn export_order(a: &Conversation, b: &Conversation) -> std::cmp::Ordering {
    a.started_at.cmp(&b.started_at).then_with(|| a.id.cmp(&b.id))
}

/// Serializes conversations as newline-delimited JSON in export order.
pub fn write_export<'a>(conversations: impl IntoIterator<Item = &'a Conversation>) -> String {
    let mut sorted: Vec<&Conversation> = conversations.into_iter().collect();
    sorted.sort_by(|a, b| export_order(a, b));
    let mut out = String::new();
    for conversation in sorted {
        out.push_str(&serde_json::to_string(conversation).expect("conversation serializes"));
        out.push('\n');
    }
    out
}

/// Parses newline-delimited conversations, validating each record. Blank lines are skipped.
pub fn read_export(text: &str) -> Result<Vec<Conversation>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let conversation: Conversation =
            serde_json::from_str(line).map_err(|e| RecordError::Parse { line: i + 1, message: e.to_string() })?;
        conversation.validate()?;
        out.push(conversation);
    }
    Ok(out)
}
