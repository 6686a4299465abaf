//! Mode resolution and two-stage homework detection.
//!
//! Stage one compares the question embedding with the course's homework
//! chunks. At or above `high` the question is homework; below `low` it is
//! not; in between the model gateway is asked a yes/no question. Detection
//! failures never block a turn: they fail open to "not homework" and are
//! flagged as degraded.

use std::fmt;
use std::future::Future;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, LlmGateway};
use crate::ids::{ChunkId, CourseId};
use crate::knowledge::{DocumentKind, KindFilter, KnowledgeStore};

/// Reported as `max_similarity` when the course has no homework chunks.
pub const NO_CANDIDATE_SIMILARITY: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversationMode {
    General,
    Homework,
    Practice,
}

impl ConversationMode {
    pub const ALL: [ConversationMode; 3] = [ConversationMode::General, ConversationMode::Homework, ConversationMode::Practice];

    pub fn as_str(self) -> &'static str {
        match self {
            ConversationMode::General => "general",
            ConversationMode::Homework => "homework",
            ConversationMode::Practice => "practice",
        }
    }
}

impl fmt::Display for ConversationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConversationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConversationMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.60, high: 0.90 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid thresholds: low {low} must be below high {high}, both within [-1, 1]")]
pub struct ThresholdError {
    pub low: f64,
    pub high: f64,
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, ThresholdError> {
        let t = Self { low, high };
        t.validate().map(|_| t)
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        let in_range = |v: f64| (-1.0..=1.0).contains(&v);
        if self.low < self.high && in_range(self.low) && in_range(self.high) {
            Ok(())
        } else {
            Err(ThresholdError { low: self.low, high: self.high })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeworkVerdict {
    pub is_homework: bool,
    pub max_similarity: f64,
    pub matched_chunk: Option<ChunkId>,
    pub llm_consulted: bool,
    pub llm_verdict: Option<bool>,
    /// Detection could not complete (embedding or verdict failure) and failed open.
    #[serde(default)]
    pub degraded: bool,
}

impl HomeworkVerdict {
    pub fn no_candidates() -> Self {
        Self {
            is_homework: false,
            max_similarity: NO_CANDIDATE_SIMILARITY,
            matched_chunk: None,
            llm_consulted: false,
            llm_verdict: None,
            degraded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    pub mode: ConversationMode,
    pub homework: HomeworkVerdict,
    /// Suggest switching to homework mode. The mode itself is not changed.
    pub advisory: bool,
    pub retrieval_kind_filter: Option<KindFilter>,
}

/// An explicit choice wins; otherwise homework documents select homework
/// mode, quiz or exam documents select practice mode, anything else is general.
pub fn resolve_mode(
    selected: impl IntoIterator<Item = DocumentKind>,
    explicit: Option<ConversationMode>,
) -> ConversationMode {
    if let Some(mode) = explicit {
        return mode;
    }
    let (mut homework, mut practice) = (false, false);
    for kind in selected {
        match kind {
            DocumentKind::Homework => homework = true,
            DocumentKind::Quiz | DocumentKind::Exam => practice = true,
            DocumentKind::Lecture | DocumentKind::Other => {}
        }
    }
    if homework {
        ConversationMode::Homework
    } else if practice {
        ConversationMode::Practice
    } else {
        ConversationMode::General
    }
}

pub fn retrieval_filter_for(mode: ConversationMode) -> Option<KindFilter> {
    match mode {
        ConversationMode::General => None,
        ConversationMode::Homework => Some(KindFilter::from([DocumentKind::Homework])),
        ConversationMode::Practice => Some(KindFilter::from([DocumentKind::Quiz, DocumentKind::Exam])),
    }
}

pub fn decide(mode: ConversationMode, homework: HomeworkVerdict) -> DispatchDecision {
    DispatchDecision {
        advisory: homework.is_homework && mode != ConversationMode::Homework,
        retrieval_kind_filter: retrieval_filter_for(mode),
        mode,
        homework,
    }
}

/// Applies the threshold band to an already computed similarity. `ask` is
/// invoked only inside `[low, high)`.
pub async fn classify_similarity<F, Fut>(
    max_similarity: f64,
    matched_chunk: Option<ChunkId>,
    thresholds: Thresholds,
    ask: F,
) -> HomeworkVerdict
where
    F: FnOnce() -> Fut,
    Fut: Future<Output = Result<bool, GatewayError>>,
{
    let mut verdict = HomeworkVerdict {
        is_homework: false,
        max_similarity,
        matched_chunk,
        llm_consulted: false,
        llm_verdict: None,
        degraded: false,
    };
    if max_similarity >= thresholds.high {
        verdict.is_homework = true;
    } else if max_similarity >= thresholds.low {
        match ask().await {
            Ok(answer) => {
                verdict.llm_consulted = true;
                verdict.llm_verdict = Some(answer);
                verdict.is_homework = answer;
            }
            Err(e) => {
                tracing::warn!(error = %e, max_similarity, "homework verdict unavailable; treating as not homework");
                verdict.degraded = true;
            }
        }
    }
    verdict
}

pub struct Dispatcher {
    store: Arc<KnowledgeStore>,
    gateway: Arc<LlmGateway>,
}

impl Dispatcher {
    pub fn new(store: Arc<KnowledgeStore>, gateway: Arc<LlmGateway>) -> Self {
        Self { store, gateway }
    }

    pub async fn detect_homework(&self, course: &CourseId, question: &str, thresholds: Thresholds) -> HomeworkVerdict {
        let Some(index) = self.store.index(course) else {
            return HomeworkVerdict::no_candidates();
        };
        let homework_only = KindFilter::from([DocumentKind::Homework]);
        let has_homework = index
            .chunks()
            .iter()
            .any(|c| index.document(&c.document_id).is_some_and(|d| d.kind == DocumentKind::Homework));
        if !has_homework {
            return HomeworkVerdict::no_candidates();
        }
        let top = match self.store.embedder().embed(question).await {
            Ok(embedding) => index.search(&embedding, 1, Some(&homework_only)),
            Err(e) => Err(e.into()),
        };
        let best = match top {
            Ok(mut results) if !results.is_empty() => results.remove(0),
            Ok(_) => return HomeworkVerdict::no_candidates(),
            Err(e) => {
                tracing::warn!(course = %course, error = %e, "homework similarity check failed");
                return HomeworkVerdict { degraded: true, ..HomeworkVerdict::no_candidates() };
            }
        };
        let homework_text = index.chunk(&best.chunk_id).map(|c| c.text.clone()).unwrap_or_default();
        let gateway = &self.gateway;
        classify_similarity(best.score, Some(best.chunk_id), thresholds, || async move {
            gateway.yes_no(&relevance_question(question, &homework_text)).await
        })
        .await
    }

    /// Never fails: detection problems degrade to a non-homework verdict.
    pub async fn dispatch(
        &self,
        course: &CourseId,
        question: &str,
        selected: &[DocumentKind],
        explicit: Option<ConversationMode>,
        thresholds: Thresholds,
    ) -> DispatchDecision {
        let mode = resolve_mode(selected.iter().copied(), explicit);
        let homework = self.detect_homework(course, question, thresholds).await;
        decide(mode, homework)
    }
}

fn relevance_question(question: &str, homework_text: &str) -> String {
    format!(
        "Is the student question below asking for help with, or the solution to, the homework problem below?\n\n\
         Homework problem:\n{homework_text}\n\nStudent question:\n{question}"
    )
}
