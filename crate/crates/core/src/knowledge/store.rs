use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chunking::{chunk_document, CharRange, DEFAULT_CHUNK_SIZE};
use super::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::ids::{ChunkId, CourseId, DocumentId};

pub const DEFAULT_TOP_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Lecture,
    Homework,
    Quiz,
    Exam,
    Other,
}

impl DocumentKind {
    pub const ALL: [DocumentKind; 5] =
        [DocumentKind::Lecture, DocumentKind::Homework, DocumentKind::Quiz, DocumentKind::Exam, DocumentKind::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::Lecture => "lecture",
            DocumentKind::Homework => "homework",
            DocumentKind::Quiz => "quiz",
            DocumentKind::Exam => "exam",
            DocumentKind::Other => "other",
        }
    }
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocumentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocumentKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown document kind `{s}`"))
    }
}

pub type KindFilter = BTreeSet<DocumentKind>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocumentId,
    pub course_id: CourseId,
    pub title: String,
    pub kind: DocumentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
    pub raw_text: String,
    pub uploaded_at: DateTime<Utc>,
    /// 1 for the first upload of a title, incremented on re-ingestion.
    pub version: u32,
    /// Superseded by a newer version; its chunks are no longer retrievable.
    pub retired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub document_id: DocumentId,
    pub ordinal: usize,
    pub char_range: CharRange,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: ChunkId,
    pub document_id: DocumentId,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct NewDocument {
    pub title: String,
    pub kind: DocumentKind,
    pub raw_text: String,
    pub source_uri: Option<String>,
}

impl NewDocument {
    pub fn new(title: impl Into<String>, kind: DocumentKind, raw_text: impl Into<String>) -> Self {
        Self { title: title.into(), kind, raw_text: raw_text.into(), source_uri: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("unknown course `{0}`")]
    UnknownCourse(CourseId),
    #[error("document `{0}` has empty text")]
    EmptyDocument(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("query dimension {query} does not match index dimension {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("k must be positive")]
    ZeroK,
}

/// Retrieval index of one course: every document ever ingested plus the
/// chunks of the active (non-retired) ones.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CourseIndex {
    pub course_id: CourseId,
    documents: BTreeMap<DocumentId, Document>,
    chunks: Vec<Chunk>,
    #[serde(default)]
    dimension: Option<usize>,
}

impl CourseIndex {
    pub fn new(course_id: CourseId) -> Self {
        Self { course_id, ..Default::default() }
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn document(&self, id: &DocumentId) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.iter().find(|c| &c.id == id)
    }

    pub fn chunks_of<'a>(&'a self, document: &'a DocumentId) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| &c.document_id == document)
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// Adds a document and its embedded chunks. A previous active document
    /// with the same title is retired and its chunks leave the index.
    pub fn add_document(&mut self, mut document: Document, chunks: Vec<Chunk>) -> Result<(), StoreError> {
        for chunk in &chunks {
            let dim = chunk.embedding.dimension();
            match self.dimension {
                Some(expected) if expected != dim => {
                    return Err(EmbeddingError::DimensionMismatch { expected, actual: dim }.into())
                }
                _ => self.dimension = Some(dim),
            }
        }
        let previous: Vec<DocumentId> = self
            .documents
            .values()
            .filter(|d| !d.retired && d.title == document.title)
            .map(|d| d.id.clone())
            .collect();
        for id in &previous {
            if let Some(old) = self.documents.get_mut(id) {
                old.retired = true;
                document.version = document.version.max(old.version + 1);
            }
        }
        self.chunks.retain(|c| !previous.contains(&c.document_id));
        self.chunks.extend(chunks);
        self.documents.insert(document.id.clone(), document);
        Ok(())
    }

    /// Exact top-k by cosine similarity over chunks whose document kind passes
    /// `filter`. Ties are broken by `(document_id, ordinal)` ascending.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<&KindFilter>,
    ) -> Result<Vec<RetrievalResult>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if let Some(dim) = self.dimension {
            if dim != query.dimension() {
                return Err(StoreError::DimensionMismatch { query: query.dimension(), index: dim });
            }
        }
        let mut best: Vec<(f64, &Chunk)> = Vec::with_capacity(k + 1);
        for chunk in &self.chunks {
            if let Some(filter) = filter {
                let kind = self.documents.get(&chunk.document_id).map(|d| d.kind);
                if !kind.is_some_and(|k| filter.contains(&k)) {
                    continue;
                }
            }
            // Zero vectors cannot be ranked; they are skipped rather than failing the query.
            let Ok(score) = cosine_similarity(query, &chunk.embedding) else {
                continue;
            };
            let pos = best.partition_point(|entry| rank_order(entry, &(score, chunk)) == Ordering::Less);
            if pos < k {
                best.insert(pos, (score, chunk));
                best.truncate(k);
            }
        }
        Ok(best
            .into_iter()
            .enumerate()
            .map(|(i, (score, chunk))| RetrievalResult {
                chunk_id: chunk.id.clone(),
                document_id: chunk.document_id.clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }
}

/// Retrieval order: higher score first, then `(document_id, ordinal)` ascending.
pub fn rank_order(a: &(f64, &Chunk), b: &(f64, &Chunk)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.document_id.cmp(&b.1.document_id))
        .then_with(|| a.1.ordinal.cmp(&b.1.ordinal))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub courses: Vec<CourseIndex>,
}

/// Per-course copy-on-write indexes. Readers clone an `Arc` of the current
/// index and never block each other; ingestion builds a new index off to the
/// side and swaps it in once every chunk is embedded.
pub struct KnowledgeStore {
    embedder: Arc<dyn EmbeddingProvider>,
    chunk_size: usize,
    indexes: RwLock<HashMap<CourseId, Arc<CourseIndex>>>,
    writers: Mutex<HashMap<CourseId, Arc<tokio::sync::Mutex<()>>>>,
    next_document: AtomicU64,
}

impl KnowledgeStore {
    pub fn new(embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Self::with_chunk_size(embedder, DEFAULT_CHUNK_SIZE)
    }

    pub fn with_chunk_size(embedder: Arc<dyn EmbeddingProvider>, chunk_size: usize) -> Self {
        assert!(chunk_size >= 1, "chunk_size must be positive");
        Self {
            embedder,
            chunk_size,
            indexes: RwLock::new(HashMap::new()),
            writers: Mutex::new(HashMap::new()),
            next_document: AtomicU64::new(1),
        }
    }

    pub fn from_snapshot(embedder: Arc<dyn EmbeddingProvider>, chunk_size: usize, snapshot: StoreSnapshot) -> Self {
        let store = Self::with_chunk_size(embedder, chunk_size);
        let mut max_id = 0;
        {
            let mut indexes = store.indexes.write();
            for index in snapshot.courses {
                for doc in index.documents() {
                    if let Some(n) = doc.id.as_str().strip_prefix("doc-").and_then(|n| n.parse::<u64>().ok()) {
                        max_id = max_id.max(n);
                    }
                }
                indexes.insert(index.course_id.clone(), Arc::new(index));
            }
        }
        store.next_document.store(max_id + 1, AtomicOrdering::SeqCst);
        store
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        let indexes = self.indexes.read();
        let mut courses: Vec<CourseIndex> = indexes.values().map(|i| (**i).clone()).collect();
        courses.sort_by(|a, b| a.course_id.cmp(&b.course_id));
        StoreSnapshot { courses }
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    /// Current index of a course, if anything was ever ingested for it.
    pub fn index(&self, course: &CourseId) -> Option<Arc<CourseIndex>> {
        self.indexes.read().get(course).cloned()
    }

    pub fn ensure_course(&self, course: &CourseId) {
        self.indexes
            .write()
            .entry(course.clone())
            .or_insert_with(|| Arc::new(CourseIndex::new(course.clone())));
    }

    pub async fn ingest_document(&self, course: &CourseId, document: NewDocument) -> Result<DocumentId, StoreError> {
        let mut ids = self.ingest_batch(course, vec![document]).await?;
        Ok(ids.remove(0))
    }

    /// Ingests all documents or none: every chunk is embedded before the
    /// course index is swapped.
    pub async fn ingest_batch(
        &self,
        course: &CourseId,
        documents: Vec<NewDocument>,
    ) -> Result<Vec<DocumentId>, StoreError> {
        if let Some(empty) = documents.iter().find(|d| d.raw_text.is_empty()) {
            return Err(StoreError::EmptyDocument(empty.title.clone()));
        }
        let writer = self.writers.lock().entry(course.clone()).or_default().clone();
        let _guard = writer.lock().await;

        let mut prepared = Vec::with_capacity(documents.len());
        for new in documents {
            let id = DocumentId(format!("doc-{:06}", self.next_document.fetch_add(1, AtomicOrdering::SeqCst)));
            let mut chunks = Vec::new();
            for span in chunk_document(&new.raw_text, self.chunk_size) {
                let embedding = self.embedder.embed(&span.text).await?;
                if embedding.dimension() != self.embedder.dimension() {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.embedder.dimension(),
                        actual: embedding.dimension(),
                    }
                    .into());
                }
                chunks.push(Chunk {
                    id: ChunkId::for_chunk(&id, span.ordinal),
                    document_id: id.clone(),
                    ordinal: span.ordinal,
                    char_range: span.range,
                    text: span.text,
                    embedding,
                });
            }
            let document = Document {
                id,
                course_id: course.clone(),
                title: new.title,
                kind: new.kind,
                source_uri: new.source_uri,
                raw_text: new.raw_text,
                uploaded_at: Utc::now(),
                version: 1,
                retired: false,
            };
            prepared.push((document, chunks));
        }

        let mut next = self.index(course).map(|i| (*i).clone()).unwrap_or_else(|| CourseIndex::new(course.clone()));
        let mut ids = Vec::with_capacity(prepared.len());
        for (document, chunks) in prepared {
            ids.push(document.id.clone());
            next.add_document(document, chunks)?;
        }
        self.indexes.write().insert(course.clone(), Arc::new(next));
        Ok(ids)
    }

    pub async fn retrieve(
        &self,
        course: &CourseId,
        query: &str,
        k: usize,
        filter: Option<&KindFilter>,
    ) -> Result<Vec<RetrievalResult>, StoreError> {
        let index = self.index(course).ok_or_else(|| StoreError::UnknownCourse(course.clone()))?;
        let embedding = self.embedder.embed(query).await?;
        index.search(&embedding, k, filter)
    }
}
