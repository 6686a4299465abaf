//! Course material ingestion, chunking, embedding and top-k retrieval.

mod chunking;
mod embedding;
mod manifest;
mod store;

pub use chunking::{chunk_document, CharRange, ChunkSpan, DEFAULT_CHUNK_SIZE};
pub use embedding::{
    cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector, HashEmbedder, HttpEmbedder,
    SimilarityError, HASH_EMBEDDING_DIM,
};
pub use manifest::{load_manifest, ManifestEntry, ManifestError};
pub use store::{
    rank_order, Chunk, CourseIndex, Document, DocumentKind, KindFilter, KnowledgeStore, NewDocument,
    RetrievalResult, StoreError, StoreSnapshot, DEFAULT_TOP_K,
};
