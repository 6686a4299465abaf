//! Fixed-size chunking by Unicode code points.

use serde::{Deserialize, Serialize};

pub const DEFAULT_CHUNK_SIZE: usize = 4000;

/// Half-open `[start, end)` range over the code points of a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSpan {
    pub ordinal: usize,
    pub range: CharRange,
    pub text: String,
}

/// Splits `raw` into consecutive non-overlapping pieces of `chunk_size` code
/// points; only the last piece may be shorter. Empty input yields no chunks.
///
/// # Panics
///
/// Panics if `chunk_size` is zero.
pub fn chunk_document(raw: &str, chunk_size: usize) -> Vec<ChunkSpan> {
    assert!(chunk_size >= 1, "chunk_size must be positive");
    let mut spans = Vec::new();
    let mut byte_start = 0;
    let mut char_start = 0;
    let mut chars_in_chunk = 0;
    for (byte_idx, _) in raw.char_indices() {
        if chars_in_chunk == chunk_size {
            spans.push(ChunkSpan {
                ordinal: spans.len(),
                range: CharRange { start: char_start, end: char_start + chars_in_chunk },
                text: raw[byte_start..byte_idx].to_owned(),
            });
            byte_start = byte_idx;
            char_start += chars_in_chunk;
            chars_in_chunk = 0;
        }
        chars_in_chunk += 1;
    }
    if chars_in_chunk > 0 {
        spans.push(ChunkSpan {
            ordinal: spans.len(),
            range: CharRange { start: char_start, end: char_start + chars_in_chunk },
            text: raw[byte_start..].to_owned(),
        });
    }
    spans
}
