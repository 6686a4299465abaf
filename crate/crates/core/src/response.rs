//! Raw model output to structured response: fenced-code segmentation,
//! reference links, follow-up question extraction and the disclaimer.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::ids::{ChunkId, CourseId, DocumentId};
use crate::knowledge::{CourseIndex, RetrievalResult};
use crate::prompt::FollowUpPolicy;

pub const DISCLAIMER: &str = "The responses may contain incorrect information";

const FENCE: &str = "```";
const DIAGRAM_LANGUAGES: [&str; 5] = ["mermaid", "graphviz", "dot", "plantuml", "diagram"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    Code,
    DiagramPlaceholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub content: String,
    /// Info string after the opening fence, verbatim (e.g. `python`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<String>,
}

impl Segment {
    fn text(content: impl Into<String>) -> Self {
        Self { kind: SegmentKind::Text, content: content.into(), info: None }
    }

    pub fn language(&self) -> Option<&str> {
        self.info.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub document_id: DocumentId,
    pub title: String,
    pub chunk_id: ChunkId,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub segments: Vec<Segment>,
    pub references: Vec<Reference>,
    pub follow_up_question: Option<String>,
    pub disclaimer: String,
}

/// Splits raw text into text and fenced-code segments.
///
/// Segments are separated by exactly one newline in the raw text, so joining
/// [`render_segments`] output with `\n` reproduces the input. A fence without
/// a closing line, or with no body, stays text.
pub fn segment(raw: &str) -> Vec<Segment> {
    let lines = split_lines(raw);
    let content = |i: usize| lines[i].1.strip_suffix('\n').unwrap_or(lines[i].1);
    let mut segments = Vec::new();
    let mut previous_end: Option<usize> = None;

    let push_gap = |segments: &mut Vec<Segment>, previous_end: Option<usize>, start: usize| match previous_end {
        None if start > 0 => segments.push(Segment::text(&raw[..start - 1])),
        Some(end) if start > end + 1 => segments.push(Segment::text(&raw[end + 1..start - 1])),
        _ => {}
    };

    let mut i = 0;
    while i < lines.len() {
        if !content(i).starts_with(FENCE) {
            i += 1;
            continue;
        }
        let open = lines[i].0;
        let Some(close) = (i + 1..lines.len()).find(|&j| content(j) == FENCE) else {
            // Unclosed fence: the rest of the input stays text.
            push_gap(&mut segments, previous_end, open);
            segments.push(Segment::text(&raw[open..]));
            return segments;
        };
        if close == i + 1 {
            // A fence pair with no body stays text.
            i = close + 1;
            continue;
        }
        push_gap(&mut segments, previous_end, open);
        let info = &content(i)[FENCE.len()..];
        let kind = if DIAGRAM_LANGUAGES.iter().any(|d| info.trim().eq_ignore_ascii_case(d)) {
            SegmentKind::DiagramPlaceholder
        } else {
            SegmentKind::Code
        };
        segments.push(Segment {
            kind,
            content: raw[lines[i + 1].0..lines[close].0 - 1].to_owned(),
            info: (!info.is_empty()).then(|| info.to_owned()),
        });
        previous_end = Some(lines[close].0 + FENCE.len());
        i = close + 1;
    }
    match previous_end {
        None => segments.push(Segment::text(raw)),
        Some(end) if end < raw.len() => segments.push(Segment::text(&raw[end + 1..])),
        Some(_) => {}
    }
    segments
}

/// Lines with their byte offsets, each keeping its trailing `\n`.
fn split_lines(raw: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (idx, _) in raw.match_indices('\n') {
        out.push((start, &raw[start..=idx]));
        start = idx + 1;
    }
    if start < raw.len() {
        out.push((start, &raw[start..]));
    }
    out
}

/// Inverse of [`segment`].
pub fn render_segments(segments: &[Segment]) -> String {
    segments
        .iter()
        .map(|s| match s.kind {
            SegmentKind::Text => s.content.clone(),
            SegmentKind::Code | SegmentKind::DiagramPlaceholder => {
                format!("{FENCE}{}\n{}\n{FENCE}", s.info.as_deref().unwrap_or(""), s.content)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Document-view link served by the HTTP API.
pub fn document_link(course: &CourseId, document: &DocumentId, chunk_ordinal: usize) -> String {
    format!("/courses/{course}/documents/{document}#chunk-{chunk_ordinal}")
}

/// One reference per distinct document, in rank order, pointing at the
/// document's best-ranked chunk. Chunks missing from the index are skipped.
pub fn attach_references(results: &[RetrievalResult], index: &CourseIndex) -> Vec<Reference> {
    let mut ordered: Vec<&RetrievalResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.rank);
    let mut seen = HashSet::new();
    let mut references = Vec::new();
    for result in ordered {
        let (Some(chunk), Some(document)) = (index.chunk(&result.chunk_id), index.document(&result.document_id)) else {
            tracing::warn!(chunk = %result.chunk_id, "reference to unknown chunk skipped");
            continue;
        };
        if !seen.insert(result.document_id.clone()) {
            continue;
        }
        references.push(Reference {
            document_id: document.id.clone(),
            title: document.title.clone(),
            chunk_id: chunk.id.clone(),
            link: document_link(&index.course_id, &document.id, chunk.ordinal),
        });
    }
    references
}

/// The final sentence of the last non-empty line, when that line ends in `?`
/// and the policy allows follow-up questions.
pub fn extract_follow_up(raw: &str, policy: FollowUpPolicy) -> Option<String> {
    if policy == FollowUpPolicy::Never {
        return None;
    }
    let line = raw.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    if !line.ends_with('?') || line == "?" {
        return None;
    }
    let body = &line[..line.len() - 1];
    let sentence_start = body
        .char_indices()
        .rev()
        .find(|&(i, c)| matches!(c, '.' | '!' | '?') && body[i + c.len_utf8()..].starts_with(char::is_whitespace))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let question = line[sentence_start..].trim();
    (question.len() > 1).then(|| question.to_owned())
}

pub fn process(
    raw: &str,
    results: &[RetrievalResult],
    index: Option<&CourseIndex>,
    policy: FollowUpPolicy,
) -> StructuredResponse {
    StructuredResponse {
        segments: segment(raw),
        references: index.map(|i| attach_references(results, i)).unwrap_or_default(),
        follow_up_question: extract_follow_up(raw, policy),
        disclaimer: DISCLAIMER.to_owned(),
    }
}
