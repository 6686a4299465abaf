//! Manual annotation records: CSV import and aggregation into the
//! cognitive-level and correctness tables.

use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::ConversationMode;
use crate::ids::{ConversationId, CourseId};

pub const ANNOTATION_HEADER: [&str; 13] = [
    "conversation_id",
    "course_id",
    "mode",
    "question_index",
    "bloom",
    "correctness",
    "grammatical_error",
    "polite",
    "off_topic",
    "has_example",
    "llm_question_present",
    "llm_question_answered",
    "annotator_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bloom {
    Remember,
    Understand,
    Apply,
    Analyze,
    Evaluate,
    Create,
}

impl Bloom {
    pub const ALL: [Bloom; 6] =
        [Bloom::Remember, Bloom::Understand, Bloom::Apply, Bloom::Analyze, Bloom::Evaluate, Bloom::Create];

    pub fn as_str(self) -> &'static str {
        match self {
            Bloom::Remember => "remember",
            Bloom::Understand => "understand",
            Bloom::Apply => "apply",
            Bloom::Analyze => "analyze",
            Bloom::Evaluate => "evaluate",
            Bloom::Create => "create",
        }
    }
}

impl FromStr for Bloom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bloom::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown cognitive level `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    CorrectHelpful,
    Unhelpful,
    ErroneousComputational,
    ErroneousConceptual,
}

impl Correctness {
    pub const ALL: [Correctness; 4] = [
        Correctness::CorrectHelpful,
        Correctness::Unhelpful,
        Correctness::ErroneousComputational,
        Correctness::ErroneousConceptual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Correctness::CorrectHelpful => "correct_helpful",
            Correctness::Unhelpful => "unhelpful",
            Correctness::ErroneousComputational => "erroneous_computational",
            Correctness::ErroneousConceptual => "erroneous_conceptual",
        }
    }

    pub fn is_erroneous(self) -> bool {
        matches!(self, Correctness::ErroneousComputational | Correctness::ErroneousConceptual)
    }
}

impl FromStr for Correctness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Correctness::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown correctness label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub conversation_id: ConversationId,
    pub course_id: CourseId,
    pub mode: ConversationMode,
    pub question_index: u32,
    pub bloom: Bloom,
    pub correctness: Correctness,
    pub grammatical_error: bool,
    pub polite: bool,
    pub off_topic: bool,
    pub has_example: bool,
    pub llm_question_present: bool,
    pub llm_question_answered: bool,
    pub annotator_id: String,
}

impl Annotation {
    pub fn csv_record(&self) -> [String; 13] {
        let flag = |b: bool| if b { "true" } else { "false" }.to_owned();
        [
            self.conversation_id.to_string(),
            self.course_id.to_string(),
            self.mode.as_str().to_owned(),
            self.question_index.to_string(),
            self.bloom.as_str().to_owned(),
            self.correctness.as_str().to_owned(),
            flag(self.grammatical_error),
            flag(self.polite),
            flag(self.off_topic),
            flag(self.has_example),
            flag(self.llm_question_present),
            flag(self.llm_question_answered),
            self.annotator_id.clone(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// One-based data row number (the header is row zero).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationImport {
    pub accepted: Vec<Annotation>,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation file is not valid CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("annotation header must be `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
}

fn parse_flag(field: &str, value: &str) -> Result<bool, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("column `{field}` expects a boolean, found `{other}`")),
    }
}

fn parse_row(record: &csv::StringRecord) -> Result<Annotation, String> {
    if record.len() != ANNOTATION_HEADER.len() {
        return Err(format!("expected {} columns, found {}", ANNOTATION_HEADER.len(), record.len()));
    }
    let get = |i: usize| record.get(i).unwrap_or_default();
    let non_empty = |i: usize| {
        let v = get(i).trim();
        if v.is_empty() {
            Err(format!("column `{}` is empty", ANNOTATION_HEADER[i]))
        } else {
            Ok(v.to_owned())
        }
    };
    let annotation = Annotation {
        conversation_id: ConversationId(non_empty(0)?),
        course_id: CourseId(non_empty(1)?),
        mode: get(2).trim().parse()?,
        question_index: get(3).trim().parse().map_err(|_| format!("question_index `{}` is not a number", get(3)))?,
        bloom: get(4).parse()?,
        correctness: get(5).parse()?,
        grammatical_error: parse_flag(ANNOTATION_HEADER[6], get(6))?,
        polite: parse_flag(ANNOTATION_HEADER[7], get(7))?,
        off_topic: parse_flag(ANNOTATION_HEADER[8], get(8))?,
        has_example: parse_flag(ANNOTATION_HEADER[9], get(9))?,
        llm_question_present: parse_flag(ANNOTATION_HEADER[10], get(10))?,
        llm_question_answered: parse_flag(ANNOTATION_HEADER[11], get(11))?,
        annotator_id: non_empty(12)?,
    };
    if annotation.llm_question_answered && !annotation.llm_question_present {
        return Err("llm_question_answered is set but llm_question_present is not".into());
    }
    Ok(annotation)
}

/// Imports annotation rows. A bad header fails the whole import; bad rows
/// are reported individually and never aggregated.
pub fn import_annotations(reader: impl Read) -> Result<AnnotationImport, AnnotationError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = csv.headers()?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != ANNOTATION_HEADER {
        return Err(AnnotationError::Header { expected: ANNOTATION_HEADER.join(","), found: found.join(",") });
    }
    let mut import = AnnotationImport::default();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        match record.map_err(|e| e.to_string()).and_then(|r| parse_row(&r)) {
            Ok(a) => import.accepted.push(a),
            Err(reason) => import.rejected.push(RejectedRow { row, reason }),
        }
    }
    Ok(import)
}

pub fn write_annotations<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(ANNOTATION_HEADER)?;
    for a in annotations {
        writer.write_record(a.csv_record())?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Counts and within-row shares for one grouping key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow<K: Ord> {
    pub total: u64,
    pub counts: BTreeMap<K, u64>,
    pub shares: BTreeMap<K, f64>,
}

impl<K: Ord> Default for DistributionRow<K> {
    fn default() -> Self {
        Self { total: 0, counts: BTreeMap::new(), shares: BTreeMap::new() }
    }
}

impl<K: Ord + Copy> DistributionRow<K> {
    fn from_counts(all: &[K], counts: BTreeMap<K, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let counts: BTreeMap<K, u64> = all.iter().map(|k| (*k, counts.get(k).copied().unwrap_or(0))).collect();
        let shares = counts
            .iter()
            .map(|(k, &c)| (*k, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
            .collect();
        Self { total, counts, shares }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub total: u64,
    pub grammatical_errors: u64,
    pub grammatical_error_ratio: f64,
    pub impolite: u64,
    pub off_topic: u64,
    pub has_example: u64,
    pub llm_question_present: u64,
    pub llm_question_answered: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTables {
    pub bloom_by_mode: BTreeMap<ConversationMode, DistributionRow<Bloom>>,
    pub correctness_by_course: BTreeMap<CourseId, DistributionRow<Correctness>>,
    pub correctness_overall: DistributionRow<Correctness>,
    pub rates: RateSummary,
}

pub fn aggregate_annotations(annotations: &[Annotation]) -> AnnotationTables {
    let mut bloom: BTreeMap<ConversationMode, BTreeMap<Bloom, u64>> = BTreeMap::new();
    let mut by_course: BTreeMap<CourseId, BTreeMap<Correctness, u64>> = BTreeMap::new();
    let mut overall: BTreeMap<Correctness, u64> = BTreeMap::new();
    let mut rates = RateSummary::default();
    for a in annotations {
        *bloom.entry(a.mode).or_default().entry(a.bloom).or_default() += 1;
        *by_course.entry(a.course_id.clone()).or_default().entry(a.correctness).or_default() += 1;
        *overall.entry(a.correctness).or_default() += 1;
        rates.total += 1;
        rates.grammatical_errors += u64::from(a.grammatical_error);
        rates.impolite += u64::from(!a.polite);
        rates.off_topic += u64::from(a.off_topic);
        rates.has_example += u64::from(a.has_example);
        rates.llm_question_present += u64::from(a.llm_question_present);
        rates.llm_question_answered += u64::from(a.llm_question_answered);
    }
    if rates.total > 0 {
        rates.grammatical_error_ratio = rates.grammatical_errors as f64 / rates.total as f64;
    }
    AnnotationTables {
        bloom_by_mode: bloom.into_iter().map(|(m, c)| (m, DistributionRow::from_counts(&Bloom::ALL, c))).collect(),
        correctness_by_course: by_course
            .into_iter()
            .map(|(course, c)| (course, DistributionRow::from_counts(&Correctness::ALL, c)))
            .collect(),
        correctness_overall: DistributionRow::from_counts(&Correctness::ALL, overall),
        rates,
    }
}
