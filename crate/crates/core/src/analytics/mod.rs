//! Interaction analytics over exported conversation logs.

mod annotation;
mod report;
mod sampler;
mod synthetic;
mod tables;

pub use annotation::{
    aggregate_annotations, import_annotations, write_annotations, Annotation, AnnotationError, AnnotationImport,
    AnnotationTables, Bloom, Correctness, DistributionRow, RateSummary, RejectedRow, ANNOTATION_HEADER,
};
pub use report::{
    compute_report, follow_up_report, CourseUsage, DurationBuckets, FollowUpReport, FollowUpStats,
    HourlyDistribution, ModeShare, ReportOptions, UsageReport, WeekCount, DEFAULT_DURATION_EDGES_MINUTES,
    REPORT_SCHEMA_VERSION,
};
pub use sampler::{sample_for_annotation, SampleOutcome};
pub use synthetic::{
    build_conversation, generate_synthetic_logs, ConversationPlan, FollowUpPlacement, SyntheticError, SyntheticSpec,
};
pub use tables::{report_table, ReportTable, TableError, TABLE_NAMES};
