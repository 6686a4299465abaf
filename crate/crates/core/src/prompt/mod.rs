//! Course configuration and deterministic prompt assembly.

mod assemble;
mod config;

pub use assemble::{
    active_guidance, assemble, course_description_text, educator_rules_text, follow_up_directive,
    mode_instruction_for, select_history, HistoryTurn, PromptError, PromptSections, PromptText, RetrievedContext,
    Role, SectionName, SectionSpan, Truncation, TurnView, ADVISORY_CLAUSE, EXERCISE_CLAUSE, FOLLOW_UP_OPTIONAL,
    FOLLOW_UP_REQUIRED, HINT_ONLY_CLAUSE,
};
pub use config::{
    ConfigError, CourseConfig, FollowUpPolicy, ModeInstructions, TimeGuidance, DEFAULT_DEVELOPER_INSTRUCTIONS,
    DEFAULT_HISTORY_MAX_ROUNDS, DEFAULT_PROMPT_CHAR_BUDGET,
};
