//! Per-course configuration file.
//!
//! One TOML file per course. Every field except `course_id` has a default:
//!
//! ```toml
//! course_id = "cs101"
//! name = "Computer Science for STEM"
//! description = "Introductory programming for non-majors."
//! audience_note = "Students have little or no programming background."
//! educator_rules = ["Use Python 3 in examples."]
//! follow_up_policy = "model_decides"   # never | model_decides | always
//! history_max_rounds = 6
//! prompt_char_budget = 24000
//! retrieval_k = 2
//! utc_offset_minutes = -300
//! semester_start = "2024-01-16"
//!
//! [thresholds]
//! low = 0.60
//! high = 0.90
//!
//! [mode_instructions]
//! general = "..."
//! homework = "..."
//! practice = "..."
//!
//! [[time_guidance]]
//! active_from = "2024-03-01T00:00:00Z"
//! active_to = "2024-03-08T00:00:00Z"
//! text = "Midterm week: do not solve practice exam questions outright."
//! ```

use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{ConversationMode, ThresholdError, Thresholds};
use crate::ids::CourseId;

pub const DEFAULT_HISTORY_MAX_ROUNDS: usize = 6;
pub const DEFAULT_PROMPT_CHAR_BUDGET: usize = 24_000;

pub const DEFAULT_DEVELOPER_INSTRUCTIONS: &str = "You are a teaching assistant for the course described below. \
Ground your answers in the provided course materials when they are relevant, say so when you are unsure, \
and keep explanations at the level of the students taking this course.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowUpPolicy {
    Never,
    #[default]
    ModelDecides,
    Always,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGuidance {
    pub active_from: DateTime<Utc>,
    pub active_to: DateTime<Utc>,
    pub text: String,
}

impl TimeGuidance {
    pub fn is_active(&self, now: DateTime<Utc>) -> bool {
        self.active_from <= now && now < self.active_to
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeInstructions {
    pub general: String,
    pub homework: String,
    pub practice: String,
}

impl Default for ModeInstructions {
    fn default() -> Self {
        Self {
            general: "Answer the student's question clearly and concisely, pointing to the relevant course material."
                .into(),
            homework: "Walk the student through the underlying concepts step by step and check their reasoning."
                .into(),
            practice: "Keep exercises at the difficulty of the course assessments and give feedback on attempts."
                .into(),
        }
    }
}

impl ModeInstructions {
    pub fn for_mode(&self, mode: ConversationMode) -> &str {
        match mode {
            ConversationMode::General => &self.general,
            ConversationMode::Homework => &self.homework,
            ConversationMode::Practice => &self.practice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourseConfig {
    pub course_id: CourseId,
    pub name: String,
    pub description: String,
    pub audience_note: String,
    pub developer_instructions: String,
    pub educator_rules: Vec<String>,
    pub time_guidance: Vec<TimeGuidance>,
    pub mode_instructions: ModeInstructions,
    pub follow_up_policy: FollowUpPolicy,
    pub thresholds: Thresholds,
    pub history_max_rounds: usize,
    pub prompt_char_budget: usize,
    pub retrieval_k: usize,
    /// Local campus time offset used for hour-of-day analytics.
    pub utc_offset_minutes: i32,
    pub semester_start: Option<NaiveDate>,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            course_id: CourseId::default(),
            name: String::new(),
            description: String::new(),
            audience_note: String::new(),
            developer_instructions: DEFAULT_DEVELOPER_INSTRUCTIONS.into(),
            educator_rules: Vec::new(),
            time_guidance: Vec::new(),
            mode_instructions: ModeInstructions::default(),
            follow_up_policy: FollowUpPolicy::default(),
            thresholds: Thresholds::default(),
            history_max_rounds: DEFAULT_HISTORY_MAX_ROUNDS,
            prompt_char_budget: DEFAULT_PROMPT_CHAR_BUDGET,
            retrieval_k: crate::knowledge::DEFAULT_TOP_K,
            utc_offset_minutes: 0,
            semester_start: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("course_id must not be empty")]
    MissingCourseId,
    #[error(transparent)]
    Thresholds(#[from] ThresholdError),
    #[error("time guidance entry {index}: active_from must precede active_to")]
    GuidanceWindow { index: usize },
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("utc_offset_minutes must be within ±1440")]
    Offset,
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl CourseConfig {
    pub fn new(course_id: impl Into<CourseId>) -> Self {
        Self { course_id: course_id.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.course_id.as_str().is_empty() {
            return Err(ConfigError::MissingCourseId);
        }
        self.thresholds.validate()?;
        if let Some(index) = self.time_guidance.iter().position(|g| g.active_from >= g.active_to) {
            return Err(ConfigError::GuidanceWindow { index });
        }
        for (field, value) in [
            ("history_max_rounds", self.history_max_rounds),
            ("prompt_char_budget", self.prompt_char_budget),
            ("retrieval_k", self.retrieval_k),
        ] {
            if value == 0 {
                return Err(ConfigError::NotPositive { field });
            }
        }
        if self.utc_offset_minutes.abs() >= 1440 {
            return Err(ConfigError::Offset);
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("course config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let config = CourseConfig::from_toml_str("course_id = \"cs101\"\n").unwrap();
        assert_eq!(config.history_max_rounds, 6);
        assert_eq!(config.prompt_char_budget, 24_000);
        assert_eq!(config.retrieval_k, 2);
        assert_eq!(config.thresholds, Thresholds { low: 0.6, high: 0.9 });
        assert!(!config.mode_instructions.practice.is_empty());
    }

    #[test]
    fn inverted_thresholds_rejected() {
        let err = CourseConfig::from_toml_str("course_id = \"c\"\n[thresholds]\nlow = 0.6\nhigh = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Thresholds(_)));
    }

    #[test]
    fn inverted_guidance_window_rejected() {
        let text = "course_id = \"c\"\n[[time_guidance]]\nactive_from = \"2024-03-08T00:00:00Z\"\nactive_to = \"2024-03-01T00:00:00Z\"\ntext = \"x\"\n";
        assert_eq!(CourseConfig::from_toml_str(text), Err(ConfigError::GuidanceWindow { index: 0 }));
    }

    #[test]
    fn toml_round_trip() {
        let mut config = CourseConfig::new("os");
        config.educator_rules = vec!["Use C examples.".into()];
        config.semester_start = NaiveDate::from_ymd_opt(2024, 1, 16);
        config.time_guidance.push(TimeGuidance {
            active_from: "2024-03-01T00:00:00Z".parse().unwrap(),
            active_to: "2024-03-08T00:00:00Z".parse().unwrap(),
            text: "Midterm week.".into(),
        });
        assert_eq!(CourseConfig::from_toml_str(&config.to_toml_string()).unwrap(), config);
    }
}
