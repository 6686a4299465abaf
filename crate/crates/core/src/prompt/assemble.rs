use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{CourseConfig, FollowUpPolicy};
use crate::dispatch::{ConversationMode, DispatchDecision};
use crate::knowledge::CharRange;

pub const HINT_ONLY_CLAUSE: &str = "This question concerns graded homework. Respond with hints, guiding questions \
and pointers to the relevant concepts only. Do not give the final answer, a complete solution, or finished code.";

pub const EXERCISE_CLAUSE: &str = "Create new practice exercises modeled on this course's quiz and exam material, \
let the student attempt them, and hold back worked solutions until the student has tried.";

pub const ADVISORY_CLAUSE: &str =
    "The question appears to match a homework assignment. Suggest that the student switch to homework mode.";

pub const FOLLOW_UP_OPTIONAL: &str = "If a follow-up question would deepen the student's understanding, you may end \
your response with exactly one such question, placed alone on the final line.";

pub const FOLLOW_UP_REQUIRED: &str =
    "End your response with exactly one follow-up question for the student, placed alone on the final line.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSections {
    pub developer_instructions: String,
    pub course_description: String,
    pub educator_rules: String,
    pub active_time_guidance: String,
    pub mode_instruction: String,
    /// Rank order: index 0 is the best match.
    pub retrieved_contexts: Vec<RetrievedContext>,
    pub history: Vec<HistoryTurn>,
    pub follow_up_directive: Option<String>,
    pub user_question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionName {
    DeveloperInstructions,
    CourseDescription,
    EducatorRules,
    ActiveTimeGuidance,
    ModeInstruction,
    RetrievedContexts,
    History,
    FollowUpDirective,
    UserQuestion,
}

impl SectionName {
    fn heading(self) -> &'static str {
        match self {
            SectionName::DeveloperInstructions => "## Instructions",
            SectionName::CourseDescription => "## Course",
            SectionName::EducatorRules => "## Course rules",
            SectionName::ActiveTimeGuidance => "## Current guidance",
            SectionName::ModeInstruction => "## How to respond",
            SectionName::RetrievedContexts => "## Course materials",
            SectionName::History => "## Conversation so far",
            SectionName::FollowUpDirective => "## Follow-up",
            SectionName::UserQuestion => "## Student question",
        }
    }
}

impl fmt::Display for SectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub section: SectionName,
    pub range: CharRange,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub history_rounds_dropped: usize,
    pub contexts_dropped: usize,
    pub sections_dropped: Vec<SectionName>,
}

impl Truncation {
    pub fn is_empty(&self) -> bool {
        self.history_rounds_dropped == 0 && self.contexts_dropped == 0 && self.sections_dropped.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub rendered: String,
    /// Code-point ranges, in render order.
    pub section_spans: Vec<SectionSpan>,
    pub total_chars: usize,
    #[serde(default, skip_serializing_if = "Truncation::is_empty")]
    pub truncation: Truncation,
}

impl PromptText {
    /// A prompt that is just the given text, used for auxiliary requests.
    pub fn plain(text: String) -> Self {
        let total_chars = text.chars().count();
        Self {
            rendered: text,
            section_spans: vec![SectionSpan { section: SectionName::UserQuestion, range: CharRange { start: 0, end: total_chars } }],
            total_chars,
            truncation: Truncation::default(),
        }
    }

    pub fn span(&self, section: SectionName) -> Option<CharRange> {
        self.section_spans.iter().find(|s| s.section == section).map(|s| s.range)
    }

    pub fn section_text(&self, section: SectionName) -> Option<String> {
        self.span(section).map(|r| self.rendered.chars().skip(r.start).take(r.len()).collect())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("user question must not be empty")]
    EmptyQuestion,
    #[error("prompt budget {budget} cannot hold developer instructions and question ({required} chars)")]
    BudgetTooSmall { required: usize, budget: usize },
}

/// Sections dropped after history and contexts, in order, when still over budget.
const SECONDARY_DROP_ORDER: [SectionName; 5] = [
    SectionName::FollowUpDirective,
    SectionName::ActiveTimeGuidance,
    SectionName::EducatorRules,
    SectionName::CourseDescription,
    SectionName::ModeInstruction,
];

/// Renders the prompt in fixed section order, dropping the smallest prefix of
/// (oldest history rounds, lowest-ranked contexts, secondary sections) needed
/// to fit `budget` characters.
pub fn assemble(sections: &PromptSections, budget: usize) -> Result<PromptText, PromptError> {
    if sections.user_question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let minimal = PromptSections {
        developer_instructions: sections.developer_instructions.clone(),
        user_question: sections.user_question.clone(),
        ..Default::default()
    };
    let required = render(&minimal, &[]).total_chars;
    if required > budget {
        return Err(PromptError::BudgetTooSmall { required, budget });
    }

    let rounds = group_rounds(&sections.history);
    let droppable = rounds.len() + sections.retrieved_contexts.len() + SECONDARY_DROP_ORDER.len();
    for drops in 0..=droppable {
        let history_dropped = drops.min(rounds.len());
        let contexts_dropped = (drops - history_dropped).min(sections.retrieved_contexts.len());
        let secondary = drops - history_dropped - contexts_dropped;

        let mut trimmed = sections.clone();
        trimmed.history = rounds[history_dropped..].iter().flatten().cloned().collect();
        trimmed.retrieved_contexts.truncate(sections.retrieved_contexts.len() - contexts_dropped);
        let skipped = &SECONDARY_DROP_ORDER[..secondary];
        let mut prompt = render(&trimmed, skipped);
        if prompt.total_chars <= budget {
            prompt.truncation = Truncation {
                history_rounds_dropped: history_dropped,
                contexts_dropped,
                sections_dropped: skipped.to_vec(),
            };
            return Ok(prompt);
        }
    }
    unreachable!("the minimal prompt fits the budget")
}

/// Splits turns into rounds, each starting at a user turn.
fn group_rounds(history: &[HistoryTurn]) -> Vec<Vec<HistoryTurn>> {
    let mut rounds: Vec<Vec<HistoryTurn>> = Vec::new();
    for turn in history {
        match rounds.last_mut() {
            Some(round) if turn.role == Role::Assistant => round.push(turn.clone()),
            _ => rounds.push(vec![turn.clone()]),
        }
    }
    rounds
}

fn render(sections: &PromptSections, skipped: &[SectionName]) -> PromptText {
    let contexts = sections
        .retrieved_contexts
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {}\n{}", i + 1, c.title, c.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let history = sections
        .history
        .iter()
        .map(|t| match t.role {
            Role::User => format!("Student: {}", t.text),
            Role::Assistant => format!("Assistant: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n");
    let ordered: [(SectionName, &str); 9] = [
        (SectionName::DeveloperInstructions, &sections.developer_instructions),
        (SectionName::CourseDescription, &sections.course_description),
        (SectionName::EducatorRules, &sections.educator_rules),
        (SectionName::ActiveTimeGuidance, &sections.active_time_guidance),
        (SectionName::ModeInstruction, &sections.mode_instruction),
        (SectionName::RetrievedContexts, &contexts),
        (SectionName::History, &history),
        (SectionName::FollowUpDirective, sections.follow_up_directive.as_deref().unwrap_or("")),
        (SectionName::UserQuestion, &sections.user_question),
    ];

    let mut rendered = String::new();
    let mut spans = Vec::new();
    let mut cursor = 0;
    for (name, body) in ordered {
        if body.is_empty() || skipped.contains(&name) {
            continue;
        }
        if !rendered.is_empty() {
            rendered.push_str("\n\n");
            cursor += 2;
        }
        let block = format!("{}\n{}", name.heading(), body);
        let len = block.chars().count();
        rendered.push_str(&block);
        spans.push(SectionSpan { section: name, range: CharRange { start: cursor, end: cursor + len } });
        cursor += len;
    }
    PromptText { rendered, section_spans: spans, total_chars: cursor, truncation: Truncation::default() }
}

/// A turn as stored in a conversation, viewed for history selection.
#[derive(Debug, Clone, Copy)]
pub struct TurnView<'a> {
    pub role: Role,
    pub text: &'a str,
    pub is_error: bool,
}

/// The last `max_rounds` complete rounds (a user turn answered by a
/// non-error assistant turn), oldest first.
pub fn select_history<'a>(turns: impl IntoIterator<Item = TurnView<'a>>, max_rounds: usize) -> Vec<HistoryTurn> {
    let turns: Vec<TurnView<'a>> = turns.into_iter().collect();
    let mut rounds = Vec::new();
    for pair in turns.windows(2) {
        let (q, a) = (pair[0], pair[1]);
        if q.role == Role::User && a.role == Role::Assistant && !a.is_error {
            rounds.push([
                HistoryTurn { role: Role::User, text: q.text.to_owned() },
                HistoryTurn { role: Role::Assistant, text: a.text.to_owned() },
            ]);
        }
    }
    let skip = rounds.len().saturating_sub(max_rounds);
    rounds.into_iter().skip(skip).flatten().collect()
}

/// Texts of the guidance entries active at `now`, in configuration order.
pub fn active_guidance(config: &CourseConfig, now: DateTime<Utc>) -> String {
    config
        .time_guidance
        .iter()
        .filter(|g| g.is_active(now))
        .map(|g| g.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn educator_rules_text(config: &CourseConfig) -> String {
    config.educator_rules.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")
}

pub fn course_description_text(config: &CourseConfig) -> String {
    match (config.name.is_empty(), config.description.is_empty()) {
        (true, _) => config.description.clone(),
        (false, true) => config.name.clone(),
        (false, false) => format!("{}\n{}", config.name, config.description),
    }
}

pub fn mode_instruction_for(decision: &DispatchDecision, config: &CourseConfig) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let hint_only = decision.mode == ConversationMode::Homework || decision.advisory;
    if hint_only {
        parts.push(HINT_ONLY_CLAUSE);
    }
    if decision.advisory {
        parts.push(ADVISORY_CLAUSE);
    }
    if decision.mode == ConversationMode::Practice {
        parts.push(EXERCISE_CLAUSE);
    }
    let configured = config.mode_instructions.for_mode(decision.mode);
    if !configured.is_empty() {
        parts.push(configured);
    }
    if !config.audience_note.is_empty() {
        parts.push(&config.audience_note);
    }
    parts.join("\n")
}

pub fn follow_up_directive(policy: FollowUpPolicy) -> Option<String> {
    match policy {
        FollowUpPolicy::Never => None,
        FollowUpPolicy::ModelDecides => Some(FOLLOW_UP_OPTIONAL.to_owned()),
        FollowUpPolicy::Always => Some(FOLLOW_UP_REQUIRED.to_owned()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{decide, HomeworkVerdict};
    use crate::prompt::TimeGuidance;
    use proptest::prelude::*;

    fn question_only(q: &str) -> PromptSections {
        PromptSections { developer_instructions: "DEV".into(), user_question: q.into(), ..Default::default() }
    }

    fn round(i: usize, len: usize) -> Vec<HistoryTurn> {
        vec![
            HistoryTurn { role: Role::User, text: format!("q{i}{}", "u".repeat(len)) },
            HistoryTurn { role: Role::Assistant, text: format!("a{i}{}", "v".repeat(len)) },
        ]
    }

    fn verdict(is_homework: bool) -> HomeworkVerdict {
        HomeworkVerdict {
            is_homework,
            max_similarity: 0.0,
            matched_chunk: None,
            llm_consulted: false,
            llm_verdict: None,
            degraded: false,
        }
    }

    #[test]
    fn minimal_prompt_order() {
        let sections = PromptSections {
            developer_instructions: "DEV".into(),
            course_description: "DESC".into(),
            mode_instruction: "MODE".into(),
            user_question: "Q?".into(),
            ..Default::default()
        };
        let prompt = assemble(&sections, 10_000).unwrap();
        let order: Vec<_> = prompt.section_spans.iter().map(|s| s.section).collect();
        assert_eq!(
            order,
            vec![SectionName::DeveloperInstructions, SectionName::CourseDescription, SectionName::ModeInstruction, SectionName::UserQuestion]
        );
        assert_eq!(prompt.rendered, "## Instructions\nDEV\n\n## Course\nDESC\n\n## How to respond\nMODE\n\n## Student question\nQ?");
        assert_eq!(prompt.total_chars, prompt.rendered.chars().count());
    }

    #[test]
    fn spans_index_code_points() {
        let prompt = assemble(&question_only("où?"), 1000).unwrap();
        assert_eq!(prompt.section_text(SectionName::UserQuestion).unwrap(), "## Student question\noù?");
    }

    // Build a prompt whose full render exceeds the budget by exactly the size of
    // one history round; the budget is derived from the rendered sizes.
    #[test]
    fn overflow_by_one_round_drops_oldest() {
        let mut sections = question_only("What is paging?");
        sections.retrieved_contexts = vec![RetrievedContext { title: "L1".into(), text: "ctx".into() }];
        sections.history = (0..3).flat_map(|i| round(i, 10)).collect();
        let full = assemble(&sections, usize::MAX).unwrap();
        let mut without_oldest = sections.clone();
        without_oldest.history.drain(..2);
        let fitting = assemble(&without_oldest, usize::MAX).unwrap().total_chars;
        assert!(fitting < full.total_chars);

        let prompt = assemble(&sections, fitting).unwrap();
        assert_eq!(prompt.truncation, Truncation { history_rounds_dropped: 1, contexts_dropped: 0, sections_dropped: vec![] });
        assert!(!prompt.rendered.contains("q0"));
        assert!(prompt.rendered.contains("q1") && prompt.rendered.contains("q2") && prompt.rendered.contains("ctx"));
        assert_eq!(prompt.total_chars, fitting);
    }

    #[test]
    fn contexts_drop_lowest_rank_first_after_history() {
        let mut sections = question_only("Q");
        sections.history = round(0, 5);
        sections.retrieved_contexts = vec![
            RetrievedContext { title: "best".into(), text: "A".repeat(50) },
            RetrievedContext { title: "second".into(), text: "B".repeat(50) },
        ];
        let mut expected = sections.clone();
        expected.history.clear();
        expected.retrieved_contexts.truncate(1);
        let budget = assemble(&expected, usize::MAX).unwrap().total_chars;
        let prompt = assemble(&sections, budget).unwrap();
        assert_eq!(prompt.truncation.history_rounds_dropped, 1);
        assert_eq!(prompt.truncation.contexts_dropped, 1);
        assert!(prompt.rendered.contains("best") && !prompt.rendered.contains("second"));
    }

    #[test]
    fn budget_errors() {
        assert_eq!(assemble(&question_only(""), 100), Err(PromptError::EmptyQuestion));
        assert!(matches!(assemble(&question_only("question"), 10), Err(PromptError::BudgetTooSmall { .. })));
    }

    fn view(ts: &[HistoryTurn]) -> Vec<TurnView<'_>> {
        ts.iter().map(|t| TurnView { role: t.role, text: &t.text, is_error: false }).collect()
    }

    #[test]
    fn history_selection() {
        let turns: Vec<HistoryTurn> = (1..=5).flat_map(|i| round(i, 0)).collect();
        assert!(select_history(Vec::<TurnView>::new(), 3).is_empty());
        let picked = select_history(view(&turns), 3);
        let texts: Vec<_> = picked.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["q3", "a3", "q4", "a4", "q5", "a5"]);
        assert_eq!(select_history(view(&turns[..4]), 3).len(), 4);
    }

    #[test]
    fn error_turns_are_not_history() {
        let turns = [
            TurnView { role: Role::User, text: "q1", is_error: false },
            TurnView { role: Role::Assistant, text: "a1", is_error: false },
            TurnView { role: Role::User, text: "q2", is_error: false },
            TurnView { role: Role::Assistant, text: "gateway failed", is_error: true },
        ];
        assert_eq!(select_history(turns, 6).len(), 2);
    }

    #[test]
    fn guidance_windows() {
        let mut config = CourseConfig::new("c");
        let t = |s: &str| s.parse::<DateTime<Utc>>().unwrap();
        config.time_guidance = vec![
            TimeGuidance { active_from: t("2024-03-01T00:00:00Z"), active_to: t("2024-03-10T00:00:00Z"), text: "A".into() },
            TimeGuidance { active_from: t("2024-03-05T00:00:00Z"), active_to: t("2024-03-20T00:00:00Z"), text: "B".into() },
        ];
        assert_eq!(active_guidance(&config, t("2024-02-01T00:00:00Z")), "");
        assert_eq!(active_guidance(&config, t("2024-03-02T00:00:00Z")), "A");
        assert_eq!(active_guidance(&config, t("2024-03-06T00:00:00Z")), "A\nB");
        assert_eq!(active_guidance(&config, t("2024-03-10T00:00:00Z")), "B");
    }

    #[test]
    fn mode_instruction_clauses() {
        let mut config = CourseConfig::new("c");
        config.audience_note = "Assume no prior programming experience.".into();
        let homework = mode_instruction_for(&decide(ConversationMode::Homework, verdict(false)), &config);
        assert!(homework.contains(HINT_ONLY_CLAUSE) && !homework.contains(EXERCISE_CLAUSE));
        let practice = mode_instruction_for(&decide(ConversationMode::Practice, verdict(false)), &config);
        assert!(practice.contains(EXERCISE_CLAUSE) && !practice.contains(HINT_ONLY_CLAUSE));
        let general = mode_instruction_for(&decide(ConversationMode::General, verdict(false)), &config);
        assert!(!general.contains(HINT_ONLY_CLAUSE) && !general.contains(EXERCISE_CLAUSE));
        let advisory = mode_instruction_for(&decide(ConversationMode::General, verdict(true)), &config);
        assert!(advisory.contains(HINT_ONLY_CLAUSE) && advisory.contains(ADVISORY_CLAUSE));
        for text in [homework, practice, general, advisory] {
            assert!(text.ends_with(&config.audience_note));
        }
    }

    #[test]
    fn follow_up_directives() {
        assert_eq!(follow_up_directive(FollowUpPolicy::Never), None);
        assert!(follow_up_directive(FollowUpPolicy::ModelDecides).unwrap().contains("may end"));
        assert!(follow_up_directive(FollowUpPolicy::Always).unwrap().contains("End your response"));
    }

    proptest! {
        #[test]
        fn budget_and_question_preserved(
            rounds in 0usize..6,
            contexts in 0usize..4,
            round_len in 0usize..80,
            ctx_len in 0usize..200,
            budget in 60usize..2000,
        ) {
            let mut sections = question_only("QUESTION-MARKER");
            sections.course_description = "desc".into();
            sections.mode_instruction = "mode".into();
            sections.follow_up_directive = Some("follow".into());
            sections.history = (0..rounds).flat_map(|i| round(i, round_len)).collect();
            sections.retrieved_contexts = (0..contexts)
                .map(|i| RetrievedContext { title: format!("t{i}"), text: "c".repeat(ctx_len) })
                .collect();
            let prompt = assemble(&sections, budget).unwrap();
            prop_assert!(prompt.total_chars <= budget);
            prop_assert_eq!(prompt.rendered.matches("QUESTION-MARKER").count(), 1);
            prop_assert!(prompt.rendered.ends_with("QUESTION-MARKER"));
            prop_assert_eq!(prompt.section_spans.last().unwrap().section, SectionName::UserQuestion);
            let order: Vec<_> = prompt.section_spans.iter().map(|s| s.section).collect();
            let mut sorted = order.clone();
            sorted.sort();
            prop_assert_eq!(order, sorted);
            prop_assert_eq!(assemble(&sections, budget).unwrap(), prompt);
        }
    }
}
