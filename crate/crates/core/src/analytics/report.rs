use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use crate::dispatch::ConversationMode;
use crate::ids::{CourseId, UserRef};
use crate::prompt::Role;
use crate::service::{Conversation, UserKind};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_DURATION_EDGES_MINUTES: [u32; 7] = [0, 5, 10, 20, 30, 60, 120];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub semester_start: NaiveDate,
    pub utc_offset_minutes: i32,
    pub exclude_developers: bool,
    /// Lower edges of the duration buckets; the last bucket is open-ended.
    pub duration_edges_minutes: Vec<u32>,
}

impl ReportOptions {
    pub fn new(semester_start: NaiveDate) -> Self {
        Self {
            semester_start,
            utc_offset_minutes: 0,
            exclude_developers: true,
            duration_edges_minutes: DEFAULT_DURATION_EDGES_MINUTES.to_vec(),
        }
    }
}

/// Bucket `i` holds durations in `[edges[i], edges[i + 1])` minutes; the
/// last bucket is unbounded above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBuckets {
    pub edges_minutes: Vec<u32>,
    pub counts: Vec<u64>,
    pub cumulative_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseUsage {
    pub user_count: u64,
    pub conversation_count: u64,
    pub question_count: u64,
    pub conversations_per_user: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekCount {
    pub week: i64,
    pub conversations: u64,
    pub questions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDistribution {
    /// Conversations started in each local hour, 0..24.
    pub counts: Vec<u64>,
    pub cdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeShare {
    pub mode: ConversationMode,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowUpStats {
    pub conversations: u64,
    pub emitted: u64,
    pub answered: u64,
    pub emitted_ratio: f64,
    /// Absent when no conversation carried a follow-up question.
    pub answered_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowUpReport {
    pub overall: FollowUpStats,
    pub per_course: BTreeMap<CourseId, FollowUpStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub schema_version: u32,
    /// No conversation passed the filters; every count and ratio is zero.
    pub empty: bool,
    pub conversation_count: u64,
    pub question_count: u64,
    pub user_count: u64,
    pub courses: BTreeMap<CourseId, CourseUsage>,
    pub durations: DurationBuckets,
    pub within_ten_minutes_ratio: f64,
    /// Index = number of rounds.
    pub rounds_histogram: Vec<u64>,
    pub no_question_ratio: f64,
    pub single_round_ratio: f64,
    pub within_three_rounds_ratio: f64,
    pub weekly: Vec<WeekCount>,
    pub hourly: HourlyDistribution,
    pub mode_shares: Vec<ModeShare>,
    pub rounds_by_mode: BTreeMap<ConversationMode, Vec<u64>>,
    pub follow_up: FollowUpReport,
}

fn ratio(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

fn bump(histogram: &mut Vec<u64>, index: usize) {
    if histogram.len() <= index {
        histogram.resize(index + 1, 0);
    }
    histogram[index] += 1;
}

pub fn compute_report(conversations: &[Conversation], options: &ReportOptions) -> UsageReport {
    let included: Vec<&Conversation> = conversations
        .iter()
        .filter(|c| !(options.exclude_developers && c.user_kind == UserKind::Developer))
        .collect();
    let n = included.len() as u64;
    let edges = options.duration_edges_minutes.clone();

    let mut duration_counts = vec![0u64; edges.len()];
    let mut within_ten = 0u64;
    let mut rounds_histogram = Vec::new();
    let mut rounds_by_mode: BTreeMap<ConversationMode, Vec<u64>> = BTreeMap::new();
    let mut mode_counts: BTreeMap<ConversationMode, u64> = BTreeMap::new();
    let mut weekly: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    let mut hourly = vec![0u64; 24];
    let mut users: BTreeSet<&UserRef> = BTreeSet::new();
    let mut per_course: BTreeMap<&CourseId, (BTreeSet<&UserRef>, u64, u64)> = BTreeMap::new();
    let mut question_count = 0u64;
    let semester_start = options.semester_start.and_hms_opt(0, 0, 0).expect("midnight exists");
    let offset = chrono::Duration::minutes(i64::from(options.utc_offset_minutes));

    for c in &included {
        let minutes = c.duration().num_milliseconds() as f64 / 60_000.0;
        if let Some(bucket) = edges.iter().rposition(|&e| minutes >= f64::from(e)) {
            duration_counts[bucket] += 1;
        }
        if minutes < 10.0 {
            within_ten += 1;
        }
        let rounds = c.rounds();
        bump(&mut rounds_histogram, rounds);
        bump(rounds_by_mode.entry(c.mode_at_start).or_default(), rounds);
        *mode_counts.entry(c.mode_at_start).or_default() += 1;

        let questions = c.question_count() as u64;
        question_count += questions;
        let local = c.started_at.naive_utc() + offset;
        let week = (local - semester_start).num_seconds().div_euclid(7 * 86_400);
        let entry = weekly.entry(week).or_default();
        entry.0 += 1;
        entry.1 += questions;
        hourly[local.hour() as usize] += 1;

        users.insert(&c.user_ref);
        let course = per_course.entry(&c.course_id).or_default();
        course.0.insert(&c.user_ref);
        course.1 += 1;
        course.2 += questions;
    }

    let mut running = 0u64;
    let cumulative_fractions = duration_counts
        .iter()
        .map(|count| {
            running += count;
            ratio(running, n)
        })
        .collect();
    let mut running = 0u64;
    let cdf = hourly
        .iter()
        .map(|count| {
            running += count;
            ratio(running, n)
        })
        .collect();

    let weekly = match (weekly.keys().next(), weekly.keys().next_back()) {
        (Some(&first), Some(&last)) => (first..=last)
            .map(|week| {
                let (conversations, questions) = weekly.get(&week).copied().unwrap_or_default();
                WeekCount { week, conversations, questions }
            })
            .collect(),
        _ => Vec::new(),
    };
    let histogram_at = |i: usize| rounds_histogram.get(i).copied().unwrap_or(0);
    let within_three: u64 = (0..=3).map(histogram_at).sum();

    UsageReport {
        schema_version: REPORT_SCHEMA_VERSION,
        empty: n == 0,
        conversation_count: n,
        question_count,
        user_count: users.len() as u64,
        courses: per_course
            .into_iter()
            .map(|(id, (users, conversations, questions))| {
                let user_count = users.len() as u64;
                (
                    id.clone(),
                    CourseUsage {
                        user_count,
                        conversation_count: conversations,
                        question_count: questions,
                        conversations_per_user: ratio(conversations, user_count),
                    },
                )
            })
            .collect(),
        durations: DurationBuckets { edges_minutes: edges, counts: duration_counts, cumulative_fractions },
        within_ten_minutes_ratio: ratio(within_ten, n),
        no_question_ratio: ratio(histogram_at(0), n),
        single_round_ratio: ratio(histogram_at(1), n),
        within_three_rounds_ratio: ratio(within_three, n),
        rounds_histogram,
        weekly,
        hourly: HourlyDistribution { counts: hourly, cdf },
        mode_shares: ConversationMode::ALL
            .into_iter()
            .map(|mode| {
                let count = mode_counts.get(&mode).copied().unwrap_or(0);
                ModeShare { mode, count, share: ratio(count, n) }
            })
            .collect(),
        rounds_by_mode,
        follow_up: follow_up_report(included.iter().copied()),
    }
}

/// A conversation "emits" when any assistant message carries a follow-up
/// question, and is "answered" when a user message comes after such a message.
pub fn follow_up_report<'a>(conversations: impl IntoIterator<Item = &'a Conversation>) -> FollowUpReport {
    let mut overall = (0u64, 0u64, 0u64);
    let mut per_course: BTreeMap<CourseId, (u64, u64, u64)> = BTreeMap::new();
    for c in conversations {
        let first_flag = c.messages.iter().position(|m| m.role == Role::Assistant && m.metadata.has_follow_up);
        let emitted = first_flag.is_some();
        let answered = first_flag.is_some_and(|i| c.messages[i + 1..].iter().any(|m| m.role == Role::User));
        for tally in [&mut overall, per_course.entry(c.course_id.clone()).or_default()] {
            tally.0 += 1;
            tally.1 += u64::from(emitted);
            tally.2 += u64::from(answered);
        }
    }
    let stats = |(conversations, emitted, answered): (u64, u64, u64)| FollowUpStats {
        conversations,
        emitted,
        answered,
        emitted_ratio: ratio(emitted, conversations),
        answered_ratio: (emitted > 0).then(|| ratio(answered, emitted)),
    };
    FollowUpReport {
        overall: stats(overall),
        per_course: per_course.into_iter().map(|(k, v)| (k, stats(v))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::testing::{conversation_with, minutes};

    fn options() -> ReportOptions {
        ReportOptions::new(NaiveDate::from_ymd_opt(2024, 1, 15).unwrap())
    }

    #[test]
    fn empty_report_is_zeroed() {
        let report = compute_report(&[], &options());
        assert!(report.empty);
        assert_eq!(report.conversation_count, 0);
        assert_eq!(report.within_ten_minutes_ratio, 0.0);
        assert!(report.weekly.is_empty());
        assert_eq!(report.follow_up.overall.answered_ratio, None);
    }

    #[test]
    fn ten_minute_fraction() {
        let convs: Vec<_> = [4, 9, 25].iter().map(|&m| conversation_with(1, minutes(m), false, false)).collect();
        let report = compute_report(&convs, &options());
        assert!((report.within_ten_minutes_ratio - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.durations.counts, vec![1, 1, 0, 1, 0, 0, 0]);
        assert!((report.durations.cumulative_fractions[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(*report.durations.cumulative_fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn follow_up_final_message_is_not_answered() {
        let flagged_last = conversation_with(1, minutes(1), true, false);
        let report = follow_up_report([&flagged_last]);
        assert_eq!(report.overall.emitted, 1);
        assert_eq!(report.overall.answered, 0);
        assert_eq!(report.overall.answered_ratio, Some(0.0));
        let answered = conversation_with(2, minutes(1), true, true);
        assert_eq!(follow_up_report([&answered]).overall.answered, 1);
        let none = conversation_with(2, minutes(1), false, false);
        assert_eq!(follow_up_report([&none]).overall.answered_ratio, None);
    }

    #[test]
    fn hourly_cdf_ends_at_one() {
        let convs: Vec<_> = (0..5).map(|i| conversation_with(i, minutes(i as i64), false, false)).collect();
        let report = compute_report(&convs, &options());
        assert_eq!(*report.hourly.cdf.last().unwrap(), 1.0);
        assert!(report.hourly.cdf.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(report.hourly.counts.iter().sum::<u64>(), 5);
        assert_eq!(report.rounds_histogram, vec![1, 1, 1, 1, 1]);
        assert_eq!(report.no_question_ratio, 0.2);
    }
}
