//! Seeded generator of conversation logs that realize exact target counts.
//!
//! Targets are given as counts over student conversations; developer
//! conversations are generated on top of them. Everything else (course and
//! user assignment, timestamps, round counts beyond the targeted classes) is
//! drawn from a ChaCha RNG seeded by the caller, so a spec and seed always
//! produce the same log.

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{decide, ConversationMode, HomeworkVerdict};
use crate::ids::{ConversationId, CourseId, MessageId, UserRef};
use crate::prompt::Role;
use crate::service::{Conversation, Message, MessageMetadata, UserKind};

/// Relative conversation volume by local hour: quiet before dawn, rising
/// from 8 AM, heaviest in the evening until 1 AM.
const HOUR_WEIGHTS: [u32; 24] = [9, 5, 2, 1, 1, 1, 1, 2, 4, 6, 7, 7, 7, 7, 7, 7, 8, 8, 10, 11, 12, 12, 12, 11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub total_conversations: u64,
    pub courses: Vec<String>,
    pub users_per_course: u64,
    pub semester_start: NaiveDate,
    pub semester_weeks: u32,
    pub utc_offset_minutes: i32,
    /// Conversations lasting strictly less than ten minutes.
    pub within_ten_minutes: u64,
    pub zero_rounds: u64,
    pub single_round: u64,
    /// Conversations with at most three rounds (includes zero and single).
    pub within_three_rounds: u64,
    pub homework_mode: u64,
    pub practice_mode: u64,
    pub follow_up_emitted: u64,
    /// Subset of `follow_up_emitted` where the student replied afterwards.
    pub follow_up_answered: u64,
    pub developer_conversations: u64,
    pub developer_no_question: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            total_conversations: 0,
            courses: vec!["course".into()],
            users_per_course: 50,
            semester_start: NaiveDate::from_ymd_opt(2024, 1, 15).expect("valid date"),
            semester_weeks: 16,
            utc_offset_minutes: 0,
            within_ten_minutes: 0,
            zero_rounds: 0,
            single_round: 0,
            within_three_rounds: 0,
            homework_mode: 0,
            practice_mode: 0,
            follow_up_emitted: 0,
            follow_up_answered: 0,
            developer_conversations: 0,
            developer_no_question: 0,
        }
    }
}

fn share(total: u64, fraction: f64) -> u64 {
    (total as f64 * fraction).round() as u64
}

impl SyntheticSpec {
    /// Counts matching the usage shares reported for the deployed assistant,
    /// scaled to `total` student conversations over three courses.
    pub fn deployment_profile(total: u64) -> Self {
        let developer_conversations = share(total, 0.0413 / (1.0 - 0.0413));
        let emitted = share(total, 0.11);
        Self {
            total_conversations: total,
            courses: vec!["CSS".into(), "CO".into(), "OS".into()],
            users_per_course: 200,
            within_ten_minutes: share(total, 0.6458),
            zero_rounds: share(total, 0.2094),
            single_round: share(total, 0.3086),
            within_three_rounds: share(total, 0.8588),
            homework_mode: share(total, 0.5379),
            practice_mode: share(total, 0.10),
            follow_up_emitted: emitted,
            follow_up_answered: share(emitted, 0.30),
            developer_conversations,
            developer_no_question: share(developer_conversations, 0.4489),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let n = self.total_conversations;
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(SyntheticError::Inconsistent(what.to_owned())) };
        check(self.within_three_rounds <= n, "within_three_rounds exceeds total_conversations")?;
        check(
            self.zero_rounds + self.single_round <= self.within_three_rounds,
            "zero_rounds + single_round exceeds within_three_rounds",
        )?;
        check(self.within_ten_minutes <= n, "within_ten_minutes exceeds total_conversations")?;
        check(
            self.zero_rounds <= self.within_ten_minutes,
            "zero-round conversations last zero minutes, so within_ten_minutes must cover zero_rounds",
        )?;
        check(self.homework_mode + self.practice_mode <= n, "homework_mode + practice_mode exceeds total_conversations")?;
        check(self.follow_up_answered <= self.follow_up_emitted, "follow_up_answered exceeds follow_up_emitted")?;
        check(
            self.follow_up_emitted <= n - self.zero_rounds,
            "follow_up_emitted exceeds conversations with at least one round",
        )?;
        check(
            self.follow_up_answered <= n - self.zero_rounds - self.single_round,
            "follow_up_answered exceeds conversations with at least two rounds",
        )?;
        check(
            self.developer_no_question <= self.developer_conversations,
            "developer_no_question exceeds developer_conversations",
        )?;
        let any = n + self.developer_conversations > 0;
        check(!any || !self.courses.is_empty(), "courses must not be empty")?;
        check(!any || self.users_per_course > 0, "users_per_course must be positive")?;
        check(!any || self.semester_weeks > 0, "semester_weeks must be positive")?;
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("inconsistent synthetic spec: {0}")]
    Inconsistent(String),
}

/// Where follow-up questions appear in a generated conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowUpPlacement {
    None,
    /// On the final assistant message, so nobody answers it.
    Final,
    /// On the first assistant message, followed by another user turn.
    Answered,
}

pub struct ConversationPlan {
    pub id: ConversationId,
    pub course_id: CourseId,
    pub user_ref: UserRef,
    pub user_kind: UserKind,
    pub mode: ConversationMode,
    pub started_at: DateTime<Utc>,
    pub duration_ms: i64,
    pub rounds: usize,
    pub follow_up: FollowUpPlacement,
}

/// Builds a conversation whose `2 * rounds` messages are evenly spread over
/// the duration, the last one landing exactly on `last_activity_at`.
pub fn build_conversation(plan: ConversationPlan) -> Conversation {
    let message_count = plan.rounds * 2;
    let dispatch = decide(plan.mode, HomeworkVerdict::no_candidates());
    let flagged = match plan.follow_up {
        FollowUpPlacement::None => None,
        FollowUpPlacement::Final => Some(message_count.saturating_sub(1)),
        FollowUpPlacement::Answered => Some(1),
    };
    let messages = (0..message_count)
        .map(|k| {
            let at = plan.started_at + Duration::milliseconds(plan.duration_ms * (k as i64 + 1) / message_count as i64);
            let round = k / 2 + 1;
            let id = MessageId(format!("{}-m{k}", plan.id));
            if k % 2 == 0 {
                Message {
                    id,
                    role: Role::User,
                    text: format!("Question {round} about the {} material", plan.mode),
                    created_at: at,
                    metadata: MessageMetadata::user(plan.mode),
                }
            } else {
                let has_follow_up = flagged == Some(k);
                let mut text = format!("Explanation for question {round}.");
                if has_follow_up {
                    text.push_str("\nCan you apply this idea to the next exercise?");
                }
                Message {
                    id,
                    role: Role::Assistant,
                    text,
                    created_at: at,
                    metadata: MessageMetadata {
                        dispatch: Some(dispatch.clone()),
                        has_follow_up,
                        ..MessageMetadata::user(plan.mode)
                    },
                }
            }
        })
        .collect();
    Conversation {
        id: plan.id,
        course_id: plan.course_id,
        user_ref: plan.user_ref,
        user_kind: plan.user_kind,
        mode_at_start: plan.mode,
        started_at: plan.started_at,
        last_activity_at: plan.started_at + Duration::milliseconds(plan.duration_ms),
        shared: false,
        messages,
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut pick = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if pick < w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

/// Weekly volume grows through the term with peaks before the midterm and
/// final, and a dip for the mid-term break.
fn week_weights(weeks: u32) -> Vec<u32> {
    (0..weeks)
        .map(|w| {
            let base = 4 + w * 6 / weeks.max(1);
            let midterm = weeks / 2;
            if w + 1 == midterm || w + 1 == weeks {
                base * 2
            } else if w == midterm + 1 {
                base / 2 + 1
            } else {
                base
            }
        })
        .collect()
}

/// Round counts realizing the spec: zero, single, two/three (about two
/// thirds two-round), then halving counts from four rounds upwards.
fn round_slots(spec: &SyntheticSpec) -> Vec<usize> {
    let mut slots = Vec::with_capacity(spec.total_conversations as usize);
    let two_or_three = spec.within_three_rounds - spec.zero_rounds - spec.single_round;
    let two = (2 * two_or_three).div_ceil(3);
    for (rounds, count) in [(0, spec.zero_rounds), (1, spec.single_round), (2, two), (3, two_or_three - two)] {
        slots.extend(std::iter::repeat_n(rounds, count as usize));
    }
    let mut remaining = spec.total_conversations - spec.within_three_rounds;
    let mut rounds = 4;
    while remaining > 0 {
        let count = if rounds == 12 { remaining } else { remaining.div_ceil(2) };
        slots.extend(std::iter::repeat_n(rounds, count as usize));
        remaining -= count;
        rounds += 1;
    }
    slots
}

struct TimeSampler {
    semester_start: DateTime<Utc>,
    offset: Duration,
    weeks: Vec<u32>,
}

impl TimeSampler {
    fn new(spec: &SyntheticSpec) -> Self {
        Self {
            semester_start: spec.semester_start.and_hms_opt(0, 0, 0).expect("midnight").and_utc(),
            offset: Duration::minutes(i64::from(spec.utc_offset_minutes)),
            weeks: week_weights(spec.semester_weeks),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DateTime<Utc> {
        let week = weighted_index(rng, &self.weeks) as i64;
        let day = rng.random_range(0..7i64);
        let hour = weighted_index(rng, &HOUR_WEIGHTS) as i64;
        let second = rng.random_range(0..3600i64);
        let local = self.semester_start + Duration::days(week * 7 + day) + Duration::hours(hour) + Duration::seconds(second);
        local - self.offset
    }
}

pub fn generate_synthetic_logs(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Conversation>, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.total_conversations as usize;
    let times = TimeSampler::new(spec);

    let mut rounds = round_slots(spec);
    rounds.shuffle(&mut rng);

    let mut within_ten = vec![false; n];
    let mut with_questions: Vec<usize> = Vec::new();
    for (i, &r) in rounds.iter().enumerate() {
        if r == 0 {
            within_ten[i] = true;
        } else {
            with_questions.push(i);
        }
    }
    with_questions.shuffle(&mut rng);
    for &i in with_questions.iter().take((spec.within_ten_minutes - spec.zero_rounds) as usize) {
        within_ten[i] = true;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut modes = vec![ConversationMode::General; n];
    for (pos, &i) in order.iter().enumerate() {
        let pos = pos as u64;
        if pos < spec.homework_mode {
            modes[i] = ConversationMode::Homework;
        } else if pos < spec.homework_mode + spec.practice_mode {
            modes[i] = ConversationMode::Practice;
        }
    }

    let mut follow_up = vec![FollowUpPlacement::None; n];
    let mut multi: Vec<usize> = (0..n).filter(|&i| rounds[i] >= 2).collect();
    multi.shuffle(&mut rng);
    for &i in multi.iter().take(spec.follow_up_answered as usize) {
        follow_up[i] = FollowUpPlacement::Answered;
    }
    let mut single: Vec<usize> = (0..n).filter(|&i| rounds[i] >= 1 && follow_up[i] == FollowUpPlacement::None).collect();
    single.shuffle(&mut rng);
    for &i in single.iter().take((spec.follow_up_emitted - spec.follow_up_answered) as usize) {
        follow_up[i] = FollowUpPlacement::Final;
    }

    let mut conversations = Vec::with_capacity(n + spec.developer_conversations as usize);
    for i in 0..n {
        let course = rng.random_range(0..spec.courses.len());
        let user = rng.random_range(0..spec.users_per_course);
        let duration_ms = if rounds[i] == 0 {
            0
        } else if within_ten[i] {
            rng.random_range((2_000 * rounds[i] as i64)..600_000)
        } else {
            600_000 + rng.random_range(0..10_200_000)
        };
        conversations.push(build_conversation(ConversationPlan {
            id: ConversationId(format!("conv-{:06}", i + 1)),
            course_id: CourseId(spec.courses[course].clone()),
            user_ref: synthetic_user(course, user, UserKind::Student),
            user_kind: UserKind::Student,
            mode: modes[i],
            started_at: times.sample(&mut rng),
            duration_ms,
            rounds: rounds[i],
            follow_up: follow_up[i],
        }));
    }

    for d in 0..spec.developer_conversations as usize {
        let course = rng.random_range(0..spec.courses.len());
        let rounds = if (d as u64) < spec.developer_no_question { 0 } else { rng.random_range(1..=3) };
        let duration_ms = if rounds == 0 { 0 } else { rng.random_range(10_000..1_800_000) };
        conversations.push(build_conversation(ConversationPlan {
            id: ConversationId(format!("conv-{:06}", n + d + 1)),
            course_id: CourseId(spec.courses[course].clone()),
            user_ref: synthetic_user(course, rng.random_range(0..3), UserKind::Developer),
            user_kind: UserKind::Developer,
            mode: ConversationMode::General,
            started_at: times.sample(&mut rng),
            duration_ms,
            rounds,
            follow_up: FollowUpPlacement::None,
        }));
    }
    Ok(conversations)
}

fn synthetic_user(course: usize, user: u64, kind: UserKind) -> UserRef {
    let tag = match kind {
        UserKind::Student => 0u64,
        UserKind::Developer => 1u64 << 60,
    };
    UserRef(format!("u-{:016x}", tag | (course as u64) << 32 | user))
}
