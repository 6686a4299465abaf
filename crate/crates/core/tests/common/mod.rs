#![allow(dead_code)]

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use course_assistant::gateway::{LlmGateway, MockScript, RetryPolicy, ScriptedMock};
use course_assistant::knowledge::{DocumentKind, HashEmbedder, KnowledgeStore, NewDocument};
use course_assistant::prompt::{CourseConfig, FollowUpPolicy};
use course_assistant::service::{Caller, CourseAssistant, ManualClock};

pub const COURSE: &str = "OS";

pub const LECTURE_TEXT: &str = "round robin scheduling gives each process a fixed time quantum \
and preempts it when the quantum expires context switches cost time";

pub const HOMEWORK_TEXT: &str = "homework one compute average waiting time for five processes \
under shortest job first with arrival times zero two four six eight";

pub const DETECTOR_PROMPT: &str = "Is the student question below asking";

pub struct Fixture {
    pub assistant: Arc<CourseAssistant>,
    pub mock: Arc<ScriptedMock>,
    pub clock: Arc<ManualClock>,
    pub educator: Caller,
    pub student: Caller,
}

pub fn config() -> CourseConfig {
    CourseConfig {
        name: "Operating Systems".into(),
        description: "Processes, scheduling, memory and file systems.".into(),
        educator_rules: vec!["Answer in English.".into()],
        follow_up_policy: FollowUpPolicy::ModelDecides,
        ..CourseConfig::new(COURSE)
    }
}

pub fn script() -> MockScript {
    MockScript::new()
        .rule(DETECTOR_PROMPT, "no")
        .rule("round robin", "Round robin rotates the CPU among processes.\nWhat quantum would you pick?")
        .rule("waiting time", "Start by drawing the Gantt chart.\n```\nwait = start - arrival\n```")
        .default_response("Here is an explanation.")
}

pub async fn fixture_with(script: MockScript, policy: RetryPolicy) -> Fixture {
    let mock = Arc::new(ScriptedMock::new(script));
    let gateway = Arc::new(LlmGateway::new(mock.clone(), policy, 8));
    let store = Arc::new(KnowledgeStore::new(Arc::new(HashEmbedder::default())));
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 4, 19, 0, 0).unwrap()));
    let assistant = Arc::new(CourseAssistant::new(store, gateway, "test-salt").with_clock(clock.clone()));
    let educator = Caller::educator("prof@example.edu");
    assistant.put_course_config(&educator, &COURSE.into(), config()).unwrap();
    assistant
        .upload_documents(
            &educator,
            &COURSE.into(),
            vec![
                NewDocument::new("Lecture 3: Scheduling", DocumentKind::Lecture, LECTURE_TEXT),
                NewDocument::new("Homework 1", DocumentKind::Homework, HOMEWORK_TEXT),
            ],
        )
        .await
        .unwrap();
    Fixture { assistant, mock, clock, educator, student: Caller::student("student-42@example.edu") }
}

pub async fn fixture() -> Fixture {
    fixture_with(script(), RetryPolicy { initial_backoff_ms: 1, max_backoff_ms: 2, ..RetryPolicy::default() }).await
}
