mod common;

use chrono::Duration;
use common::*;
use course_assistant::dispatch::ConversationMode;
use course_assistant::gateway::{MockScript, RetryPolicy};
use course_assistant::ids::{ConversationId, CourseId};
use course_assistant::knowledge::{cosine_similarity, HashEmbedder};
use course_assistant::prompt::{CourseConfig, Role};
use course_assistant::service::{
    is_anonymized, read_export, Clock, scan_for_pii, write_export, Caller, ExportRange, QuestionRequest, ServiceError,
    UserKind,
};

fn course() -> CourseId {
    COURSE.into()
}

#[tokio::test]
async fn start_conversation_examples() {
    let f = fixture().await;
    let a = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let b = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    assert_ne!(a, b);
    let conversation = f.assistant.get_conversation(&f.student, &a).await.unwrap();
    assert!(conversation.messages.is_empty());
    assert_eq!(conversation.started_at, f.clock.now());
    assert!(is_anonymized(&conversation.user_ref));
    assert!(matches!(
        f.assistant.start_conversation(&f.student, &"nope".into(), ConversationMode::General).await,
        Err(ServiceError::NotFound(_))
    ));
}

#[tokio::test]
async fn scripted_turn_matches_script_and_retrieval() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let question = "how does round robin scheduling preempt a process";
    let outcome = f.assistant.post_question(&f.student, &id, QuestionRequest::new(question)).await.unwrap();
    assert_eq!(
        course_assistant::response::render_segments(&outcome.response.segments),
        "Round robin rotates the CPU among processes.\nWhat quantum would you pick?"
    );
    assert_eq!(outcome.response.follow_up_question.as_deref(), Some("What quantum would you pick?"));
    assert!(!outcome.advisory_shown);

    // Independent ranking: embed and score every chunk directly.
    let embedder = HashEmbedder::default();
    let q = embedder.embed_sync(question).unwrap();
    let index = f.assistant.store().index(&course()).unwrap();
    let mut scored: Vec<_> = index
        .chunks()
        .iter()
        .map(|c| (cosine_similarity(&q, &embedder.embed_sync(&c.text).unwrap()).unwrap(), c.id.clone()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let expected: Vec<_> = scored.into_iter().take(2).map(|(_, id)| id).collect();
    let got: Vec<_> = outcome.response.references.iter().map(|r| r.chunk_id.clone()).collect();
    assert_eq!(got, expected);

    let conversation = f.assistant.get_conversation(&f.student, &id).await.unwrap();
    assert_eq!(conversation.rounds(), 1);
    let assistant = &conversation.messages[1];
    assert!(assistant.metadata.has_follow_up);
    let retrieval_ids: Vec<_> = assistant.metadata.retrieval.iter().map(|r| r.chunk_id.clone()).collect();
    assert_eq!(retrieval_ids, expected);
    assert!(assistant.metadata.prompt.as_ref().unwrap().ends_with(question));
}

#[tokio::test]
async fn empty_question_persists_nothing() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let err = f.assistant.post_question(&f.student, &id, QuestionRequest::new("   ")).await.unwrap_err();
    assert!(matches!(err, ServiceError::Validation(_)));
    assert!(f.assistant.get_conversation(&f.student, &id).await.unwrap().messages.is_empty());
    assert_eq!(f.mock.call_count(), 0);
}

#[tokio::test]
async fn homework_question_in_general_mode_gets_advisory() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let outcome = f.assistant.post_question(&f.student, &id, QuestionRequest::new(HOMEWORK_TEXT)).await.unwrap();
    assert!(outcome.advisory_shown);
    assert!(outcome.advisory.is_some());
    assert_eq!(outcome.mode, ConversationMode::General);
    assert!(outcome.dispatch.homework.is_homework);
    let conversation = f.assistant.get_conversation(&f.student, &id).await.unwrap();
    assert!(conversation.messages[1].metadata.advisory_shown);
    let prompt = conversation.messages[1].metadata.prompt.clone().unwrap();
    assert!(prompt.contains(course_assistant::prompt::HINT_ONLY_CLAUSE));
}

#[tokio::test]
async fn gateway_failure_records_error_turn() {
    let f = fixture_with(
        MockScript::new().default_response("unused").fail_always(),
        RetryPolicy { max_retries: 1, initial_backoff_ms: 1, max_backoff_ms: 1, deadline_ms: 5_000 },
    )
    .await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let err = f.assistant.post_question(&f.student, &id, QuestionRequest::new("what is a process")).await.unwrap_err();
    assert!(matches!(err, ServiceError::Generation { .. }));
    let conversation = f.assistant.get_conversation(&f.student, &id).await.unwrap();
    assert_eq!(conversation.messages.len(), 2);
    assert!(conversation.messages[1].is_error_turn());
    assert!(conversation.messages[1].metadata.dispatch.is_some());
    conversation.validate().unwrap();
    assert_eq!(conversation.rounds(), 0);
}

#[tokio::test]
async fn config_update_applies_to_next_turn_only() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    f.assistant.post_question(&f.student, &id, QuestionRequest::new("what is a process")).await.unwrap();
    let before = f.assistant.get_conversation(&f.student, &id).await.unwrap();

    let updated = CourseConfig { educator_rules: vec!["Always cite the lecture number.".into()], ..config() };
    f.assistant.put_course_config(&f.educator, &course(), updated).unwrap();
    f.assistant.post_question(&f.student, &id, QuestionRequest::new("what is a thread")).await.unwrap();
    let after = f.assistant.get_conversation(&f.student, &id).await.unwrap();

    assert_eq!(after.messages[..2], before.messages[..]);
    let first = before.messages[1].metadata.prompt.as_ref().unwrap();
    let second = after.messages[3].metadata.prompt.as_ref().unwrap();
    assert!(first.contains("- Answer in English.") && !first.contains("cite the lecture"));
    assert!(second.contains("- Always cite the lecture number.") && !second.contains("Answer in English"));
}

#[tokio::test]
async fn config_requires_educator_and_valid_thresholds() {
    let f = fixture().await;
    let mut bad = config();
    bad.thresholds.high = 0.5;
    assert!(matches!(
        f.assistant.put_course_config(&f.educator, &course(), bad),
        Err(ServiceError::InvalidConfig(_))
    ));
    assert!(matches!(
        f.assistant.put_course_config(&f.student, &course(), config()),
        Err(ServiceError::Forbidden(_))
    ));
}

#[tokio::test]
async fn share_then_unshare() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let classmate = Caller::student("classmate");
    assert!(matches!(f.assistant.get_conversation(&classmate, &id).await, Err(ServiceError::NotFound(_))));
    f.assistant.set_shared(&f.student, &id, true).await.unwrap();
    assert!(f.assistant.get_conversation(&classmate, &id).await.unwrap().shared);
    assert!(matches!(f.assistant.set_shared(&classmate, &id, false).await, Err(ServiceError::Forbidden(_))));
    f.assistant.set_shared(&f.student, &id, false).await.unwrap();
    assert!(matches!(f.assistant.get_conversation(&classmate, &id).await, Err(ServiceError::NotFound(_))));
}

#[tokio::test]
async fn export_filters_developers_and_range_and_round_trips() {
    let f = fixture().await;
    let empty = f.assistant.export(&f.educator, &course(), ExportRange::default(), false).await.unwrap();
    assert!(empty.is_empty());

    let dev = Caller::student("dev").developer();
    for caller in [&f.student, &f.student, &dev] {
        let id = f.assistant.start_conversation(caller, &course(), ConversationMode::General).await.unwrap();
        f.assistant.post_question(caller, &id, QuestionRequest::new("what is a process")).await.unwrap();
        f.clock.advance(Duration::hours(1));
    }
    let export = f.assistant.export(&f.educator, &course(), ExportRange::default(), false).await.unwrap();
    assert_eq!(export.lines().count(), 2);
    let all = f.assistant.export(&f.educator, &course(), ExportRange::default(), true).await.unwrap();
    let records = read_export(&all).unwrap();
    assert_eq!(records.iter().filter(|c| c.user_kind == UserKind::Developer).count(), 1);
    assert_eq!(write_export(&records), all);
    for line in all.lines() {
        assert!(scan_for_pii(&serde_json::from_str(line).unwrap()).is_empty());
        assert!(!line.contains("example.edu"));
    }

    let from = records[1].started_at;
    let ranged = f
        .assistant
        .export(&f.educator, &course(), ExportRange { from: Some(from), to: None }, true)
        .await
        .unwrap();
    assert_eq!(ranged.lines().count(), 2);
    assert!(matches!(
        f.assistant.export(&f.student, &course(), ExportRange::default(), false).await,
        Err(ServiceError::Forbidden(_))
    ));
}

#[tokio::test]
async fn turns_on_one_conversation_are_serialized() {
    let f = fixture_with(
        MockScript::new().rule(DETECTOR_PROMPT, "no").default_response("ok").latency_ms(30),
        RetryPolicy::default(),
    )
    .await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let tasks: Vec<_> = (0..4)
        .map(|i| {
            let assistant = f.assistant.clone();
            let student = f.student.clone();
            let id: ConversationId = id.clone();
            tokio::spawn(async move {
                assistant.post_question(&student, &id, QuestionRequest::new(format!("question {i}"))).await.unwrap()
            })
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    let conversation = f.assistant.get_conversation(&f.student, &id).await.unwrap();
    conversation.validate().unwrap();
    assert_eq!(conversation.rounds(), 4);
    let roles: Vec<_> = conversation.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::User, Role::Assistant].repeat(4));
}

#[tokio::test]
async fn mode_follows_selected_documents() {
    let f = fixture().await;
    let id = f.assistant.start_conversation(&f.student, &course(), ConversationMode::General).await.unwrap();
    let homework_id = f
        .assistant
        .list_documents(&course())
        .unwrap()
        .into_iter()
        .find(|d| d.title == "Homework 1")
        .unwrap()
        .id;
    let request = QuestionRequest { selected_documents: vec![homework_id], ..QuestionRequest::new("help me start") };
    let outcome = f.assistant.post_question(&f.student, &id, request).await.unwrap();
    assert_eq!(outcome.mode, ConversationMode::Homework);
    assert!(outcome.response.references.iter().all(|r| r.title == "Homework 1"));
    // Without a selection or explicit mode, the conversation keeps its mode.
    let next = f.assistant.post_question(&f.student, &id, QuestionRequest::new("and then?")).await.unwrap();
    assert_eq!(next.mode, ConversationMode::Homework);
    let unknown = QuestionRequest { selected_documents: vec!["doc-999999".into()], ..QuestionRequest::new("x") };
    assert!(matches!(f.assistant.post_question(&f.student, &id, unknown).await, Err(ServiceError::Validation(_))));
}

#[tokio::test]
async fn persisted_state_survives_restart() {
    use course_assistant::service::ServiceSettings;
    let dir = tempfile::tempdir().unwrap();
    let settings = ServiceSettings { data_dir: Some(dir.path().to_owned()), ..ServiceSettings::default() };
    let educator = Caller::educator("prof");
    let student = Caller::student("s1");
    let id = {
        let assistant = settings.build().unwrap();
        assistant.put_course_config(&educator, &course(), config()).unwrap();
        assistant
            .upload_documents(
                &educator,
                &course(),
                vec![course_assistant::knowledge::NewDocument::new(
                    "Lecture",
                    course_assistant::knowledge::DocumentKind::Lecture,
                    LECTURE_TEXT,
                )],
            )
            .await
            .unwrap();
        let id = assistant.start_conversation(&student, &course(), ConversationMode::Practice).await.unwrap();
        assistant.post_question(&student, &id, QuestionRequest::new("what is round robin")).await.unwrap();
        assistant.set_shared(&student, &id, true).await.unwrap();
        id
    };
    let restarted = settings.build().unwrap();
    let conversation = restarted.get_conversation(&student, &id).await.unwrap();
    assert_eq!(conversation.rounds(), 1);
    assert!(conversation.shared);
    assert_eq!(restarted.list_documents(&course()).unwrap().len(), 1);
    assert_eq!(restarted.course_config(&course()).unwrap().name, "Operating Systems");
    let more = restarted
        .upload_documents(
            &educator,
            &course(),
            vec![course_assistant::knowledge::NewDocument::new(
                "Quiz",
                course_assistant::knowledge::DocumentKind::Quiz,
                "quiz text",
            )],
        )
        .await
        .unwrap();
    assert_eq!(more[0].id.as_str(), "doc-000002");
}
