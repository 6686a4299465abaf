mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use course_assistant::service::{router, HEADER_DEVELOPER, HEADER_ROLE, HEADER_USER};

struct Api {
    app: Router,
}

enum Who {
    Student(&'static str),
    Educator,
    Developer,
    Nobody,
}

impl Api {
    async fn new() -> Self {
        Self { app: router(fixture().await.assistant) }
    }

    async fn call(&self, method: &str, uri: &str, who: Who, body: Option<Value>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        req = match who {
            Who::Student(id) => req.header(HEADER_USER, id),
            Who::Educator => req.header(HEADER_USER, "prof@example.edu").header(HEADER_ROLE, "educator"),
            Who::Developer => req.header(HEADER_USER, "dev").header(HEADER_DEVELOPER, "true"),
            Who::Nobody => req,
        };
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(&self, method: &str, uri: &str, who: Who, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.call(method, uri, who, body).await;
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn start(&self, who: Who, mode: &str) -> String {
        let (status, body) = self.json("POST", "/courses/OS/conversations", who, Some(json!({ "mode": mode }))).await;
        assert_eq!(status, StatusCode::CREATED);
        body["conversation_id"].as_str().unwrap().to_owned()
    }
}

#[tokio::test]
async fn conversation_flow_over_http() {
    let api = Api::new().await;
    let id = api.start(Who::Student("s1"), "general").await;
    let (status, turn) = api
        .json(
            "POST",
            &format!("/conversations/{id}/messages"),
            Who::Student("s1"),
            Some(json!({ "text": "how does round robin scheduling work" })),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn["mode"], "general");
    assert_eq!(turn["response"]["disclaimer"], "The responses may contain incorrect information");
    assert!(turn["response"]["references"][0]["link"].as_str().unwrap().starts_with("/courses/OS/documents/"));

    let (status, conversation) = api.json("GET", &format!("/conversations/{id}"), Who::Student("s1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(conversation["messages"].as_array().unwrap().len(), 2);

    let link = turn["response"]["references"][0]["link"].as_str().unwrap();
    let doc_path = link.split('#').next().unwrap();
    let (status, doc) = api.json("GET", doc_path, Who::Student("s1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(doc["raw_text"].as_str().unwrap().len() > 10);
}

#[tokio::test]
async fn error_statuses() {
    let api = Api::new().await;
    let (status, body) = api.json("POST", "/courses/OS/conversations", Who::Nobody, None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthenticated")));
    let (status, _) = api.json("POST", "/courses/nope/conversations", Who::Student("s1"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = api.start(Who::Student("s1"), "general").await;
    let (status, body) =
        api.json("POST", &format!("/conversations/{id}/messages"), Who::Student("s1"), Some(json!({ "text": "" }))).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, _) = api.json("GET", &format!("/conversations/{id}"), Who::Student("other"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = api.json("PUT", "/courses/OS/config", Who::Student("s1"), Some(json!({ "name": "x" }))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let bad = json!({ "thresholds": { "low": 0.6, "high": 0.5 } });
    let (status, body) = api.json("PUT", "/courses/OS/config", Who::Educator, Some(bad)).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_config")));
    let (status, _) = api.json("GET", "/courses/OS/analytics/nonsense", Who::Educator, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn config_round_trip_and_document_upload() {
    let api = Api::new().await;
    let config = json!({ "name": "Computer Organization", "educator_rules": ["Be brief."], "retrieval_k": 3 });
    let (status, stored) = api.json("PUT", "/courses/CO/config", Who::Educator, Some(config)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stored["course_id"], "CO");
    assert_eq!(stored["thresholds"]["low"], 0.6);
    let (_, fetched) = api.json("GET", "/courses/CO/config", Who::Student("s1"), None).await;
    assert_eq!(fetched, stored);

    let upload = json!({ "documents": [
        { "title": "Pipelining", "kind": "lecture", "text": "five stage pipeline hazards forwarding" },
        { "title": "HW2", "kind": "homework", "text": "compute the CPI of the pipeline" }
    ]});
    let (status, docs) = api.json("POST", "/courses/CO/documents", Who::Educator, Some(upload)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(docs.as_array().unwrap().len(), 2);
    let single = json!({ "title": "Pipelining", "kind": "lecture", "text": "revised pipeline notes" });
    let (_, docs) = api.json("POST", "/courses/CO/documents", Who::Educator, Some(single)).await;
    assert_eq!(docs[0]["version"], 2);
    let (_, listed) = api.json("GET", "/courses/CO/documents", Who::Student("s1"), None).await;
    let retired: Vec<_> = listed.as_array().unwrap().iter().filter(|d| d["retired"] == true).collect();
    assert_eq!(retired.len(), 1);
    let (status, _) = api
        .json("POST", "/courses/CO/documents", Who::Educator, Some(json!({ "title": "e", "kind": "lecture", "text": "" })))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn share_export_and_analytics() {
    let api = Api::new().await;
    let id = api.start(Who::Student("s1"), "homework").await;
    api.call("POST", &format!("/conversations/{id}/messages"), Who::Student("s1"), Some(json!({ "text": "hello" })))
        .await;
    let dev = api.start(Who::Developer, "general").await;

    let (status, _) = api.json("POST", &format!("/conversations/{id}/share"), Who::Student("s2"), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body) = api.json("POST", &format!("/conversations/{id}/share"), Who::Student("s1"), None).await;
    assert_eq!((status, body["shared"].as_bool()), (StatusCode::OK, Some(true)));
    let (status, _) = api.json("GET", &format!("/conversations/{id}"), Who::Student("s2"), None).await;
    assert_eq!(status, StatusCode::OK);
    api.call("POST", &format!("/conversations/{id}/share"), Who::Student("s1"), Some(json!({ "shared": false }))).await;
    let (status, _) = api.json("GET", &format!("/conversations/{id}"), Who::Student("s2"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, export) = api.call("GET", "/courses/OS/export", Who::Educator, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(export.lines().count(), 1);
    assert!(!export.contains(&dev));
    let (_, with_dev) = api.call("GET", "/courses/OS/export?developers=true", Who::Educator, None).await;
    assert_eq!(with_dev.lines().count(), 2);
    let (_, none) = api.call("GET", "/courses/OS/export?from=2030-01-01T00:00:00Z", Who::Educator, None).await;
    assert!(none.is_empty());
    let (status, _) = api.call("GET", "/courses/OS/export", Who::Student("s1"), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);

    let (status, report) = api.json("GET", "/courses/OS/analytics/usage", Who::Educator, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["conversation_count"], 1);
    assert_eq!(report["mode_shares"][1]["mode"], "homework");
    assert_eq!(report["mode_shares"][1]["share"], 1.0);
    let (_, hourly) = api.call("GET", "/courses/OS/analytics/hourly?format=csv", Who::Educator, None).await;
    assert!(hourly.starts_with("hour,conversations,cdf\n"));
    assert_eq!(hourly.lines().count(), 25);
    let (_, rounds) = api.json("GET", "/courses/OS/analytics/rounds?developers=true", Who::Educator, None).await;
    assert_eq!(rounds, json!([{ "rounds": "0", "count": "1" }, { "rounds": "1", "count": "1" }]));
}
