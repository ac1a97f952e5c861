use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use prereq_cli::server::{router, AppState, ServerConfig, SCRIPTED_CLOCK_HEADER};
use prereq_core::mas::BusConfig;
use prereq_core::student_model::parse_timestamp;
use prereq_core::{ClassifyPolicy, Engine, EventLog, ScriptedClock, Session, StudentId};

const ONT: &str = include_str!("../../../data/sql.ont");
const BANK: &str = include_str!("../../../data/sql_bank.json");
const CLOCK: &str = "2015-11-03T11:08:54Z,2015-11-03T11:09:27Z,2015-11-03T11:11:31Z,2015-11-03T11:12:10Z,\
2015-11-03T11:09:27Z,2015-11-03T11:12:10Z,2015-11-03T11:12:10Z,2015-11-03T11:14:14Z";
const WRONG: [&str; 4] = ["DELETE staff", "DELETE FROM staff", "DELETE staff WHERE", "DELETE FROM"];

fn config(dir: &Path) -> ServerConfig {
    std::fs::write(dir.join("sql.ont"), ONT).unwrap();
    std::fs::write(dir.join("bank.json"), BANK).unwrap();
    ServerConfig {
        allow_scripted_clock: true,
        ..ServerConfig::new(dir.join("sql.ont"), dir.join("bank.json"), dir.join("students.log"))
    }
}

fn app(dir: &Path) -> Router {
    router(Arc::new(AppState::load(&config(dir)).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn start_scripted(student: &str, desired: &str) -> Request<Body> {
    Request::post("/sessions")
        .header("content-type", "application/json")
        .header(SCRIPTED_CLOCK_HEADER, CLOCK)
        .body(Body::from(json!({"student": student, "desired": desired}).to_string()))
        .unwrap()
}

#[tokio::test]
async fn start_returns_first_question() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, post("/sessions", json!({"student": "s1", "desired": "UPDATE"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["question"]["leaf"], "delete_select");
    assert_eq!(body["question"]["attempt"], 1);
    assert_eq!(body["phase"], "question_asked");
    assert!(body["id"].as_str().is_some_and(|s| !s.is_empty()));
}

#[tokio::test]
async fn unknown_concept_is_unprocessable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, post("/sessions", json!({"student": "s1", "desired": "DROP"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "UnknownDesiredConcept");
    assert!(body["message"].as_str().unwrap().contains("DROP"));
}

#[tokio::test]
async fn malformed_requests_get_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let bad = Request::post("/sessions").body(Body::from("{nope")).unwrap();
    let (status, body) = call(&app, bad).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "BadRequest");

    let (status, body) = call(&app, post("/sessions", json!({"student": "a b", "desired": "update"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "InvalidStudentId");

    let (status, body) = call(&app, get("/sessions/missing/question")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "SessionNotFound");

    let (status, body) = call(&app, get("/nowhere")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NotFound");
}

#[tokio::test]
async fn least_concept_recommends_directly() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, post("/sessions", json!({"student": "s1", "desired": "select"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(body["question"].is_null());
    assert_eq!(body["recommendation"]["verdict"], "direct_content");
    assert_eq!(body["phase"], "done");
}

#[tokio::test]
async fn full_session_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, body) = call(&app, start_scripted("s1", "UPDATE")).await;
    let id = body["id"].as_str().unwrap().to_string();

    let (status, body) = call(&app, get(&format!("/sessions/{id}/result"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "NotFinished");

    let (status, body) = call(&app, post(&format!("/sessions/{id}/answer"), json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "EmptyAnswer");

    let mut last = Value::Null;
    for text in WRONG {
        // refreshing the question view must not change anything
        let (_, before) = call(&app, get(&format!("/sessions/{id}/question"))).await;
        let (_, again) = call(&app, get(&format!("/sessions/{id}/question"))).await;
        assert_eq!(before, again);

        let (status, body) = call(&app, post(&format!("/sessions/{id}/answer"), json!({"text": text}))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["feedback"]["verdict"], "not_passed");
        last = body;
    }
    assert_eq!(last["phase"], "done");
    assert!(last["question"].is_null());
    let targets: Vec<&str> = last["recommendation"]["targets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["concept"].as_str().unwrap())
        .collect();
    assert_eq!(targets, ["delete_select", "delete_where"]);

    let (status, rec) = call(&app, get(&format!("/sessions/{id}/result"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec, last["recommendation"]);

    let (status, body) = call(&app, post(&format!("/sessions/{id}/answer"), json!({"text": "x"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "WrongPhase");

    let (status, history) = call(&app, get("/students/s1/history")).await;
    assert_eq!(status, StatusCode::OK);
    let task = &history[0]["tasks"][0];
    assert_eq!(task["question"], "delete_select");
    assert_eq!(task["attempt_durations"], json!([33, 39]));
    assert_eq!(task["average_duration"], 36.0);
    assert!(history[0]["remark"].as_str().unwrap().contains("not prepared to learn update"));
}

/// Same script, once over HTTP and once against the session directly.
#[tokio::test]
async fn transport_is_transparent() {
    let http_dir = tempfile::tempdir().unwrap();
    let app = app(http_dir.path());
    let (_, body) = call(&app, start_scripted("s1", "UPDATE")).await;
    let id = body["id"].as_str().unwrap().to_string();
    let mut last = Value::Null;
    for text in WRONG {
        last = call(&app, post(&format!("/sessions/{id}/answer"), json!({"text": text}))).await.1;
    }
    let http_log = std::fs::read_to_string(http_dir.path().join("students.log")).unwrap();

    let direct_dir = tempfile::tempdir().unwrap();
    let log_path = direct_dir.path().join("students.log");
    let engine = Arc::new(Engine::from_texts(ONT, BANK, ClassifyPolicy::default()).unwrap());
    let clock = ScriptedClock::new(CLOCK.split(',').map(|t| parse_timestamp(t).unwrap()));
    let mut s = Session::start(
        engine,
        Arc::new(EventLog::new(&log_path)),
        StudentId::new("s1").unwrap(),
        "UPDATE",
        Box::new(clock),
        BusConfig::default(),
    )
    .unwrap();
    let mut answers = WRONG.iter();
    while s.next_question().unwrap().is_some() {
        s.submit_answer(answers.next().unwrap()).unwrap();
    }
    let rec = s.finalize().unwrap();

    assert_eq!(last["recommendation"], serde_json::to_value(&rec).unwrap());
    assert_eq!(http_log, std::fs::read_to_string(&log_path).unwrap());
}

#[tokio::test]
async fn scripted_clock_needs_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServerConfig {
        allow_scripted_clock: false,
        ..config(dir.path())
    };
    let app = router(Arc::new(AppState::load(&cfg).unwrap()));
    let (status, body) = call(&app, start_scripted("s1", "update")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "BadRequest");
}

#[tokio::test]
async fn idle_sessions_expire() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServerConfig {
        idle_timeout: Duration::ZERO,
        ..config(dir.path())
    };
    let app = router(Arc::new(AppState::load(&cfg).unwrap()));
    let (_, body) = call(&app, post("/sessions", json!({"student": "s1", "desired": "update"}))).await;
    let id = body["id"].as_str().unwrap();
    let (status, _) = call(&app, get(&format!("/sessions/{id}/question"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rule_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, get("/rules/estimate?c=3&n=2")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"r": 13}));

    let (status, body) = call(&app, get("/rules/estimate?c=3&n=0")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "InvalidN");

    let (status, body) = call(&app, get("/rules/estimate?c=three&n=2")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "BadRequest");

    let (status, body) = call(&app, get("/rules/sweep?c=0..6&n=1..5")).await;
    assert_eq!(status, StatusCode::OK);
    let csv = body.as_str().unwrap();
    assert_eq!(csv.lines().count(), 36);
    assert!(csv.contains("4,5,129"));

    let (status, body) = call(&app, get("/rules/sweep?c=0..64&n=1..1000")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "GridTooLarge");

    let (status, body) = call(&app, get("/rules")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 13);

    let (status, body) = call(&app, get("/rules?format=text")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("@delete_d4"));

    let (status, _) = call(&app, get("/rules?format=xml")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(&app, get("/ontology")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["parents"].as_array().unwrap().len(), 4);

    let (status, body) = call(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn serves_over_tcp() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::load(&config(dir.path())).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(prereq_cli::server::serve_on(listener, state));

    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /rules/estimate?c=3&n=16 HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.ends_with(r#"{"r":196609}"#), "{response}");
    server.abort();
}

#[test]
fn startup_fails_fast_on_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.bank_path = dir.path().join("missing.json");
    assert!(AppState::load(&cfg).is_err());
}
