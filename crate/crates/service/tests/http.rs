use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use neurath::{read_behavior, IngestOptions};
use neurath_service::*;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Client {
    app: axum::Router,
    bodies: Vec<String>,
}

impl Client {
    fn new(analytics: bool, dir: Option<std::path::PathBuf>) -> Client {
        let store = Store::open(ServiceConfig { data_dir: dir, analytics }).unwrap();
        Client {
            app: router(Arc::new(store)),
            bodies: Vec::new(),
        }
    }

    async fn call(&mut self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(match body {
                Some(v) => Body::from(v.to_string()),
                None => Body::empty(),
            })
            .unwrap();
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        self.bodies.push(text.clone());
        (status, text)
    }

    async fn json(&mut self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, t) = self.call(method, uri, body).await;
        (s, serde_json::from_str(&t).unwrap_or(Value::Null))
    }
}

fn spec(analytics: bool) -> Value {
    json!({
        "problems": [{"device": 3, "n": 3, "tests": 2}, {"device": 1, "n": 3, "tests": 1}],
        "condition": {"w_s": 0.9, "w_b": 0.1, "w_known": true, "reporting": "disappear"},
        "seed": 17,
        "analytics": analytics
    })
}

#[tokio::test]
async fn full_session_over_http() {
    let mut c = Client::new(true, None);
    let (s, snap) = c.json("POST", "/sessions", Some(spec(false))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = snap["id"].as_str().unwrap().to_string();
    assert_eq!(snap["phase"], "intervene");
    assert_eq!(snap["problem_count"], 2);

    let (s, body) = c
        .json("POST", &format!("/sessions/{id}/judge"), Some(json!({"judgment": ""})))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "sequence");

    let (s, body) = c
        .json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "+.."})))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["phase"], "judge");
    assert_eq!(body["outcome"].as_str().unwrap().len(), 3);

    let (s, body) = c
        .json(
            "POST",
            &format!("/sessions/{id}/judge"),
            Some(json!({"judgment": "x->y;y->z;z->x"})),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "loop");
    assert_eq!(body["message"], LOOP_MESSAGE);

    let (s, body) = c
        .json("POST", &format!("/sessions/{id}/judge"), Some(json!({"judgment": "x->y"})))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["accepted"], true);

    let (_, snap) = c.json("GET", &format!("/sessions/{id}"), None).await;
    assert!(snap.get("previous_judgment").is_none());

    c.json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "..."})))
        .await;
    let (_, body) = c
        .json("POST", &format!("/sessions/{id}/judge"), Some(json!({"judgment": "x->y;y->z"})))
        .await;
    assert_eq!(body["feedback"]["true_graph"], "x->y;y->z");
    c.json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "-+."})))
        .await;
    let (_, body) = c
        .json("POST", &format!("/sessions/{id}/judge"), Some(json!({"judgment": "x->y"})))
        .await;
    assert_eq!(body["phase"], "done");
    assert_eq!(body["score"]["accuracy"], 1.0);

    let (s, csv) = c.call("GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let back = read_behavior(csv.as_bytes(), IngestOptions::default()).unwrap();
    assert_eq!(back[0].test_count(), 3);
    assert_eq!(back[0].participant_id, id);

    let (s, score) = c
        .json("GET", &format!("/sessions/{id}/score?mode=random_timepoint"), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(score["mode"], "random_timepoint");
}

#[tokio::test]
async fn analytics_disabled_leaks_nothing() {
    let mut c = Client::new(true, None);
    let (_, snap) = c.json("POST", "/sessions", Some(spec(false))).await;
    let id = snap["id"].as_str().unwrap().to_string();
    let (s, body) = c.json("GET", &format!("/sessions/{id}/analytics"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "policy");
    c.json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "+.."})))
        .await;
    c.json("POST", &format!("/sessions/{id}/judge"), Some(json!({"judgment": "x->y"})))
        .await;
    c.json("GET", &format!("/sessions/{id}"), None).await;
    c.json("GET", &format!("/sessions/{id}/analytics?lambda=2"), None).await;
    for b in &c.bodies {
        for word in ["marginal", "eig", "gain", "entropy", "posterior", "distribution"] {
            assert!(!b.contains(word), "{word} in {b}");
        }
    }
}

#[tokio::test]
async fn server_switch_overrides_session_request() {
    let mut c = Client::new(false, None);
    let (_, snap) = c.json("POST", "/sessions", Some(spec(true))).await;
    assert_eq!(snap["analytics"], false);
    let id = snap["id"].as_str().unwrap().to_string();
    let (s, _) = c.json("GET", &format!("/sessions/{id}/analytics"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn analytics_bundle_over_http() {
    let mut c = Client::new(true, None);
    let (_, snap) = c.json("POST", "/sessions", Some(spec(true))).await;
    let id = snap["id"].as_str().unwrap().to_string();
    let (s, body) = c
        .json("GET", &format!("/sessions/{id}/analytics?lambda=2&omega=5&epsilon=0.1"), None)
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["eig"].as_array().unwrap().len(), 27);
    assert_eq!(body["ns"]["lambda"], 2.0);
    let m = &body["edge_marginals"][0];
    assert!((m["absent"].as_f64().unwrap() - 9.0 / 25.0).abs() < 1e-12);
}

#[tokio::test]
async fn bad_requests() {
    let mut c = Client::new(true, None);
    let (s, body) = c.json("GET", "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
    let (s, _) = c.json("POST", "/sessions", Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = c.json("POST", "/sessions", Some(json!({"preset": "exp1", "bogus": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, snap) = c.json("POST", "/sessions", Some(spec(false))).await;
    let id = snap["id"].as_str().unwrap().to_string();
    let (s, body) = c
        .json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "+."})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "validation");
    let (s, _) = c.call("GET", "/sessions/nope/export", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn logs_persist_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Client::new(false, Some(dir.path().to_path_buf()));
    let mut body = spec(false);
    body["free_text_problem"] = json!(0);
    let (_, snap) = c.json("POST", "/sessions", Some(body)).await;
    let id = snap["id"].as_str().unwrap().to_string();
    c.json("POST", &format!("/sessions/{id}/intervene"), Some(json!({"intervention": "+.."})))
        .await;
    c.json(
        "POST",
        &format!("/sessions/{id}/judge"),
        Some(json!({"judgment": "x->y", "free_text": "y followed x"})),
    )
    .await;
    let path = log_path(dir.path(), &id);
    assert!(path.exists());
    let events = read_log(&path).unwrap();
    assert_eq!(events.len(), 5);
    let side = std::fs::read_to_string(dir.path().join(format!("{id}.free_text.csv"))).unwrap();
    assert!(side.contains("y followed x"));

    let (_, before) = c.json("GET", &format!("/sessions/{id}"), None).await;
    let mut reopened = Client::new(false, Some(dir.path().to_path_buf()));
    let (s, after) = reopened.json("GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    let (_, events_text) = reopened
        .call("GET", &format!("/sessions/{id}/export?part=events"), None)
        .await;
    assert_eq!(events_text, std::fs::read_to_string(&path).unwrap());
}
