use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pilot_core::llm::{scripted_program, Matcher, ScriptStep};
use pilot_service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const ESOL_REF: &str = r#"{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "esol"}}"#;

fn app() -> Router {
    let default = scripted_program(vec![ScriptStep::new(Matcher::Always, "Final Answer: hello").repeating()]);
    router(AppState::new(ServiceConfig::new(default)))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn upload(app: &Router, uri: &str, text: String) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "text/plain")
        .body(Body::from(text))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn session_with(app: &Router, steps: Vec<ScriptStep>) -> String {
    let (status, body) = send(app, "POST", "/sessions", Some(json!({"backend": scripted_program(steps)}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

async fn wait_idle(app: &Router, id: &str) {
    let start = Instant::now();
    loop {
        let (_, s) = send(app, "GET", &format!("/sessions/{id}"), None).await;
        if s["busy"] == false {
            return;
        }
        assert!(start.elapsed() < Duration::from_secs(10), "query did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Backlog of the SSE stream, parsed from `data:` lines.
async fn events(app: &Router, id: &str, query: &str, last_event_id: Option<u64>) -> Vec<Value> {
    let mut req = Request::builder().uri(format!("/sessions/{id}/events?follow=false{query}"));
    if let Some(last) = last_event_id {
        req = req.header("last-event-id", last.to_string());
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("data: ").or_else(|| l.strip_prefix("data:")))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect()
}

fn kinds(events: &[Value]) -> Vec<&str> {
    events.iter().map(|e| e["kind"].as_str().unwrap()).collect()
}

#[tokio::test]
async fn create_and_unknown_session() {
    let app = app();
    let (status, body) = send(&app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(body["id"].as_str().is_some_and(|s| !s.is_empty()));
    let (status, body) = send(&app, "POST", "/sessions/nope/messages", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "UnknownSession");
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_run_event_order() {
    let app = app();
    let id = session_with(
        &app,
        vec![
            ScriptStep::new(Matcher::Always, ESOL_REF),
            ScriptStep::new(Matcher::Always, "Final Answer: done"),
        ],
    )
    .await;
    let (s, _) = send(&app, "PUT", &format!("/sessions/{id}/memory/user_smiles"), Some(json!(["CCO", "CCN"]))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = send(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "esol please"}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let query_id = body["query_id"].as_str().unwrap().to_string();
    wait_idle(&app, &id).await;

    let evs = events(&app, &id, "", None).await;
    assert_eq!(
        kinds(&evs),
        ["pool_changed", "model_turn", "tool_call", "tool_result", "pool_changed", "model_turn", "final_answer"]
    );
    for (i, e) in evs.iter().enumerate() {
        assert_eq!(e["seq"], i as u64);
    }
    assert!(evs[1..].iter().all(|e| e["query_id"] == query_id.as_str()));
    assert_eq!(evs[6]["payload"]["text"], "done");

    // Every step-trace field can be rebuilt from the stream.
    let (_, traces) = send(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    let step = &traces[0]["steps"][0];
    assert_eq!(evs[1]["payload"]["raw_output"], step["raw_output"]);
    assert_eq!(evs[1]["payload"]["parsed"], step["parsed"]);
    assert_eq!(evs[2]["payload"]["resolved_args"], step["resolved_args"]);
    assert_eq!(evs[3]["payload"]["observation"], step["observation"]);

    // The stored tool result is the observation payload, unchanged.
    let (_, got) = send(&app, "GET", &format!("/sessions/{id}/memory/result_drug_property"), None).await;
    assert_eq!(got["value"]["type"], "tool_result");
    assert_eq!(got["value"]["data"]["payload"], evs[3]["payload"]["observation"]["payload"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn resumable_stream() {
    let app = app();
    let id = session_with(&app, vec![ScriptStep::new(Matcher::Always, "Final Answer: ok").repeating()]).await;
    for k in ["a", "b", "c"] {
        send(&app, "PUT", &format!("/sessions/{id}/memory/{k}"), Some(json!("x"))).await;
    }
    let all = events(&app, &id, "", None).await;
    assert_eq!(all.len(), 3);
    let tail = events(&app, &id, "&since=1", None).await;
    assert_eq!(tail, all[1..]);
    let tail = events(&app, &id, "", Some(1)).await;
    assert_eq!(tail, all[2..]);
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_session_rejects_second_query() {
    let app = app();
    let id = session_with(&app, vec![ScriptStep::new(Matcher::Always, "Final Answer: slow").delayed(400)]).await;
    let uri = format!("/sessions/{id}/messages");
    let (s1, _) = send(&app, "POST", &uri, Some(json!({"text": "one"}))).await;
    let (s2, body) = send(&app, "POST", &uri, Some(json!({"text": "two"}))).await;
    assert_eq!(s1, StatusCode::ACCEPTED);
    assert_eq!(s2, StatusCode::CONFLICT);
    assert_eq!(body["error"], "BusySession");
    wait_idle(&app, &id).await;
    let evs = events(&app, &id, "", None).await;
    let terminal = evs.iter().filter(|e| e["kind"] == "final_answer" || e["kind"] == "failure").count();
    assert_eq!(terminal, 1);
}

#[tokio::test]
async fn memory_crud() {
    let app = app();
    let (_, s) = send(&app, "POST", "/sessions", None).await;
    let id = s["id"].as_str().unwrap();
    let key_uri = format!("/sessions/{id}/memory/user_smiles");

    let (st, _) = send(&app, "PUT", &key_uri, Some(json!({"type": "drug_list", "data": ["CCO"]}))).await;
    assert_eq!(st, StatusCode::OK);
    send(&app, "PUT", &key_uri, Some(json!(["CCN", "CCC"]))).await;
    let (_, got) = send(&app, "GET", &format!("{key_uri}?stack=true"), None).await;
    assert_eq!(got["depth"], 2);
    assert_eq!(got["value"], json!({"type": "drug_list", "data": ["CCN", "CCC"]}));
    assert_eq!(got["stack"][0]["data"], json!(["CCO"]));

    let (st, _) = send(&app, "PATCH", &key_uri, Some(json!(["c1ccccc1"]))).await;
    assert_eq!(st, StatusCode::OK);
    let (_, got) = send(&app, "GET", &key_uri, None).await;
    assert_eq!((got["depth"].clone(), got["value"]["data"].clone()), (json!(2), json!(["c1ccccc1"])));

    let (_, list) = send(&app, "GET", &format!("/sessions/{id}/memory"), None).await;
    assert_eq!(list["keys"], json!([{"key": "user_smiles", "type": "drug_list", "depth": 2}]));

    let (st, _) = send(&app, "DELETE", &key_uri, None).await;
    assert_eq!(st, StatusCode::OK);
    let (st, body) = send(&app, "GET", &key_uri, None).await;
    assert_eq!((st, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("KeyNotFound")));
    let (st, _) = send(&app, "PATCH", &key_uri, Some(json!("x"))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (st, body) = send(&app, "PUT", &format!("/sessions/{id}/memory/Bad-Key"), Some(json!("x"))).await;
    assert_eq!((st, body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedKey")));
    let (st, body) = send(&app, "PUT", &key_uri, Some(json!(["C(("]))).await;
    assert_eq!((st, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("InvalidValue")));

    // GETs leave the revision alone; every mutation emitted one pool_changed.
    let (_, a) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    send(&app, "GET", &format!("/sessions/{id}/memory"), None).await;
    let (_, b) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(a["revision"], b["revision"]);
    let evs = events(&app, id, "", None).await;
    assert_eq!(kinds(&evs), ["pool_changed"; 4]);
    let revisions: Vec<u64> = evs.iter().map(|e| e["payload"]["revision"].as_u64().unwrap()).collect();
    assert!(revisions.windows(2).all(|w| w[0] < w[1]));
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let (_, a) = send(&app, "POST", "/sessions", None).await;
    let (_, b) = send(&app, "POST", "/sessions", None).await;
    let (a, b) = (a["id"].as_str().unwrap(), b["id"].as_str().unwrap());
    assert_ne!(a, b);
    send(&app, "PUT", &format!("/sessions/{a}/memory/only_a"), Some(json!("v"))).await;
    let (_, list) = send(&app, "GET", &format!("/sessions/{b}/memory"), None).await;
    assert_eq!(list["keys"], json!([]));
    assert!(events(&app, b, "", None).await.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn large_upload_resolves_in_full() {
    let app = app();
    let id = session_with(
        &app,
        vec![
            ScriptStep::new(Matcher::Always, ESOL_REF),
            ScriptStep::new(Matcher::Always, "Final Answer: done"),
        ],
    )
    .await;
    let molecules: Vec<String> = (0..10_000).map(|i| format!("C{}O", "C".repeat(i % 50))).collect();
    let (st, body) = upload(&app, &format!("/sessions/{id}/memory/user_smiles/upload"), molecules.join("\n")).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    assert_eq!(body["count"], 10_000);
    let (_, list) = send(&app, "GET", &format!("/sessions/{id}/memory"), None).await;
    assert_eq!(list["keys"], json!([{"key": "user_smiles", "type": "drug_list", "depth": 1}]));

    send(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "esol for my upload"}))).await;
    wait_idle(&app, &id).await;
    let evs = events(&app, &id, "", None).await;
    let call = evs.iter().find(|e| e["kind"] == "tool_call").unwrap();
    assert_eq!(call["payload"]["resolved_args"]["drug_smiles"], json!(molecules));
    let result = evs.iter().find(|e| e["kind"] == "tool_result").unwrap();
    assert_eq!(result["payload"]["observation"]["payload"].as_array().unwrap().len(), 10_000);
}

#[tokio::test]
async fn invalid_upload_lines_are_reported() {
    let app = app();
    let (_, s) = send(&app, "POST", "/sessions", None).await;
    let id = s["id"].as_str().unwrap();
    let (st, body) = upload(&app, &format!("/sessions/{id}/memory/user_smiles/upload"), "CCO\nC((\n\nCC O\nCCN\n".into()).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let lines: Vec<u64> = body["invalid_lines"].as_array().unwrap().iter().map(|l| l["line"].as_u64().unwrap()).collect();
    assert_eq!(lines, [2, 4]);
    let (_, list) = send(&app, "GET", &format!("/sessions/{id}/memory"), None).await;
    assert_eq!(list["keys"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn deleted_key_surfaces_feedback() {
    let app = app();
    let id = session_with(
        &app,
        vec![
            ScriptStep::new(Matcher::Contains("NonexistentMemoryKey".into()), "Final Answer: the uploaded molecules are gone"),
            ScriptStep::new(Matcher::Always, ESOL_REF),
        ],
    )
    .await;
    send(&app, "PUT", &format!("/sessions/{id}/memory/user_smiles"), Some(json!(["CCO"]))).await;
    send(&app, "DELETE", &format!("/sessions/{id}/memory/user_smiles"), None).await;
    send(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "esol for my upload"}))).await;
    wait_idle(&app, &id).await;
    let evs = events(&app, &id, "", None).await;
    let fb = evs.iter().find(|e| e["kind"] == "fefo_feedback").expect("feedback event");
    assert_eq!(fb["payload"]["errors"][0]["class"], "NonexistentMemoryKey");
    assert!(fb["payload"]["prompt"].as_str().unwrap().contains("Original task: esol for my upload"));
    assert_eq!(evs.last().unwrap()["kind"], "final_answer");
}

#[tokio::test]
async fn serves_static_console_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let mut config = ServiceConfig::new(scripted_program(vec![]));
    config.static_dir = Some(dir.path().to_path_buf());
    let app = router(AppState::new(config));

    let get = |uri: &'static str| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap()).await.unwrap();
            let status = resp.status();
            let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
            let body = resp.into_body().collect().await.unwrap().to_bytes();
            (status, ctype, String::from_utf8(body.to_vec()).unwrap())
        }
    };
    let (st, ct, body) = get("/").await;
    assert_eq!((st, body.as_str()), (StatusCode::OK, "<h1>console</h1>"));
    assert!(ct.unwrap().starts_with("text/html"));
    assert_eq!(get("/app.js").await.1.as_deref(), Some("text/javascript"));
    assert_eq!(get("/missing.css").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get("/../secret").await.0, StatusCode::NOT_FOUND);
    let (st, _, _) = get("/sessions/nope").await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
