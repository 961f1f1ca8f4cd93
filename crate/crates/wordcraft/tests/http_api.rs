use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use wordcraft::playsvc::http::{cors, router, SCHEMA};
use wordcraft::playsvc::{LogRecord, Phase, PlayService, Protocol};
use wordcraft::formats;
use wordcraft_core::env::{EnvState, Partition};
use wordcraft_core::evalkit::oracle_plan;
use wordcraft_core::recipes::{split_recipes, EntityId, RecipeBook, RecipeSplit};
use wordcraft_core::{bundled, rng};

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: Value,
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>, origin: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(o) = origin {
        req = req.header(header::ORIGIN, o);
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    Reply { status, headers, body }
}

async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    call(app, Method::POST, uri, Some(&body.to_string()), None).await
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, None).await
}

/// Asserts `value` is a valid instance of the schema definition `name`.
fn assert_schema(name: &str, value: &Value) {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let wrapper = json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": schema["$defs"],
        "$ref": format!("#/$defs/{name}"),
    });
    let v = jsonschema::validator_for(&wrapper).unwrap();
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name} payload violates the schema: {errors:?}\n{value:#}");
}

fn app_for(book: RecipeBook, split: RecipeSplit, defaults: Protocol, log: Option<&std::path::Path>) -> Router {
    let mut svc = PlayService::new(Arc::new(book), Arc::new(split), defaults);
    if let Some(dir) = log {
        svc = svc.with_log_dir(dir);
    }
    router(Arc::new(svc), cors(None).unwrap())
}

fn tiny(entities: &[&str], recipes: &[(&str, [&str; 2])]) -> (RecipeBook, RecipeSplit) {
    let book = RecipeBook::from_names(entities.iter().copied(), recipes.iter().copied()).unwrap();
    let split = RecipeSplit::all_train(&book);
    (book, split)
}

fn one_task() -> Value {
    json!({ "num_train_tasks": 1, "num_test_tasks": 0, "depth": 1, "distractors": 0 })
}

fn slot(state: &Value, name: &str) -> usize {
    state["table"].as_array().unwrap().iter().position(|v| v == name).unwrap()
}

#[test]
fn schema_file_is_valid_json_schema() {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    assert!(jsonschema::meta::is_valid(&schema));
    for name in ["CreateRequest", "ActionRequest", "StateView", "StepView", "SessionReport", "ErrorBody"] {
        assert!(schema["$defs"][name].is_object(), "missing {name}");
    }
}

#[tokio::test]
async fn mud_task_end_to_end() {
    let (book, split) = tiny(&["water", "earth", "mud"], &[("mud", ["water", "earth"])]);
    let app = app_for(book, split, Protocol::default(), None);

    let created = post(&app, "/sessions", json!({ "protocol": one_task(), "seed": 3, "participant": "p1" })).await;
    assert_eq!(created.status, StatusCode::CREATED);
    assert_schema("StateView", &created.body);
    let s = &created.body;
    assert_eq!(s["goal"], "mud");
    assert_eq!(s["selected"], Value::Null);
    let mut names: Vec<&str> = s["table"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["earth", "water"]);
    let id = s["session_id"].as_str().unwrap().to_string();

    let state = get(&app, &format!("/sessions/{id}/state")).await;
    assert_eq!(state.status, StatusCode::OK);
    assert_eq!(&state.body, s);

    let first = post(&app, &format!("/sessions/{id}/actions"), json!({ "slot": slot(s, "water"), "expected_step": 0 })).await;
    assert_eq!(first.status, StatusCode::OK);
    assert_schema("StepView", &first.body);
    assert_eq!(first.body["state"]["selected"], "water");
    assert_eq!(first.body["reward"], 0.0);

    let second = post(&app, &format!("/sessions/{id}/actions"), json!({ "slot": slot(s, "earth") })).await;
    assert_schema("StepView", &second.body);
    assert_eq!(second.body["success"], true);
    assert_eq!(second.body["done"], true);
    assert_eq!(second.body["reward"], 1.0);
    assert_eq!(second.body["state"]["phase"], "finished");
    assert_eq!(second.body["state"]["train"]["successes"], 1);

    let late = post(&app, &format!("/sessions/{id}/actions"), json!({ "slot": 0 })).await;
    assert_eq!(late.status, StatusCode::CONFLICT);
    assert_schema("ErrorBody", &late.body);
    assert_eq!(late.body["error"], "finished");

    let report = get(&app, &format!("/sessions/{id}/report")).await;
    assert_eq!(report.status, StatusCode::OK);
    assert_schema("SessionReport", &report.body);
    assert_eq!(report.body["train"]["success_rate"], 1.0);
    assert_eq!(report.body["participant"], "p1");
}

#[tokio::test]
async fn clicking_the_selected_tile_twice_makes_a_self_pair() {
    let (book, split) = tiny(&["hay", "hay bale"], &[("hay bale", ["hay", "hay"])]);
    let app = app_for(book, split, Protocol::default(), None);
    let s = post(&app, "/sessions", json!({ "protocol": one_task() })).await.body;
    assert_eq!(s["table"], json!(["hay"]));
    let id = s["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/actions");
    post(&app, &uri, json!({ "slot": 0 })).await;
    let done = post(&app, &uri, json!({ "slot": 0 })).await.body;
    assert_eq!(done["success"], true);
    assert_eq!(done["events"][0]["kind"], "combined");
    assert_eq!(done["events"][0]["pair"], json!(["hay", "hay"]));
}

#[tokio::test]
async fn client_errors_leave_the_session_untouched() {
    let (book, split) = tiny(&["water", "earth", "mud"], &[("mud", ["water", "earth"])]);
    let app = app_for(book, split, Protocol::default(), None);

    let missing = get(&app, "/sessions/nope/state").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_schema("ErrorBody", &missing.body);
    assert_eq!(get(&app, "/sessions/nope/report").await.status, StatusCode::NOT_FOUND);

    let s = post(&app, "/sessions", json!({ "protocol": one_task() })).await.body;
    let id = s["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/actions");

    let bad_slot = post(&app, &uri, json!({ "slot": 7 })).await;
    assert_eq!(bad_slot.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad_slot.body["error"], "invalid_slot");
    let stale = post(&app, &uri, json!({ "slot": 0, "expected_step": 3 })).await;
    assert_eq!(stale.status, StatusCode::CONFLICT);
    assert_eq!(stale.body["error"], "stale_step");
    let unknown_field = post(&app, &uri, json!({ "slot": 0, "cheat": true })).await;
    assert!(unknown_field.status.is_client_error());
    assert_schema("ErrorBody", &unknown_field.body);
    let garbage = call(&app, Method::POST, &uri, Some("{not json"), None).await;
    assert!(garbage.status.is_client_error());
    assert_eq!(garbage.body["error"], "bad_request");
    let bad_protocol = post(&app, "/sessions", json!({ "protocol": { "depth": 0 } })).await;
    assert_eq!(bad_protocol.status, StatusCode::BAD_REQUEST);

    assert_eq!(get(&app, &format!("/sessions/{id}/state")).await.body, s);
}

#[tokio::test]
async fn cors_allows_the_configured_origin_only() {
    let (book, split) = tiny(&["water", "earth", "mud"], &[("mud", ["water", "earth"])]);
    let svc = Arc::new(PlayService::new(Arc::new(book), Arc::new(split), Protocol::default()));
    let app = router(svc, cors(Some("http://ui.example")).unwrap());

    let preflight = |origin: &'static str| {
        Request::builder()
            .method(Method::OPTIONS)
            .uri("/sessions")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
            .body(Body::empty())
            .unwrap()
    };
    let ok = app.clone().oneshot(preflight("http://ui.example")).await.unwrap();
    assert_eq!(ok.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://ui.example");
    assert!(ok.headers()[header::ACCESS_CONTROL_ALLOW_METHODS].to_str().unwrap().contains("POST"));
    let other = app.clone().oneshot(preflight("http://elsewhere.example")).await.unwrap();
    let granted = other.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN);
    assert!(granted.is_none_or(|v| v != "http://elsewhere.example" && v != "*"));

    let body = json!({ "protocol": one_task() }).to_string();
    let created = call(&app, Method::POST, "/sessions", Some(&body), Some("http://ui.example")).await;
    assert_eq!(created.status, StatusCode::CREATED);
    assert_eq!(created.headers[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://ui.example");
}

#[tokio::test]
async fn schema_is_served() {
    let (book, split) = tiny(&["water", "earth", "mud"], &[("mud", ["water", "earth"])]);
    let app = app_for(book, split, Protocol::default(), None);
    let r = get(&app, "/schema").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, serde_json::from_str::<Value>(SCHEMA).unwrap());
}

/// Rebuilds the environment state from a names-only view.
fn state_from_view(book: &RecipeBook, v: &Value) -> EnvState {
    let id = |n: &Value| book.id(n.as_str().unwrap()).unwrap();
    EnvState {
        goal: id(&v["goal"]),
        table: v["table"].as_array().unwrap().iter().map(id).collect(),
        selected: if v["selected"].is_null() { EntityId::EMPTY } else { id(&v["selected"]) },
        steps_taken: v["steps_taken"].as_u64().unwrap() as usize,
        done: false,
        success: false,
        intermediates: Vec::new(),
    }
}

/// A scripted participant plays the default 40 + 40 protocol, solving some
/// tasks and clicking randomly on others; the report must agree with the
/// client's own tally and with a replay of the session log.
#[tokio::test]
async fn full_protocol_report_matches_client_tally_and_log_replay() {
    let book = bundled::example_book();
    let split = split_recipes(&book, &Default::default()).unwrap();
    let logs = tempfile::tempdir().unwrap();
    let app = app_for(book.clone(), split.clone(), Protocol::default(), Some(logs.path()));

    let mut s = post(&app, "/sessions", json!({ "seed": 11 })).await.body;
    let id = s["session_id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/actions");
    let mut g = rng::seeded(5);
    let mut tally = [(0usize, 0usize); 2];
    let mut solving = true;
    let mut plan: Vec<usize> = Vec::new();
    let mut actions = 0;
    while s["phase"] != "finished" {
        if plan.is_empty() {
            solving = rand::Rng::random_bool(&mut g, 0.7);
            let st = state_from_view(&book, &s);
            let remaining = s["steps_remaining"].as_u64().unwrap() as usize + st.steps_taken;
            plan = oracle_plan(&st, &book, remaining).unwrap().iter().rev().map(|a| a.slot).collect();
        }
        let n = s["table"].as_array().unwrap().len();
        let slot = if solving { plan.pop().unwrap() } else { rand::Rng::random_range(&mut g, 0..n) };
        let phase = if s["phase"] == "train" { 0 } else { 1 };
        let step = post(&app, &uri, json!({ "slot": slot, "expected_step": s["steps_taken"] })).await;
        assert_eq!(step.status, StatusCode::OK, "{:?}", step.body);
        actions += 1;
        if step.body["done"] == true {
            tally[phase].0 += 1;
            tally[phase].1 += usize::from(step.body["success"] == true);
            plan.clear();
        }
        s = step.body["state"].clone();
    }
    assert_eq!(tally[0].0, 40);
    assert_eq!(tally[1].0, 40);

    let report = get(&app, &format!("/sessions/{id}/report")).await.body;
    assert_schema("SessionReport", &report);
    assert_eq!(report["train"]["successes"], tally[0].1);
    assert_eq!(report["test"]["successes"], tally[1].1);
    assert_eq!(report["train"]["success_rate"], tally[0].1 as f64 / 40.0);
    assert_eq!(report["test"]["success_rate"], tally[1].1 as f64 / 40.0);
    assert!(tally[0].1 > 0 && tally[0].1 < 40, "mix of wins and losses expected, got {tally:?}");

    let log: Vec<LogRecord> = formats::read_jsonl(&logs.path().join(format!("{id}.jsonl"))).unwrap();
    let steps = log.iter().filter(|r| matches!(r, LogRecord::Step { .. })).count();
    assert_eq!(steps, actions);
    let replay = wordcraft::playsvc::replay_log(&log, &book).unwrap();
    assert_eq!(replay[&Phase::Train], tally[0]);
    assert_eq!(replay[&Phase::Test], tally[1]);

    // Test tasks come from test recipes; train tasks from train recipes only.
    for rec in &log {
        if let LogRecord::TaskStarted { phase, task, .. } = rec {
            let last = book.recipe_index(task.final_recipe().unwrap()).unwrap();
            match phase {
                Phase::Test => assert!(split.is_test(last) && task.partition == Partition::Test),
                _ => assert!(task.intended_tree.iter().all(|r| split.is_train(book.recipe_index(r).unwrap()))),
            }
        }
    }
}
