use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use swphm_core::ingest::{backlog_to_json, releases_to_json};
use swphm_core::pipeline::{evaluate_plan_file, PlanFile, TrainedModel};
use swphm_core::prognosis::RtThreshold;
use swphm_core::sim::{generate_dataset, SimConfig};
use swphm_server::{router, AppState};

fn app(state: Arc<AppState>) -> Router {
    router(state, None).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn dataset_body(seed: u64) -> Value {
    let out = generate_dataset(&SimConfig {
        seed,
        ..SimConfig::default()
    })
    .unwrap();
    let (items, releases) = out.dataset.into_parts();
    json!({
        "backlog": serde_json::from_str::<Value>(&backlog_to_json(&items).unwrap()).unwrap(),
        "releases": serde_json::from_str::<Value>(&releases_to_json(&releases).unwrap()).unwrap(),
    })
}

async fn trained_app() -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::default());
    let app = app(state.clone());
    let (s, _) = call(&app, "POST", "/datasets", Some(dataset_body(42))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "POST", "/train", None).await;
    assert_eq!(s, StatusCode::OK);
    (app, state)
}

fn open_items(model: &Value) -> Vec<String> {
    model["open_backlog"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn adjust_clock_example() {
    let app = app(Arc::new(AppState::default()));
    let (s, v) = call(
        &app,
        "POST",
        "/adjust",
        Some(json!({"rt_ms": 10000, "from": {"clock_ghz": 1.0}, "to": {"clock_ghz": 1.1}})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!((v["rt_ms"].as_f64().unwrap() - 8773.0).abs() < 1e-9);

    let (s, v) = call(
        &app,
        "POST",
        "/adjust",
        Some(json!({
            "rt_ms": 10000,
            "from": {"clock_ghz": 1.8, "os_bits": 32},
            "to": {"clock_ghz": 2.0, "os_bits": 64},
            "os_factor": 1.25
        })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!((v["rt_ms"].as_f64().unwrap() - 6909.33).abs() < 0.01);
}

#[tokio::test]
async fn adjust_outside_calibrated_range_is_422() {
    let app = app(Arc::new(AppState::default()));
    let (s, v) = call(
        &app,
        "POST",
        "/adjust",
        Some(json!({"rt_ms": 10000, "from": {"clock_ghz": 1.0}, "to": {"clock_ghz": 9.0}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "OUTSIDE_CALIBRATED_RANGE");
}

#[tokio::test]
async fn state_guards() {
    let app = app(Arc::new(AppState::default()));
    let plan = json!({"plan": {"horizon": 2, "items": []}, "threshold_s": 10});
    for (method, uri, body) in [
        ("POST", "/rul", Some(plan.clone())),
        ("POST", "/plan/evaluate", Some(plan.clone())),
        ("POST", "/plan/best", Some(plan.clone())),
        ("POST", "/predict", Some(json!({"cpv": 1.0}))),
        ("GET", "/model", None),
    ] {
        let (s, v) = call(&app, method, uri, body).await;
        assert_eq!(s, StatusCode::CONFLICT, "{uri}");
        assert_eq!(v["code"], "MODEL_NOT_TRAINED");
        assert_eq!(v["message"], "model not trained");
    }
    let (s, v) = call(&app, "POST", "/train", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "NO_DATASET");
}

#[tokio::test]
async fn validation_errors_are_400_with_codes() {
    let app = app(Arc::new(AppState::default()));
    let (s, v) = call(&app, "POST", "/datasets", Some(json!("not an object"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "MALFORMED_JSON");

    let bad = json!({
        "backlog": [{"id": "A", "title": "t", "description": "d", "kind": "fault",
                     "severity": "Major", "story_points": 4}],
        "releases": []
    });
    let (s, v) = call(&app, "POST", "/datasets", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "INVALID_STORY_POINTS");

    let dangling = json!({
        "backlog": [],
        "releases": [{"version": "1.0", "items": ["X"],
                      "env": {"os_bits": 64, "clock_ghz": 1.8, "ram_gb": 8, "disk_gb": 100},
                      "rt_runs_ms": [1000]}]
    });
    let (s, v) = call(&app, "POST", "/datasets", Some(dangling)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "UNKNOWN_ITEM");
}

#[tokio::test]
async fn upload_train_and_query() {
    let (app, _) = trained_app().await;
    let (s, model) = call(&app, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    let slope = model["global"]["slope"].as_f64().unwrap();
    assert!((slope - 100.0).abs() / 100.0 < 0.05);

    let (s, p) = call(&app, "POST", "/predict", Some(json!({"cpv": 10.0}))).await;
    assert_eq!(s, StatusCode::OK);
    let expected = model["global"]["intercept"].as_f64().unwrap() + slope * 10.0;
    assert!((p["rt_ms"].as_f64().unwrap() - expected).abs() < 1e-9);
}

#[tokio::test]
async fn plan_endpoints_match_core_pipeline() {
    let (app, state) = trained_app().await;
    let (_, model_json) = call(&app, "GET", "/model", None).await;
    let items = open_items(&model_json);
    let allocation: serde_json::Map<String, Value> = items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), json!(i % 3)))
        .collect();
    let plan = json!({"horizon": 3, "items": items});

    let (s, eval) = call(
        &app,
        "POST",
        "/plan/evaluate",
        Some(json!({"plan": plan, "allocation": allocation, "threshold_s": 6})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{eval}");

    let session = state.snapshot();
    let model: TrainedModel = serde_json::from_value(model_json).unwrap();
    let mut plan_file: PlanFile = serde_json::from_value(plan.clone()).unwrap();
    plan_file.allocation = Some(
        allocation
            .iter()
            .map(|(k, v)| (k.clone(), v.as_u64().unwrap() as usize))
            .collect(),
    );
    let direct = evaluate_plan_file(
        &model,
        &session.backlog,
        &plan_file,
        RtThreshold::from_seconds(6.0).unwrap(),
    )
    .unwrap();
    assert_eq!(eval, serde_json::to_value(&direct).unwrap());

    let (s, rul) = call(
        &app,
        "POST",
        "/rul",
        Some(json!({"plan": plan_file, "threshold_s": 6})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rul, eval["rul"]);

    // `spec` is accepted in place of `plan`
    let (s, best) = call(
        &app,
        "POST",
        "/plan/best",
        Some(json!({"spec": plan, "threshold_s": 6})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(best["rul"]["rul_releases"].as_u64() >= eval["rul"]["rul_releases"].as_u64());
    let (_, again) = call(
        &app,
        "POST",
        "/plan/best",
        Some(json!({"spec": plan, "threshold_s": 6})),
    )
    .await;
    assert_eq!(best, again);
}

#[tokio::test]
async fn plan_errors() {
    let (app, _) = trained_app().await;
    let (s, v) = call(
        &app,
        "POST",
        "/plan/evaluate",
        Some(json!({"plan": {"horizon": 2, "items": ["NOPE"]}, "allocation": {"NOPE": 0}})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "INVALID_PLAN");

    let (_, model) = call(&app, "GET", "/model", None).await;
    let items = open_items(&model);
    let (s, v) = call(
        &app,
        "POST",
        "/plan/best",
        Some(json!({"plan": {"horizon": 4, "items": items, "enumeration_cap": 10}})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "ENUMERATION_CAP");

    let (s, v) = call(
        &app,
        "POST",
        "/rul",
        Some(json!({"plan": {"horizon": 2, "items": []}, "threshold_s": -1})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "INVALID_VALUE");
}

#[tokio::test]
async fn empty_plan_is_censored() {
    let (app, _) = trained_app().await;
    let (s, v) = call(
        &app,
        "POST",
        "/plan/best",
        Some(json!({"plan": {"horizon": 3, "items": []}, "threshold_s": 100})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["rul"]["censored"], true);
    assert_eq!(v["rul"]["rul_releases"], 3);
}

#[tokio::test]
async fn retraining_swaps_snapshot_without_touching_old_one() {
    let (app, state) = trained_app().await;
    let before = state.snapshot();
    let old = before.model.clone().unwrap();
    let (s, _) = call(
        &app,
        "POST",
        "/train",
        Some(json!({"os_factor": 1.3, "seed": 7})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let after = state.snapshot();
    assert_eq!(before.model.as_ref().unwrap().adjustment, old.adjustment);
    assert_eq!(
        after
            .model
            .as_ref()
            .unwrap()
            .adjustment
            .os_factor_32_over_64,
        1.3
    );

    // a new upload drops the model
    let (s, _) = call(&app, "POST", "/datasets", Some(dataset_body(5))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, v) = call(&app, "POST", "/train", Some(json!({"bogus": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "MALFORMED_JSON");
}

#[tokio::test]
async fn state_dir_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::open(dir.path(), Default::default()).unwrap());
    let app1 = app(state);
    call(&app1, "POST", "/datasets", Some(dataset_body(42))).await;
    let (_, trained) = call(&app1, "POST", "/train", None).await;
    assert!(dir.path().join("model.json").exists());

    let app2 = app(Arc::new(
        AppState::open(dir.path(), Default::default()).unwrap(),
    ));
    let (s, model) = call(&app2, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(model, trained);
}

#[tokio::test]
async fn cors_allows_browser_origin() {
    let app = router(Arc::new(AppState::default()), Some("http://localhost:5173")).unwrap();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/plan/evaluate")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );
}
