use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use voxtherm_core::model::{fit_random_forest, Ensemble, Model, ModelMeta, RFParams, TrainingSet};
use voxtherm_service::{router, AppState, ServiceConfig};

fn toy_model() -> Model {
    let mut ts = TrainingSet::new();
    for i in 0..40 {
        let v = i as f64 * 1e4;
        ts.push(vec![v], 14.0 + v * 2e-5, "a").unwrap();
    }
    let forest = fit_random_forest(&ts, &RFParams { n_trees: 20, seed: 3, ..RFParams::default() }).unwrap();
    Model::new(
        Ensemble::Forest(forest),
        ModelMeta {
            training_cities: vec!["a".into()],
            coarse_cell_size_m: Some(1000.0),
            blur_sigma: Some(0.85),
            blur_radius: Some(1),
        },
    )
}

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    model_path: std::path::PathBuf,
}

fn fixture(with_model: bool, max_cells: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.json");
    toy_model().save(&model_path).unwrap();
    let cfg = ServiceConfig {
        model_path: with_model.then(|| model_path.clone()),
        data_dir: dir.path().join("data"),
        max_grid_cells: max_cells,
        cors_origin: None,
    };
    let state = AppState::from_config(&cfg).unwrap();
    Fixture {
        app: router(state, None),
        model_path,
        _dir: dir,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

fn grid(ncols: usize, nrows: usize, fill: f64) -> Value {
    json!({ "ncols": ncols, "nrows": nrows, "cellsize_m": 1000.0, "values": vec![fill; ncols * nrows] })
}

#[tokio::test]
async fn healthz_answers() {
    let f = fixture(false, 100);
    let (s, v) = call(&f.app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!("ok"));
}

#[tokio::test]
async fn model_routes_need_a_model() {
    let f = fixture(false, 100);
    assert_eq!(call(&f.app, "GET", "/model", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&f.app, "POST", "/predict", Some(json!({ "grid": grid(2, 2, 0.0) }))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_info_mirrors_the_file() {
    let f = fixture(true, 100);
    let (s, v) = call(&f.app, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    let file: Value = serde_json::from_slice(&std::fs::read(&f.model_path).unwrap()).unwrap();
    for key in ["format", "version", "kind", "feature_arity", "training_cities", "params"] {
        assert_eq!(v[key], file[key], "{key}");
    }
    assert_eq!(v["n_trees"], json!(20));
    assert_eq!(v["type"], json!("rf"));
    assert_eq!(v["id"].as_str().unwrap().len(), 64);
    assert!(v.get("trees").is_none());
}

#[tokio::test]
async fn zero_volume_predicts_one_constant() {
    let f = fixture(true, 100);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": grid(4, 3, 0.0) }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let vals: Vec<f64> = serde_json::from_value(v["grid"]["values"].clone()).unwrap();
    assert_eq!(vals.len(), 12);
    assert!(vals.iter().all(|x| *x == vals[0]));
    let expect = toy_model().predict(&[0.0]).unwrap();
    assert_eq!(vals[0], expect);
    assert_eq!(v["diff"], Value::Null);
    assert_eq!(v["range"]["min"], v["range"]["max"]);
}

#[tokio::test]
async fn predict_is_pure() {
    let f = fixture(true, 100);
    let mut g = grid(5, 4, 0.0);
    for (i, v) in g["values"].as_array_mut().unwrap().iter_mut().enumerate() {
        *v = json!(i as f64 * 2.5e4);
    }
    let body = json!({ "grid": g, "sigma": 1.2, "radius": 2 });
    let a = call(&f.app, "POST", "/predict", Some(body.clone())).await;
    let b = call(&f.app, "POST", "/predict", Some(body)).await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
    assert_eq!(a.1["sigma"], json!(1.2));
    assert_eq!(a.1["radius"], json!(2));
}

#[tokio::test]
async fn diff_against_base_is_zero_for_identical_grids() {
    let f = fixture(true, 100);
    let g = grid(3, 3, 2e5);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": g, "base": g }))).await;
    assert_eq!(s, StatusCode::OK);
    let d: Vec<f64> = serde_json::from_value(v["diff"]["values"].clone()).unwrap();
    assert!(d.iter().all(|x| *x == 0.0));
}

#[tokio::test]
async fn bad_inputs_are_rejected_with_field_names() {
    let f = fixture(true, 100);
    let mut neg = grid(2, 2, 0.0);
    neg["values"][1] = json!(-5.0);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": neg }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("grid.values[1]"), "{v}");

    let mut short = grid(2, 2, 0.0);
    short["values"] = json!([0.0, 1.0]);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": short }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("grid.values"));

    let mut wrong_cell = grid(2, 2, 0.0);
    wrong_cell["cellsize_m"] = json!(500.0);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": wrong_cell }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("cellsize_m"));

    let (s, _) = call(&f.app, "POST", "/predict", Some(json!({ "nope": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = call(&f.app, "POST", "/predict", Some(json!({ "grid": grid(2, 2, 0.0), "sigma": -1.0 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_grids_get_413() {
    let f = fixture(true, 100);
    let (s, v) = call(&f.app, "POST", "/predict", Some(json!({ "grid": grid(11, 10, 0.0) }))).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE, "{v}");
}

fn scenario(id: Option<&str>, name: &str) -> Value {
    let mut s = json!({ "name": name, "base": grid(2, 2, 0.0), "edited": grid(2, 2, 1e5) });
    if let Some(id) = id {
        s["id"] = json!(id);
    }
    s
}

#[tokio::test]
async fn scenario_lifecycle() {
    let f = fixture(true, 100);
    assert_eq!(call(&f.app, "GET", "/scenarios/missing", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&f.app, "GET", "/scenarios/..%2Fetc", None).await.0, StatusCode::NOT_FOUND);

    let (s, v) = call(&f.app, "POST", "/scenarios", Some(scenario(Some("park"), "more park"))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["id"], json!("park"));
    assert_eq!(v["ncols"], json!(2));
    let (s, _) = call(&f.app, "POST", "/scenarios", Some(scenario(Some("park"), "again"))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, v) = call(&f.app, "GET", "/scenarios/park", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["name"], json!("more park"));
    let sent = scenario(Some("park"), "more park");
    for k in ["base", "edited"] {
        for field in ["ncols", "nrows", "cellsize_m", "values"] {
            assert_eq!(v[k][field], sent[k][field], "{k}.{field}");
        }
    }
    let created = v["created_at"].clone();

    let (s, v) = call(&f.app, "PUT", "/scenarios/park", Some(scenario(None, "renamed"))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["created_at"], created);
    assert_eq!(call(&f.app, "GET", "/scenarios/park", None).await.1["name"], json!("renamed"));
    assert_eq!(
        call(&f.app, "PUT", "/scenarios/nothere", Some(scenario(None, "x"))).await.0,
        StatusCode::NOT_FOUND
    );

    let (s, v) = call(&f.app, "POST", "/scenarios", Some(scenario(None, "generated"))).await;
    assert_eq!(s, StatusCode::CREATED);
    let generated = v["id"].as_str().unwrap().to_string();
    let (_, list) = call(&f.app, "GET", "/scenarios", None).await;
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|x| x["id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["park", generated.as_str()]);

    assert_eq!(call(&f.app, "DELETE", "/scenarios/park", None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&f.app, "DELETE", "/scenarios/park", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&f.app, "GET", "/scenarios/park", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scenario_shape_mismatch_is_400() {
    let f = fixture(true, 100);
    let body = json!({ "name": "x", "base": grid(2, 2, 0.0), "edited": grid(3, 2, 0.0) });
    assert_eq!(call(&f.app, "POST", "/scenarios", Some(body)).await.0, StatusCode::BAD_REQUEST);
    let bad_id = scenario(Some("a/b"), "x");
    assert_eq!(call(&f.app, "POST", "/scenarios", Some(bad_id)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_creates_of_one_id_admit_exactly_one() {
    let f = fixture(true, 100);
    let mut handles = Vec::new();
    for i in 0..20 {
        let app = f.app.clone();
        handles.push(tokio::spawn(async move {
            call(&app, "POST", "/scenarios", Some(scenario(Some("same"), &format!("n{i}")))).await.0
        }));
    }
    let mut created = 0;
    let mut conflicts = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::CREATED => created += 1,
            StatusCode::CONFLICT => conflicts += 1,
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!((created, conflicts), (1, 19));

    let mut handles = Vec::new();
    for i in 0..20 {
        let app = f.app.clone();
        handles.push(tokio::spawn(async move {
            call(&app, "POST", "/scenarios", Some(scenario(Some(&format!("s{i}")), "x"))).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::CREATED);
    }
    let (_, list) = call(&f.app, "GET", "/scenarios", None).await;
    assert_eq!(list.as_array().unwrap().len(), 21);
}
