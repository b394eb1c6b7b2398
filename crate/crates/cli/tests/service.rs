use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dmr::corpus::parse_corpus;
use dmr::synth::random_graph;
use dmr::{read_graph, write_graph, Ontology};
use dmr_cli::service::{router, Annotation, ANNOTATOR_HEADER};
use dmr_cli::store::{Status, Store};
use http_body_util::BodyExt;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

const CORPUS: &str = r#"{"id":"d1","split":"train","turns":[{"index":0,"role":"customer","text":"a pepperoni pizza to main street","dmr":"(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza) :address (v3 / main street || Address))"},{"index":1,"role":"agent","text":"anything else ?"},{"index":2,"role":"customer","text":"make it large","dmr":"(v1 / OrderIntent :order-item (v2 / reference || it :mod (v3 / large || Size)))"}]}"#;

fn app(store: &Path) -> Router {
    let (corpus, issues) = parse_corpus(CORPUS);
    assert!(issues.is_empty(), "{issues:?}");
    let state = Annotation::new(Ontology::fastfood(), corpus.dialogues, Store::open(store).unwrap());
    router(Arc::new(state), &[])
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, annotator: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(a) = annotator {
        req = req.header(ANNOTATOR_HEADER, a);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

#[test]
fn ontology_lists_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let (status, body) = runtime().block_on(call(&app, "GET", "/ontology", None, None));
    assert_eq!(status, StatusCode::OK);
    let order = body["types"].as_array().unwrap().iter().find(|t| t["name"] == "OrderIntent").unwrap();
    assert_eq!(order["category"], "intent");
    let args = order["arguments"].to_string();
    assert!(args.contains("order-item") && args.contains("FoodItem"), "{args}");
}

#[test]
fn dialogue_view_and_missing_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let (status, body) = rt.block_on(call(&app, "GET", "/dialogues/d1", None, None));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["turns"].as_array().unwrap().len(), 3);
    let (status, _) = rt.block_on(call(&app, "GET", "/dialogues/nope", None, None));
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[test]
fn validate_reports_bad_edge_label() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let bad = json!({ "dmr": "(v1 / OrderIntent :order-item (v2 / pizza || Pizza :address (v3 / home || Address)))" });
    let (status, body) = rt.block_on(call(&app, "POST", "/validate", Some(bad), None));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"][0]["code"], "bad-edge-label");

    let good = json!({ "dmr": "(v1 / OrderIntent :order-item (v2 / pizza || Pizza))", "utterance": "a pizza" });
    let (status, body) = rt.block_on(call(&app, "POST", "/validate", Some(good), None));
    assert_eq!(status, StatusCode::OK);
    assert!(body["violations"].as_array().unwrap().is_empty());

    let uncopied = json!({ "dmr": "(v1 / OrderIntent :order-item (v2 / pizza || Pizza))", "utterance": "a burger" });
    let (status, body) = rt.block_on(call(&app, "POST", "/validate", Some(uncopied), None));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["uncopied"], json!(["v2"]));
}

#[test]
fn malformed_input_is_a_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let (status, _) = rt.block_on(call(&app, "POST", "/validate", Some(json!({ "dmr": "(v1 / OrderIntent" })), None));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let save = json!({ "dialogue": "d1", "turn": 0, "dmr": "(v1 / OrderIntent", "revision": 0 });
    let (status, _) = rt.block_on(call(&app, "POST", "/annotations", Some(save), Some("ann")));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let unnamed = json!({ "dialogue": "d1", "turn": 0, "dmr": "(v1 / ThankYouIntent)", "revision": 0 });
    let (status, _) = rt.block_on(call(&app, "POST", "/annotations", Some(unnamed), None));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let agent = json!({ "dialogue": "d1", "turn": 1, "dmr": "(v1 / ThankYouIntent)", "revision": 0 });
    let (status, _) = rt.block_on(call(&app, "POST", "/annotations", Some(agent), Some("ann")));
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn stale_revision_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let save = |rev: u64| json!({ "dialogue": "d1", "turn": 0, "dmr": "(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza))", "revision": rev });
    let (status, body) = rt.block_on(call(&app, "POST", "/annotations", Some(save(0)), Some("ann")));
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    let (status, body) = rt.block_on(call(&app, "POST", "/annotations", Some(save(0)), Some("ann")));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["current"], 1);
    let (status, _) = rt.block_on(call(&app, "POST", "/annotations", Some(save(0)), Some("other")));
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn invalid_saves_are_rejected_but_drafts_are_kept() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let bad = "(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza :address (v3 / main street || Address)))";
    let save = json!({ "dialogue": "d1", "turn": 0, "dmr": bad, "revision": 0 });
    let (status, _) = rt.block_on(call(&app, "POST", "/annotations", Some(save), Some("ann")));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let draft = json!({ "dialogue": "d1", "turn": 0, "dmr": bad, "status": "draft", "revision": 0 });
    let (status, body) = rt.block_on(call(&app, "POST", "/annotations", Some(draft), Some("ann")));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "draft");
}

#[test]
fn coreference_candidates_and_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("s.jsonl"));
    let rt = runtime();
    let (status, body) = rt.block_on(call(&app, "GET", "/coref/candidates?dialogue=d1&turn=2&node=v2", None, Some("ann")));
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["labels"], json!(["order-item"]));
    assert_eq!(body["candidates"], json!([{ "turn": 0, "var": "v2", "payload": "pepperoni pizza || Pizza" }]));
    assert_eq!(body["referred"][0]["turn"], 0);

    let resolve = |var: &str, rev: u64| json!({ "dialogue": "d1", "turn": 2, "node": "v2", "referents": [{ "turn": 0, "var": var }], "revision": rev });
    let (status, body) = rt.block_on(call(&app, "POST", "/coref/resolve", Some(resolve("v3", 0)), Some("ann")));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("same incoming edge"));

    let none = json!({ "dialogue": "d1", "turn": 2, "node": "v2", "referents": [], "revision": 0 });
    let (status, _) = rt.block_on(call(&app, "POST", "/coref/resolve", Some(none), Some("ann")));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = rt.block_on(call(&app, "POST", "/coref/resolve", Some(resolve("v2", 0)), Some("ann")));
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["dmr"].as_str().unwrap().contains(":refer (T:0 N:v2)"));
    assert_eq!(body["referents"]["v2"], json!([{ "turn": 0, "var": "v2" }]));

    let (status, _) = rt.block_on(call(&app, "GET", "/coref/candidates?dialogue=d1&turn=2&node=v3", None, Some("ann")));
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn cors_allowlist() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = parse_corpus(CORPUS);
    let state = Annotation::new(Ontology::fastfood(), corpus.dialogues, Store::open(dir.path().join("s.jsonl")).unwrap());
    let app = router(Arc::new(state), &["http://localhost:3000".to_string()]);
    let rt = runtime();
    let origin = |o: &str| {
        let req = Request::builder().uri("/ontology").header("origin", o).body(Body::empty()).unwrap();
        rt.block_on(app.clone().oneshot(req)).unwrap().headers().get("access-control-allow-origin").cloned()
    };
    assert_eq!(origin("http://localhost:3000").unwrap(), "http://localhost:3000");
    assert!(origin("http://evil.example").is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn saved_records_always_validate(seeds in proptest::collection::vec(any::<u64>(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let app = app(&path);
        let rt = runtime();
        let o = Ontology::fastfood();
        for s in &seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(*s);
            let text = match s % 6 {
                0 => "(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza))".to_string(),
                1 => "(v1 / OrderIntent :address (v2 / main street || Address))".to_string(),
                2 => "(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza :address (v3 / main street || Address)))".to_string(),
                3 => "(v1 / OrderIntent :order-item (v2 / pepperoni pizza || Pizza)".to_string(),
                _ => write_graph(&random_graph(&o, &mut rng, 6, 0)),
            };
            let current = Store::open(&path).unwrap().get(&("d1".into(), 0, "ann".into())).map_or(0, |r| r.revision);
            let status = if s % 5 == 0 { "draft" } else { "saved" };
            let req = json!({ "dialogue": "d1", "turn": 0, "dmr": text, "status": status, "revision": current });
            rt.block_on(call(&app, "POST", "/annotations", Some(req), Some("ann")));
        }
        let store = Store::open(&path).unwrap();
        prop_assert!(store.all().len() <= 1);
        for r in store.all().iter().filter(|r| r.status == Status::Saved) {
            let g = read_graph(&r.dmr, r.turn).unwrap();
            prop_assert!(dmr::validate(&o, &g).is_empty(), "{}", r.dmr);
        }
    }
}
