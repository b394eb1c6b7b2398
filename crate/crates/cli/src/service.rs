//! HTTP API behind the annotation tool.
//!
//! Saved annotations pass the same gate as `POST /validate`: no ontology
//! violations and every lexical value copied from the utterance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dmr::corpus::{Dialogue, Role};
use dmr::dgraph::candidates;
use dmr::graph::{write_graph_compact, EdgeTarget};
use dmr::ontology::{ArgSpec, Category, REFER};
use dmr::validate::{uncopied_lexicals, validate_in_context};
use dmr::{read_graph, DmrGraph, Edge, Ontology, ReferTarget, Var, Violation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::store::{AnnotationRecord, Status, Store, StoreError};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub ontology: Option<PathBuf>,
    pub corpus: PathBuf,
    pub store: PathBuf,
    pub cors: Vec<String>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Invalid {
        message: String,
        violations: Vec<Violation>,
        uncopied: Vec<String>,
    },
    Conflict { expected: u64, current: u64 },
    Internal(String),
}

impl ApiError {
    fn rejected(message: impl Into<String>) -> Self {
        ApiError::Invalid {
            message: message.into(),
            violations: Vec::new(),
            uncopied: Vec::new(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict { expected, current } => ApiError::Conflict { expected, current },
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let body = match self {
            ApiError::BadRequest(m) | ApiError::NotFound(m) | ApiError::Internal(m) => json!({ "error": m }),
            ApiError::Invalid { message, violations, uncopied } => {
                json!({ "error": message, "violations": violations, "uncopied": uncopied })
            }
            ApiError::Conflict { expected, current } => {
                json!({ "error": "revision conflict", "expected": expected, "current": current })
            }
        };
        (status, Json(body)).into_response()
    }
}

/// Ontology, corpus and annotation store shared by all requests.
pub struct Annotation {
    pub ontology: Ontology,
    dialogues: HashMap<String, Dialogue>,
    pub store: Store,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ValidateRequest {
    pub dmr: String,
    #[serde(default)]
    pub utterance: Option<String>,
    #[serde(default)]
    pub dialogue: Option<String>,
    #[serde(default)]
    pub turn: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateResponse {
    pub violations: Vec<Violation>,
    pub uncopied: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SaveRequest {
    pub dialogue: String,
    pub turn: u32,
    pub dmr: String,
    #[serde(default = "saved")]
    pub status: Status,
    /// Revision the edit is based on; 0 for a first save.
    #[serde(default)]
    pub revision: u64,
}

fn saved() -> Status {
    Status::Saved
}

#[derive(Debug, Clone, Deserialize)]
pub struct CandidateQuery {
    pub dialogue: String,
    pub turn: u32,
    pub node: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateView {
    pub turn: u32,
    pub var: Var,
    pub payload: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferredTurn {
    pub turn: u32,
    pub dmr: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateResponse {
    pub labels: Vec<String>,
    pub candidates: Vec<CandidateView>,
    pub referred: Vec<ReferredTurn>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ResolveRequest {
    pub dialogue: String,
    pub turn: u32,
    pub node: String,
    pub referents: Vec<ReferTarget>,
    #[serde(default)]
    pub revision: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn arguments_view(args: BTreeMap<String, ArgSpec>) -> Value {
    args.into_iter()
        .map(|(label, spec)| (label, json!({ "targets": spec.allowed_targets, "keyword": spec.allows_keyword })))
        .collect::<serde_json::Map<String, Value>>()
        .into()
}

impl Annotation {
    pub fn new(ontology: Ontology, dialogues: Vec<Dialogue>, store: Store) -> Self {
        Annotation {
            ontology,
            dialogues: dialogues.into_iter().map(|d| (d.id.clone(), d)).collect(),
            store,
        }
    }

    pub fn ontology_view(&self) -> Value {
        let o = &self.ontology;
        let types: Vec<Value> = o
            .types()
            .map(|t| {
                json!({
                    "name": t.name,
                    "parent": t.parent,
                    "category": o.category(&t.name).map(|c| match c {
                        Category::Intent => "intent",
                        Category::Entity => "entity",
                    }),
                    "arguments": arguments_view(o.resolve_arguments(&t.name).unwrap_or_default()),
                })
            })
            .collect();
        json!({
            "types": types,
            "operators": ["and", "or", "reference"],
            "keywords": ["-"],
            "reference_arguments": arguments_view(o.entity_argument_union()),
        })
    }

    fn dialogue(&self, id: &str) -> Result<&Dialogue, ApiError> {
        self.dialogues.get(id).ok_or_else(|| ApiError::NotFound(format!("no dialogue {id:?}")))
    }

    fn customer_turn<'a>(&self, d: &'a Dialogue, turn: u32) -> Result<&'a dmr::corpus::Turn, ApiError> {
        let t = d
            .turns
            .get(turn as usize)
            .ok_or_else(|| ApiError::NotFound(format!("dialogue {} has no turn {turn}", d.id)))?;
        if t.role != Role::Customer {
            return Err(ApiError::BadRequest(format!("turn {turn} is an agent turn")));
        }
        Ok(t)
    }

    pub fn dialogue_view(&self, id: &str) -> Result<Value, ApiError> {
        let d = self.dialogue(id)?;
        let turns: Vec<Value> = d
            .turns
            .iter()
            .map(|t| json!({ "index": t.index, "role": t.role, "text": t.text, "dmr": t.dmr.as_ref().map(write_graph_compact) }))
            .collect();
        Ok(json!({ "id": d.id, "split": d.split, "turns": turns, "annotations": self.store.for_dialogue(id) }))
    }

    /// The graph an annotator currently sees for a turn: their own record
    /// when there is one, otherwise the corpus DMR.
    fn effective(&self, d: &Dialogue, turn: u32, annotator: Option<&str>) -> Option<DmrGraph> {
        if let Some(a) = annotator {
            if let Some(r) = self.store.get(&(d.id.clone(), turn, a.to_string())) {
                if let Ok(g) = read_graph(&r.dmr, turn) {
                    return Some(g);
                }
            }
        }
        d.turns.get(turn as usize).and_then(|t| t.dmr.clone())
    }

    fn context(&self, d: &Dialogue, turn: u32, annotator: Option<&str>) -> Vec<DmrGraph> {
        (0..turn).filter_map(|t| self.effective(d, t, annotator)).collect()
    }

    fn check(&self, g: &DmrGraph, utterance: Option<&str>, context: &[DmrGraph]) -> ValidateResponse {
        let refs: Vec<&DmrGraph> = context.iter().collect();
        let violations = validate_in_context(&self.ontology, g, &refs);
        let uncopied = utterance
            .map(|u| uncopied_lexicals(g, u).into_iter().map(|v| v.to_string()).collect())
            .unwrap_or_default();
        ValidateResponse { violations, uncopied }
    }

    fn gate(&self, g: &DmrGraph, utterance: &str, context: &[DmrGraph]) -> Result<(), ApiError> {
        let r = self.check(g, Some(utterance), context);
        if r.violations.is_empty() && r.uncopied.is_empty() {
            Ok(())
        } else {
            Err(ApiError::Invalid {
                message: "annotation fails validation".into(),
                violations: r.violations,
                uncopied: r.uncopied,
            })
        }
    }

    pub fn validate(&self, req: &ValidateRequest, annotator: Option<&str>) -> Result<ValidateResponse, ApiError> {
        let turn = req.turn.unwrap_or(0);
        let g = read_graph(&req.dmr, turn).map_err(|e| ApiError::BadRequest(format!("malformed DMR: {e}")))?;
        let (utterance, context) = match &req.dialogue {
            Some(id) => {
                let d = self.dialogue(id)?;
                let t = self.customer_turn(d, turn)?;
                (Some(req.utterance.clone().unwrap_or_else(|| t.text.clone())), self.context(d, turn, annotator))
            }
            None => (req.utterance.clone(), Vec::new()),
        };
        let r = self.check(&g, utterance.as_deref(), &context);
        if r.violations.is_empty() && r.uncopied.is_empty() {
            Ok(r)
        } else {
            Err(ApiError::Invalid {
                message: "graph fails validation".into(),
                violations: r.violations,
                uncopied: r.uncopied,
            })
        }
    }

    pub fn save(&self, annotator: &str, req: SaveRequest) -> Result<AnnotationRecord, ApiError> {
        let d = self.dialogue(&req.dialogue)?;
        let t = self.customer_turn(d, req.turn)?;
        let g = read_graph(&req.dmr, req.turn).map_err(|e| ApiError::BadRequest(format!("malformed DMR: {e}")))?;
        if req.status == Status::Saved {
            self.gate(&g, &t.text, &self.context(d, req.turn, Some(annotator)))?;
        }
        let referents = referents_of(&g);
        let record = AnnotationRecord {
            dialogue: req.dialogue,
            turn: req.turn,
            annotator: annotator.to_string(),
            dmr: write_graph_compact(&g),
            referents,
            timestamp: now(),
            status: req.status,
            revision: 0,
        };
        Ok(self.store.commit(record, req.revision)?)
    }

    fn reference_node(&self, g: &DmrGraph, node: &str) -> Result<Var, ApiError> {
        let v: Var = node.parse().map_err(|_| ApiError::BadRequest(format!("bad node {node:?}")))?;
        match g.node(v) {
            Some(n) if n.is_reference() => Ok(v),
            Some(_) => Err(ApiError::BadRequest(format!("{v} is not a reference node"))),
            None => Err(ApiError::NotFound(format!("no node {v}"))),
        }
    }

    pub fn candidates(&self, q: &CandidateQuery, annotator: Option<&str>) -> Result<CandidateResponse, ApiError> {
        let d = self.dialogue(&q.dialogue)?;
        self.customer_turn(d, q.turn)?;
        let g = self
            .effective(d, q.turn, annotator)
            .ok_or_else(|| ApiError::NotFound(format!("turn {} has no DMR", q.turn)))?;
        let v = self.reference_node(&g, &q.node)?;
        let context = self.context(d, q.turn, annotator);
        let refs: Vec<&DmrGraph> = context.iter().collect();
        let labels = g.incoming_labels(v);
        let found = candidates(&refs, &labels);
        let view = found
            .iter()
            .map(|c| {
                let host = context.iter().find(|h| h.turn() == c.turn).expect("candidate turns are in context");
                CandidateView {
                    turn: c.turn,
                    var: c.var,
                    payload: host.node(c.var).map(|n| n.payload()).unwrap_or_default(),
                }
            })
            .collect();
        let turns: BTreeSet<u32> = found.iter().map(|c| c.turn).collect();
        let referred = context
            .iter()
            .filter(|h| turns.contains(&h.turn()))
            .map(|h| ReferredTurn {
                turn: h.turn(),
                dmr: write_graph_compact(h),
            })
            .collect();
        Ok(CandidateResponse {
            labels: labels.into_iter().map(str::to_string).collect(),
            candidates: view,
            referred,
        })
    }

    pub fn resolve(&self, annotator: &str, req: ResolveRequest) -> Result<AnnotationRecord, ApiError> {
        let d = self.dialogue(&req.dialogue)?;
        let t = self.customer_turn(d, req.turn)?;
        let g = self
            .effective(d, req.turn, Some(annotator))
            .ok_or_else(|| ApiError::NotFound(format!("turn {} has no DMR", req.turn)))?;
        let v = self.reference_node(&g, &req.node)?;
        if req.referents.is_empty() {
            return Err(ApiError::rejected("select at least one referent"));
        }
        let allowed: BTreeSet<ReferTarget> = self
            .candidates(
                &CandidateQuery {
                    dialogue: req.dialogue.clone(),
                    turn: req.turn,
                    node: req.node.clone(),
                },
                Some(annotator),
            )?
            .candidates
            .into_iter()
            .map(|c| ReferTarget { turn: c.turn, var: c.var })
            .collect();
        if let Some(bad) = req.referents.iter().find(|r| !allowed.contains(r)) {
            return Err(ApiError::rejected(format!(
                "{bad} does not have the same incoming edge as the reference node"
            )));
        }
        let mut edges: Vec<Edge> = g
            .edges()
            .iter()
            .filter(|e| !(e.source == v && matches!(e.target, EdgeTarget::Refer(_))))
            .cloned()
            .collect();
        let chosen: BTreeSet<ReferTarget> = req.referents.iter().copied().collect();
        edges.extend(chosen.iter().map(|r| Edge::refer(v, r.turn, r.var)));
        let updated = DmrGraph::new(req.turn, g.root(), g.nodes().to_vec(), edges).map_err(|e| ApiError::rejected(e.to_string()))?;
        self.gate(&updated, &t.text, &self.context(d, req.turn, Some(annotator)))?;
        let record = AnnotationRecord {
            dialogue: req.dialogue,
            turn: req.turn,
            annotator: annotator.to_string(),
            dmr: write_graph_compact(&updated),
            referents: referents_of(&updated),
            timestamp: now(),
            status: Status::Saved,
            revision: 0,
        };
        Ok(self.store.commit(record, req.revision)?)
    }
}

fn referents_of(g: &DmrGraph) -> BTreeMap<Var, BTreeSet<ReferTarget>> {
    let mut out: BTreeMap<Var, BTreeSet<ReferTarget>> = BTreeMap::new();
    for e in g.edges().iter().filter(|e| e.label == REFER) {
        if let EdgeTarget::Refer(r) = e.target {
            out.entry(e.source).or_default().insert(r);
        }
    }
    out
}

type Shared = Arc<Annotation>;

fn annotator(headers: &HeaderMap) -> Option<String> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

fn require_annotator(headers: &HeaderMap) -> Result<String, ApiError> {
    annotator(headers).ok_or_else(|| ApiError::BadRequest(format!("missing {ANNOTATOR_HEADER} header")))
}

async fn get_ontology(State(s): State<Shared>) -> Json<Value> {
    Json(s.ontology_view())
}

async fn get_dialogue(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    s.dialogue_view(&id).map(Json)
}

async fn post_validate(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<ValidateRequest>,
) -> Result<Json<ValidateResponse>, ApiError> {
    s.validate(&req, annotator(&headers).as_deref()).map(Json)
}

async fn post_annotation(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<SaveRequest>,
) -> Result<Json<AnnotationRecord>, ApiError> {
    let who = require_annotator(&headers)?;
    s.save(&who, req).map(Json)
}

async fn get_candidates(
    State(s): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<CandidateQuery>,
) -> Result<Json<CandidateResponse>, ApiError> {
    s.candidates(&q, annotator(&headers).as_deref()).map(Json)
}

async fn post_resolve(
    State(s): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<ResolveRequest>,
) -> Result<Json<AnnotationRecord>, ApiError> {
    let who = require_annotator(&headers)?;
    s.resolve(&who, req).map(Json)
}

pub fn router(state: Arc<Annotation>, cors: &[String]) -> Router {
    let router = Router::new()
        .route("/ontology", get(get_ontology))
        .route("/dialogues/{id}", get(get_dialogue))
        .route("/validate", post(post_validate))
        .route("/annotations", post(post_annotation))
        .route("/coref/candidates", get(get_candidates))
        .route("/coref/resolve", post(post_resolve))
        .with_state(state);
    if cors.is_empty() {
        return router;
    }
    let origins: Vec<HeaderValue> = cors.iter().filter_map(|o| o.parse().ok()).collect();
    router.layer(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
            .allow_headers([
                axum::http::header::CONTENT_TYPE,
                axum::http::HeaderName::from_static(ANNOTATOR_HEADER),
            ]),
    )
}

pub async fn serve(state: Arc<Annotation>, cfg: &ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, &cfg.cors))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
