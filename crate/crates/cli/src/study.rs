//! HTTP service for the three-way preference study.
//!
//! Endpoints:
//!
//! * `GET /api/session/{subject}/next`: the subject's next unanswered group
//!   as `{group_id, gt_url, a_url, b_url, answered, total}`, or
//!   `{done: true, answered, total}` once every group has a vote.
//! * `POST /api/votes` with `{group_id, subject_id, choice}`: `201` when
//!   stored, `409` for a second vote on the same group, `400` for an
//!   unknown group or malformed body, `503` when the log cannot be written.
//! * `GET /api/results`: the consistency report rebuilt from the log.
//! * `GET /img/{id}`: the PNG behind an opaque image id.
//!
//! Each subject sees the groups in an order shuffled by a seed derived from
//! the subject id, and for every group the two candidates may be swapped on
//! screen. The swap is kept on the server: the client's `A`/`B` refers to
//! the screen, and the log always records canonical `pred_a`/`pred_b`
//! terms. Image URLs are hashes, so neither order nor file names reveal
//! which method produced a candidate.
//!
//! Votes go through one mutex-guarded writer. A vote is appended and synced
//! to disk before the response is sent; if that fails nothing is recorded
//! and the client may retry.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use phd_eval::consistency::{
    consistency, read_vote_log, Choice, ConsistencyError, ConsistencyReport, TripletGroup, VoteLedger, VoteRecord,
};
use phd_eval::MetricDescriptor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hex;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("address {0} is already in use")]
    AddressInUse(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("vote log {path}: {source}")]
    Log { path: PathBuf, source: io::Error },
    #[error("vote log {path}: {source}")]
    Replay { path: PathBuf, source: ConsistencyError },
    #[error("vote log names group {0:?}, which is not in the manifest")]
    UnknownGroup(String),
    #[error("manifest has no groups")]
    NoGroups,
    #[error("server stopped: {0}")]
    Serve(io::Error),
}

/// Where accepted votes go. `append` must not return before the vote is
/// durable.
pub trait VoteStore: Send {
    fn append(&mut self, vote: &VoteRecord) -> io::Result<()>;
}

/// Append-only JSON-lines file, synced after every vote.
pub struct JsonLinesStore {
    file: File,
}

impl JsonLinesStore {
    /// Opens (or creates) the log and returns the votes already in it.
    pub fn open(path: &Path) -> Result<(Self, Vec<VoteRecord>), StudyError> {
        let log_err = |source| StudyError::Log {
            path: path.to_path_buf(),
            source,
        };
        let existing = match File::open(path) {
            Ok(f) => read_vote_log(BufReader::new(f)).map_err(|source| StudyError::Replay {
                path: path.to_path_buf(),
                source,
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(log_err(e)),
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(log_err)?;
        Ok((Self { file }, existing))
    }
}

impl VoteStore for JsonLinesStore {
    fn append(&mut self, vote: &VoteRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(vote).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub validity_threshold: u32,
    pub tie_epsilon: f64,
    /// Groups per sitting; only reported to the client as a pacing hint.
    pub batch_size: Option<usize>,
}

struct Writer {
    ledger: VoteLedger,
    store: Box<dyn VoteStore>,
    /// `(subject, group)` to whether the candidates are shown swapped.
    swaps: HashMap<(String, String), bool>,
}

pub struct StudyState {
    groups: Vec<TripletGroup>,
    config: StudyConfig,
    /// Opaque id to file, and per group the ids of gt, pred_a, pred_b.
    images: HashMap<String, PathBuf>,
    group_images: Vec<[String; 3]>,
    writer: Mutex<Writer>,
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

/// Opaque URL id of an image file.
pub fn image_id(path: &Path) -> String {
    hex(&digest(&["img", &path.to_string_lossy()])[..16])
}

/// Group indices in the order `subject` sees them.
pub fn subject_order(subject: &str, groups: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..groups).collect();
    order.shuffle(&mut ChaCha8Rng::from_seed(digest(&["order", subject])));
    order
}

/// Whether `subject` sees the candidates of `group` swapped.
pub fn subject_swap(subject: &str, group: &str) -> bool {
    digest(&["swap", subject, group])[0] & 1 == 1
}

fn to_canonical(shown: Choice, swapped: bool) -> Choice {
    match (shown, swapped) {
        (Choice::PredA, true) => Choice::PredB,
        (Choice::PredB, true) => Choice::PredA,
        (c, _) => c,
    }
}

impl StudyState {
    /// `existing` is the vote log so far; it is replayed into the ledger.
    pub fn new(
        groups: Vec<TripletGroup>,
        existing: &[VoteRecord],
        store: Box<dyn VoteStore>,
        config: StudyConfig,
    ) -> Result<Self, StudyError> {
        if groups.is_empty() {
            return Err(StudyError::NoGroups);
        }
        if let Some(v) = existing.iter().find(|v| !groups.iter().any(|g| g.group_id == v.group_id)) {
            return Err(StudyError::UnknownGroup(v.group_id.clone()));
        }
        let ledger = VoteLedger::replay(existing).map_err(|source| StudyError::Replay {
            path: PathBuf::from("<existing votes>"),
            source,
        })?;
        let mut images = HashMap::new();
        let group_images = groups
            .iter()
            .map(|g| {
                [&g.gt, &g.pred_a, &g.pred_b].map(|p| {
                    let id = image_id(p);
                    images.insert(id.clone(), p.clone());
                    id
                })
            })
            .collect();
        Ok(Self {
            groups,
            config,
            images,
            group_images,
            writer: Mutex::new(Writer {
                ledger,
                store,
                swaps: HashMap::new(),
            }),
        })
    }

    fn answered(&self, ledger: &VoteLedger, subject: &str) -> usize {
        self.groups.iter().filter(|g| ledger.has_voted(&g.group_id, subject)).count()
    }

    /// Verdicts from the ledger; metrics for every score name that all
    /// groups carry in the manifest.
    pub fn results(&self) -> Result<ConsistencyReport, ConsistencyError> {
        let verdicts = {
            let w = self.writer.lock().expect("writer lock");
            w.ledger.verdicts(&self.groups, self.config.validity_threshold)
        };
        let mut names: BTreeSet<&String> = self.groups[0].scores.keys().collect();
        for g in &self.groups[1..] {
            names.retain(|n| g.scores.contains_key(*n));
        }
        let metrics = names
            .into_iter()
            .filter_map(|n| n.parse::<MetricDescriptor>().ok().map(|d| MetricDescriptor { name: n.clone(), ..d }))
            .map(|d| consistency(&self.groups, &verdicts, &d, self.config.tie_epsilon))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConsistencyReport::new(
            self.config.validity_threshold,
            self.config.tie_epsilon,
            verdicts,
            metrics,
            None,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoteSubmission {
    pub group_id: String,
    pub subject_id: String,
    /// As shown on screen.
    pub choice: Choice,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn next_group(State(state): State<Arc<StudyState>>, UrlPath(subject): UrlPath<String>) -> Response {
    if subject.is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty subject id");
    }
    let mut w = state.writer.lock().expect("writer lock");
    let total = state.groups.len();
    let answered = state.answered(&w.ledger, &subject);
    let next = subject_order(&subject, total)
        .into_iter()
        .find(|&i| !w.ledger.has_voted(&state.groups[i].group_id, &subject));
    let Some(i) = next else {
        return Json(json!({ "done": true, "answered": answered, "total": total })).into_response();
    };
    let group = &state.groups[i];
    let swapped = *w
        .swaps
        .entry((subject.clone(), group.group_id.clone()))
        .or_insert_with(|| subject_swap(&subject, &group.group_id));
    let [gt, a, b] = &state.group_images[i];
    let (left, right) = if swapped { (b, a) } else { (a, b) };
    let mut body = json!({
        "group_id": group.group_id,
        "gt_url": format!("/img/{gt}"),
        "a_url": format!("/img/{left}"),
        "b_url": format!("/img/{right}"),
        "answered": answered,
        "total": total,
    });
    if let Some(size) = state.config.batch_size.filter(|&s| s > 0) {
        body["batch"] = json!(answered / size + 1);
        body["batch_size"] = json!(size);
        body["break_suggested"] = json!(answered > 0 && answered % size == 0);
    }
    Json(body).into_response()
}

async fn submit_vote(
    State(state): State<Arc<StudyState>>,
    body: Result<Json<VoteSubmission>, JsonRejection>,
) -> Response {
    let Json(vote) = match body {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if vote.subject_id.is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty subject id");
    }
    if !state.groups.iter().any(|g| g.group_id == vote.group_id) {
        return error(StatusCode::BAD_REQUEST, format!("unknown group {:?}", vote.group_id));
    }
    let mut w = state.writer.lock().expect("writer lock");
    if w.ledger.has_voted(&vote.group_id, &vote.subject_id) {
        return error(
            StatusCode::CONFLICT,
            format!("{} already voted on {}", vote.subject_id, vote.group_id),
        );
    }
    let swapped = *w
        .swaps
        .entry((vote.subject_id.clone(), vote.group_id.clone()))
        .or_insert_with(|| subject_swap(&vote.subject_id, &vote.group_id));
    let record = VoteRecord {
        group_id: vote.group_id,
        subject_id: vote.subject_id,
        choice: to_canonical(vote.choice, swapped),
        ts: Utc::now(),
    };
    if let Err(e) = w.store.append(&record) {
        return error(StatusCode::SERVICE_UNAVAILABLE, format!("vote not stored: {e}"));
    }
    w.ledger.record(&record).expect("duplicate checked under the same lock");
    let answered = state.answered(&w.ledger, &record.subject_id);
    (
        StatusCode::CREATED,
        Json(json!({ "status": "recorded", "answered": answered, "total": state.groups.len() })),
    )
        .into_response()
}

async fn results(State(state): State<Arc<StudyState>>) -> Response {
    match state.results() {
        Ok(report) => Json(report).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn image(State(state): State<Arc<StudyState>>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(path) = state.images.get(&id) else {
        return error(StatusCode::NOT_FOUND, "no such image");
    };
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "image unavailable"),
    }
}

pub fn router(state: Arc<StudyState>) -> Router {
    Router::new()
        .route("/api/session/{subject}/next", get(next_group))
        .route("/api/votes", post(submit_vote))
        .route("/api/results", get(results))
        .route("/img/{id}", get(image))
        .with_state(state)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: &str, state: Arc<StudyState>) -> Result<(), StudyError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| {
        if source.kind() == io::ErrorKind::AddrInUse {
            StudyError::AddressInUse(addr.to_string())
        } else {
            StudyError::Bind {
                addr: addr.to_string(),
                source,
            }
        }
    })?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StudyError::Serve)
}
