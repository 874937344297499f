use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use phd_cli::study::{image_id, router, subject_order, JsonLinesStore, StudyConfig, StudyState, VoteStore};
use phd_eval::consistency::{read_vote_log, Choice, TripletGroup, VoteRecord};
use phd_eval::{write_mask, BinaryMask};
use serde_json::{json, Value};
use tower::ServiceExt;

const METHODS: [&str; 2] = ["unet_v2", "hed_baseline"];

/// Five groups whose candidate files live in directories named after the
/// methods, so any leak of a path would show the method name.
fn groups(dir: &Path) -> Vec<TripletGroup> {
    for sub in ["gt", METHODS[0], METHODS[1]] {
        fs::create_dir_all(dir.join(sub)).unwrap();
    }
    (0..5)
        .map(|i| {
            let m = BinaryMask::from_fn(8, 8, |x, y| x == i || y == i);
            let paths = ["gt", METHODS[0], METHODS[1]].map(|d| dir.join(d).join(format!("{i}.png")));
            for p in &paths {
                write_mask(&m, p).unwrap();
            }
            let [gt, pred_a, pred_b] = paths;
            TripletGroup {
                group_id: format!("g{i}"),
                gt,
                pred_a,
                pred_b,
                scores: [("F1".to_string(), phd_eval::consistency::ScorePair { a: 0.9, b: 0.1 })].into(),
            }
        })
        .collect()
}

fn config() -> StudyConfig {
    StudyConfig {
        validity_threshold: 1,
        tie_epsilon: 0.0,
        batch_size: Some(2),
    }
}

fn app(dir: &Path) -> (Router, std::path::PathBuf) {
    let log = dir.join("votes.jsonl");
    let (store, existing) = JsonLinesStore::open(&log).unwrap();
    let state = StudyState::new(groups(dir), &existing, Box::new(store), config()).unwrap();
    (router(Arc::new(state)), log)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn post_vote(app: &Router, body: Value) -> StatusCode {
    let req = Request::post("/api/votes")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await.0
}

#[tokio::test]
async fn a_subject_walks_through_every_group() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, log) = app(tmp.path());
    let order: Vec<String> = subject_order("alice", 5).into_iter().map(|i| format!("g{i}")).collect();
    let mut served = Vec::new();
    for answered in 0..5 {
        let (status, next) = get_json(&app, "/api/session/alice/next").await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!((next["answered"].as_u64(), next["total"].as_u64()), (Some(answered), Some(5)));
        assert_eq!(next["batch"], json!(answered / 2 + 1));
        let text = next.to_string();
        assert!(METHODS.iter().all(|m| !text.contains(m)), "{text}");
        let group = next["group_id"].as_str().unwrap().to_string();
        // Asking again without voting returns the same group.
        assert_eq!(get_json(&app, "/api/session/alice/next").await.1, next);
        for key in ["gt_url", "a_url", "b_url"] {
            let (status, bytes) = call(&app, Request::get(next[key].as_str().unwrap()).body(Body::empty()).unwrap()).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(&bytes[1..4], b"PNG");
        }
        let vote = json!({"group_id": group, "subject_id": "alice", "choice": "A"});
        assert_eq!(post_vote(&app, vote.clone()).await, StatusCode::CREATED);
        assert_eq!(post_vote(&app, vote).await, StatusCode::CONFLICT);
        served.push(group);
    }
    assert_eq!(served, order);
    let (_, done) = get_json(&app, "/api/session/alice/next").await;
    assert_eq!(done, json!({"done": true, "answered": 5, "total": 5}));

    let votes = read_vote_log(fs::read(&log).unwrap().as_slice()).unwrap();
    assert_eq!(votes.len(), 5);
    let ids: HashSet<_> = votes.iter().map(|v| v.group_id.as_str()).collect();
    assert_eq!(ids.len(), 5);
}

#[tokio::test]
async fn votes_are_stored_in_canonical_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, log) = app(tmp.path());
    let gs = groups(tmp.path());
    let mut seen = HashSet::new();
    // Every subject picks whatever is shown on the left.
    for s in 0..16 {
        let subject = format!("subject-{s}");
        let (_, next) = get_json(&app, &format!("/api/session/{subject}/next")).await;
        let group = next["group_id"].as_str().unwrap();
        let g = gs.iter().find(|g| g.group_id == group).unwrap();
        let left_is_pred_a = next["a_url"] == format!("/img/{}", image_id(&g.pred_a));
        let left_is_pred_b = next["a_url"] == format!("/img/{}", image_id(&g.pred_b));
        assert!(left_is_pred_a != left_is_pred_b);
        let vote = json!({"group_id": group, "subject_id": subject, "choice": "A"});
        assert_eq!(post_vote(&app, vote).await, StatusCode::CREATED);
        let recorded = read_vote_log(fs::read(&log).unwrap().as_slice()).unwrap().pop().unwrap();
        let expected = if left_is_pred_a { Choice::PredA } else { Choice::PredB };
        assert_eq!((recorded.subject_id.as_str(), recorded.choice), (subject.as_str(), expected));
        seen.insert(left_is_pred_a);
    }
    assert_eq!(seen.len(), 2, "candidates were never swapped");
}

#[tokio::test]
async fn bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app(tmp.path());
    let unknown = json!({"group_id": "nope", "subject_id": "bob", "choice": "B"});
    assert_eq!(post_vote(&app, unknown).await, StatusCode::BAD_REQUEST);
    let bad_choice = json!({"group_id": "g0", "subject_id": "bob", "choice": "C"});
    assert_eq!(post_vote(&app, bad_choice).await, StatusCode::BAD_REQUEST);
    let (status, _) = get_json(&app, "/img/0123456789abcdef").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

struct BrokenDisk;

impl VoteStore for BrokenDisk {
    fn append(&mut self, _: &VoteRecord) -> io::Result<()> {
        Err(io::Error::other("disk full"))
    }
}

#[tokio::test]
async fn storage_failure_is_503_and_records_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let state = Arc::new(StudyState::new(groups(tmp.path()), &[], Box::new(BrokenDisk), config()).unwrap());
    let app = router(state.clone());
    let vote = json!({"group_id": "g0", "subject_id": "carol", "choice": "difficult"});
    assert_eq!(post_vote(&app, vote).await, StatusCode::SERVICE_UNAVAILABLE);
    let (_, next) = get_json(&app, "/api/session/carol/next").await;
    assert_eq!(next["answered"], 0);
    assert_eq!(state.results().unwrap().verdicts.iter().map(|v| v.tally.total()).sum::<u32>(), 0);
}

/// In-memory store shared with the test so the log can be inspected.
#[derive(Clone, Default)]
struct Memory(Arc<Mutex<Vec<VoteRecord>>>);

impl VoteStore for Memory {
    fn append(&mut self, vote: &VoteRecord) -> io::Result<()> {
        self.0.lock().unwrap().push(vote.clone());
        Ok(())
    }
}

#[tokio::test]
async fn results_are_replayed_from_the_log_and_survive_restarts() {
    let tmp = tempfile::tempdir().unwrap();
    let memory = Memory::default();
    let app = router(Arc::new(StudyState::new(groups(tmp.path()), &[], Box::new(memory.clone()), config()).unwrap()));
    for s in ["x", "y", "z"] {
        let vote = json!({"group_id": "g2", "subject_id": s, "choice": "difficult"});
        assert_eq!(post_vote(&app, vote).await, StatusCode::CREATED);
    }
    let (_, results) = get_json(&app, "/api/results").await;
    assert_eq!(results["valid_groups"], 1);
    assert_eq!(results["verdicts"][2]["majority"], "difficult");
    assert_eq!(results["metrics"][0]["metric"], "F1");
    assert_eq!(results["metrics"][0]["ratio"], "0/1");

    // A new server over the same log refuses the same votes again.
    let log = memory.0.lock().unwrap().clone();
    let restarted = router(Arc::new(StudyState::new(groups(tmp.path()), &log, Box::new(Memory::default()), config()).unwrap()));
    let again = json!({"group_id": "g2", "subject_id": "x", "choice": "A"});
    assert_eq!(post_vote(&restarted, again).await, StatusCode::CONFLICT);
    assert_eq!(get_json(&restarted, "/api/results").await.1, results);
}
