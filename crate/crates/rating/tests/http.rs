use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pano_core::pipeline::RawImage;
use pano_core::stats::read_scores_csv;
use pano_core::train::ModelPreset;
use pano_rating::pool::interleave;
use pano_rating::{serve, RatingService, ServiceConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;

struct Server {
    base: String,
    client: reqwest::Client,
    token: Option<String>,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(data: &Path, token: Option<&str>) -> Server {
        let svc = RatingService::open(ServiceConfig {
            data_dir: data.to_path_buf(),
            token: token.map(str::to_string),
        })
        .unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            serve(listener, Arc::new(svc), async {
                rx.await.ok();
            })
            .await
            .unwrap();
        });
        Server {
            base,
            client: reqwest::Client::new(),
            token: token.map(str::to_string),
            stop: Some(tx),
            task,
        }
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.await.unwrap();
    }

    fn auth(&self, rb: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.auth(self.client.get(format!("{}{path}", self.base))).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .auth(self.client.post(format!("{}{path}", self.base)))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }

    async fn text(&self, path: &str) -> (StatusCode, String) {
        let r = self.auth(self.client.get(format!("{}{path}", self.base))).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn pool(&self, dirs: &HashMap<ModelPreset, PathBuf>, seed: u64) -> String {
        let (s, v) = self.post("/pools", json!({ "model_dirs": dirs, "seed": seed })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["pool_id"].as_str().unwrap().to_string()
    }

    async fn session(&self, pool: &str, rater: &str) -> String {
        let (s, v) = self.post("/sessions", json!({ "pool_id": pool, "rater_id": rater })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn submit(&self, session: &str, image: &str, scores: Value) -> (StatusCode, Value) {
        self.post(&format!("/sessions/{session}/scores"), json!({ "image_id": image, "scores": scores }))
            .await
    }
}

/// Model directories with `n` distinct small PNGs each.
fn model_dirs(root: &Path, n: usize) -> HashMap<ModelPreset, PathBuf> {
    ModelPreset::ALL
        .iter()
        .enumerate()
        .map(|(m, &preset)| {
            let dir = root.join(format!("{preset}"));
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                let img = RawImage::filled(8, 8, (m * 60 + i) as u8).unwrap();
                img.save(&dir.join(format!("gen_{i:03}.png"))).unwrap();
            }
            (preset, dir)
        })
        .collect()
}

/// The same score for all twelve criteria.
fn all(v: u8) -> Value {
    json!(vec![v; 12])
}

fn ids(batch: &Value) -> Vec<String> {
    batch["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["image_id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn full_protocol_hundred_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let (s, v) = srv.post("/pools", json!({ "model_dirs": dirs, "seed": 3 })).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!((v["size"].as_u64(), v["familiarization"].as_u64()), (Some(100), Some(10)));
    let pool = v["pool_id"].as_str().unwrap().to_string();
    let session = srv.session(&pool, "expert-1").await;

    let (s, fam) = srv.get(&format!("/sessions/{session}/next-batch")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(fam["phase"], "familiarization");
    assert_eq!(fam["excluded_from_analysis"], true);
    let fam_ids = ids(&fam);
    assert_eq!(fam_ids.len(), 10);
    for id in &fam_ids {
        assert_eq!(srv.submit(&session, id, all(2)).await.0, StatusCode::CREATED);
    }

    let mut seen = fam_ids.clone();
    let mut scoring_batches = 0;
    loop {
        let (s, b) = srv.get(&format!("/sessions/{session}/next-batch")).await;
        assert_eq!(s, StatusCode::OK, "{b}");
        let batch = ids(&b);
        if b["phase"] == "done" {
            assert!(batch.is_empty());
            break;
        }
        assert_eq!(b["phase"], "scoring");
        assert_eq!(b["excluded_from_analysis"], false);
        assert_eq!(b["batch_index"], scoring_batches);
        assert_eq!(batch.len(), 20);
        scoring_batches += 1;
        for id in &batch {
            assert!(!seen.contains(id));
            seen.push(id.clone());
            let (s, ack) = srv.submit(&session, id, all(3)).await;
            assert_eq!(s, StatusCode::CREATED, "{ack}");
        }
    }
    assert_eq!(scoring_batches, 5);
    // asking again after completion stays done
    let (_, again) = srv.get(&format!("/sessions/{session}/next-batch")).await;
    assert_eq!(again["phase"], "done");

    let (s, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(csv.starts_with(&format!("# pool={pool} complete=true sessions=1 rows=100")));
    let records = read_scores_csv(csv.as_bytes()).unwrap();
    assert_eq!(records.len(), 100);
    assert!(records.iter().all(|r| r.scores == [3; 12] && r.rater_id == "expert-1"));
    assert!(records.iter().all(|r| !fam_ids.contains(&r.image_id)));
    for m in ModelPreset::ALL {
        assert_eq!(records.iter().filter(|r| r.model_id == m).count(), 25);
    }
    // export rows follow presentation order, so the interleaving is visible
    for w in records.windows(4) {
        for m in ModelPreset::ALL {
            assert!(w.iter().filter(|r| r.model_id == m).count() <= 2);
        }
    }
    srv.shutdown().await;
}

#[tokio::test]
async fn violations_are_rejected_without_side_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let pool = srv.pool(&dirs, 0).await;
    let session = srv.session(&pool, "r").await;
    let fam = ids(&srv.get(&format!("/sessions/{session}/next-batch")).await.1);

    let mut bad = vec![3; 12];
    bad[0] = 6;
    let (s, v) = srv.submit(&session, &fam[0], json!(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "validation_error");
    assert_eq!(v["details"]["out_of_range"], json!(["OR"]));
    bad[0] = 0;
    assert_eq!(srv.submit(&session, &fam[0], json!(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = srv.submit(&session, &fam[0], json!({ "OR": 3 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["details"]["missing"].as_array().unwrap().len(), 11);
    let (s, v) = srv.submit(&session, &fam[0], json!("three")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    // nothing was persisted, so a valid submission still goes through
    assert_eq!(srv.submit(&session, &fam[0], all(3)).await.0, StatusCode::CREATED);
    let (s, v) = srv.submit(&session, &fam[0], all(4)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "duplicate_score");

    let (s, v) = srv.submit(&session, "img_doesnotexist", all(3)).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (s, _) = srv.submit("sess_nope", &fam[0], all(3)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = srv.get(&format!("/sessions/{session}/next-batch")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "batch_incomplete");
    let missing: Vec<String> = serde_json::from_value(v["details"]["missing"].clone()).unwrap();
    assert_eq!(missing, fam[1..].to_vec());

    // an image of a later batch is part of the session but not rateable yet
    let other = srv.session(&pool, "someone-else").await;
    let other_fam = ids(&srv.get(&format!("/sessions/{other}/next-batch")).await.1);
    for id in &other_fam {
        srv.submit(&other, id, all(1)).await;
    }
    let later = ids(&srv.get(&format!("/sessions/{other}/next-batch")).await.1);
    let (s, v) = srv.submit(&session, &later[0], all(3)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "not_in_current_batch");

    let r = reqwest::Client::new()
        .post(format!("{}/sessions", srv.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["code"], "bad_request");
    assert!(v["message"].is_string() && v["details"].is_object());
    srv.shutdown().await;
}

#[tokio::test]
async fn short_model_directory_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    for i in 24..28 {
        std::fs::remove_file(dirs[&ModelPreset::M3].join(format!("gen_{i:03}.png"))).unwrap();
    }
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let (s, v) = srv.post("/pools", json!({ "model_dirs": dirs })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "config_error");
    let msg = v["message"].as_str().unwrap();
    assert!(msg.contains("M3") && msg.contains("24"), "{msg}");

    // exactly 25 per model leaves nothing for familiarization
    let dirs = model_dirs(&tmp.path().join("exact"), 25);
    let (s, v) = srv.post("/pools", json!({ "model_dirs": dirs })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["message"].as_str().unwrap().contains("familiarization"));
    // unless a separate set is supplied
    let extra = tmp.path().join("practice");
    std::fs::create_dir_all(&extra).unwrap();
    for i in 0..12 {
        RawImage::filled(8, 8, 200 + i).unwrap().save(&extra.join(format!("p{i}.png"))).unwrap();
    }
    let (s, v) = srv
        .post("/pools", json!({ "model_dirs": dirs, "familiarization_dir": extra }))
        .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["familiarization"], 10);
    let (s, v) = srv.post("/pools", json!({ "model_dirs": dirs, "colour": 1 })).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_error")));
    srv.shutdown().await;
}

async fn presentation_order(srv: &Server, session: &str) -> Vec<String> {
    let mut order = Vec::new();
    loop {
        let (_, b) = srv.get(&format!("/sessions/{session}/next-batch")).await;
        if b["phase"] == "done" {
            return order;
        }
        for id in ids(&b) {
            srv.submit(session, &id, all(4)).await;
            order.push(id);
        }
    }
}

#[tokio::test]
async fn order_depends_only_on_seed_and_rater() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let pool = srv.pool(&dirs, 9).await;
    let a = srv.session(&pool, "alice").await;
    let b = srv.session(&pool, "alice").await;
    let c = srv.session(&pool, "bob").await;
    let oa = presentation_order(&srv, &a).await;
    assert_eq!(oa.len(), 110);
    assert_eq!(oa, presentation_order(&srv, &b).await);
    assert_ne!(oa, presentation_order(&srv, &c).await);
    let (_, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert_eq!(read_scores_csv(csv.as_bytes()).unwrap().len(), 300);
    srv.shutdown().await;
}

#[tokio::test]
async fn images_are_png_and_blinded() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let pool = srv.pool(&dirs, 0).await;
    let session = srv.session(&pool, "r").await;
    let (_, batch) = srv.get(&format!("/sessions/{session}/next-batch")).await;
    let text = batch.to_string();
    for m in ModelPreset::ALL {
        assert!(!text.contains(&m.to_string()), "{text}");
    }
    let url = batch["images"][0]["url"].as_str().unwrap();
    let r = srv.client.get(format!("{}{url}", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "image/png");
    let bytes = r.bytes().await.unwrap();
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (8, 8));
    let (s, v) = srv.get("/images/img_0000000000000000").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    srv.shutdown().await;
}

#[tokio::test]
async fn export_of_empty_and_partial_pools() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), None).await;
    let pool = srv.pool(&dirs, 0).await;
    let (s, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert_eq!(s, StatusCode::OK);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("complete=false") && lines[1].starts_with("rater_id,image_id,model_id,OR"));
    assert!(read_scores_csv(csv.as_bytes()).unwrap().is_empty());

    let session = srv.session(&pool, "r").await;
    for id in ids(&srv.get(&format!("/sessions/{session}/next-batch")).await.1) {
        srv.submit(&session, &id, all(5)).await;
    }
    let scoring = ids(&srv.get(&format!("/sessions/{session}/next-batch")).await.1);
    for id in &scoring[..7] {
        srv.submit(&session, id, all(5)).await;
    }
    let (_, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert!(csv.starts_with(&format!("# pool={pool} complete=false sessions=1 rows=7 expected=100")));
    assert_eq!(read_scores_csv(csv.as_bytes()).unwrap().len(), 7);
    let (s, _) = srv.get("/pools/pool_missing/export").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    srv.shutdown().await;
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Server::start(&tmp.path().join("data"), Some("s3cret")).await;
    let pool = srv.pool(&dirs, 0).await;
    for auth in [None, Some("Bearer wrong"), Some("s3cret")] {
        let mut rb = srv.client.get(format!("{}/pools/{pool}/export", srv.base));
        if let Some(a) = auth {
            rb = rb.header("authorization", a);
        }
        let r = rb.send().await.unwrap();
        assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
        let v: Value = r.json().await.unwrap();
        assert_eq!(v["code"], "unauthorized");
    }
    assert_eq!(srv.text(&format!("/pools/{pool}/export")).await.0, StatusCode::OK);
    srv.shutdown().await;
}

#[tokio::test]
async fn sessions_resume_after_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let data = tmp.path().join("data");
    let srv = Server::start(&data, None).await;
    let pool = srv.pool(&dirs, 4).await;
    let session = srv.session(&pool, "r").await;
    for id in ids(&srv.get(&format!("/sessions/{session}/next-batch")).await.1) {
        srv.submit(&session, &id, all(2)).await;
    }
    let batch = ids(&srv.get(&format!("/sessions/{session}/next-batch")).await.1);
    for id in &batch[..5] {
        assert_eq!(srv.submit(&session, id, all(4)).await.0, StatusCode::CREATED);
    }
    srv.shutdown().await;

    // a write that died mid-line was never acknowledged and is discarded
    let log = data.join("sessions").join(format!("{session}.jsonl"));
    let mut raw = std::fs::read(&log).unwrap();
    raw.extend_from_slice(br#"{"event":"score_submitted","image_id":"#);
    std::fs::write(&log, raw).unwrap();

    let srv = Server::start(&data, None).await;
    let (s, v) = srv.get(&format!("/sessions/{session}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["phase"], "scoring");
    assert_eq!(v["scored"], 5);
    let missing: Vec<String> = serde_json::from_value(v["missing"].clone()).unwrap();
    assert_eq!(missing, batch[5..].to_vec());
    assert_eq!(srv.submit(&session, &batch[0], all(1)).await.0, StatusCode::CONFLICT);
    for id in &missing {
        assert_eq!(srv.submit(&session, id, all(4)).await.0, StatusCode::CREATED);
    }
    let rest = presentation_order(&srv, &session).await;
    assert_eq!(rest.len(), 80);
    let (_, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert!(csv.contains("complete=true"));
    assert_eq!(read_scores_csv(csv.as_bytes()).unwrap().len(), 100);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_do_not_interfere() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = model_dirs(&tmp.path().join("gen"), 28);
    let srv = Arc::new(Server::start(&tmp.path().join("data"), None).await);
    let pool = srv.pool(&dirs, 1).await;
    let mut handles = Vec::new();
    for r in 0..3 {
        let srv = srv.clone();
        let pool = pool.clone();
        handles.push(tokio::spawn(async move {
            let s = srv.session(&pool, &format!("rater-{r}")).await;
            presentation_order(&srv, &s).await.len()
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), 110);
    }
    let (_, csv) = srv.text(&format!("/pools/{pool}/export")).await;
    assert!(csv.contains("complete=true sessions=3 rows=300"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interleaving_limits_repeats(models in 2usize..6, per_model in 1usize..30, seed in any::<u64>()) {
        let queues: Vec<Vec<usize>> = (0..models).map(|m| (0..per_model).map(|i| m * 100 + i).collect()).collect();
        let out = interleave(&queues, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.len(), models * per_model);
        for w in out.windows(4) {
            for m in 0..models {
                prop_assert!(w.iter().filter(|x| x.0 == m).count() <= 2);
            }
        }
    }
}
