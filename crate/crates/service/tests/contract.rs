//! Endpoint conformance against an in-process router.

use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use panoecg::dataset::{panobench_synthetic, record_to_bytes};
use panoecg::model::{GeoVtModel, ModelConfig};
use panoecg::Seed;
use panoecg_service::{router, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

fn tiny() -> GeoVtModel<f32> {
    let mut c = ModelConfig::with_channels(8);
    c.blocks = 1;
    c.embed_dim = 16;
    c.attn_dim = 16;
    GeoVtModel::new(c, Seed(3)).unwrap()
}

fn state(dir: &std::path::Path) -> Arc<AppState> {
    let mut cfg = ServiceConfig::new(dir.to_path_buf(), 0);
    cfg.workers = 2;
    AppState::open(cfg, vec![("tiny".into(), tiny())]).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Bytes) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

fn json(b: &Bytes) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn pecg(duration: f64, seed: u64) -> Vec<u8> {
    let r = panobench_synthetic(seed, 1, 250.0, duration).unwrap();
    record_to_bytes(&r[0]).unwrap()
}

async fn upload(app: &Router, bytes: Vec<u8>) -> String {
    let (s, b) = call(app, "POST", "/records", bytes).await;
    assert_eq!(s, StatusCode::CREATED);
    json(&b)["record_id"].as_str().unwrap().to_string()
}

async fn session(app: &Router, record: &str) -> String {
    let body = serde_json::to_vec(&serde_json::json!({ "record_id": record, "checkpoint_id": "tiny" })).unwrap();
    let (s, b) = call(app, "POST", "/sessions", body).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));
    json(&b)["session_id"].as_str().unwrap().to_string()
}

async fn status(app: &Router, sid: &str) -> Value {
    let (s, b) = call(app, "GET", &format!("/sessions/{sid}"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    json(&b)
}

async fn wait_done(app: &Router, sid: &str) -> Value {
    for _ in 0..2000 {
        let v = status(app, sid).await;
        if v["status"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("calibration did not finish");
}

#[tokio::test]
async fn record_upload_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let bytes = pecg(2.0, 1);
    let a = upload(&app, bytes.clone()).await;
    let b = upload(&app, bytes.clone()).await;
    assert_ne!(a, b, "duplicates get fresh ids");
    let (s, body) = call(&app, "POST", "/records", bytes[..bytes.len() - 7].to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(json(&body)["error"].as_str().unwrap().len() > 3);
    let (s, body) = call(&app, "GET", "/records", vec![]).await;
    assert_eq!(s, StatusCode::OK);
    let list = json(&body);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|r| r["record_id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec![a.as_str(), b.as_str()]);
    assert_eq!(list[0]["leads"].as_array().unwrap().len(), 48);
}

#[tokio::test]
async fn unknown_references_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let (s, _) = call(&app, "GET", "/sessions/nope", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/sessions/nope/synthesize?theta=90&phi=0", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions/nope/calibrate", vec![]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let rid = upload(&app, pecg(2.0, 1)).await;
    let body = serde_json::to_vec(&serde_json::json!({ "record_id": rid, "checkpoint_id": "missing" })).unwrap();
    let (s, _) = call(&app, "POST", "/sessions", body).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions", b"{".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn calibration_state_machine() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let sid = session(&app, &upload(&app, pecg(10.0, 2)).await).await;
    let v = status(&app, &sid).await;
    assert_eq!(v["status"], "idle");
    assert!(v["deviations"].as_array().unwrap().is_empty());
    assert_eq!(v["recorded"], serde_json::json!(["I", "II", "V12", "V24"]));

    let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(status(&app, &sid).await["status"], "running");

    let v = wait_done(&app, &sid).await;
    assert_eq!(v["status"], "done", "{v}");
    let devs = v["deviations"].as_array().unwrap();
    assert_eq!(devs.len(), 4);
    assert!(devs.iter().any(|d| d["dphi"].as_f64().unwrap() != 0.0));

    // a finished session may be recalibrated
    let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(wait_done(&app, &sid).await["status"], "done");
}

#[tokio::test]
async fn short_record_cannot_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let sid = session(&app, &upload(&app, pecg(4.0, 3)).await).await;
    let (s, b) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(json(&b)["error"].as_str().unwrap().contains("10"));
    assert_eq!(status(&app, &sid).await["status"], "idle");
    // synthesis still works over the whole record
    let (s, b) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta=90&phi=0"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json(&b)["samples"].as_array().unwrap().len(), 1000);
}

#[tokio::test]
async fn synthesis_inputs_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let sid = session(&app, &upload(&app, pecg(10.0, 4)).await).await;
    for q in ["theta=200&phi=0", "theta=-1&phi=0", "theta=90&phi=-180", "theta=90&phi=181", "theta=90&phi=0&source=psychic"] {
        let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?{q}"), vec![]).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{q}");
    }
    let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta=abc&phi=0"), vec![]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta=180&phi=180"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    for g in ["64x33", "0x4", "4", "2048x2"] {
        let (s, _) = call(&app, "GET", &format!("/sessions/{sid}/panorama?grid={g}"), vec![]).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{g}");
    }
}

#[tokio::test]
async fn synthesis_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let sid = session(&app, &upload(&app, pecg(10.0, 5)).await).await;
    let uri = format!("/sessions/{sid}/synthesize?theta=70&phi=33.5&source=model");
    let (_, a) = call(&app, "GET", &uri, vec![]).await;
    let (_, b) = call(&app, "GET", &uri, vec![]).await;
    assert_eq!(a, b);
    let v = json(&a);
    assert_eq!(v["fs"], 250.0);
    assert_eq!(v["samples"].as_array().unwrap().len(), 1250);

    // the oracle at V24's angle reproduces V24 over the evaluation window
    let rec = &panobench_synthetic(5, 1, 250.0, 10.0).unwrap()[0];
    let v24 = &rec.leads[rec.lead_index("V24").unwrap()];
    let a = v24.nominal_angle;
    let (_, body) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta={}&phi={}&source=oracle", a.theta, a.phi), vec![]).await;
    let got: Vec<f64> = json(&body)["samples"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let err = got
        .iter()
        .zip(&v24.samples[1250..2500])
        .map(|(g, t)| (g - *t as f64).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-5, "oracle self-consistency {err}");

    let (s, body) = call(&app, "GET", &format!("/sessions/{sid}/panorama?grid=6x8&source=oracle"), vec![]).await;
    assert_eq!(s, StatusCode::OK);
    let grid = json(&body);
    let entries = grid.as_array().unwrap();
    assert_eq!(entries.len(), 48);
    let keys: Vec<(f64, f64)> = entries
        .iter()
        .map(|e| (e["theta"].as_f64().unwrap(), e["phi"].as_f64().unwrap()))
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "row-major by (theta, phi)");

    let (_, one) = call(&app, "GET", &format!("/sessions/{sid}/panorama?grid=1x1"), vec![]).await;
    let one = json(&one);
    let (th, ph) = (one[0]["theta"].as_f64().unwrap(), one[0]["phi"].as_f64().unwrap());
    let (_, single) = call(&app, "GET", &format!("/sessions/{sid}/synthesize?theta={th}&phi={ph}"), vec![]).await;
    assert_eq!(one[0]["samples"], json(&single)["samples"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn calibration_swaps_state_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path()));
    let sid = session(&app, &upload(&app, pecg(10.0, 6)).await).await;
    let uri = format!("/sessions/{sid}/synthesize?theta=100&phi=20");
    let (_, before) = call(&app, "GET", &uri, vec![]).await;

    let (s, _) = call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let mut hammers = Vec::new();
    for _ in 0..4 {
        let (app, uri, sid) = (app.clone(), uri.clone(), sid.clone());
        hammers.push(tokio::spawn(async move {
            let mut seen = Vec::new();
            loop {
                let (s, b) = call(&app, "GET", &uri, vec![]).await;
                assert_eq!(s, StatusCode::OK);
                seen.push(b);
                if status(&app, &sid).await["status"] != "running" {
                    return seen;
                }
            }
        }));
    }
    let mut seen = Vec::new();
    for h in hammers {
        seen.extend(h.await.unwrap());
    }
    assert_eq!(wait_done(&app, &sid).await["status"], "done");
    let (_, after) = call(&app, "GET", &uri, vec![]).await;
    assert_ne!(before, after, "calibration must change the model state");
    assert!(seen.len() >= 4);
    for b in &seen {
        assert!(b == &before || b == &after, "torn read");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (sid, uri, after) = {
        let app = router(state(dir.path()));
        let sid = session(&app, &upload(&app, pecg(10.0, 7)).await).await;
        call(&app, "POST", &format!("/sessions/{sid}/calibrate"), vec![]).await;
        wait_done(&app, &sid).await;
        let uri = format!("/sessions/{sid}/synthesize?theta=45&phi=-120");
        let (_, after) = call(&app, "GET", &uri, vec![]).await;
        (sid, uri, after)
    };
    assert_eq!(std::fs::read_dir(dir.path().join("sessions")).unwrap().count(), 1);
    let app = router(state(dir.path()));
    let v = status(&app, &sid).await;
    assert_eq!(v["status"], "done");
    assert_eq!(v["deviations"].as_array().unwrap().len(), 4);
    let (_, again) = call(&app, "GET", &uri, vec![]).await;
    assert_eq!(after, again);
    let (_, list) = call(&app, "GET", "/records", vec![]).await;
    assert_eq!(json(&list).as_array().unwrap().len(), 1);
}

#[test]
fn env_overrides() {
    let base = ServiceConfig::new("/tmp/x".into(), 8080);
    // no other test in this binary reads these variables
    std::env::set_var(panoecg_service::ENV_PORT, "9191");
    std::env::set_var(panoecg_service::ENV_WORKERS, "3");
    let c = base.clone().with_env().unwrap();
    assert_eq!((c.port, c.workers), (9191, 3));
    std::env::set_var(panoecg_service::ENV_WORKERS, "0");
    assert!(base.with_env().is_err());
    std::env::remove_var(panoecg_service::ENV_PORT);
    std::env::remove_var(panoecg_service::ENV_WORKERS);
}
