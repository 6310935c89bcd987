use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use panoecg::dataset::read_record_bytes;
use panoecg::dipole::ViewAngle;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{designated_leads, now_secs, AppState, Session, SessionFile, Snapshot, Status, MAX_BODY_BYTES, MAX_PANORAMA};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/records", post(upload_record).get(list_records))
        .route("/checkpoints", get(list_checkpoints))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/calibrate", post(calibrate))
        .route("/sessions/{id}/synthesize", get(synthesize))
        .route("/sessions/{id}/panorama", get(panorama))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

#[derive(Serialize)]
struct RecordSummary {
    record_id: String,
    subject_id: String,
    device: String,
    fs: f64,
    duration_s: f64,
    leads: Vec<String>,
}

async fn upload_record(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let record = read_record_bytes(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    // no dedup: every upload is a new record
    let id = uuid::Uuid::now_v7().simple().to_string();
    st.store.put_record(&id, &body).map_err(internal)?;
    st.records.write().expect("records lock").insert(id.clone(), Arc::new(record));
    Ok((StatusCode::CREATED, Json(json!({ "record_id": id }))).into_response())
}

async fn list_records(State(st): State<Arc<AppState>>) -> Json<Vec<RecordSummary>> {
    let records = st.records.read().expect("records lock");
    Json(
        records
            .iter()
            .map(|(id, r)| RecordSummary {
                record_id: id.clone(),
                subject_id: r.subject_id.clone(),
                device: r.device.clone(),
                fs: r.fs,
                duration_s: r.duration(),
                leads: r.leads.iter().map(|l| l.label.clone()).collect(),
            })
            .collect(),
    )
}

async fn list_checkpoints(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let ids: Vec<&String> = st.checkpoints.keys().collect();
    Json(json!({ "checkpoints": ids }))
}

#[derive(Deserialize)]
struct CreateSession {
    record_id: String,
    checkpoint_id: String,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let record = st
        .records
        .read()
        .expect("records lock")
        .get(&req.record_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown record {}", req.record_id)))?;
    let base = st
        .checkpoints
        .get(&req.checkpoint_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown checkpoint {}", req.checkpoint_id)))?;
    if record.leads.len() > base.config.n_slots {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("record has {} leads, checkpoint supports {}", record.leads.len(), base.config.n_slots),
        ));
    }
    let recorded = designated_leads(&record);
    let meta = SessionFile {
        session_id: uuid::Uuid::now_v7().simple().to_string(),
        record_id: req.record_id,
        checkpoint_id: req.checkpoint_id,
        status: Status::Idle,
        recorded: recorded.iter().map(|&i| record.leads[i].label.clone()).collect(),
        deviations: Vec::new(),
        created_at: now_secs(),
        error: None,
    };
    st.store.put_session(&meta).map_err(internal)?;
    let id = meta.session_id.clone();
    let session = Arc::new(Session {
        meta: Mutex::new(meta),
        snapshot: RwLock::new(Arc::new(Snapshot { model: base.clone() })),
        record,
        recorded,
        base,
    });
    st.sessions.write().expect("sessions lock").insert(id.clone(), session);
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

fn find(st: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    st.session(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionFile>> {
    let s = find(&st, &id)?;
    let meta = s.meta.lock().expect("meta lock").clone();
    Ok(Json(meta))
}

async fn calibrate(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = find(&st, &id)?;
    let needed = 2.0 * st.config.calibration.calibration_s;
    if s.record.duration() < needed {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("record lasts {:.2} s, calibration needs {needed} s", s.record.duration()),
        ));
    }
    let snapshot = {
        let mut meta = s.meta.lock().expect("meta lock");
        if meta.status == Status::Running {
            return Err(ApiError::new(StatusCode::CONFLICT, "calibration already running"));
        }
        meta.status = Status::Running;
        meta.error = None;
        meta.clone()
    };
    st.store.put_session(&snapshot).map_err(internal)?;
    tokio::spawn(st.clone().run_calibration(s));
    Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "status": Status::Running }))).into_response())
}

#[derive(Serialize)]
struct Waveform<'a> {
    fs: f64,
    samples: &'a [f32],
}

#[derive(Serialize)]
struct PanoramaEntry<'a> {
    theta: f64,
    phi: f64,
    samples: &'a [f32],
}

fn number(q: &HashMap<String, String>, key: &str) -> ApiResult<f64> {
    let raw = q
        .get(key)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("missing {key}")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("{key}={raw} is not a number")))
}

fn source(q: &HashMap<String, String>) -> ApiResult<bool> {
    match q.get("source").map(String::as_str) {
        None | Some("model") => Ok(false),
        Some("oracle") => Ok(true),
        Some(other) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("source {other} is not model or oracle"),
        )),
    }
}

/// `NxM` with both factors positive and a product within the limit.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s.split_once(['x', 'X']).ok_or_else(|| format!("grid {s} is not NxM"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("grid {s} is not NxM"))?;
    let m: usize = m.trim().parse().map_err(|_| format!("grid {s} is not NxM"))?;
    if n == 0 || m == 0 {
        return Err(format!("grid {s} has an empty axis"));
    }
    if n.saturating_mul(m) > MAX_PANORAMA {
        return Err(format!("grid {s} exceeds {MAX_PANORAMA} views"));
    }
    Ok((n, m))
}

/// Cell centres of an `n x m` grid, row-major: `theta` over `[0, 180]`,
/// then `phi` over `(-180, 180]`.
pub fn grid_angles(n: usize, m: usize) -> Vec<ViewAngle> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let theta = (i as f64 + 0.5) * 180.0 / n as f64;
        for j in 0..m {
            let phi = -180.0 + (j as f64 + 0.5) * 360.0 / m as f64;
            out.push(ViewAngle::deg(theta, phi));
        }
    }
    out
}

async fn run_synthesis(
    st: &AppState,
    s: Arc<Session>,
    angles: Vec<ViewAngle>,
    oracle: bool,
) -> ApiResult<Vec<Vec<f32>>> {
    let window = s.window(st.config.calibration.calibration_s);
    let snap = s.current();
    tokio::task::spawn_blocking(move || s.synthesize(&snap, &angles, oracle, window))
        .await
        .map_err(internal)?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))
}

fn json_bytes<T: Serialize>(v: &T) -> Response {
    let body = serde_json::to_vec(v).expect("plain data");
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn synthesize(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let s = find(&st, &id)?;
    let (theta, phi) = (number(&q, "theta")?, number(&q, "phi")?);
    let angle = ViewAngle::new(theta, phi).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let oracle = source(&q)?;
    let fs = s.record.fs;
    let out = run_synthesis(&st, s, vec![angle], oracle).await?;
    Ok(json_bytes(&Waveform { fs, samples: &out[0] }))
}

async fn panorama(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let s = find(&st, &id)?;
    let grid = q
        .get("grid")
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing grid"))?;
    let (n, m) = parse_grid(grid).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    let oracle = source(&q)?;
    let angles = grid_angles(n, m);
    let out = run_synthesis(&st, s, angles.clone(), oracle).await?;
    let entries: Vec<PanoramaEntry> = angles
        .iter()
        .zip(&out)
        .map(|(a, y)| PanoramaEntry { theta: a.theta, phi: a.phi, samples: y })
        .collect();
    Ok(json_bytes(&entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("6x8"), Ok((6, 8)));
        assert!(parse_grid("0x3").is_err());
        assert!(parse_grid("64x33").is_err());
        assert_eq!(parse_grid("64x32"), Ok((64, 32)));
        assert!(parse_grid("6by8").is_err());
    }

    #[test]
    fn grid_is_row_major_and_in_range() {
        let g = grid_angles(3, 4);
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(ViewAngle::is_valid));
        assert!(g.windows(2).all(|w| (w[0].theta, w[0].phi) < (w[1].theta, w[1].phi)));
        assert_eq!(grid_angles(1, 1), vec![ViewAngle::deg(90.0, 0.0)]);
    }
}
