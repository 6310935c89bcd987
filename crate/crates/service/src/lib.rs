//! HTTP service: record upload, per-record deviation calibration and
//! angle-parameterized view synthesis from either the model or the dipole
//! oracle. Endpoint reference: `docs/openapi.yaml`.

pub mod api;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use panoecg::dataset::MultiViewRecord;
use panoecg::experiments::{DipoleOracle, Protocol, ViewSynthesizer};
use panoecg::model::{GeoVtModel, Views};
use panoecg::train::{calibration_windows, record_views, stack_leads, stage3_ofcal, Stage, StageConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use api::router;
pub use store::{DeviationEntry, SessionFile, Store};

pub const ENV_PORT: &str = "PANOECG_PORT";
pub const ENV_WORKERS: &str = "PANOECG_WORKERS";
/// Upper bound on angles per panorama request.
pub const MAX_PANORAMA: usize = 2048;
/// Largest accepted upload: 48 leads of 10 s at 500 Hz with headroom.
pub const MAX_BODY_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Calibrations allowed to run at once across all sessions.
    pub workers: usize,
    pub calibration: StageConfig,
}

impl ServiceConfig {
    pub fn new(data_dir: PathBuf, port: u16) -> Self {
        ServiceConfig {
            data_dir,
            port,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            calibration: StageConfig::desk(Stage::III),
        }
    }

    /// Applies `PANOECG_PORT` and `PANOECG_WORKERS` when set.
    pub fn with_env(mut self) -> Result<Self, String> {
        if let Ok(p) = std::env::var(ENV_PORT) {
            self.port = p.parse().map_err(|_| format!("{ENV_PORT}={p} is not a port"))?;
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            self.workers = w
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("{ENV_WORKERS}={w} is not a positive count"))?;
        }
        Ok(self)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("session {session}: {msg}")]
    Restore { session: String, msg: String },
}

/// A session's live view: the model synthesis reads from. Replaced as a
/// whole when a calibration completes.
pub struct Snapshot {
    pub model: Arc<GeoVtModel<f32>>,
}

pub struct Session {
    pub meta: Mutex<SessionFile>,
    pub snapshot: RwLock<Arc<Snapshot>>,
    pub record: Arc<MultiViewRecord>,
    pub recorded: Vec<usize>,
    pub base: Arc<GeoVtModel<f32>>,
}

impl Session {
    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Window the synthesis endpoints read: the post-calibration half when
    /// the record is long enough, the whole record otherwise.
    pub fn window(&self, calibration_s: f64) -> Range<usize> {
        calibration_windows(&self.record, calibration_s).map_or(0..self.record.n_samples(), |(_, e)| e)
    }

    fn recorded_views(&self) -> Views {
        record_views(&self.record, &self.recorded)
    }

    /// Synthesizes each query angle from the recorded leads over `window`.
    pub fn synthesize(
        &self,
        snap: &Snapshot,
        angles: &[panoecg::dipole::ViewAngle],
        oracle: bool,
        window: Range<usize>,
    ) -> Result<Vec<Vec<f32>>, String> {
        let x = stack_leads::<f32>(&self.record, &self.recorded, window);
        let q = Views::virtual_views(angles.to_vec());
        let rv = self.recorded_views();
        let y = if oracle {
            <DipoleOracle as ViewSynthesizer<f32>>::synthesize_views(&DipoleOracle, &x, &rv, &q).map_err(|e| e.to_string())?
        } else {
            snap.model.synthesize(&x, &rv, &q).map_err(|e| e.to_string())?
        };
        Ok((0..angles.len()).map(|i| y.row(i).to_vec()).collect())
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Recorded leads of a session: the standard input set when the record
/// carries all of it, otherwise every lead.
pub fn designated_leads(record: &MultiViewRecord) -> Vec<usize> {
    let desk = Protocol::desk();
    let layout = panoecg::dataset::layout();
    let labels: Vec<&str> = desk.inputs.iter().map(|&i| layout[i].0.as_str()).collect();
    let found: Vec<Option<usize>> = labels.iter().map(|l| record.lead_index(l)).collect();
    if found.iter().all(Option::is_some) {
        found.into_iter().flatten().collect()
    } else {
        (0..record.leads.len()).collect()
    }
}

/// The base model with fitted deviations applied to the session's slots.
pub fn calibrated_model(base: &GeoVtModel<f32>, deviations: &[DeviationEntry]) -> GeoVtModel<f32> {
    let mut m = base.clone();
    let mut devs = m.deviations();
    for d in deviations {
        if let Some(slot) = devs.get_mut(d.lead) {
            *slot = (d.dtheta, d.dphi);
        }
    }
    m.set_deviations(&devs);
    m
}

pub struct AppState {
    pub config: ServiceConfig,
    pub store: Store,
    pub checkpoints: BTreeMap<String, Arc<GeoVtModel<f32>>>,
    pub records: RwLock<BTreeMap<String, Arc<MultiViewRecord>>>,
    pub sessions: RwLock<HashMap<String, Arc<Session>>>,
    pub pool: Arc<Semaphore>,
}

impl AppState {
    /// Opens the data directory and restores stored records and sessions.
    /// Sessions interrupted mid-calibration come back as failed.
    pub fn open(config: ServiceConfig, checkpoints: Vec<(String, GeoVtModel<f32>)>) -> Result<Arc<Self>, ServiceError> {
        let store = Store::open(&config.data_dir)?;
        let checkpoints: BTreeMap<_, _> = checkpoints.into_iter().map(|(k, m)| (k, Arc::new(m))).collect();
        let mut records = BTreeMap::new();
        for (id, r) in store.records()? {
            records.insert(id, Arc::new(r));
        }
        let mut sessions = HashMap::new();
        for mut meta in store.sessions()? {
            let fail = |msg: &str| ServiceError::Restore { session: meta.session_id.clone(), msg: msg.into() };
            let record = records.get(&meta.record_id).ok_or_else(|| fail("record missing"))?.clone();
            let base = checkpoints.get(&meta.checkpoint_id).ok_or_else(|| fail("checkpoint not loaded"))?.clone();
            if meta.status == Status::Running {
                meta.status = Status::Failed;
                meta.error = Some("interrupted by restart".into());
                store.put_session(&meta)?;
            }
            let model = Arc::new(calibrated_model(&base, &meta.deviations));
            let recorded = designated_leads(&record);
            sessions.insert(
                meta.session_id.clone(),
                Arc::new(Session {
                    meta: Mutex::new(meta),
                    snapshot: RwLock::new(Arc::new(Snapshot { model })),
                    record,
                    recorded,
                    base,
                }),
            );
        }
        let pool = Arc::new(Semaphore::new(config.workers.max(1)));
        Ok(Arc::new(AppState {
            config,
            store,
            checkpoints,
            records: RwLock::new(records),
            sessions: RwLock::new(sessions),
            pool,
        }))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("sessions lock").get(id).cloned()
    }

    /// Runs one calibration to completion on the blocking pool, then swaps
    /// the session snapshot and persists the result.
    pub async fn run_calibration(self: Arc<Self>, session: Arc<Session>) {
        let permit = self.pool.clone().acquire_owned().await.expect("pool open");
        let cfg = self.config.calibration.clone();
        let s = session.clone();
        let result = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            stage3_ofcal(&s.base, &s.record, &s.recorded, &cfg).map(|(_, cal)| cal)
        })
        .await;
        let mut meta = session.meta.lock().expect("meta lock").clone();
        match result {
            Ok(Ok(cal)) => {
                meta.deviations = cal
                    .deviations
                    .into_iter()
                    .map(|d| DeviationEntry { lead: d.lead, label: d.label, dtheta: d.dtheta, dphi: d.dphi })
                    .collect();
                let model = Arc::new(calibrated_model(&session.base, &meta.deviations));
                *session.snapshot.write().expect("snapshot lock") = Arc::new(Snapshot { model });
                meta.status = Status::Done;
                meta.error = None;
            }
            Ok(Err(e)) => {
                meta.status = Status::Failed;
                meta.error = Some(e.to_string());
            }
            Err(e) => {
                meta.status = Status::Failed;
                meta.error = Some(format!("calibration worker: {e}"));
            }
        }
        if let Err(e) = self.store.put_session(&meta) {
            tracing::error!("persisting session {}: {e}", meta.session_id);
        }
        *session.meta.lock().expect("meta lock") = meta;
    }
}

/// Binds `0.0.0.0:<port>` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>) -> std::io::Result<()> {
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], state.config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
