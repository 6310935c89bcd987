//! On-disk layout under the data directory:
//!
//! ```text
//! records/<record_id>.pecg
//! sessions/<session_id>.json
//! ```
//!
//! Files are written to a temporary name and renamed so a crash never
//! leaves a half-written session behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use panoecg::dataset::{read_record_bytes, MultiViewRecord};
use serde::{Deserialize, Serialize};

use crate::Status;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub lead: usize,
    pub label: String,
    pub dtheta: f64,
    pub dphi: f64,
}

/// Everything persisted about a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub session_id: String,
    pub record_id: String,
    pub checkpoint_id: String,
    pub status: Status,
    /// Labels of the leads the model and oracle read from.
    pub recorded: Vec<String>,
    pub deviations: Vec<DeviationEntry>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn sorted_entries(dir: &Path, ext: &str) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Store {
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root: root.to_path_buf() })
    }

    pub fn put_record(&self, id: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.root.join("records").join(format!("{id}.pecg")), bytes)
    }

    pub fn put_session(&self, s: &SessionFile) -> io::Result<()> {
        let json = serde_json::to_vec_pretty(s).expect("plain data");
        write_atomic(&self.root.join("sessions").join(format!("{}.json", s.session_id)), &json)
    }

    /// Stored records in id order, which is creation order; unreadable files are
    /// skipped with a warning.
    pub fn records(&self) -> io::Result<Vec<(String, MultiViewRecord)>> {
        let mut out = Vec::new();
        for p in sorted_entries(&self.root.join("records"), "pecg")? {
            match fs::read(&p).map_err(|e| e.to_string()).and_then(|b| read_record_bytes(&b).map_err(|e| e.to_string())) {
                Ok(r) => out.push((stem(&p), r)),
                Err(e) => tracing::warn!("skipping {}: {e}", p.display()),
            }
        }
        Ok(out)
    }

    pub fn sessions(&self) -> io::Result<Vec<SessionFile>> {
        let mut out = Vec::new();
        for p in sorted_entries(&self.root.join("sessions"), "json")? {
            match fs::read(&p).map_err(|e| e.to_string()).and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string())) {
                Ok(s) => out.push(s),
                Err(e) => tracing::warn!("skipping {}: {e}", p.display()),
            }
        }
        Ok(out)
    }
}
