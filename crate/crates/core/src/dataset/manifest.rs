//! On-disk datasets: one `PECG` file per record plus `manifest.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::pecg::{file_checksum, read_record_bytes, record_to_bytes, PecgError};
use crate::dataset::record::MultiViewRecord;
use crate::rng::Seed;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject_id: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestEntry>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Record { path: String, source: PecgError },
    #[error("{0} does not match its manifest checksum")]
    Checksum(String),
    #[error("split is not a partition: {0}")]
    Split(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Subject-level split: unique subjects are shuffled under `seed` and the
/// first `round(ratio · n)` go to training.
pub fn split_subjects(subjects: &[String], ratio: f64, seed: Seed) -> (Vec<String>, Vec<String>) {
    let unique: BTreeSet<&String> = subjects.iter().collect();
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut seed.rng());
    let n_train = ((ids.len() as f64) * ratio).round() as usize;
    let test = ids.split_off(n_train.min(ids.len()));
    (ids, test)
}

pub fn split_dataset(manifest: &mut DatasetManifest, ratio: f64, seed: Seed) {
    let subjects: Vec<String> = manifest.records.iter().map(|r| r.subject_id.clone()).collect();
    let (train, test) = split_subjects(&subjects, ratio, seed);
    manifest.train = train;
    manifest.test = test;
}

impl DatasetManifest {
    /// Checks that train and test partition the manifest's subjects.
    pub fn check_split(&self) -> Result<(), DatasetError> {
        let all: BTreeSet<&String> = self.records.iter().map(|r| &r.subject_id).collect();
        let train: BTreeSet<&String> = self.train.iter().collect();
        let test: BTreeSet<&String> = self.test.iter().collect();
        if let Some(s) = train.intersection(&test).next() {
            return Err(DatasetError::Split(format!("{s} in both train and test")));
        }
        let union: BTreeSet<&String> = train.union(&test).copied().collect();
        if union != all {
            return Err(DatasetError::Split("train and test do not cover all subjects".into()));
        }
        Ok(())
    }
}

/// Writes records and a manifest split `ratio` train / rest test.
pub fn write_dataset(
    dir: &Path,
    records: &[MultiViewRecord],
    config_hash: &str,
    ratio: f64,
    seed: Seed,
) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = DatasetManifest {
        config_hash: config_hash.into(),
        ..Default::default()
    };
    for (i, r) in records.iter().enumerate() {
        let name = format!("{i:05}.pecg");
        let path = dir.join(&name);
        let bytes = record_to_bytes(r).map_err(|source| DatasetError::Record {
            path: name.clone(),
            source,
        })?;
        fs::write(&path, &bytes).map_err(io(&path))?;
        manifest.records.push(ManifestEntry {
            path: name,
            subject_id: r.subject_id.clone(),
            sha256: file_checksum(&bytes),
        });
    }
    split_dataset(&mut manifest, ratio, seed);
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(io(&mpath))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read(&mpath).map_err(io(&mpath))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads every record listed in the manifest, verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<MultiViewRecord>), DatasetError> {
    let manifest = read_manifest(dir)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for e in &manifest.records {
        let path = dir.join(&e.path);
        let bytes = fs::read(&path).map_err(io(&path))?;
        if file_checksum(&bytes) != e.sha256 {
            return Err(DatasetError::Checksum(e.path.clone()));
        }
        records.push(read_record_bytes(&bytes).map_err(|source| DatasetError::Record {
            path: e.path.clone(),
            source,
        })?);
    }
    Ok((manifest, records))
}

/// Records of `records` whose subject is in `subjects`, preserving order.
pub fn subset<'a>(records: &'a [MultiViewRecord], subjects: &[String]) -> Vec<&'a MultiViewRecord> {
    let set: BTreeSet<&String> = subjects.iter().collect();
    records.iter().filter(|r| set.contains(&r.subject_id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratio_and_disjointness() {
        let ids: Vec<String> = (0..250).map(|i| format!("s{i}")).collect();
        let (train, test) = split_subjects(&ids, 0.8, Seed(1));
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 50);
        assert!(train.iter().all(|t| !test.contains(t)));
        assert_eq!(split_subjects(&ids, 0.8, Seed(1)), (train, test));
    }
}
