//! Multi-view records, their container format and the synthetic benchmark.

pub mod genconfig;
mod manifest;
mod pairing;
mod panobench;
pub mod pecg;
mod record;

pub use genconfig::{ConfigError, GeneratorConfig};
pub use manifest::{
    load_dataset, read_manifest, split_dataset, split_subjects, subset, write_dataset, DatasetError,
    DatasetManifest, ManifestEntry, MANIFEST,
};
pub use pairing::{sample_pair, sample_pair_pools, sample_pair_with, PairError, PairSample};
pub use panobench::{
    chest_label, generate, layout, panobench_synthetic, synth_subject, CHEST_VIEWS, LIMB_LEADS, N_VIEWS,
};
pub use pecg::{read_record, read_record_bytes, record_to_bytes, write_record, PecgError};
pub use record::{Lead, LeadKind, MultiViewRecord, RecordError, ANCHOR_LEADS};
