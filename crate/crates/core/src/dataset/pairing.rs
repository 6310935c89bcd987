//! Recorded/query pairing for any-pairs training.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::record::{MultiViewRecord, RecordError};
use crate::rng::Seed;

/// Lead indices into one record; `recorded` starts with the two anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub recorded: Vec<usize>,
    pub query: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairError {
    #[error("recorded set needs at least 3 leads (two anchors plus one), asked for {0}")]
    TooFewRecorded(usize),
    #[error("record has {available} leads, pairing needs {needed}")]
    InsufficientLeads { available: usize, needed: usize },
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Chooses `k` distinct items of `pool` uniformly.
fn choose<R: Rng>(rng: &mut R, pool: &[usize], k: usize) -> Vec<usize> {
    sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Anchors plus `n_recorded - 2` uniformly chosen other leads; the query set
/// is drawn uniformly from what remains.
pub fn sample_pair_with<R: Rng>(
    record: &MultiViewRecord,
    n_recorded: usize,
    n_query: usize,
    rng: &mut R,
) -> Result<PairSample, PairError> {
    if n_recorded < 3 {
        return Err(PairError::TooFewRecorded(n_recorded));
    }
    let n = record.leads.len();
    if n_recorded + n_query > n {
        return Err(PairError::InsufficientLeads {
            available: n,
            needed: n_recorded + n_query,
        });
    }
    let anchors = record.anchors()?;
    let others: Vec<usize> = (0..n).filter(|i| !anchors.contains(i)).collect();
    let extra = choose(rng, &others, n_recorded - 2);
    let mut recorded = anchors.to_vec();
    recorded.extend(extra);
    let rest: Vec<usize> = others.into_iter().filter(|i| !recorded.contains(i)).collect();
    let query = choose(rng, &rest, n_query);
    Ok(PairSample { recorded, query })
}

pub fn sample_pair(
    record: &MultiViewRecord,
    n_recorded: usize,
    n_query: usize,
    seed: Seed,
) -> Result<PairSample, PairError> {
    sample_pair_with(record, n_recorded, n_query, &mut seed.rng())
}

/// Pairing restricted to fixed pools: `fixed` is always recorded, `extra`
/// more come from `recorded_pool`, and queries come from `query_pool` minus
/// the recorded set.
pub fn sample_pair_pools<R: Rng>(
    fixed: &[usize],
    recorded_pool: &[usize],
    extra: usize,
    query_pool: &[usize],
    n_query: usize,
    rng: &mut R,
) -> Result<PairSample, PairError> {
    let avail: Vec<usize> = recorded_pool.iter().copied().filter(|i| !fixed.contains(i)).collect();
    if extra > avail.len() {
        return Err(PairError::InsufficientLeads {
            available: avail.len(),
            needed: extra,
        });
    }
    let mut recorded = fixed.to_vec();
    recorded.extend(choose(rng, &avail, extra));
    let qpool: Vec<usize> = query_pool.iter().copied().filter(|i| !recorded.contains(i)).collect();
    let n_query = n_query.min(qpool.len());
    let query = choose(rng, &qpool, n_query);
    Ok(PairSample { recorded, query })
}
