//! Large-scale sampling from a trained policy into a deduplicated, ranked
//! candidate set.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AssemblyEnv, EnvError};
use crate::policy::Policy;
use crate::reward::{GsaResult, Scorer};
use crate::scalar::Scalar;
use crate::trainer::{episode_rng, sample_actions, TrainError};

pub const DATASET_HEADER: [&str; 5] = [
    "assembly_record",
    "gsa_m2_per_g",
    "reward",
    "sample_count",
    "first_seen_episode",
];

/// Written in the GSA column when the evaluator failed.
pub const GSA_ERROR_MARKER: &str = "error";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sampling(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("k must be >= 1")]
    ZeroK,
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub record: String,
    pub tokens: Vec<usize>,
    pub gsa: GsaResult,
    pub reward: f64,
    /// Number of draws that produced this sequence.
    pub sample_count: u64,
    /// Smallest sample index that produced it.
    pub first_seen: u64,
}

/// Draws `n` sequences (sample `i` uses RNG stream `i` of `seed`), merges
/// duplicates and scores each distinct sequence once. Evaluator failures are
/// kept on the record. Output is ordered by first appearance.
pub fn generate<T: Scalar, P: Policy<T>>(
    policy: &P,
    env: &AssemblyEnv,
    scorer: &Scorer,
    n: u64,
    seed: u64,
) -> Result<Vec<CandidateRecord>, DatasetError> {
    let seqs: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| sample_actions::<T, P, _>(policy, env, 0.0, &mut episode_rng(seed, i)).map(|(a, _)| a))
        .collect::<Result<_, _>>()?;
    let mut index: HashMap<&[usize], usize> = HashMap::new();
    let mut unique: Vec<(Vec<usize>, u64, u64)> = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        match index.get(s.as_slice()) {
            Some(&u) => unique[u].1 += 1,
            None => {
                index.insert(s, unique.len());
                unique.push((s.clone(), 1, i as u64));
            }
        }
    }
    let distinct: Vec<Vec<usize>> = unique.iter().map(|(s, _, _)| s.clone()).collect();
    let scored = scorer.score_batch(env, &distinct);
    unique
        .into_iter()
        .zip(scored)
        .map(|((tokens, sample_count, first_seen), s)| {
            if let GsaResult::Error(msg) = &s.gsa {
                log::warn!("evaluation failed for sample {first_seen}: {msg}");
            }
            Ok(CandidateRecord {
                record: env.record(&tokens)?.to_string(),
                tokens,
                gsa: s.gsa,
                reward: s.reward,
                sample_count,
                first_seen,
            })
        })
        .collect()
}

/// Reward descending, then record text ascending.
pub fn rank_order(a: &CandidateRecord, b: &CandidateRecord) -> Ordering {
    b.reward.total_cmp(&a.reward).then_with(|| a.record.cmp(&b.record))
}

/// The `k` best records. Asking for more than exist returns all of them.
pub fn top_k(records: &[CandidateRecord], k: usize) -> Result<Vec<CandidateRecord>, DatasetError> {
    if k == 0 {
        return Err(DatasetError::ZeroK);
    }
    if k > records.len() {
        log::warn!("requested top {k} of only {} records; returning all", records.len());
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(rank_order);
    sorted.truncate(k);
    Ok(sorted)
}

pub fn write_csv(path: &Path, records: &[CandidateRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    w.write_record(DATASET_HEADER).map_err(|e| file_err(path, e))?;
    for r in records {
        let gsa = match &r.gsa {
            GsaResult::Value(v) => v.to_string(),
            GsaResult::Error(_) => GSA_ERROR_MARKER.to_string(),
        };
        w.write_record([
            r.record.clone(),
            gsa,
            r.reward.to_string(),
            r.sample_count.to_string(),
            r.first_seen.to_string(),
        ])
        .map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Reads a dataset CSV back; tokens are resolved against `env`.
pub fn read_csv(path: &Path, env: &AssemblyEnv) -> Result<Vec<CandidateRecord>, DatasetError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let headers = r.headers().map_err(|e| file_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(file_err(path, format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| file_err(path, e))?;
        let at = |e: String| file_err(path, format!("row {}: {e}", line + 2));
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| at(format!("column {}: {e}", DATASET_HEADER[i])));
        let int = |i: usize| row[i].parse::<u64>().map_err(|e| at(format!("column {}: {e}", DATASET_HEADER[i])));
        let gsa = if &row[1] == GSA_ERROR_MARKER {
            GsaResult::Error("recorded as failed".into())
        } else {
            GsaResult::Value(num(1)?)
        };
        out.push(CandidateRecord {
            record: row[0].to_string(),
            tokens: env.parse_record(&row[0]).map_err(|e| at(e.to_string()))?,
            gsa,
            reward: num(2)?,
            sample_count: int(3)?,
            first_seen: int(4)?,
        });
    }
    Ok(out)
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub checkpoint_sha256: String,
    pub seed: u64,
    pub n_samples: u64,
    pub distinct: usize,
    pub env_hash: String,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| file_err(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| file_err(path, e))
    }
}
