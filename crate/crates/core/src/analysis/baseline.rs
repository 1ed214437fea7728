use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{file_err, AnalysisError};
use crate::env::AssemblyEnv;
use crate::policy::{Policy, UniformPolicy};
use crate::reward::Scorer;
use crate::scalar::Scalar;
use crate::trainer::{episode_rng, sample_actions};

/// Stream offset separating the uniform sampler's RNG streams from the
/// trained sampler's.
const UNIFORM_STREAM_OFFSET: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerSummary {
    pub sampler: String,
    pub n: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub max_reward: f64,
    pub distinct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub trained: SamplerSummary,
    pub uniform: SamplerSummary,
    /// `(lower, upper, trained count, uniform count)` per reward bin.
    pub histogram: Vec<(f64, f64, usize, usize)>,
    pub trained_rewards: Vec<f64>,
    pub uniform_rewards: Vec<f64>,
}

/// Rewards of `n` on-policy samples; sample `i` uses stream `offset + i`.
pub fn sample_rewards<T: Scalar, P: Policy<T>>(
    policy: &P,
    env: &AssemblyEnv,
    scorer: &Scorer,
    n: usize,
    seed: u64,
    offset: u64,
) -> Result<(Vec<Vec<usize>>, Vec<f64>), AnalysisError> {
    let seqs: Vec<Vec<usize>> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_actions::<T, P, _>(policy, env, 0.0, &mut episode_rng(seed, offset + i)).map(|(a, _)| a))
        .collect::<Result<_, _>>()?;
    let rewards = scorer.score_batch(env, &seqs).into_iter().map(|s| s.reward).collect();
    Ok((seqs, rewards))
}

fn summarize(name: &str, seqs: &[Vec<usize>], rewards: &[f64]) -> SamplerSummary {
    let n = rewards.len();
    let mean = if n == 0 { 0.0 } else { rewards.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let mut distinct = seqs.to_vec();
    distinct.sort();
    distinct.dedup();
    SamplerSummary {
        sampler: name.to_string(),
        n,
        mean_reward: mean,
        std_reward: std,
        max_reward: rewards.iter().copied().fold(0.0, f64::max),
        distinct: distinct.len(),
    }
}

fn histogram(a: &[f64], b: &[f64], bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let hi = a.iter().chain(b).copied().fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let bin = |r: f64| ((r / width) as usize).min(bins - 1);
    let mut out: Vec<_> = (0..bins)
        .map(|i| (i as f64 * width, (i + 1) as f64 * width, 0, 0))
        .collect();
    for &r in a {
        out[bin(r)].2 += 1;
    }
    for &r in b {
        out[bin(r)].3 += 1;
    }
    out
}

/// Samples `n` sequences from `policy` and from the uniform policy (on
/// disjoint RNG streams of `seed`) and compares their rewards.
pub fn baseline_comparison<T: Scalar, P: Policy<T>>(
    policy: &P,
    env: &AssemblyEnv,
    scorer: &Scorer,
    n: usize,
    seed: u64,
    bins: usize,
) -> Result<BaselineReport, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::Config("bins must be >= 1".into()));
    }
    let (ts, tr) = sample_rewards::<T, P>(policy, env, scorer, n, seed, 0)?;
    let uniform = UniformPolicy::<T>::new(env.vocab_size());
    let (us, ur) = sample_rewards::<T, _>(&uniform, env, scorer, n, seed, UNIFORM_STREAM_OFFSET)?;
    Ok(BaselineReport {
        trained: summarize("trained", &ts, &tr),
        uniform: summarize("uniform", &us, &ur),
        histogram: histogram(&tr, &ur, bins),
        trained_rewards: tr,
        uniform_rewards: ur,
    })
}

impl BaselineReport {
    pub fn write_summary_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
        for s in [&self.trained, &self.uniform] {
            w.serialize(s).map_err(|e| file_err(path, e))?;
        }
        w.flush().map_err(|e| file_err(path, e))
    }

    pub fn write_histogram_csv(&self, path: &Path) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
        w.write_record(["bin_lower", "bin_upper", "trained", "uniform"])
            .map_err(|e| file_err(path, e))?;
        for (lo, hi, t, u) in &self.histogram {
            w.write_record([lo.to_string(), hi.to_string(), t.to_string(), u.to_string()])
                .map_err(|e| file_err(path, e))?;
        }
        w.flush().map_err(|e| file_err(path, e))
    }
}
