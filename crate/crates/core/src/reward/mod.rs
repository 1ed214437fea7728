//! Heaviside-exponential surface-area reward and its evaluators.
//!
//! `R(x) = H(gsa(x) - C) * exp((gsa(x) - C) / C)` with `H(0) = 1`. A failed
//! evaluation scores zero.

mod external;

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::AssemblyEnv;

pub use external::{AdapterConfig, ExternalEvaluator};

/// Converts Å² per (g/mol) into m²/g: 1e-20 m²/Å² times Avogadro's number.
pub const ANGSTROM2_PER_GMOL_TO_M2_PER_G: f64 = 6022.140_76;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("invalid reward configuration: {0}")]
    Config(String),
}

/// Outcome of a surface-area evaluation, in m²/g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GsaResult {
    Value(f64),
    Error(String),
}

impl GsaResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            GsaResult::Value(v) => Some(*v),
            GsaResult::Error(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvaluatorConfig {
    Surrogate,
    External(AdapterConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSpec {
    /// Cutoff C in m²/g.
    pub cutoff: f64,
    /// Lower bound applied to R only inside the training loss.
    pub floor: f64,
    /// Multiplier turning Σsurface/Σmass into m²/g for the surrogate.
    pub surrogate_scale: f64,
    pub evaluator: EvaluatorConfig,
    /// Cache evaluations per assembly record.
    pub memoize: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            cutoff: 5000.0,
            floor: 1e-6,
            surrogate_scale: ANGSTROM2_PER_GMOL_TO_M2_PER_G,
            evaluator: EvaluatorConfig::Surrogate,
            memoize: true,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.cutoff.is_finite() && self.cutoff > 0.0) {
            return Err(RewardError::Config(format!("cutoff must be > 0, got {}", self.cutoff)));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(RewardError::Config(format!("floor must lie in (0, 1), got {}", self.floor)));
        }
        if !(self.surrogate_scale.is_finite() && self.surrogate_scale > 0.0) {
            return Err(RewardError::Config("surrogate_scale must be > 0".into()));
        }
        if let EvaluatorConfig::External(a) = &self.evaluator {
            a.validate()?;
        }
        Ok(())
    }

    /// Reward of an evaluation result; total.
    pub fn reward(&self, gsa: &GsaResult) -> f64 {
        match gsa {
            GsaResult::Value(v) if *v >= self.cutoff => ((v - self.cutoff) / self.cutoff).exp(),
            _ => 0.0,
        }
    }

    /// `max(R, floor)`; only for the log-reward term of the loss.
    pub fn loss_reward(&self, reward: f64) -> f64 {
        reward.max(self.floor)
    }

    pub fn build_evaluator(&self) -> Box<dyn GsaEvaluator> {
        let inner: Box<dyn GsaEvaluator> = match &self.evaluator {
            EvaluatorConfig::Surrogate => Box::new(SurrogateEvaluator {
                scale: self.surrogate_scale,
            }),
            EvaluatorConfig::External(a) => Box::new(ExternalEvaluator::new(a.clone())),
        };
        if self.memoize {
            Box::new(Memoized::new(inner))
        } else {
            inner
        }
    }
}

/// Evaluation result paired with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub gsa: GsaResult,
    pub reward: f64,
}

/// A reward specification bound to a concrete evaluator.
pub struct Scorer {
    spec: RewardSpec,
    evaluator: Box<dyn GsaEvaluator>,
}

impl Scorer {
    pub fn new(spec: RewardSpec) -> Result<Self, RewardError> {
        spec.validate()?;
        let evaluator = spec.build_evaluator();
        Ok(Self { spec, evaluator })
    }

    pub fn with_evaluator(spec: RewardSpec, evaluator: Box<dyn GsaEvaluator>) -> Result<Self, RewardError> {
        spec.validate()?;
        Ok(Self { spec, evaluator })
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn score(&self, env: &AssemblyEnv, seq: &[usize]) -> Scored {
        let gsa = self.evaluator.evaluate(env, seq);
        let reward = self.spec.reward(&gsa);
        Scored { gsa, reward }
    }

    pub fn score_batch(&self, env: &AssemblyEnv, seqs: &[Vec<usize>]) -> Vec<Scored> {
        self.evaluator
            .evaluate_batch(env, seqs)
            .into_iter()
            .map(|gsa| {
                let reward = self.spec.reward(&gsa);
                Scored { gsa, reward }
            })
            .collect()
    }
}

/// Mass-normalized additive surface area: `scale * Σ surface / Σ mass`.
pub fn surrogate_gsa(env: &AssemblyEnv, seq: &[usize], scale: f64) -> GsaResult {
    let vocab = env.vocab();
    let (mut surface, mut mass) = (0.0, 0.0);
    for &t in seq {
        let Some(b) = vocab.blocks().get(t) else {
            return GsaResult::Error(format!("token index {t} outside vocabulary"));
        };
        surface += b.surface;
        mass += b.mass;
    }
    if mass <= 0.0 {
        return GsaResult::Error("zero total mass".into());
    }
    GsaResult::Value(scale * surface / mass)
}

/// Source of surface-area values for terminal sequences.
pub trait GsaEvaluator: Send + Sync {
    fn evaluate(&self, env: &AssemblyEnv, seq: &[usize]) -> GsaResult;

    /// Results in input order.
    fn evaluate_batch(&self, env: &AssemblyEnv, seqs: &[Vec<usize>]) -> Vec<GsaResult> {
        seqs.iter().map(|s| self.evaluate(env, s)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SurrogateEvaluator {
    pub scale: f64,
}

impl GsaEvaluator for SurrogateEvaluator {
    fn evaluate(&self, env: &AssemblyEnv, seq: &[usize]) -> GsaResult {
        surrogate_gsa(env, seq, self.scale)
    }
}

/// Caches results by assembly record text.
pub struct Memoized {
    inner: Box<dyn GsaEvaluator>,
    cache: Mutex<HashMap<String, GsaResult>>,
}

impl Memoized {
    pub fn new(inner: Box<dyn GsaEvaluator>) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn key(env: &AssemblyEnv, seq: &[usize]) -> String {
        env.record(seq)
            .map(|r| r.to_string())
            .unwrap_or_else(|_| format!("{seq:?}"))
    }
}

impl GsaEvaluator for Memoized {
    fn evaluate(&self, env: &AssemblyEnv, seq: &[usize]) -> GsaResult {
        let key = Self::key(env, seq);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let result = self.inner.evaluate(env, seq);
        self.cache.lock().expect("cache lock").insert(key, result.clone());
        result
    }

    fn evaluate_batch(&self, env: &AssemblyEnv, seqs: &[Vec<usize>]) -> Vec<GsaResult> {
        let keys: Vec<String> = seqs.iter().map(|s| Self::key(env, s)).collect();
        let mut missing: Vec<Vec<usize>> = Vec::new();
        let mut missing_keys: Vec<String> = Vec::new();
        let mut pending: HashSet<&str> = HashSet::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for (k, s) in keys.iter().zip(seqs) {
                if !cache.contains_key(k) && pending.insert(k.as_str()) {
                    missing_keys.push(k.clone());
                    missing.push(s.clone());
                }
            }
        }
        let fresh = self.inner.evaluate_batch(env, &missing);
        let mut cache = self.cache.lock().expect("cache lock");
        for (k, r) in missing_keys.into_iter().zip(fresh) {
            cache.insert(k, r);
        }
        keys.iter().map(|k| cache[k].clone()).collect()
    }
}
