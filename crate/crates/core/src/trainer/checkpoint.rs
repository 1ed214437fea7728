//! Binary checkpoint format.
//!
//! ```text
//! magic "RGFNCKPT" | version u32 LE | header length u64 LE | JSON header
//! | payload: f64 LE values of every array listed in the header, in order
//! | SHA-256 of all preceding bytes
//! ```
//!
//! Values are stored as `f64` regardless of the model scalar; widening `f32`
//! is exact, so a restored `f32` model is bit-identical to the saved one.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunningStats, TrainConfig, TrainError, Trainer};
use crate::env::AssemblyEnv;
use crate::flowmodel::{FlowModel, ModelConfig};
use crate::reward::{RewardSpec, Scorer};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Rust type name of the model scalar.
    pub scalar: String,
    pub vocab_size: usize,
    pub model: ModelConfig,
    pub env_hash: String,
    pub train: TrainConfig,
    pub reward: RewardSpec,
    pub episode: u64,
    pub adam_steps: [u64; 2],
    pub stats_seen: u64,
    /// Name and length of each payload array.
    pub arrays: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<Vec<f64>>,
}

fn widen<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn narrow<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub(super) fn capture<T: Scalar>(t: &Trainer<'_, T>) -> Self {
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        let mut add = |name: String, values: Vec<f64>| {
            names.push((name, values.len()));
            arrays.push(values);
        };
        for (name, tensor) in t.model.params() {
            add(name.clone(), widen(tensor.values()));
        }
        add("log_z".into(), widen(t.model.log_z_tensor().values()));
        let (m, v) = t.net_opt.moments();
        for ((name, _), (m, v)) in t.model.params().iter().zip(m.iter().zip(v)) {
            add(format!("adam.m.{name}"), widen(m));
            add(format!("adam.v.{name}"), widen(v));
        }
        let (m, v) = t.log_z_opt.moments();
        add("adam.m.log_z".into(), widen(&m[0]));
        add("adam.v.log_z".into(), widen(&v[0]));
        add("stats.recent".into(), t.stats.recent.iter().copied().collect());
        add(
            "stats.sums".into(),
            vec![t.stats.smoothing_sum, t.stats.stop_sum, t.stats.best_reward],
        );
        Self {
            header: CheckpointHeader {
                scalar: std::any::type_name::<T>().to_string(),
                vocab_size: t.model.vocab_size(),
                model: t.model.config(),
                env_hash: t.env.content_hash(),
                train: t.config.clone(),
                reward: t.scorer.spec().clone(),
                episode: t.episode,
                adam_steps: [t.net_opt.step_count(), t.log_z_opt.step_count()],
                stats_seen: t.stats.seen,
                arrays: names,
            },
            arrays,
        }
    }

    fn array(&self, name: &str) -> Result<&[f64], TrainError> {
        self.header
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| self.arrays[i].as_slice())
            .ok_or_else(|| bad(format!("missing array '{name}'")))
    }

    fn check_scalar<T: Scalar>(&self) -> Result<(), TrainError> {
        let want = std::any::type_name::<T>();
        if self.header.scalar != want {
            return Err(bad(format!(
                "checkpoint holds {} parameters, requested {want}",
                self.header.scalar
            )));
        }
        Ok(())
    }

    /// The flow model alone (for sampling).
    pub fn model<T: Scalar>(&self) -> Result<FlowModel<T>, TrainError> {
        self.check_scalar::<T>()?;
        let h = &self.header;
        let skeleton = FlowModel::<T>::zeros(h.vocab_size, h.model)?;
        let named = skeleton
            .params()
            .iter()
            .map(|(name, _)| Ok((name.clone(), narrow(self.array(name)?))))
            .collect::<Result<Vec<_>, TrainError>>()?;
        let log_z = self.array("log_z")?;
        let log_z = *log_z.first().ok_or_else(|| bad("empty log_z"))?;
        Ok(FlowModel::from_parts(h.vocab_size, h.model, named, T::of(log_z))?)
    }

    pub(super) fn restore<'a, T: Scalar>(
        &self,
        env: &'a AssemblyEnv,
        scorer: &'a Scorer,
    ) -> Result<Trainer<'a, T>, TrainError> {
        let h = &self.header;
        if h.env_hash != env.content_hash() {
            return Err(bad(format!(
                "environment hash {} does not match checkpoint ({})",
                env.content_hash(),
                h.env_hash
            )));
        }
        if &h.reward != scorer.spec() {
            log::warn!("reward specification differs from the one stored in the checkpoint");
        }
        let model = self.model::<T>()?;
        let mut trainer = Trainer::new(h.train.clone(), model, env, scorer)?;
        let names: Vec<String> = trainer.model.params().iter().map(|(n, _)| n.clone()).collect();
        let moments = |prefix: &str| {
            names
                .iter()
                .map(|n| Ok(narrow(self.array(&format!("{prefix}.{n}"))?)))
                .collect::<Result<Vec<Vec<T>>, TrainError>>()
        };
        trainer.net_opt.restore(h.adam_steps[0], moments("adam.m")?, moments("adam.v")?)?;
        trainer.log_z_opt.restore(
            h.adam_steps[1],
            vec![narrow(self.array("adam.m.log_z")?)],
            vec![narrow(self.array("adam.v.log_z")?)],
        )?;
        let sums = self.array("stats.sums")?;
        if sums.len() != 3 {
            return Err(bad("stats.sums must hold 3 values"));
        }
        trainer.stats = RunningStats {
            smoothing_window: h.train.smoothing_window as usize,
            stop_window: h.train.stop_window as usize,
            recent: self.array("stats.recent")?.iter().copied().collect::<VecDeque<_>>(),
            smoothing_sum: sums[0],
            stop_sum: sums[1],
            best_reward: sums[2],
            seen: h.stats_seen,
        };
        trainer.episode = h.episode;
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| bad(e.to_string()))?;
        let payload: usize = self.arrays.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 * payload + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.arrays.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("integrity hash mismatch (corrupt or truncated file)"));
        }
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| bad("bad header length"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&body[20..header_end]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &body[header_end..];
        let total: usize = header.arrays.iter().map(|(_, n)| n).sum();
        if payload.len() != total * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                total * 8
            )));
        }
        let mut chunks = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let arrays = header
            .arrays
            .iter()
            .map(|(_, n)| chunks.by_ref().take(*n).collect())
            .collect();
        Ok(Self { header, arrays })
    }

    /// Writes to a temporary sibling and renames, so an existing checkpoint is
    /// never left half-written.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).map_err(|e| TrainError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint, as lowercase hex.
    pub fn hash(&self) -> Result<String, TrainError> {
        Ok(format!("{:x}", Sha256::digest(self.to_bytes()?)))
    }
}
