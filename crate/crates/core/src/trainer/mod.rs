//! On-policy trajectory-balance training.
//!
//! An episode is one sampled trajectory. Every `batch_size` episodes the
//! batch-mean loss is differentiated and both optimizer groups (network
//! weights, logZ) take one Adam step. Episode `i` always draws from RNG stream
//! `i` of the run seed, so a run resumed from a checkpoint reproduces the
//! uninterrupted run exactly.

mod checkpoint;
mod loss;
mod metrics;
mod sampling;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::env::{AssemblyEnv, EnvError};
use crate::flowmodel::{Adam, AdamConfig, FlowModel, ModelError};
use crate::reward::Scorer;
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{batch_grad, tb_loss, trajectory_balance, trajectory_grad, TrajectoryGrad};
pub use metrics::{
    moving_average, truncate_metrics, CsvSink, MetricRow, MetricsSink, RunningStats, Tee, METRICS_HEADER,
};
pub use sampling::{draw_index, episode_rng, replay_log_probs, sample_actions, sample_episodes, sample_trajectory};


#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what}; {dump}")]
    NonFinite { what: String, dump: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("no valid action after prefix {0:?}")]
    DeadEnd(Vec<usize>),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate_model: f64,
    pub learning_rate_log_z: f64,
    pub max_episodes: u64,
    /// Episodes averaged for the stopping rule.
    pub stop_window: u64,
    /// Training stops once the windowed mean loss is strictly below this.
    pub stop_threshold: f64,
    pub batch_size: usize,
    pub exploration_epsilon: f64,
    pub seed: u64,
    /// Window of the reported moving-average loss.
    pub smoothing_window: u64,
    /// Checkpoint after every this many episodes (0 disables periodic saves).
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate_model: 5e-3,
            learning_rate_log_z: 5e-3,
            max_episodes: 100_000,
            stop_window: 10_000,
            stop_threshold: 1.8,
            batch_size: 16,
            exploration_epsilon: 0.0,
            seed: 0,
            smoothing_window: 1000,
            checkpoint_every: 10_000,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("learning_rate_model", self.learning_rate_model),
            ("learning_rate_log_z", self.learning_rate_log_z),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.max_episodes == 0 {
            return bad("max_episodes must be >= 1".into());
        }
        if self.stop_window == 0 || self.stop_window > self.max_episodes {
            return bad(format!(
                "stop_window must lie in [1, max_episodes = {}], got {}",
                self.max_episodes, self.stop_window
            ));
        }
        if self.smoothing_window == 0 {
            return bad("smoothing_window must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.exploration_epsilon) {
            return bad(format!(
                "exploration_epsilon must lie in [0, 1], got {}",
                self.exploration_epsilon
            ));
        }
        if self.stop_threshold.is_nan() {
            return bad("stop_threshold is NaN".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Threshold,
    MaxEpisodes,
    /// `run_until` reached its limit; training can continue.
    Paused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub episodes: u64,
    pub reason: StopReason,
    pub log_z: f64,
    pub windowed_loss: Option<f64>,
    pub best_reward: f64,
}

/// Owns the model and optimizer state for one run.
pub struct Trainer<'a, T: Scalar> {
    config: TrainConfig,
    model: FlowModel<T>,
    env: &'a AssemblyEnv,
    scorer: &'a Scorer,
    net_opt: Adam<T>,
    log_z_opt: Adam<T>,
    episode: u64,
    stats: RunningStats,
    checkpoint_path: Option<PathBuf>,
    saved_at: Option<u64>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        config: TrainConfig,
        model: FlowModel<T>,
        env: &'a AssemblyEnv,
        scorer: &'a Scorer,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if model.vocab_size() != env.vocab_size() {
            return Err(TrainError::Config(format!(
                "model vocabulary size {} does not match environment ({})",
                model.vocab_size(),
                env.vocab_size()
            )));
        }
        let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
        let net_opt = Adam::new(T::of(config.learning_rate_model), config.adam, &sizes);
        let log_z_opt = Adam::new(T::of(config.learning_rate_log_z), config.adam, &[1]);
        let stats = RunningStats::new(config.smoothing_window as usize, config.stop_window as usize);
        Ok(Self {
            config,
            model,
            env,
            scorer,
            net_opt,
            log_z_opt,
            episode: 0,
            stats,
            checkpoint_path: None,
            saved_at: None,
        })
    }

    /// Restores model, optimizer and statistics from a checkpoint. The
    /// environment must hash to the value recorded at save time.
    pub fn resume(ckpt: &Checkpoint, env: &'a AssemblyEnv, scorer: &'a Scorer) -> Result<Self, TrainError> {
        ckpt.restore(env, scorer)
    }

    /// Periodic and final checkpoints are written here (atomically).
    pub fn set_checkpoint_path(&mut self, path: Option<PathBuf>) {
        self.checkpoint_path = path;
        self.saved_at = None;
    }

    /// Raises or lowers the episode limit, e.g. to extend a finished run
    /// after resuming it.
    pub fn set_max_episodes(&mut self, max_episodes: u64) -> Result<(), TrainError> {
        let config = TrainConfig {
            max_episodes,
            ..self.config.clone()
        };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn model(&self) -> &FlowModel<T> {
        &self.model
    }

    pub fn into_model(self) -> FlowModel<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn env(&self) -> &AssemblyEnv {
        self.env
    }

    fn outcome(&self, reason: StopReason) -> TrainOutcome {
        TrainOutcome {
            episodes: self.episode,
            reason,
            log_z: self.model.log_z_value().as_f64(),
            windowed_loss: self.stats.stop_mean(),
            best_reward: self.stats.best_reward,
        }
    }

    fn threshold_reached(&self) -> bool {
        self.stats.stop_mean().is_some_and(|m| m < self.config.stop_threshold)
    }

    /// Samples and learns from one batch. Batches start at multiples of
    /// `batch_size`; the last one is truncated at `max_episodes`.
    pub fn step_batch(&mut self, sink: &mut dyn MetricsSink) -> Result<(), TrainError> {
        let remaining = self.config.max_episodes - self.episode;
        let count = (self.config.batch_size as u64).min(remaining) as usize;
        if count == 0 {
            return Ok(());
        }
        let sampled = sample_episodes(
            &self.model,
            self.env,
            self.scorer,
            self.config.exploration_epsilon,
            self.config.seed,
            self.episode,
            count,
        )?;
        let batch: Vec<_> = sampled.into_iter().map(|(t, _)| t).collect();
        let (losses, grads) = batch_grad(&self.model, self.env, &batch, self.scorer.spec())?;
        let log_z = self.model.log_z_value().as_f64();
        for (traj, loss) in batch.iter().zip(&losses) {
            self.episode += 1;
            let loss = loss.as_f64();
            let (smoothed_loss, best_reward) = self.stats.push(loss, traj.terminal_reward);
            let row = MetricRow {
                episode: self.episode,
                loss,
                smoothed_loss,
                log_z,
                reward: traj.terminal_reward,
                best_reward,
            };
            sink.record(&row).map_err(|e| TrainError::io(Path::new("<metrics>"), e))?;
        }
        self.apply(grads)
    }

    fn apply(&mut self, grads: Vec<Vec<T>>) -> Result<(), TrainError> {
        let n = self.model.params().len();
        self.model.zero_grads();
        for (i, g) in grads.iter().enumerate() {
            let t: &mut Tensor<T> = if i < n {
                &mut self.model.params_mut()[i].1
            } else {
                self.model.log_z_tensor_mut()
            };
            t.accumulate_grad(g);
        }
        let non_finite = |e: ModelError| match e {
            ModelError::NonFiniteGradient { tensor, index } => TrainError::NonFinite {
                what: "gradient".into(),
                dump: format!("tensor {tensor} index {index} at episode {}", self.episode),
            },
            other => TrainError::Model(other),
        };
        {
            let mut net: Vec<&mut Tensor<T>> = self.model.params_mut().iter_mut().map(|(_, t)| t).collect();
            // Check logZ first so that neither group moves on a bad batch.
            if !grads[n].iter().all(|g| g.is_finite()) {
                return Err(non_finite(ModelError::NonFiniteGradient { tensor: n, index: 0 }));
            }
            self.net_opt.update(&mut net).map_err(non_finite)?;
        }
        self.log_z_opt
            .update(&mut [self.model.log_z_tensor_mut()])
            .map_err(non_finite)?;
        if !self.model.all_finite() {
            return Err(TrainError::NonFinite {
                what: "parameter after update".into(),
                dump: format!("episode {}", self.episode),
            });
        }
        Ok(())
    }

    /// Trains until `limit` episodes (rounded up to a whole batch), the
    /// stopping threshold, or `max_episodes`, whichever comes first.
    pub fn run_until(&mut self, limit: u64, sink: &mut dyn MetricsSink) -> Result<TrainOutcome, TrainError> {
        loop {
            if self.threshold_reached() {
                self.finish(sink)?;
                return Ok(self.outcome(StopReason::Threshold));
            }
            if self.episode >= self.config.max_episodes {
                self.finish(sink)?;
                return Ok(self.outcome(StopReason::MaxEpisodes));
            }
            if self.episode >= limit {
                sink.flush().map_err(|e| TrainError::io(Path::new("<metrics>"), e))?;
                return Ok(self.outcome(StopReason::Paused));
            }
            let before = self.episode;
            self.step_batch(sink)?;
            let every = self.config.checkpoint_every;
            if every > 0 && before / every != self.episode / every {
                sink.flush().map_err(|e| TrainError::io(Path::new("<metrics>"), e))?;
                self.save_checkpoint()?;
            }
        }
    }

    /// Trains to completion.
    pub fn run(&mut self, sink: &mut dyn MetricsSink) -> Result<TrainOutcome, TrainError> {
        self.run_until(u64::MAX, sink)
    }

    fn finish(&mut self, sink: &mut dyn MetricsSink) -> Result<(), TrainError> {
        sink.flush().map_err(|e| TrainError::io(Path::new("<metrics>"), e))?;
        self.save_checkpoint()
    }

    fn save_checkpoint(&mut self) -> Result<(), TrainError> {
        if self.saved_at == Some(self.episode) {
            return Ok(());
        }
        if let Some(path) = &self.checkpoint_path {
            self.checkpoint().save(path)?;
            log::info!("checkpoint at episode {} -> {}", self.episode, path.display());
            self.saved_at = Some(self.episode);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }
}

/// Trains `model` to completion and returns it with the per-episode metrics.
pub fn train<T: Scalar>(
    config: TrainConfig,
    model: FlowModel<T>,
    env: &AssemblyEnv,
    scorer: &Scorer,
) -> Result<(FlowModel<T>, Vec<MetricRow>, TrainOutcome), TrainError> {
    let mut trainer = Trainer::new(config, model, env, scorer)?;
    let mut rows = Vec::new();
    let outcome = trainer.run(&mut rows)?;
    Ok((trainer.into_model(), rows, outcome))
}
