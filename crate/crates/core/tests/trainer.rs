mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reticula::env::{AssemblyEnv, Trajectory};
use reticula::flowmodel::{FlowModel, ModelConfig};
use reticula::reward::{GsaEvaluator, GsaResult, RewardSpec, Scorer};
use reticula::trainer::{
    tb_loss, Checkpoint, CsvSink, MetricRow, StopReason, TrainConfig, TrainError, Trainer,
};

const SMALL: ModelConfig = ModelConfig {
    embed_dim: 4,
    hidden_dim: 8,
};

fn small_model<T: reticula::Scalar>(env: &AssemblyEnv, seed: u64) -> FlowModel<T> {
    FlowModel::init(env.vocab_size(), SMALL, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn quick_config(max: u64) -> TrainConfig {
    TrainConfig {
        max_episodes: max,
        stop_window: 16.min(max),
        stop_threshold: 0.0,
        smoothing_window: 8,
        checkpoint_every: 0,
        seed: 42,
        ..TrainConfig::default()
    }
}

#[test]
fn single_terminal_loss_is_zero_at_log_reward() {
    let env = common::single();
    let scorer = common::scorer();
    let mut model = FlowModel::<f64>::zeros(env.vocab_size(), SMALL).unwrap();
    let r = scorer.score(&env, &[0]).reward;
    model.set_log_z(r.ln());
    let traj = Trajectory {
        actions: vec![0],
        forward_log_probs: vec![0.0],
        terminal_reward: r,
    };
    assert!(tb_loss(&model, &env, &[traj.clone()], scorer.spec()).unwrap().abs() < 1e-30);
    model.set_log_z(r.ln() + 0.25);
    let l = tb_loss(&model, &env, &[traj], scorer.spec()).unwrap();
    assert!((l - 0.0625).abs() < 1e-15);
}

#[test]
fn zero_threshold_runs_exactly_max_episodes() {
    let env = common::fx12();
    let scorer = common::scorer();
    let mut trainer = Trainer::new(quick_config(50), small_model::<f64>(&env, 1), &env, &scorer).unwrap();
    let mut rows: Vec<MetricRow> = Vec::new();
    let out = trainer.run(&mut rows).unwrap();
    assert_eq!(out.reason, StopReason::MaxEpisodes);
    assert_eq!(out.episodes, 50);
    assert_eq!(rows.len(), 50);
    assert_eq!(rows.last().unwrap().episode, 50);
    assert!(rows[..7].iter().all(|r| r.smoothed_loss.is_none()));
    assert!(rows[7..].iter().all(|r| r.smoothed_loss.is_some()));
}

#[test]
fn single_terminal_stops_by_threshold() {
    let env = common::single();
    let scorer = common::scorer();
    let config = TrainConfig {
        max_episodes: 100_000,
        stop_window: 100,
        stop_threshold: 1e-3,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, small_model::<f64>(&env, 2), &env, &scorer).unwrap();
    let out = trainer.run(&mut Vec::new()).unwrap();
    assert_eq!(out.reason, StopReason::Threshold);
    assert!(out.episodes < 10_000, "took {} episodes", out.episodes);
    let log_r = scorer.score(&env, &[0]).reward.ln();
    assert!((out.log_z - log_r).abs() < 0.05);
}

#[test]
fn invalid_config_is_rejected() {
    let env = common::fx12();
    let scorer = common::scorer();
    for cfg in [
        TrainConfig { learning_rate_model: 0.0, ..TrainConfig::default() },
        TrainConfig { learning_rate_log_z: -1.0, ..TrainConfig::default() },
        TrainConfig { stop_window: 200_000, ..TrainConfig::default() },
        TrainConfig { exploration_epsilon: 1.5, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        let r = Trainer::new(cfg, small_model::<f64>(&env, 0), &env, &scorer);
        assert!(matches!(r, Err(TrainError::Config(_))));
    }
}

fn csv_of(rows: &[MetricRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut sink = CsvSink::new(&mut buf, true).unwrap();
        for r in rows {
            reticula::trainer::MetricsSink::record(&mut sink, r).unwrap();
        }
    }
    buf
}

fn resume_matches<T: reticula::Scalar>() {
    let env = common::fx12();
    let scorer = common::scorer();
    let config = TrainConfig { batch_size: 8, ..quick_config(120) };

    let mut full = Trainer::new(config.clone(), small_model::<T>(&env, 9), &env, &scorer).unwrap();
    let mut full_rows = Vec::new();
    full.run(&mut full_rows).unwrap();

    let mut first = Trainer::new(config, small_model::<T>(&env, 9), &env, &scorer).unwrap();
    let mut rows = Vec::new();
    assert_eq!(first.run_until(48, &mut rows).unwrap().reason, StopReason::Paused);
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = Trainer::<T>::resume(&ckpt, &env, &scorer).unwrap();
    assert_eq!(second.episode(), 48);
    second.run(&mut rows).unwrap();

    assert_eq!(csv_of(&rows), csv_of(&full_rows));
    let a: Vec<_> = second.model().params().iter().map(|(_, t)| t.values().to_vec()).collect();
    let b: Vec<_> = full.model().params().iter().map(|(_, t)| t.values().to_vec()).collect();
    assert_eq!(a, b);
    assert_eq!(second.model().log_z_value(), full.model().log_z_value());
}

#[test]
fn resume_is_bit_identical_f64() {
    resume_matches::<f64>();
}

#[test]
fn resume_is_bit_identical_f32() {
    resume_matches::<f32>();
}

#[test]
fn identical_seed_gives_identical_metrics() {
    let env = common::fx12();
    let scorer = common::scorer();
    let run = |seed| {
        let cfg = TrainConfig { seed, ..quick_config(64) };
        let mut t = Trainer::new(cfg, small_model::<f64>(&env, 3), &env, &scorer).unwrap();
        let mut rows = Vec::new();
        t.run(&mut rows).unwrap();
        csv_of(&rows)
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn checkpoint_detects_corruption_and_wrong_environment() {
    let env = common::fx12();
    let scorer = common::scorer();
    let t = Trainer::new(quick_config(16), small_model::<f64>(&env, 4), &env, &scorer).unwrap();
    let mut bytes = t.checkpoint().to_bytes().unwrap();
    let ok = Checkpoint::from_bytes(&bytes).unwrap();
    assert!(ok.model::<f32>().is_err());
    let other = common::single();
    assert!(Trainer::<f64>::resume(&ok, &other, &scorer).is_err());
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(TrainError::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
}

/// Returns a finite value for the first `ok` calls and +inf afterwards.
struct Poisoned {
    ok: usize,
    calls: AtomicUsize,
}

impl GsaEvaluator for Poisoned {
    fn evaluate(&self, _env: &AssemblyEnv, _seq: &[usize]) -> GsaResult {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.ok {
            GsaResult::Value(6000.0)
        } else {
            GsaResult::Value(f64::INFINITY)
        }
    }
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_checkpoint() {
    let env = common::fx12();
    let scorer = Scorer::with_evaluator(
        RewardSpec { memoize: false, ..RewardSpec::default() },
        Box::new(Poisoned { ok: 40, calls: AtomicUsize::new(0) }),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let cfg = TrainConfig { checkpoint_every: 16, ..quick_config(200) };
    let mut t = Trainer::new(cfg, small_model::<f64>(&env, 5), &env, &scorer).unwrap();
    t.set_checkpoint_path(Some(path.clone()));
    let err = t.run(&mut Vec::new()).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { .. }), "{err}");
    let saved = Checkpoint::load(&path).unwrap();
    assert_eq!(saved.header.episode, 32);
}
