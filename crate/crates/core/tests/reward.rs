mod common;

use proptest::prelude::*;
use reticula::reward::{
    AdapterConfig, EvaluatorConfig, GsaResult, RewardSpec, Scorer, ANGSTROM2_PER_GMOL_TO_M2_PER_G,
};
use reticula::trainer::{TrainConfig, Trainer};
use reticula::FlowModel64;

fn spec() -> RewardSpec {
    RewardSpec::default()
}

#[test]
fn reward_spot_values() {
    let s = spec();
    let c = s.cutoff;
    assert_eq!(s.reward(&GsaResult::Value(c)), 1.0);
    assert!((s.reward(&GsaResult::Value(2.0 * c)) - std::f64::consts::E).abs() < 1e-12);
    assert_eq!(s.reward(&GsaResult::Value(0.9 * c)), 0.0);
    assert_eq!(s.reward(&GsaResult::Value(0.0)), 0.0);
    assert_eq!(s.reward(&GsaResult::Error("boom".into())), 0.0);
    assert_eq!(s.loss_reward(0.0), s.floor);
    assert_eq!(s.loss_reward(2.0), 2.0);
}

#[test]
fn surrogate_matches_hand_computation() {
    let env = common::fx12();
    let scorer = Scorer::new(RewardSpec {
        memoize: false,
        ..spec()
    })
    .unwrap();
    // N3 (180 g/mol, 380 Å²), N4 (100, 95), E2 (60, 90).
    let seq = env.parse_record("fx12:N3,N4,E2").unwrap();
    let expected = 6022.14076 * (380.0 + 95.0 + 90.0) / (180.0 + 100.0 + 60.0);
    let got = scorer.score(&env, &seq);
    assert!((got.gsa.value().unwrap() - expected).abs() < 1e-9);
    assert!((got.reward - ((expected - 5000.0) / 5000.0).exp()).abs() < 1e-12);
    assert_eq!(ANGSTROM2_PER_GMOL_TO_M2_PER_G, 6022.14076);
}

#[test]
fn memoized_and_plain_scores_agree() {
    let env = common::ffc();
    let plain = Scorer::new(RewardSpec {
        memoize: false,
        ..spec()
    })
    .unwrap();
    let memo = common::scorer();
    let seqs = env.enumerate_terminals(10_000).unwrap();
    let mut doubled = seqs.clone();
    doubled.extend(seqs.iter().rev().cloned());
    let a = plain.score_batch(&env, &doubled);
    let b = memo.score_batch(&env, &doubled);
    assert_eq!(a, b);
    for (s, x) in seqs.iter().zip(&a) {
        assert_eq!(memo.score(&env, s), *x);
    }
}

proptest! {
    #[test]
    fn reward_is_monotone_and_nonnegative(a in 0.0f64..20_000.0, b in 0.0f64..20_000.0) {
        let s = spec();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (s.reward(&GsaResult::Value(lo)), s.reward(&GsaResult::Value(hi)));
        prop_assert!(rl >= 0.0);
        prop_assert!(rl <= rh);
        prop_assert!(s.loss_reward(rl) >= s.floor);
    }

    #[test]
    fn reward_is_exponential_above_cutoff(g in 5000.0f64..15_000.0) {
        let r = spec().reward(&GsaResult::Value(g));
        prop_assert!((r.ln() - (g - 5000.0) / 5000.0).abs() < 1e-12);
    }
}

#[cfg(unix)]
mod external {
    use super::*;

    fn adapter(script: &str, timeout: f64) -> RewardSpec {
        RewardSpec {
            evaluator: EvaluatorConfig::External(AdapterConfig {
                command: vec!["sh".into(), "-c".into(), script.into()],
                timeout_secs: timeout,
                workers: 4,
                pass_probe_args: false,
                ..AdapterConfig::default()
            }),
            ..spec()
        }
    }

    #[test]
    fn faults_become_zero_reward() {
        let env = common::fx12();
        let seq = env.parse_record("fx12:N1,N4,E1").unwrap();
        for (script, timeout) in [
            ("exit 3", 5.0),
            ("sleep 5; echo 9000", 0.2),
            ("echo not-a-number", 5.0),
            ("echo -5", 5.0),
            ("true", 5.0),
        ] {
            let scorer = Scorer::new(adapter(script, timeout)).unwrap();
            let s = scorer.score(&env, &seq);
            assert!(matches!(s.gsa, GsaResult::Error(_)), "{script}: {:?}", s.gsa);
            assert_eq!(s.reward, 0.0, "{script}");
        }
        let ok = Scorer::new(adapter("cat >/dev/null; echo 10000", 5.0)).unwrap();
        assert!((ok.score(&env, &seq).reward - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn training_survives_a_failing_evaluator() {
        let env = common::fx12();
        // One record sleeps past the timeout, one prints garbage, one fails, the rest succeed.
        let script = r#"read r; case "$r" in
            *N1,N4,E1*) sleep 5 ;;
            *N2,N4,E1*) echo garbage ;;
            *N3,N4,E1*) exit 1 ;;
            *) echo 7000 ;;
        esac"#;
        let scorer = Scorer::new(adapter(script, 0.3)).unwrap();
        let config = TrainConfig {
            max_episodes: 64,
            stop_window: 16,
            stop_threshold: 0.0,
            smoothing_window: 8,
            checkpoint_every: 0,
            exploration_epsilon: 1.0,
            ..TrainConfig::default()
        };
        let model = FlowModel64::zeros(env.vocab_size(), Default::default()).unwrap();
        let mut trainer = Trainer::new(config, model, &env, &scorer).unwrap();
        let mut rows = Vec::new();
        let out = trainer.run(&mut rows).unwrap();
        assert_eq!(out.episodes, 64);
        assert!(rows.iter().all(|r| r.loss.is_finite()));
        let failed = ["fx12:N1,N4,E1", "fx12:N2,N4,E1", "fx12:N3,N4,E1"];
        for rec in failed {
            let s = scorer.score(&env, &env.parse_record(rec).unwrap());
            assert_eq!(s.reward, 0.0, "{rec}");
        }
        let good = scorer.score(&env, &env.parse_record("fx12:N1,N5,E2").unwrap());
        assert!((good.reward - (0.4f64).exp()).abs() < 1e-12);
        assert!(rows.iter().any(|r| r.reward == 0.0));
        assert!(rows.iter().any(|r| r.reward > 0.0));
    }
}
