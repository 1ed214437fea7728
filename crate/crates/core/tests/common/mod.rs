#![allow(dead_code)]

use std::path::PathBuf;

use reticula::env::AssemblyEnv;
use reticula::reward::{RewardSpec, Scorer};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load_env(stem: &str) -> AssemblyEnv {
    AssemblyEnv::load(
        &fixture(&format!("{stem}_vocab.txt")),
        &fixture(&format!("{stem}_topology.toml")),
    )
    .unwrap()
}

pub fn fx12() -> AssemblyEnv {
    load_env("fx12")
}

pub fn single() -> AssemblyEnv {
    load_env("single")
}

pub fn ffc() -> AssemblyEnv {
    load_env("ffc")
}

pub fn scorer() -> Scorer {
    Scorer::new(RewardSpec::default()).unwrap()
}

/// Exact terminal rewards by enumeration, in enumeration order.
pub fn exact_rewards(env: &AssemblyEnv, scorer: &Scorer) -> Vec<(Vec<usize>, f64)> {
    env.enumerate_terminals(1_000_000)
        .unwrap()
        .into_iter()
        .map(|s| {
            let r = scorer.score(env, &s).reward;
            (s, r)
        })
        .collect()
}
