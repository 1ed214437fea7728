mod common;

use proptest::prelude::*;
use reticula::env::{AssemblyEnv, AssemblyState, Block, BlockKind, Slot, Topology, Vocabulary};

/// Blocks `N1..Nn` then `E1..Em`.
fn vocab(nodes: usize, edges: usize) -> Vocabulary {
    let mk = |kind, p: char, i: usize| Block {
        id: format!("{p}{}", i + 1),
        kind,
        mass: 50.0 + 10.0 * i as f64,
        surface: 40.0 + 7.0 * i as f64,
    };
    let blocks = (0..nodes)
        .map(|i| mk(BlockKind::Node, 'N', i))
        .chain((0..edges).map(|i| mk(BlockKind::Edge, 'E', i)))
        .collect();
    Vocabulary::new(blocks).unwrap()
}

/// Non-empty sorted subset of `offset..offset + n` chosen by `bits`.
fn subset(bits: u8, n: usize, offset: usize) -> Vec<usize> {
    let picked: Vec<usize> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| i + offset).collect();
    if picked.is_empty() {
        vec![offset]
    } else {
        picked
    }
}

fn random_env() -> impl Strategy<Value = AssemblyEnv> {
    (
        1usize..5,
        1usize..4,
        prop::collection::vec(any::<u8>(), 1..4),
        prop::collection::vec(any::<u8>(), 0..3),
        any::<bool>(),
    )
        .prop_map(|(nn, ne, node_bits, edge_bits, edges_enabled)| {
            let v = vocab(nn, ne);
            let node_slots = node_bits
                .iter()
                .map(|&b| Slot {
                    kind: BlockKind::Node,
                    compatible: subset(b, nn, 0),
                })
                .collect();
            let edge_slots = edge_bits
                .iter()
                .map(|&b| Slot {
                    kind: BlockKind::Edge,
                    compatible: subset(b, ne, nn),
                })
                .collect();
            let t = Topology::new("rnd", node_slots, edge_slots, edges_enabled, &v).unwrap();
            AssemblyEnv::new(v, t)
        })
}

proptest! {
    #[test]
    fn enumeration_matches_count_and_validates(env in random_env()) {
        let all = env.enumerate_terminals(1 << 20).unwrap();
        prop_assert_eq!(all.len() as u128, env.terminal_count());
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), all.len());
        for s in &all {
            prop_assert!(env.validate_sequence(s).is_ok());
            let rec = env.record(s).unwrap().to_string();
            prop_assert_eq!(&env.parse_record(&rec).unwrap(), s);
        }
    }

    #[test]
    fn walks_through_the_mask_are_valid(env in random_env(), picks in prop::collection::vec(any::<prop::sample::Index>(), 8)) {
        let mut state = AssemblyState::empty();
        let mut k = 0;
        while !env.is_terminal(&state) {
            let mask = env.valid_actions(&state).unwrap();
            let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            prop_assert!(!valid.is_empty());
            for (i, &m) in mask.iter().enumerate() {
                prop_assert_eq!(m, env.step(&state, i).is_ok());
            }
            state = env.step(&state, *picks[k].get(&valid)).unwrap();
            k += 1;
        }
        prop_assert_eq!(state.len(), env.horizon());
        prop_assert!(env.validate_sequence(&state.filled).is_ok());
        prop_assert!(env.valid_actions(&state).is_err());
    }

    #[test]
    fn edges_off_keeps_only_node_slots(env in random_env()) {
        let off = env.with_edges(false);
        prop_assert_eq!(off.horizon(), env.topology().node_slots.len());
        prop_assert!(off.slots().iter().all(|s| s.kind == BlockKind::Node));
    }
}

#[test]
fn fixtures_have_expected_sizes() {
    assert_eq!(common::fx12().terminal_count(), 12);
    assert_eq!(common::single().terminal_count(), 1);
    let ffc = common::ffc();
    assert_eq!(ffc.terminal_count(), 8640);
    assert_eq!(ffc.horizon(), 6);
}

#[test]
fn edges_disabled_fixture_has_six_terminals() {
    let env = common::fx12().with_edges(false);
    assert_eq!(env.terminal_count(), 6);
    assert_ne!(env.content_hash(), common::fx12().content_hash());
}

#[test]
fn record_text_round_trips_on_fixture() {
    let env = common::fx12();
    let seq = env.parse_record("fx12:N2,N5,E1").unwrap();
    assert_eq!(env.record(&seq).unwrap().to_string(), "fx12:N2,N5,E1");
    assert!(env.parse_record("fx12:N4,N5,E1").is_err());
    assert!(env.parse_record("other:N2,N5,E1").is_err());
    assert!(env.parse_record("fx12:N2,N5").is_err());
}
