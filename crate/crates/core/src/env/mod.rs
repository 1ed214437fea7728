//! Sequence-building environment for topology-constrained assemblies.
//!
//! An assembly is a sequence of building-block tokens, one per active slot of
//! a [`Topology`]: all node slots first, then (when edges are enabled) all edge
//! slots. Construction is append-only, so every partial sequence has exactly
//! one parent and the state graph is a tree.

mod topology;
mod vocab;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use topology::{Slot, Topology, TOPOLOGY_SCHEMA};
pub use vocab::{Block, BlockKind, Vocabulary, VOCABULARY_SCHEMA};

/// Default refusal bound for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_BOUND: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{file}: {inner}")]
    InFile { file: String, inner: Box<EnvError> },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("unknown block identifier {0}")]
    UnknownToken(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("state is terminal; no further actions")]
    Terminal,
    #[error("sequence is not terminal ({filled} of {slots} slots filled)")]
    NotTerminal { filled: usize, slots: usize },
    #[error("invalid action at position {position}: {reason}")]
    InvalidAction { position: usize, reason: String },
    #[error("enumeration of {count} terminals exceeds the bound {bound}")]
    BoundExceeded { count: u128, bound: u128 },
    #[error("malformed assembly record '{0}'")]
    BadRecord(String),
}

impl EnvError {
    pub(crate) fn in_file(self, path: &Path) -> Self {
        EnvError::InFile {
            file: path.display().to_string(),
            inner: Box::new(self),
        }
    }
}

/// Partial token sequence; a prefix of the active slot list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssemblyState {
    pub filled: Vec<usize>,
}

impl AssemblyState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.filled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filled.is_empty()
    }
}

/// Full record of one sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub actions: Vec<usize>,
    /// Log-probabilities of each action under the pure policy (no exploration mix).
    pub forward_log_probs: Vec<T>,
    /// Unfloored reward of the terminal sequence.
    pub terminal_reward: f64,
}

impl<T> Trajectory<T> {
    /// Visited states from the empty sequence to the terminal one.
    pub fn states(&self) -> Vec<AssemblyState> {
        (0..=self.actions.len())
            .map(|k| AssemblyState {
                filled: self.actions[..k].to_vec(),
            })
            .collect()
    }
}

/// Exportable text form of a terminal sequence: `ffc:N577,N238,E5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssemblyRecord {
    pub topology: String,
    pub tokens: Vec<String>,
}

impl fmt::Display for AssemblyRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.topology, self.tokens.join(","))
    }
}

impl std::str::FromStr for AssemblyRecord {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::BadRecord(s.to_string());
        let (topo, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        if topo.is_empty() || rest.is_empty() {
            return Err(bad());
        }
        let tokens: Vec<String> = rest.split(',').map(str::to_string).collect();
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(bad());
        }
        Ok(Self {
            topology: topo.to_string(),
            tokens,
        })
    }
}

/// Immutable vocabulary + topology pair; cheap to clone and share across workers.
#[derive(Debug, Clone)]
pub struct AssemblyEnv {
    vocab: Arc<Vocabulary>,
    topology: Arc<Topology>,
    slots: Arc<Vec<Slot>>,
}

impl AssemblyEnv {
    pub fn new(vocab: Vocabulary, topology: Topology) -> Self {
        let slots = topology.active_slots();
        Self {
            vocab: Arc::new(vocab),
            topology: Arc::new(topology),
            slots: Arc::new(slots),
        }
    }

    pub fn load(vocab_path: &Path, topology_path: &Path) -> Result<Self, EnvError> {
        let vocab = Vocabulary::load(vocab_path)?;
        let topology = Topology::load(topology_path, &vocab)?;
        Ok(Self::new(vocab, topology))
    }

    /// Same vocabulary and slots with edges switched on or off.
    pub fn with_edges(&self, enabled: bool) -> Self {
        Self::new((*self.vocab).clone(), self.topology.with_edges(enabled))
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Number of actions in every complete trajectory.
    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn is_terminal(&self, state: &AssemblyState) -> bool {
        state.len() >= self.horizon()
    }

    /// Product of compatible-set sizes over active slots (saturating).
    pub fn terminal_count(&self) -> u128 {
        self.slots
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.compatible.len() as u128))
    }

    /// SHA-256 over the canonical vocabulary and topology text.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocab.canonical().as_bytes());
        h.update(self.topology.canonical(&self.vocab).as_bytes());
        format!("{:x}", h.finalize())
    }

    /// Compatible indices of the next unfilled slot.
    pub fn valid_indices(&self, state: &AssemblyState) -> Result<&[usize], EnvError> {
        self.slots
            .get(state.len())
            .map(|s| s.compatible.as_slice())
            .ok_or(EnvError::Terminal)
    }

    /// Boolean mask over the vocabulary: true exactly for the next slot's compatible set.
    pub fn valid_actions(&self, state: &AssemblyState) -> Result<Vec<bool>, EnvError> {
        let mut mask = vec![false; self.vocab.len()];
        for &i in self.valid_indices(state)? {
            mask[i] = true;
        }
        Ok(mask)
    }

    pub fn step(&self, state: &AssemblyState, action: usize) -> Result<AssemblyState, EnvError> {
        let position = state.len();
        let slot = self.slots.get(position).ok_or(EnvError::Terminal)?;
        if slot.compatible.binary_search(&action).is_err() {
            let reason = match self.vocab.blocks().get(action) {
                None => format!("token index {action} is outside the vocabulary"),
                Some(b) if b.kind != slot.kind => {
                    format!("{} block '{}' proposed for a {} slot", b.kind, b.id, slot.kind)
                }
                Some(b) => format!("block '{}' is not compatible with this slot", b.id),
            };
            return Err(EnvError::InvalidAction { position, reason });
        }
        let mut filled = state.filled.clone();
        filled.push(action);
        Ok(AssemblyState { filled })
    }

    /// All terminal sequences, slot 0 varying slowest.
    pub fn enumerate_terminals(&self, bound: u128) -> Result<Vec<Vec<usize>>, EnvError> {
        let count = self.terminal_count();
        if count > bound {
            return Err(EnvError::BoundExceeded { count, bound });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut cursor = vec![0usize; self.slots.len()];
        loop {
            out.push(
                cursor
                    .iter()
                    .zip(self.slots.iter())
                    .map(|(&c, s)| s.compatible[c])
                    .collect(),
            );
            let mut k = self.slots.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                cursor[k] += 1;
                if cursor[k] < self.slots[k].compatible.len() {
                    break;
                }
                cursor[k] = 0;
            }
        }
    }

    /// Independent post-hoc check of the three placement constraints: correct
    /// slot count, node-then-edge order, and per-slot compatibility.
    pub fn validate_sequence(&self, seq: &[usize]) -> Result<(), EnvError> {
        let topo = &self.topology;
        let n_nodes = topo.node_slots.len();
        let n_edges = if topo.edges_enabled { topo.edge_slots.len() } else { 0 };
        if seq.len() != n_nodes + n_edges {
            return Err(EnvError::NotTerminal {
                filled: seq.len(),
                slots: n_nodes + n_edges,
            });
        }
        for (position, &tok) in seq.iter().enumerate() {
            let block = self.vocab.blocks().get(tok).ok_or_else(|| EnvError::InvalidAction {
                position,
                reason: format!("token index {tok} is outside the vocabulary"),
            })?;
            let (expected_kind, slot) = if position < n_nodes {
                (BlockKind::Node, &topo.node_slots[position])
            } else {
                (BlockKind::Edge, &topo.edge_slots[position - n_nodes])
            };
            if block.kind != expected_kind {
                return Err(EnvError::InvalidAction {
                    position,
                    reason: format!("{} block '{}' out of order", block.kind, block.id),
                });
            }
            if !slot.compatible.contains(&tok) {
                return Err(EnvError::InvalidAction {
                    position,
                    reason: format!("block '{}' is not compatible with this slot", block.id),
                });
            }
        }
        Ok(())
    }

    pub fn record(&self, seq: &[usize]) -> Result<AssemblyRecord, EnvError> {
        if seq.len() != self.horizon() {
            return Err(EnvError::NotTerminal {
                filled: seq.len(),
                slots: self.horizon(),
            });
        }
        let tokens = seq
            .iter()
            .map(|&i| {
                self.vocab
                    .blocks()
                    .get(i)
                    .map(|b| b.id.clone())
                    .ok_or_else(|| EnvError::UnknownToken(format!("index {i}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(AssemblyRecord {
            topology: self.topology.name.to_lowercase(),
            tokens,
        })
    }

    /// Resolves a record back to a validated terminal sequence of this environment.
    pub fn resolve(&self, record: &AssemblyRecord) -> Result<Vec<usize>, EnvError> {
        if record.topology != self.topology.name.to_lowercase() {
            return Err(EnvError::BadRecord(format!(
                "{record} belongs to topology '{}', not '{}'",
                record.topology,
                self.topology.name.to_lowercase()
            )));
        }
        let seq = record
            .tokens
            .iter()
            .map(|t| self.vocab.index_of(t).ok_or_else(|| EnvError::UnknownToken(t.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.validate_sequence(&seq)?;
        Ok(seq)
    }

    pub fn parse_record(&self, text: &str) -> Result<Vec<usize>, EnvError> {
        self.resolve(&text.parse()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ffc_like_env() -> AssemblyEnv {
        let vocab = Vocabulary::parse(
            "schema 1\nN577 node 400 380\nN238 node 300 250\nN194 node 350 300\nN12 node 200 150\n\
             E5 edge 60 50\nE3 edge 40 30\nE74 edge 80 90\n",
        )
        .unwrap();
        let topo = Topology::parse(
            "schema = 1\nname = \"FFC\"\nnode_slots = [[\"N577\", \"N12\"], [\"N238\"], [\"N194\"]]\n\
             edge_slots = [[\"E5\"], [\"E3\", \"E5\"], [\"E74\"]]\n",
            &vocab,
        )
        .unwrap();
        AssemblyEnv::new(vocab, topo)
    }

    fn fixture_3x2x2() -> AssemblyEnv {
        let vocab = Vocabulary::parse(
            "schema 1\nN1 node 1 1\nN2 node 1 1\nN3 node 1 1\nN4 node 1 1\nN5 node 1 1\nE1 edge 1 1\nE2 edge 1 1\n",
        )
        .unwrap();
        let topo = Topology::parse(
            "schema = 1\nname = \"fx\"\nnode_slots = [[\"N1\",\"N2\",\"N3\"], [\"N4\",\"N5\"]]\n\
             edge_slots = [[\"E1\",\"E2\"]]\n",
            &vocab,
        )
        .unwrap();
        AssemblyEnv::new(vocab, topo)
    }

    fn seq(env: &AssemblyEnv, ids: &[&str]) -> Vec<usize> {
        ids.iter().map(|i| env.vocab().index_of(i).unwrap()).collect()
    }

    #[test]
    fn mask_follows_next_slot() {
        let env = fixture_3x2x2();
        let m = env.valid_actions(&AssemblyState::empty()).unwrap();
        assert_eq!(m, vec![true, true, true, false, false, false, false]);
        let s = AssemblyState {
            filled: seq(&env, &["N1", "N4"]),
        };
        assert_eq!(env.valid_actions(&s).unwrap(), vec![false, false, false, false, false, true, true]);
        let done = AssemblyState {
            filled: seq(&env, &["N1", "N4", "E1"]),
        };
        assert_eq!(env.valid_actions(&done), Err(EnvError::Terminal));
    }

    #[test]
    fn single_compatible_edge_gives_single_entry() {
        let env = ffc_like_env();
        let s = AssemblyState {
            filled: seq(&env, &["N577", "N238", "N194"]),
        };
        let m = env.valid_actions(&s).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 1);
        assert!(m[env.vocab().index_of("E5").unwrap()]);
    }

    #[test]
    fn steps_build_the_example_sequence() {
        let env = ffc_like_env();
        let mut s = AssemblyState::empty();
        s = env.step(&s, env.vocab().index_of("N577").unwrap()).unwrap();
        assert_eq!(s.filled, seq(&env, &["N577"]));
        for id in ["N238", "N194", "E5", "E3"] {
            s = env.step(&s, env.vocab().index_of(id).unwrap()).unwrap();
        }
        assert!(!env.is_terminal(&s));
        s = env.step(&s, env.vocab().index_of("E74").unwrap()).unwrap();
        assert!(env.is_terminal(&s));
        let rec = env.record(&s.filled).unwrap();
        assert_eq!(rec.to_string(), "ffc:N577,N238,N194,E5,E3,E74");
        assert_eq!(env.parse_record(&rec.to_string()).unwrap(), s.filled);
    }

    #[test]
    fn order_violation_is_rejected() {
        let env = ffc_like_env();
        let s = AssemblyState {
            filled: seq(&env, &["N577"]),
        };
        let err = env.step(&s, env.vocab().index_of("E5").unwrap()).unwrap_err();
        assert!(matches!(err, EnvError::InvalidAction { position: 1, .. }), "{err}");
        assert!(env.step(&s, 99).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let env = fixture_3x2x2();
        let all = env.enumerate_terminals(DEFAULT_ENUMERATION_BOUND).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(env.terminal_count(), 12);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, all);
        for s in &all {
            env.validate_sequence(s).unwrap();
        }
        assert_eq!(
            env.enumerate_terminals(11),
            Err(EnvError::BoundExceeded { count: 12, bound: 11 })
        );
        let no_edges = env.with_edges(false);
        assert_eq!(no_edges.enumerate_terminals(100).unwrap().len(), 6);
        assert!(no_edges.enumerate_terminals(100).unwrap().iter().all(|s| s.len() == 2));
    }

    #[test]
    fn one_slot_four_tokens() {
        let vocab = Vocabulary::parse("schema 1\nN1 node 1 1\nN2 node 1 1\nN3 node 1 1\nN4 node 1 1\n").unwrap();
        let topo =
            Topology::parse("schema = 1\nname = \"one\"\nnode_slots = [[\"N1\",\"N2\",\"N3\",\"N4\"]]\n", &vocab)
                .unwrap();
        let env = AssemblyEnv::new(vocab, topo);
        assert_eq!(env.enumerate_terminals(10).unwrap().len(), 4);
    }

    #[test]
    fn records_reject_unknown_and_partial() {
        let env = ffc_like_env();
        assert!(matches!(
            env.parse_record("ffc:N577,N238,N194,E5,E3,E999"),
            Err(EnvError::UnknownToken(_))
        ));
        assert!(env.parse_record("ffc:N577,N238").is_err());
        assert!(env.parse_record("nonsense").is_err());
        assert!(env.parse_record("tff:N577,N238,N194,E5,E3,E74").is_err());
        assert!(env.record(&seq(&env, &["N577"])).is_err());
    }

    #[test]
    fn validator_catches_what_the_mask_prevents() {
        let env = fixture_3x2x2();
        assert!(env.validate_sequence(&seq(&env, &["N1", "E1", "N4"])).is_err());
        assert!(env.validate_sequence(&seq(&env, &["N4", "N1", "E1"])).is_err());
        assert!(env.validate_sequence(&seq(&env, &["N1", "N4"])).is_err());
        assert!(env.validate_sequence(&seq(&env, &["N1", "N4", "E2"])).is_ok());
    }

    #[test]
    fn hash_depends_on_edge_mode() {
        let env = fixture_3x2x2();
        assert_eq!(env.content_hash(), fixture_3x2x2().content_hash());
        assert_ne!(env.content_hash(), env.with_edges(false).content_hash());
    }
}
