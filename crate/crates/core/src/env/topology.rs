use std::path::Path;

use serde::Deserialize;

use super::vocab::{BlockKind, Vocabulary};
use super::EnvError;

pub const TOPOLOGY_SCHEMA: u32 = 1;

/// One position in the assembly; `compatible` holds sorted vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub kind: BlockKind,
    pub compatible: Vec<usize>,
}

/// Slot layout of a framework topology: node slots first, then edge slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub name: String,
    pub node_slots: Vec<Slot>,
    pub edge_slots: Vec<Slot>,
    pub edges_enabled: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    schema: u32,
    name: String,
    #[serde(default = "default_true")]
    edges_enabled: bool,
    node_slots: Vec<Vec<String>>,
    #[serde(default)]
    edge_slots: Vec<Vec<String>>,
}

fn default_true() -> bool {
    true
}

impl Topology {
    /// Checks every slot is non-empty and kind-consistent so that every reachable
    /// state has at least one valid action.
    pub fn new(
        name: impl Into<String>,
        node_slots: Vec<Slot>,
        edge_slots: Vec<Slot>,
        edges_enabled: bool,
        vocab: &Vocabulary,
    ) -> Result<Self, EnvError> {
        let name = name.into();
        if name.is_empty() || name.contains([':', ',']) || name.chars().any(char::is_whitespace) {
            return Err(EnvError::Invalid(format!("bad topology name '{name}'")));
        }
        let groups = [(BlockKind::Node, &node_slots), (BlockKind::Edge, &edge_slots)];
        for (kind, slots) in groups {
            for (i, slot) in slots.iter().enumerate() {
                if slot.kind != kind {
                    return Err(EnvError::Invalid(format!("{kind} slot {i} is declared as {}", slot.kind)));
                }
                if slot.compatible.is_empty() {
                    return Err(EnvError::Invalid(format!("{kind} slot {i} has no compatible block")));
                }
                if slot.compatible.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EnvError::Invalid(format!(
                        "{kind} slot {i} compatible set must be sorted and duplicate-free"
                    )));
                }
                for &t in &slot.compatible {
                    let Some(b) = vocab.blocks().get(t) else {
                        return Err(EnvError::Invalid(format!("{kind} slot {i} references block index {t}")));
                    };
                    if b.kind != kind {
                        return Err(EnvError::Invalid(format!(
                            "{kind} slot {i} lists {} block '{}'",
                            b.kind, b.id
                        )));
                    }
                }
            }
        }
        let active = node_slots.len() + if edges_enabled { edge_slots.len() } else { 0 };
        if active == 0 {
            return Err(EnvError::Invalid(format!("topology '{name}' has no active slot")));
        }
        Ok(Self {
            name,
            node_slots,
            edge_slots,
            edges_enabled,
        })
    }

    /// Parses the TOML topology schema:
    ///
    /// ```toml
    /// schema = 1
    /// name = "FFC"
    /// edges_enabled = true
    /// node_slots = [["N577", "N12"], ["N238"]]
    /// edge_slots = [["E5", "E3"]]
    /// ```
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self, EnvError> {
        let file: TopologyFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            EnvError::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        if file.schema != TOPOLOGY_SCHEMA {
            return Err(EnvError::Invalid(format!("unsupported topology schema {}", file.schema)));
        }
        let resolve = |kind: BlockKind, slots: Vec<Vec<String>>| -> Result<Vec<Slot>, EnvError> {
            slots
                .into_iter()
                .enumerate()
                .map(|(i, ids)| {
                    let mut compatible = ids
                        .iter()
                        .map(|id| {
                            vocab
                                .index_of(id)
                                .ok_or_else(|| EnvError::UnknownToken(format!("{id} ({kind} slot {i})")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    compatible.sort_unstable();
                    compatible.dedup();
                    Ok(Slot { kind, compatible })
                })
                .collect()
        };
        let nodes = resolve(BlockKind::Node, file.node_slots)?;
        let edges = resolve(BlockKind::Edge, file.edge_slots)?;
        Self::new(file.name, nodes, edges, file.edges_enabled, vocab)
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, vocab).map_err(|e| e.in_file(path))
    }

    /// Same slots with edges switched on or off.
    pub fn with_edges(&self, enabled: bool) -> Self {
        Self {
            edges_enabled: enabled,
            ..self.clone()
        }
    }

    /// Slots that take part in the action space, in placement order.
    pub fn active_slots(&self) -> Vec<Slot> {
        let mut out = self.node_slots.clone();
        if self.edges_enabled {
            out.extend(self.edge_slots.iter().cloned());
        }
        out
    }

    pub fn canonical(&self, vocab: &Vocabulary) -> String {
        let ids = |s: &Slot| {
            s.compatible
                .iter()
                .map(|&i| vocab.block(i).id.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = format!("schema {TOPOLOGY_SCHEMA}\nname {}\nedges {}\n", self.name, self.edges_enabled);
        for s in &self.node_slots {
            out.push_str(&format!("node {}\n", ids(s)));
        }
        for s in &self.edge_slots {
            out.push_str(&format!("edge {}\n", ids(s)));
        }
        out
    }
}
