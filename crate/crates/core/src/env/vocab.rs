use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use super::EnvError;

pub const VOCABULARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Node,
    Edge,
}

impl BlockKind {
    pub fn prefix(self) -> char {
        match self {
            BlockKind::Node => 'N',
            BlockKind::Edge => 'E',
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Node => "node",
            BlockKind::Edge => "edge",
        })
    }
}

/// One building block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: String,
    pub kind: BlockKind,
    /// g/mol per formula unit.
    pub mass: f64,
    /// Å² per formula unit.
    pub surface: f64,
}

/// Ordered, immutable set of building blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    blocks: Vec<Block>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(blocks: Vec<Block>) -> Result<Self, EnvError> {
        let mut index = HashMap::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            if !b.id.starts_with(b.kind.prefix()) || b.id.len() < 2 {
                return Err(EnvError::Invalid(format!(
                    "block '{}' of kind {} must start with '{}'",
                    b.id,
                    b.kind,
                    b.kind.prefix()
                )));
            }
            if b.id.contains([',', ':']) || b.id.chars().any(char::is_whitespace) {
                return Err(EnvError::Invalid(format!("block id '{}' contains a reserved character", b.id)));
            }
            if !(b.mass.is_finite() && b.mass > 0.0) {
                return Err(EnvError::Invalid(format!("block '{}' needs mass > 0, got {}", b.id, b.mass)));
            }
            if !(b.surface.is_finite() && b.surface >= 0.0) {
                return Err(EnvError::Invalid(format!(
                    "block '{}' needs surface >= 0, got {}",
                    b.id, b.surface
                )));
            }
            if index.insert(b.id.clone(), i).is_some() {
                return Err(EnvError::Invalid(format!("duplicate block id '{}'", b.id)));
            }
        }
        if blocks.is_empty() {
            return Err(EnvError::Invalid("vocabulary is empty".into()));
        }
        Ok(Self { blocks, index })
    }

    /// Parses the line format:
    ///
    /// ```text
    /// # comment
    /// schema 1
    /// N577 node 412.3 388.0
    /// E5   edge  60.1  75.2
    /// ```
    ///
    /// Columns are id, kind, mass (g/mol), surface contribution (Å²).
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut schema = None;
        let mut blocks = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| EnvError::Parse { line: line_no, msg };
            if schema.is_none() {
                match cols.as_slice() {
                    ["schema", v] => {
                        let v: u32 = v.parse().map_err(|_| err(format!("bad schema version '{v}'")))?;
                        if v != VOCABULARY_SCHEMA {
                            return Err(err(format!("unsupported vocabulary schema {v}")));
                        }
                        schema = Some(v);
                        continue;
                    }
                    _ => return Err(err("first entry must be 'schema <version>'".into())),
                }
            }
            let [id, kind, mass, surface] = cols.as_slice() else {
                return Err(err(format!("expected 4 columns (id kind mass surface), found {}", cols.len())));
            };
            let kind = match *kind {
                "node" => BlockKind::Node,
                "edge" => BlockKind::Edge,
                k => return Err(err(format!("unknown kind '{k}'"))),
            };
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("bad {what} '{s}'")));
            let block = Block {
                id: id.to_string(),
                kind,
                mass: num(mass, "mass")?,
                surface: num(surface, "surface")?,
            };
            blocks.push(block);
            Self::new(blocks.clone()).map_err(|e| err(e.to_string()))?;
        }
        if schema.is_none() {
            return Err(EnvError::Parse {
                line: 0,
                msg: "missing 'schema' line".into(),
            });
        }
        Self::new(blocks)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> &Block {
        &self.blocks[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Canonical text used for hashing.
    pub fn canonical(&self) -> String {
        let mut out = format!("schema {VOCABULARY_SCHEMA}\n");
        for b in &self.blocks {
            out.push_str(&format!("{} {} {:?} {:?}\n", b.id, b.kind, b.mass, b.surface));
        }
        out
    }
}
