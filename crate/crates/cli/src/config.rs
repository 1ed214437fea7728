use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use reticula::env::AssemblyEnv;
use reticula::flowmodel::ModelConfig;
use reticula::reward::RewardSpec;
use reticula::trainer::TrainConfig;

pub const RUN_CONFIG_SCHEMA: u32 = 1;

/// Run configuration file (TOML). Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub vocabulary: PathBuf,
    pub topology: PathBuf,
    /// Overrides the topology file's `edges_enabled` when present.
    #[serde(default)]
    pub edges_enabled: Option<bool>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub reward: RewardSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.schema != RUN_CONFIG_SCHEMA {
            bail!(
                "{}: unsupported schema {} (expected {RUN_CONFIG_SCHEMA})",
                path.display(),
                cfg.schema
            );
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.vocabulary = resolve(&cfg.vocabulary);
        cfg.topology = resolve(&cfg.topology);
        cfg.out = cfg.out.as_deref().map(resolve);
        Ok(cfg)
    }

    /// Validates everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.reward.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            bail!("model.embed_dim and model.hidden_dim must be >= 1");
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<AssemblyEnv> {
        let env = AssemblyEnv::load(&self.vocabulary, &self.topology)?;
        Ok(match self.edges_enabled {
            Some(e) => env.with_edges(e),
            None => env,
        })
    }
}
