use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use pathshift::data::OutcomeRole;
use pathshift::decomposition::DecompositionConfig;
use pathshift::data::OutcomeScale;
use pathshift::simulation::{Method, Target};

/// A level written as a number or a string in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Int(v) => write!(f, "{v}"),
            Level::Float(v) => write!(f, "{v}"),
            Level::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolesConfig {
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Column holding the group variable.
    pub group: String,
    pub mediators: Vec<Vec<String>>,
    pub outcome: OutcomeRole,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: Option<String>,
    pub targets: Option<Vec<Target>>,
    pub n: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub truth_draws: Option<usize>,
    pub truth_seed: Option<u64>,
    pub learner: Option<String>,
    pub conditions: Option<String>,
    pub scale: Option<OutcomeScale>,
    pub alpha: Option<f64>,
    /// Replaces the learner/condition product entirely.
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub fixtures: Option<Vec<PathBuf>>,
    pub mc_draws: Option<usize>,
    pub tolerance: Option<f64>,
    pub z: Option<f64>,
}

/// Contents of a `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub na_codes: Vec<f64>,
    /// Categorical columns expanded to indicators before role assignment.
    #[serde(default)]
    pub one_hot: Vec<String>,
    /// `[reference, comparison]` level pairs, one decomposition each.
    #[serde(default)]
    pub pairs: Vec<(Level, Level)>,
    pub roles: Option<RolesConfig>,
    pub decomposition: Option<DecompositionConfig>,
    pub simulate: Option<SimulateConfig>,
    pub oracle: Option<OracleConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.threads == Some(0) {
            bail!("`threads` must be at least 1");
        }
        Ok(cfg)
    }

    /// Resolves a path from the config file against the file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
