//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 42
//! repeat = 1
//! out = "runs/demo"
//! normalize = "global_max"
//!
//! [scene]          # or [input] with `cube` and optional `truth`
//! height = 32
//!
//! [autoencoder]
//! epochs = 60
//!
//! [graph]
//! a = 3
//! b = 5
//!
//! [gcn]
//! epochs = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::error::{Error, Result};
use crate::gcn::GcnConfig;
use crate::graph::GraphConfig;
use crate::hsi::{CubeFormat, NormalizeMode, SceneSpec};

/// A cube on disk, optionally with a ground-truth directory holding
/// `endmembers.csv` and `abundances.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub cube: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<CubeFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Endmember count when there is no ground truth to take it from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmembers: Option<usize>,
}

impl InputConfig {
    pub fn format(&self) -> CubeFormat {
        self.format.unwrap_or_else(|| CubeFormat::from_path(&self.cube))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub repeat: usize,
    pub out: PathBuf,
    pub normalize: NormalizeMode,
    /// Material names for report rows, in ground-truth order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    pub autoencoder: AutoencoderConfig,
    pub graph: GraphConfig,
    pub gcn: GcnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            repeat: 1,
            out: PathBuf::from("aegem-out"),
            normalize: NormalizeMode::GlobalMax,
            materials: Vec::new(),
            input: None,
            scene: Some(SceneSpec::default()),
            autoencoder: AutoencoderConfig::default(),
            graph: GraphConfig::default(),
            gcn: GcnConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML. A file with neither `[input]` nor `[scene]` runs on the
    /// default synthetic scene.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            detail: e.message().to_string(),
        })?;
        let declares = |key: &str| text.lines().any(|l| l.trim() == format!("[{key}]"));
        if config.input.is_some() && !declares("scene") {
            config.scene = None;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.scene) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("give either [input] or [scene], not both".into()));
            }
            (None, None) => return Err(Error::InvalidArgument("one of [input] or [scene] is required".into())),
            (None, Some(scene)) => scene.validate()?,
            (Some(_), None) => {}
        }
        if self.repeat == 0 {
            return Err(Error::InvalidArgument("repeat must be ≥ 1".into()));
        }
        self.autoencoder.validate()?;
        self.gcn.validate()
    }

    /// Seed of run `k` of a repeated invocation.
    pub fn run_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }
}
