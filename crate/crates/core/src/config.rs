//! Run configuration: one TOML document with a section per module. Unknown
//! keys are rejected; missing keys take the library defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::TrainConfig;
use crate::error::{Result, ScdaError};
use crate::format::write_bytes;
use crate::harness::{FewShotConfig, Method};
use crate::stain::MacenkoParams;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { methods: vec![Method::Raw, Method::Scda], seeds: vec![0, 1, 2, 3, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; copied into every seeded section by [`RunConfig::apply_seed`].
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub fewshot: FewShotConfig,
    pub macenko: MacenkoParams,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ScdaError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScdaError::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            ScdaError::InvalidConfig(m) => ScdaError::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScdaError::InvalidConfig(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_toml()?.as_bytes())
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.macenko.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(ScdaError::DegenerateFraction(self.split.train_fraction));
        }
        Ok(())
    }
}
