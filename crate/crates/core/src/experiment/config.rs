use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::data::{NormalizationScope, SyntheticSpec};
use crate::networks::Architecture;
use crate::training::{Hyperparams, Method};

/// Raw sensor CSV plus the preprocessing preset applied to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// `sbhar`, `opportunity` or `realworld`.
    pub preset: String,
    pub n_classes: usize,
    #[serde(default)]
    pub normalization: NormalizationScope,
    /// Classes kept only in the target adaptation split.
    #[serde(default)]
    pub transition_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
    /// Windowed dataset written by `preprocess`.
    Cache {
        dir: PathBuf,
        #[serde(default)]
        transition_classes: Vec<usize>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Each listed user is the new user once; the other listed users are
    /// never used as source users.
    #[default]
    FixedNewUserSet,
    /// Every user (or every listed user) is the new user once; all others
    /// are source users.
    LeaveOneUserOut,
}

/// Post-training analysis switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub a_distance: bool,
    /// Convergence-trace sampling interval in steps; 0 disables the trace.
    pub trace_interval: usize,
    pub surface_resolution: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            a_distance: true,
            trace_interval: 10,
            surface_resolution: 50,
        }
    }
}

/// One experiment: data, protocol, method and all training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub protocol: Protocol,
    pub new_users: Vec<String>,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub hyperparams: Hyperparams,
    /// Input channels, window length and class count are taken from the data.
    pub architecture: Architecture,
    pub analysis: AnalysisSettings,
    pub output_dir: PathBuf,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            protocol: Protocol::default(),
            new_users: vec!["t0".to_string()],
            seeds: vec![1, 2, 3, 4, 5],
            method: Method::SwlAdapt,
            hyperparams: Hyperparams::default(),
            architecture: Architecture::default(),
            analysis: AnalysisSettings::default(),
            output_dir: PathBuf::from("runs"),
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.protocol == Protocol::FixedNewUserSet && self.new_users.is_empty() {
            return bad("fixed-new-user-set protocol needs at least one new user".into());
        }
        let mut users = self.new_users.clone();
        users.sort();
        users.dedup();
        if users.len() != self.new_users.len() {
            return bad("new-user list has duplicates".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.analysis.surface_resolution == 0 {
            return bad("surface_resolution must be positive".into());
        }
        self.hyperparams
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
