// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration and the inputs file format.
//!
//! ```json
//! { "image_path": "image.bundle", "provider": "inprocess",
//!   "inputs_path": "inputs.jsonl",
//!   "policy_expectation": { "max_inferences": 5, "valid_until": null },
//!   "cost_profile": "calibrated.json", "seed": 7, "update_after": 20 }
//! ```
//!
//! Relative paths resolve against the directory of the config file. The
//! inputs file holds one JSON array of integers per line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pipeline::{Endpoint, PipelineConfig};
use crate::cost::CostProfile;
use crate::runtime::Policy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub image_path: PathBuf,
    #[serde(default)]
    pub provider: Endpoint,
    pub inputs_path: PathBuf,
    #[serde(default)]
    pub policy_expectation: Policy,
    #[serde(default)]
    pub cost_profile: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub update_after: Option<usize>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parse an inputs file: one JSON integer array per non-empty line.
pub fn parse_inputs(path: &Path, text: &str) -> Result<Vec<Vec<i32>>, ConfigError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ConfigError::Input {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_profile(path: &Path) -> Result<CostProfile, ConfigError> {
    serde_json::from_str(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let cfg: Self = serde_json::from_str(&read(path)?).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    /// Resolve files relative to `base` and build a pipeline configuration.
    pub fn to_pipeline(&self, base: &Path) -> Result<PipelineConfig, ConfigError> {
        let image_path = base.join(&self.image_path);
        let image = std::fs::read(&image_path).map_err(|e| ConfigError::Io {
            path: image_path,
            message: e.to_string(),
        })?;
        let inputs_path = base.join(&self.inputs_path);
        let inputs = parse_inputs(&inputs_path, &read(&inputs_path)?)?;
        let mut cfg = PipelineConfig::new(image, inputs, self.policy_expectation);
        cfg.endpoint = self.provider;
        cfg.seed = self.seed;
        cfg.update_after = self.update_after;
        if let Some(p) = &self.cost_profile {
            cfg.profile = load_profile(&base.join(p))?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_parse_line_by_line() {
        let p = Path::new("x.jsonl");
        assert_eq!(
            parse_inputs(p, "[1,2]\n\n[-3,4]\n").unwrap(),
            vec![vec![1, 2], vec![-3, 4]]
        );
        let err = parse_inputs(p, "[1]\n[oops]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Input { line: 2, .. }));
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"image_path":"a","inputs_path":"b"}"#).unwrap();
        assert_eq!(c.provider, Endpoint::InProcess);
        assert_eq!(c.policy_expectation, Policy::UNLIMITED);
        let c: RunConfig = serde_json::from_str(r#"{"image_path":"a","inputs_path":"b","provider":"tcp"}"#).unwrap();
        assert_eq!(c.provider, Endpoint::Tcp);
        assert!(serde_json::from_str::<RunConfig>(r#"{"image_path":"a","inputs_path":"b","x":1}"#).is_err());
    }
}
