//! Run configuration: one JSON file that bundles corpus generation and
//! training settings, with a master seed propagated to both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use groundhog::data::corpus::GenConfig;
use groundhog::model::config::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; when set it overrides `gen.seed` and `train.seed`.
    pub seed: Option<u64>,
    /// Default corpus path for commands that read one.
    pub corpus: Option<PathBuf>,
    /// Default output path.
    pub out: Option<PathBuf>,
    pub gen: GenConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Data(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Data(format!("invalid config {}: {e}", p.display()))
                })?
            }
            None => Self::default(),
        };
        if let Some(seed) = cfg.seed {
            cfg.gen.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(corpus) = &cfg.corpus {
            if !corpus.exists() {
                return Err(CliError::Data(format!(
                    "configured corpus {} does not exist",
                    corpus.display()
                )));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn master_seed_reaches_both_components() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 77, "gen": {"n_samples": 5}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.gen.seed, 77);
        assert_eq!(cfg.train.seed, 77);
        assert_eq!(cfg.gen.n_samples, 5);
    }

    #[test]
    fn missing_configured_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"corpus": "/nonexistent/c.jsonl"}"#).unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }
}
