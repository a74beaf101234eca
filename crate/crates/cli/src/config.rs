//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use ngcc_core::eval::EvalConfig;
use ngcc_core::scene::{max_tdoa, DatasetGenerator, DatasetSpec};
use ngcc_core::{Error, ModelConfig, Result, TrainConfig};
use serde::{Deserialize, Serialize};

/// One experiment: data, network, training and evaluation settings.
///
/// Relative paths are taken relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Training data rendered by `simulate`.
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    /// Held-out data rendered by `simulate` under `seed + 1`.
    #[serde(default)]
    pub test_dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error("config", format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| config_error("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every section and that the data fits the network. Building the
    /// generators also reads any waveform snippet files.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.evaluation.tolerance < 0 {
            return Err(config_error("evaluation.tolerance", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.evaluation.threshold) {
            return Err(config_error("evaluation.threshold", "must lie in [0, 1]"));
        }
        for (name, spec) in [("dataset", &self.dataset), ("test_dataset", &self.test_dataset)] {
            if let Some(spec) = spec {
                DatasetGenerator::new(spec.clone())?;
                self.check_data(name, spec)?;
            }
        }
        Ok(())
    }

    fn check_data(&self, name: &str, spec: &DatasetSpec) -> Result<()> {
        let geometry = spec.geometry.build()?;
        let m = &self.model;
        if spec.window != m.window {
            return Err(config_error(&format!("{name}.window"), format!("differs from model.window {}", m.window)));
        }
        if spec.sample_rate != m.sample_rate {
            return Err(config_error(
                &format!("{name}.sample_rate"),
                format!("differs from model.sample_rate {}", m.sample_rate),
            ));
        }
        if geometry.len() != m.microphones {
            return Err(config_error(
                &format!("{name}.geometry"),
                format!("has {} microphones, model.microphones is {}", geometry.len(), m.microphones),
            ));
        }
        let tau = max_tdoa(&geometry, spec.sample_rate, spec.speed_of_sound);
        if tau != m.tau_max {
            return Err(config_error(
                "model.tau_max",
                format!("the {name} array gives a maximum delay of {tau} samples"),
            ));
        }
        Ok(())
    }

    /// Content hash; the output directory is left out so identical
    /// experiments written to different places hash the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        ngcc_core::hash::json_hash(&c)
    }

    pub fn test_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join("dataset")
    }

    pub fn test_dataset_dir(&self) -> PathBuf {
        self.output_dir.join("test_dataset")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("checkpoint.bin")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }

    /// Writes the config with every default filled in as
    /// `<output_dir>/<command>.config.json`.
    pub fn echo(&self, command: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(format!("{command}.config.json"));
        ngcc_core::scene::store::write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(r#"{"seed": 3, "output_dir": "out"}"#).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.training.epochs, 1);
        assert_eq!(c.test_seed(), 4);
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(parse(r#"{"output_dir": "out"}"#).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse(r#"{"seed": 1, "output_dir": "o", "sead": 2}"#).is_err());
    }

    #[test]
    fn mismatched_window_names_the_field() {
        let err = parse(r#"{"seed": 1, "output_dir": "o", "dataset": {"frames": 2, "polyphony": [0, 1], "window": 512}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("dataset.window"), "{err}");
    }

    #[test]
    fn tau_max_must_match_the_array() {
        let err = parse(
            r#"{"seed": 1, "output_dir": "o", "model": {"tau_max": 5},
                "dataset": {"frames": 2, "polyphony": [0, 1]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("model.tau_max"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse(r#"{"seed": 1, "output_dir": "o"}"#).unwrap();
        let b = parse(r#"{"seed": 2, "output_dir": "o"}"#).unwrap();
        assert_ne!(a.hash(), b.hash());
        let c = parse(r#"{"seed": 1, "output_dir": "elsewhere"}"#).unwrap();
        assert_eq!(a.hash(), c.hash());
    }
}
