//! The run configuration file: one TOML document holding every setting.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::GeneratorConfig;
use crate::error::{Error, Result};
use crate::evaluation::ProtocolConfig;
use crate::networks::{ClassifierConfig, DecoderConfig};
use crate::training::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    /// Dataset directory: written by the generator, read by every other stage.
    pub data_dir: PathBuf,
    /// Root under which run directories are created.
    pub output_dir: PathBuf,
    pub generator: GeneratorConfig,
    /// Also holds the encoder and augmentation settings.
    pub experiment: ExperimentConfig,
    pub protocol: ProtocolConfig,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            generator: GeneratorConfig::default(),
            experiment: ExperimentConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        Ok(cfg)
    }

    /// Reads a config file. Relative `data_dir` and `output_dir` stay
    /// relative to the working directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.protocol.validate(&self.experiment)?;
        self.decoder().check_pairs_with(&self.experiment.encoder)?;
        if self.generator.frame_size < 4 {
            return Err(Error::Config("generator: frame_size must be at least 4".into()));
        }
        Ok(())
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig::mirror(&self.experiment.encoder)
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            input_dim: self.experiment.representation_dim(),
            hidden_dims: self.experiment.classifier.hidden_dims,
            num_classes: self.experiment.task.num_classes(),
        }
    }

    /// Fully resolved TOML, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}
