//! Two-stage training: per-view VAE pretraining (independent or with the
//! mixture-of-posteriors prior) and classifier training on clip latents with
//! encoder fine-tuning. A supervised baseline trains the same encoder and
//! classifier end-to-end from random initialization.

mod classifier;
mod vae;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{Task, View};
use crate::error::{Error, Result};
use crate::networks::EncoderConfig;
use crate::preprocess::AugmentParams;

pub use classifier::{
    clip_latent, predict_probabilities, study_representation, supervised_baseline_train, train_classifier,
    ClassifierModel, ClassifierOutcome,
};
pub use vae::{
    evaluate_vaes, pretrain_vaes, train_vaes, vae_step, PretrainOutcome, PretrainedVaes, StepTerms, ViewVae,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Independent,
    Mmvm,
    SupervisedBaseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Independent => "independent",
            Mode::Mmvm => "mmvm",
            Mode::SupervisedBaseline => "supervised-baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" => Ok(Mode::Independent),
            "mmvm" => Ok(Mode::Mmvm),
            "supervised-baseline" | "supervised" => Ok(Mode::SupervisedBaseline),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected independent, mmvm or supervised-baseline)"
            ))),
        }
    }
}

/// How per-view clip latents are combined in the multi-view regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Concat,
    SharedMean,
}

/// Estimator of the KL term in independent mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlEstimator {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Frames sampled from each study per epoch (paired across views by index).
    pub frames_per_study: usize,
    pub kl_estimator: KlEstimator,
    /// Views pretrained together; defaults to all five.
    pub views: Vec<View>,
    /// Early-stopping patience in epochs, used when validation data is given.
    pub patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-4,
            frames_per_study: 2,
            kl_estimator: KlEstimator::Analytic,
            views: View::ALL.to_vec(),
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    /// Must be a multiple of the task's class count.
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_dims: [usize; 2],
    /// Frames per clip encoded at each training step.
    pub frames_per_clip: usize,
    pub augment: bool,
    /// Keep encoder parameters fixed (ablation).
    pub freeze_encoders: bool,
    pub patience: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 30,
            lr: 1e-4,
            hidden_dims: [128, 64],
            frames_per_clip: 2,
            augment: true,
            freeze_encoders: false,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Views used for classification.
    pub views: Vec<View>,
    pub task: Task,
    pub aggregation: Aggregation,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub classifier: ClassifierTrainConfig,
    pub augment: AugmentParams,
    /// Apply histogram equalization when loading clips.
    pub equalize: bool,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mmvm,
            views: View::ALL.to_vec(),
            task: Task::Binary,
            aggregation: Aggregation::SharedMean,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            augment: AugmentParams::default(),
            equalize: true,
            seeds: vec![0, 1, 2],
        }
    }
}

fn check_views(name: &str, views: &[View]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Config(format!("{name}: at least one view is required")));
    }
    let mut v = views.to_vec();
    v.sort();
    v.dedup();
    if v.len() != views.len() {
        return Err(Error::Config(format!("{name}: views must not repeat")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_views("views", &self.views)?;
        check_views("pretrain.views", &self.pretrain.views)?;
        self.encoder.validate()?;
        self.augment.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.mode == Mode::Mmvm && self.pretrain.views.len() < 2 {
            return Err(Error::Config("mmvm pretraining needs at least 2 views".into()));
        }
        if self.mode != Mode::SupervisedBaseline {
            if let Some(v) = self.views.iter().find(|v| !self.pretrain.views.contains(v)) {
                return Err(Error::Config(format!("view {v} is classified but not pretrained")));
            }
        }
        let p = &self.pretrain;
        if p.batch_size < 2 || p.frames_per_study == 0 || !(p.lr > 0.0) {
            return Err(Error::Config(
                "pretrain: batch_size >= 2, frames_per_study >= 1 and lr > 0 are required".into(),
            ));
        }
        let c = &self.classifier;
        if c.batch_size == 0 || !c.batch_size.is_multiple_of(self.task.num_classes()) {
            return Err(Error::Config(format!(
                "classifier batch_size {} is not a multiple of {} classes",
                c.batch_size,
                self.task.num_classes()
            )));
        }
        if c.frames_per_clip == 0 || !(c.lr > 0.0) || c.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "classifier: frames_per_clip >= 1, lr > 0 and positive hidden widths are required".into(),
            ));
        }
        Ok(())
    }

    /// Width of the classifier input for this view set and aggregation.
    pub fn representation_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.encoder.latent_dim * self.views.len(),
            Aggregation::SharedMean => self.encoder.latent_dim,
        }
    }
}

/// One epoch of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective (ELBO for pretraining, cross-entropy for classifiers).
    pub objective: f64,
    /// Pretraining only: mean reconstruction log-likelihood and regularizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<f64>,
    /// Validation ELBO or balanced accuracy, when validation data is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
    pub wall_ms: u64,
}

/// Per-epoch records of one run, written as JSON lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub stage: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn new(stage: impl Into<String>, seed: u64) -> Self {
        Self {
            stage: stage.into(),
            seed,
            epochs: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: EpochRecord) {
        debug_assert!(self.epochs.last().is_none_or(|l| l.epoch < rec.epoch));
        self.epochs.push(rec);
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.objective).collect()
    }

    /// One JSON object per line: a header line, then one line per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let header = serde_json::json!({ "stage": self.stage, "seed": self.seed });
        let mut text = format!("{header}\n");
        for e in &self.epochs {
            text.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let parse_err = |e: serde_json::Error| Error::Data(format!("{}: {e}", path.display()));
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap_or("{}")).map_err(parse_err)?;
        let mut log = TrainingLog::new(
            header["stage"].as_str().unwrap_or_default(),
            header["seed"].as_u64().unwrap_or_default(),
        );
        for l in lines.filter(|l| !l.trim().is_empty()) {
            log.epochs.push(serde_json::from_str(l).map_err(parse_err)?);
        }
        Ok(log)
    }
}
