//! The seed loop over the experiment grid: pretraining per (mode, seed),
//! classifier training per cell, held-out and optional cross-validated scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasets::{load_studies, split_folds, DatasetManifest, LoadOptions, MultiViewStudy, Partition, Task, View};
use crate::error::{Error, Result};
use crate::training::{
    clip_latent, predict_probabilities, pretrain_vaes, supervised_baseline_train, train_classifier, Aggregation,
    ClassifierModel, ExperimentConfig, Mode, PretrainedVaes, TrainingLog,
};

use super::report::{
    config_hash, AlignmentRecord, Category, Method, MetricsReport, ReportMetadata, RowAccumulator, RowKey, Scores,
};
use super::{auroc, balanced_accuracy, binary_auroc, f1_score, roc_curve, F1Average};

/// Which cells of the results table to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub tasks: Vec<Task>,
    pub single_view_methods: Vec<Method>,
    pub single_views: Vec<View>,
    /// Multi-view rows use the experiment's `views`.
    pub multi_view_methods: Vec<Method>,
    pub cross_validation: bool,
    pub folds: usize,
    pub f1_average: F1Average,
    /// Compare cross-view latent distances of both pretraining modes.
    pub alignment: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            tasks: vec![Task::Binary, Task::Severity],
            single_view_methods: vec![Method::IndVae, Method::MmvmVae],
            single_views: View::ALL.to_vec(),
            multi_view_methods: vec![Method::Supervised, Method::IndVae, Method::MmvmVae],
            cross_validation: false,
            folds: 5,
            f1_average: F1Average::Macro,
            alignment: true,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, exp: &ExperimentConfig) -> Result<()> {
        exp.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::Config("protocol: at least one task is required".into()));
        }
        if self.cross_validation && self.folds < 2 {
            return Err(Error::Config("protocol: cross-validation needs at least 2 folds".into()));
        }
        let uses_vae = self.single_view_methods.iter().chain(&self.multi_view_methods).any(|m| *m != Method::Supervised);
        if uses_vae || self.alignment {
            if let Some(v) = self.single_views.iter().find(|v| !exp.pretrain.views.contains(v)) {
                return Err(Error::Config(format!("protocol: single view {v} is not pretrained")));
            }
            if exp.pretrain.views.len() < 2 {
                return Err(Error::Config("protocol: mmvm pretraining needs at least 2 views".into()));
            }
        }
        for t in &self.tasks {
            let cfg = ExperimentConfig { task: *t, ..exp.clone() };
            cfg.validate()?;
        }
        Ok(())
    }

    /// Table rows in display order: single-view rows grouped by method, then
    /// multi-view rows.
    pub fn rows(&self, exp: &ExperimentConfig) -> Vec<RowKey> {
        let mut rows = Vec::new();
        for &method in &self.single_view_methods {
            for &v in &self.single_views {
                rows.push(RowKey {
                    category: Category::SingleView,
                    method,
                    views: vec![v],
                });
            }
        }
        for &method in &self.multi_view_methods {
            rows.push(RowKey {
                category: Category::MultiView,
                method,
                views: exp.views.clone(),
            });
        }
        rows
    }

    fn pretrain_modes(&self) -> Vec<Mode> {
        let methods: Vec<Method> = self.single_view_methods.iter().chain(&self.multi_view_methods).copied().collect();
        let mut modes = Vec::new();
        if self.alignment || methods.contains(&Method::IndVae) {
            modes.push(Mode::Independent);
        }
        if self.alignment || methods.contains(&Method::MmvmVae) {
            modes.push(Mode::Mmvm);
        }
        modes
    }
}

/// Experiment settings of one table cell.
pub fn cell_config(exp: &ExperimentConfig, key: &RowKey, task: Task) -> ExperimentConfig {
    let mut c = exp.clone();
    c.views = key.views.clone();
    c.task = task;
    c.mode = match key.method {
        Method::Supervised => Mode::SupervisedBaseline,
        Method::IndVae => Mode::Independent,
        Method::MmvmVae => Mode::Mmvm,
    };
    if key.method != Method::MmvmVae {
        c.aggregation = Aggregation::Concat;
    }
    c
}

/// Binary ROC points of one evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub row: String,
    pub seed: u64,
    pub points: Vec<(f64, f64)>,
}

pub struct ProtocolOutcome {
    pub report: MetricsReport,
    /// Training logs named by stage, cell and seed.
    pub logs: Vec<(String, TrainingLog)>,
    pub roc: Vec<RocRecord>,
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

/// Scores a trained model on the labeled studies of `studies`. The ROC curve
/// is returned for binary tasks.
pub fn evaluate_model(
    model: &mut ClassifierModel,
    studies: &[MultiViewStudy],
    f1_average: F1Average,
) -> Result<(Scores, Option<Vec<(f64, f64)>>)> {
    let labeled: Vec<MultiViewStudy> = studies
        .iter()
        .filter(|s| s.label.is_some() && s.has_views(&model.views))
        .cloned()
        .collect();
    let task = model.task;
    let k = task.num_classes();
    let probs = predict_probabilities(model, &labeled)?;
    let labels: Vec<usize> = labeled.iter().map(|s| task.class_of(s.label.unwrap())).collect();
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let scores = Scores {
        auroc: auroc(&probs, &labels, k)?,
        f1: f1_score(&preds, &labels, k, f1_average)?,
        balanced_accuracy: balanced_accuracy(&preds, &labels, k)?,
    };
    let roc = (task == Task::Binary).then(|| {
        let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let y: Vec<bool> = labels.iter().map(|l| *l == 1).collect();
        roc_curve(&s, &y)
    });
    Ok((scores, roc))
}

/// Mean Euclidean distance between the clip latents of every pair of views of
/// a study, averaged over studies.
pub fn cross_view_distance(vaes: &mut PretrainedVaes, studies: &[MultiViewStudy]) -> Result<f64> {
    if vaes.models.len() < 2 {
        return Err(Error::Evaluation("cross-view distance needs at least 2 views".into()));
    }
    let views = vaes.views();
    let (mut total, mut count) = (0.0, 0usize);
    for s in studies.iter().filter(|s| s.has_views(&views)) {
        let latents = vaes
            .models
            .iter_mut()
            .map(|m| Ok(clip_latent(&mut m.encoder, s.clip(m.view)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..latents.len() {
            for j in i + 1..latents.len() {
                sum += latents[i].iter().zip(&latents[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Evaluation("no study has every pretrained view".into()));
    }
    Ok(total / count as f64)
}

/// Binary AUROC of the ground-truth flattening factor (mean over `views`)
/// on the labeled entries at `indices`.
pub fn factor_oracle_auroc(manifest: &DatasetManifest, indices: &[usize], views: &[View]) -> Result<f64> {
    let (mut scores, mut positive) = (Vec::new(), Vec::new());
    for &i in indices {
        let e = &manifest.entries[i];
        let Some(label) = e.label else { continue };
        let vf: Vec<f64> = views.iter().filter_map(|v| e.view_flattening.get(v).copied()).collect();
        let score = if vf.is_empty() {
            e.flattening
                .ok_or_else(|| Error::Data(format!("study {} has no generative factors", e.study_id)))?
        } else {
            vf.iter().sum::<f64>() / vf.len() as f64
        };
        scores.push(score);
        positive.push(Task::Binary.class_of(label) == 1);
    }
    binary_auroc(&scores, &positive)
}

fn train_cell(
    cfg: &ExperimentConfig,
    pretrained: &BTreeMap<Mode, PretrainedVaes>,
    studies: &[MultiViewStudy],
    seed: u64,
) -> Result<(ClassifierModel, TrainingLog)> {
    let out = if cfg.mode == Mode::SupervisedBaseline {
        supervised_baseline_train(studies, cfg, seed, None)?
    } else {
        let vaes = pretrained
            .get(&cfg.mode)
            .ok_or_else(|| Error::Training(format!("no {} pretraining for seed {seed}", cfg.mode.name())))?;
        let encoders = cfg
            .views
            .iter()
            .map(|&v| vaes.encoder(v).cloned())
            .collect::<Result<Vec<_>>>()?;
        train_classifier(encoders, studies, cfg, seed, None)?
    };
    Ok((out.model, out.log))
}

fn slug(key: &RowKey, task: Task) -> String {
    let views: Vec<&str> = key.views.iter().map(|v| v.name()).collect();
    format!(
        "{}-{}-{}-{}",
        match key.category {
            Category::SingleView => "single",
            Category::MultiView => "multi",
        },
        key.method.label(key.category).to_ascii_lowercase(),
        views.join("+"),
        task.name()
    )
}

/// Runs every cell of `proto` for each seed of `exp`.
pub fn run_protocol(manifest: &DatasetManifest, exp: &ExperimentConfig, proto: &ProtocolConfig) -> Result<ProtocolOutcome> {
    proto.validate(exp)?;
    let mut views: Vec<View> = exp.pretrain.views.iter().chain(&exp.views).copied().collect();
    views.sort();
    views.dedup();
    let opts = LoadOptions {
        views,
        size: exp.encoder.input_size,
        equalize: exp.equalize,
    };
    let dev_idx = manifest.indices_in(Partition::Dev);
    let test_idx = manifest.indices_in(Partition::HeldOut);
    if test_idx.is_empty() {
        return Err(Error::Data("manifest has no held-out studies".into()));
    }
    let dev = load_studies(manifest, &dev_idx, &opts)?;
    let test = load_studies(manifest, &test_idx, &opts)?;
    log::info!("protocol: {} development and {} held-out studies", dev.len(), test.len());

    let rows = proto.rows(exp);
    let mut held_out = RowAccumulator::default();
    let mut cv = RowAccumulator::default();
    let mut alignment = Vec::new();
    let mut logs = Vec::new();
    let mut roc = Vec::new();
    for &seed in &exp.seeds {
        let mut pretrained = BTreeMap::new();
        for mode in proto.pretrain_modes() {
            let out = pretrain_vaes(&dev, exp, mode, seed, None)?;
            logs.push((format!("pretrain-{}-seed{seed}", mode.name()), out.log));
            pretrained.insert(mode, out.vaes);
        }
        if proto.alignment {
            let mut d = |m: Mode| cross_view_distance(pretrained.get_mut(&m).expect("pretrained above"), &test);
            alignment.push(AlignmentRecord {
                seed,
                mmvm: d(Mode::Mmvm)?,
                independent: d(Mode::Independent)?,
            });
        }
        for key in &rows {
            for &task in &proto.tasks {
                let cfg = cell_config(exp, key, task);
                log::info!("seed {seed}: {} {}", key.label(), task.name());
                let (mut model, log) = train_cell(&cfg, &pretrained, &dev, seed)?;
                logs.push((format!("{}-seed{seed}", slug(key, task)), log));
                let (scores, curve) = evaluate_model(&mut model, &test, proto.f1_average)?;
                held_out.add(key, task, scores);
                if let Some(points) = curve {
                    roc.push(RocRecord {
                        row: key.label(),
                        seed,
                        points,
                    });
                }
                if proto.cross_validation {
                    cross_validate(manifest, &dev_idx, &dev, &cfg, &pretrained, proto, seed, key, &mut cv)?;
                }
            }
        }
    }
    let fold_scheme = if proto.cross_validation {
        format!("held-out+{}-fold-cv", proto.folds)
    } else {
        "held-out".into()
    };
    let report = MetricsReport {
        metadata: ReportMetadata {
            seeds: exp.seeds.clone(),
            fold_scheme,
            f1_average: proto.f1_average,
            config_hash: config_hash(&(exp, proto)),
        },
        rows: held_out.finish(),
        cross_validation: cv.finish(),
        alignment,
    };
    report.validate()?;
    Ok(ProtocolOutcome { report, logs, roc })
}

/// K-fold scores of one cell for one seed, averaged over folds. Pretraining
/// is shared with the held-out run (it never sees labels).
#[allow(clippy::too_many_arguments)]
fn cross_validate(
    manifest: &DatasetManifest,
    dev_idx: &[usize],
    dev: &[MultiViewStudy],
    cfg: &ExperimentConfig,
    pretrained: &BTreeMap<Mode, PretrainedVaes>,
    proto: &ProtocolConfig,
    seed: u64,
    key: &RowKey,
    acc: &mut RowAccumulator,
) -> Result<()> {
    let entries: Vec<_> = dev_idx.iter().map(|&i| manifest.entries[i].clone()).collect();
    let folds = split_folds(&entries, proto.folds, seed)?;
    let by_id: BTreeMap<&str, &MultiViewStudy> = dev.iter().map(|s| (s.study_id.as_str(), s)).collect();
    let pick = |idx: &[usize]| -> Vec<MultiViewStudy> {
        idx.iter()
            .filter_map(|&i| by_id.get(entries[i].study_id.as_str()).map(|s| (*s).clone()))
            .collect()
    };
    let mut sum = Scores {
        auroc: 0.0,
        f1: 0.0,
        balanced_accuracy: 0.0,
    };
    for fold in &folds {
        let (train, val) = (pick(&fold.train), pick(&fold.validation));
        let (mut model, _) = train_cell(cfg, pretrained, &train, seed)?;
        let (s, _) = evaluate_model(&mut model, &val, proto.f1_average)?;
        sum.auroc += s.auroc;
        sum.f1 += s.f1;
        sum.balanced_accuracy += s.balanced_accuracy;
    }
    let k = folds.len() as f64;
    acc.add(
        key,
        cfg.task,
        Scores {
            auroc: sum.auroc / k,
            f1: sum.f1 / k,
            balanced_accuracy: sum.balanced_accuracy / k,
        },
    );
    Ok(())
}
