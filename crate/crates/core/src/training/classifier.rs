//! Classifier training on clip latents, with encoder fine-tuning.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;

use crate::checkpoint::ModelCheckpoint;
use crate::datasets::{balanced_batches, MultiViewStudy, Task, View, ViewClip};
use crate::error::{Error, Result};
use crate::evaluation::balanced_accuracy;
use crate::networks::{build_classifier, build_encoder, Classifier, ClassifierConfig, Encoder, EncoderConfig};
use crate::nn::{Adam, Tensor};
use crate::preprocess::{augment_frame, AugmentDraw};
use crate::rng::{derive_seed, rng_for, tag_str};

use super::vae::view_seed;
use super::{Aggregation, EpochRecord, ExperimentConfig, TrainingLog};

/// Encoders (one per view, in `views` order) plus the classifier head.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub views: Vec<View>,
    pub aggregation: Aggregation,
    pub task: Task,
    pub seed: u64,
    pub encoders: Vec<Encoder>,
    pub classifier: Classifier,
}

pub struct ClassifierOutcome {
    pub model: ClassifierModel,
    pub log: TrainingLog,
}

impl ClassifierModel {
    pub fn checkpoint(&self, experiment: &serde_json::Value) -> ModelCheckpoint {
        let config = serde_json::json!({
            "views": self.views,
            "aggregation": self.aggregation,
            "task": self.task,
            "encoder": self.encoders[0].config(),
            "classifier": self.classifier.config(),
            "experiment": experiment,
        });
        let mut ck = ModelCheckpoint::new("classifier", self.seed, config).with_module("", &self.classifier);
        for (v, e) in self.views.iter().zip(&self.encoders) {
            ck.push_module(&format!("{v}/"), e);
        }
        ck
    }

    pub fn save(&self, path: &Path, experiment: &serde_json::Value) -> Result<()> {
        self.checkpoint(experiment).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = ModelCheckpoint::load(path)?;
        if ck.kind != "classifier" {
            return Err(Error::Checkpoint(format!("{} holds a {} checkpoint, not a classifier", path.display(), ck.kind)));
        }
        let field = |name: &str| {
            ck.config
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{}: config lacks {name}", path.display())))
        };
        let parse = |e: serde_json::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let views: Vec<View> = serde_json::from_value(field("views")?).map_err(parse)?;
        let aggregation: Aggregation = serde_json::from_value(field("aggregation")?).map_err(parse)?;
        let task: Task = serde_json::from_value(field("task")?).map_err(parse)?;
        let enc_cfg: EncoderConfig = serde_json::from_value(field("encoder")?).map_err(parse)?;
        let cls_cfg: ClassifierConfig = serde_json::from_value(field("classifier")?).map_err(parse)?;
        let mut classifier = build_classifier(&cls_cfg, 0)?;
        ck.restore_module("", &mut classifier)?;
        let mut encoders = Vec::with_capacity(views.len());
        for v in &views {
            let mut e = build_encoder(&enc_cfg, 0)?;
            ck.restore_module(&format!("{v}/"), &mut e)?;
            encoders.push(e);
        }
        Ok(Self {
            views,
            aggregation,
            task,
            seed: ck.seed,
            encoders,
            classifier,
        })
    }
}

fn clip_frames(clip: &ViewClip, frames: &[usize]) -> Tensor {
    let n = clip.frame_len();
    let mut data = Vec::with_capacity(frames.len() * n);
    for &t in frames {
        data.extend(clip.frame(t).iter().map(|&v| v as f64));
    }
    Tensor::from_vec([frames.len(), 1, clip.height, clip.width], data)
}

/// Mean posterior mean over all frames of a clip (inference mode).
pub fn clip_latent(encoder: &mut Encoder, clip: &ViewClip) -> Vec<f64> {
    let frames: Vec<usize> = (0..clip.num_frames).collect();
    let out = encoder.encode(&clip_frames(clip, &frames));
    mean_rows(out.mean.data(), clip.num_frames, out.mean.item_len())
}

fn mean_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; cols];
    for r in data.chunks(cols) {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= rows as f64);
    m
}

fn aggregate(latents: &[Vec<f64>], aggregation: Aggregation) -> Vec<f64> {
    if latents.len() == 1 {
        return latents[0].clone();
    }
    match aggregation {
        Aggregation::Concat => latents.concat(),
        Aggregation::SharedMean => mean_rows(&latents.concat(), latents.len(), latents[0].len()),
    }
}

/// Study-level feature vector: one clip latent per view, concatenated or
/// averaged across views.
pub fn study_representation(
    encoders: &mut [Encoder],
    views: &[View],
    study: &MultiViewStudy,
    aggregation: Aggregation,
) -> Result<Vec<f64>> {
    if encoders.len() != views.len() {
        return Err(Error::Contract(format!("{} encoders for {} views", encoders.len(), views.len())));
    }
    let latents = views
        .iter()
        .zip(encoders.iter_mut())
        .map(|(v, e)| Ok(clip_latent(e, study.clip(*v)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&latents, aggregation))
}

/// Class probabilities for each study, in inference mode.
pub fn predict_probabilities(model: &mut ClassifierModel, studies: &[MultiViewStudy]) -> Result<Vec<Vec<f64>>> {
    predict_refs(model, &studies.iter().collect::<Vec<_>>())
}

fn predict_refs(model: &mut ClassifierModel, studies: &[&MultiViewStudy]) -> Result<Vec<Vec<f64>>> {
    if studies.is_empty() {
        return Ok(Vec::new());
    }
    let mut feats = Vec::new();
    for s in studies {
        feats.extend(study_representation(&mut model.encoders, &model.views, s, model.aggregation)?);
    }
    let dim = feats.len() / studies.len();
    let probs = model.classifier.forward(&Tensor::matrix(studies.len(), dim, feats), false);
    Ok(probs.data().chunks(probs.item_len()).map(<[f64]>::to_vec).collect())
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}

fn validation_balanced_accuracy(model: &mut ClassifierModel, studies: &[MultiViewStudy]) -> Result<f64> {
    let labeled: Vec<&MultiViewStudy> = studies.iter().filter(|s| s.label.is_some()).collect();
    let probs = predict_refs(model, &labeled)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = labeled.iter().map(|s| model.task.class_of(s.label.unwrap())).collect();
    balanced_accuracy(&preds, &labels, model.task.num_classes())
}

/// Trains the classifier head and fine-tunes `encoders` (one per `cfg.views`
/// entry) with cross-entropy on class-balanced, augmented batches.
pub fn train_classifier(
    encoders: Vec<Encoder>,
    studies: &[MultiViewStudy],
    cfg: &ExperimentConfig,
    seed: u64,
    validation: Option<&[MultiViewStudy]>,
) -> Result<ClassifierOutcome> {
    let views = &cfg.views;
    let task = cfg.task;
    let k = task.num_classes();
    let tc = &cfg.classifier;
    if encoders.len() != views.len() {
        return Err(Error::Contract(format!("{} encoders for {} views", encoders.len(), views.len())));
    }
    let labeled: Vec<&MultiViewStudy> = studies.iter().filter(|s| s.label.is_some() && s.has_views(views)).collect();
    let classes: Vec<usize> = labeled.iter().map(|s| task.class_of(s.label.unwrap())).collect();
    if let Some(c) = (0..k).find(|c| !classes.contains(c)) {
        return Err(Error::Training(format!("class {c} of the {} task is absent from the training labels", task.name())));
    }
    let cls_cfg = ClassifierConfig {
        input_dim: cfg.representation_dim(),
        hidden_dims: tc.hidden_dims,
        num_classes: k,
    };
    let mut model = ClassifierModel {
        views: views.clone(),
        aggregation: cfg.aggregation,
        task,
        seed,
        encoders,
        classifier: build_classifier(&cls_cfg, derive_seed(seed, &[tag_str("classifier")]))?,
    };
    let mut cls_opt = Adam::new(tc.lr);
    let mut enc_opts: Vec<Adam> = views.iter().map(|_| Adam::new(tc.lr)).collect();
    let mut log = TrainingLog::new(format!("classifier-{}", task.name()), seed);
    let mut best: Option<(f64, ClassifierModel)> = None;
    let mut since_best = 0;
    let train_encoders = !tc.freeze_encoders;

    for epoch in 0..tc.epochs {
        let start = Instant::now();
        let batches = balanced_batches(&classes, k, tc.batch_size, derive_seed(seed, &[tag_str("cls-epoch"), epoch as u64]))?;
        let (mut loss_sum, mut count) = (0.0, 0);
        for batch in &batches {
            let n = batch.len();
            // Frames chosen for each (item, view), and the per-view encoder outputs.
            let mut per_view_frames = Vec::with_capacity(views.len());
            let mut latents: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(views.len()); n];
            for (vi, &view) in views.iter().enumerate() {
                let mut data = Vec::new();
                let mut counts = Vec::with_capacity(n);
                let mut shape = (0, 0);
                for item in batch {
                    let clip = labeled[item.index].clip(view)?;
                    shape = (clip.height, clip.width);
                    let vseed = derive_seed(item.aug_seed, &[view.index() as u64]);
                    let mut rng = rng_for(vseed, &[tag_str("frames")]);
                    let f = tc.frames_per_clip.min(clip.num_frames);
                    let mut picked = index::sample(&mut rng, clip.num_frames, f).into_vec();
                    picked.sort_unstable();
                    let draw = tc.augment.then(|| AugmentDraw::sample(&cfg.augment, vseed));
                    for &t in &picked {
                        let frame: Vec<f64> = clip.frame(t).iter().map(|&v| v as f64).collect();
                        match &draw {
                            Some(d) => data.extend(augment_frame(&frame, clip.height, clip.width, t, &cfg.augment, d)),
                            None => data.extend(frame),
                        }
                    }
                    counts.push(f);
                }
                let total: usize = counts.iter().sum();
                let x = Tensor::from_vec([total, 1, shape.0, shape.1], data);
                let out = model.encoders[vi].forward(&x, train_encoders);
                let d = out.mean.item_len();
                let mut row = 0;
                for (b, &c) in counts.iter().enumerate() {
                    latents[b].push(mean_rows(&out.mean.data()[row * d..(row + c) * d], c, d));
                    row += c;
                }
                per_view_frames.push(counts);
            }
            let feats: Vec<f64> = latents.iter().flat_map(|l| aggregate(l, cfg.aggregation)).collect();
            let dim = feats.len() / n;
            let probs = model.classifier.forward(&Tensor::matrix(n, dim, feats), true);
            let mut d_logits = probs.clone();
            for (b, item) in batch.iter().enumerate() {
                let y = classes[item.index];
                let p = probs.item(b);
                loss_sum -= p[y].max(1e-300).ln();
                for c in 0..k {
                    d_logits.data_mut()[b * k + c] = (p[c] - f64::from(u8::from(c == y))) / n as f64;
                }
            }
            count += n;
            let d_feat = model.classifier.backward(&d_logits);
            cls_opt.step(&mut model.classifier);
            if !train_encoders {
                continue;
            }
            let d = cfg.encoder.latent_dim;
            let m = views.len();
            for (vi, counts) in per_view_frames.iter().enumerate() {
                let total: usize = counts.iter().sum();
                let mut d_mean = Tensor::zeros([total, d, 1, 1]);
                let mut row = 0;
                for (b, &c) in counts.iter().enumerate() {
                    let g = d_feat.item(b);
                    for r in row..row + c {
                        for i in 0..d {
                            let gi = match (m, cfg.aggregation) {
                                (1, _) => g[i],
                                (_, Aggregation::Concat) => g[vi * d + i],
                                (_, Aggregation::SharedMean) => g[i] / m as f64,
                            };
                            d_mean.data_mut()[r * d + i] = gi / c as f64;
                        }
                    }
                    row += c;
                }
                model.encoders[vi].backward(&d_mean, None, false);
                enc_opts[vi].step(&mut model.encoders[vi]);
            }
        }
        let val = match validation {
            Some(v) if v.iter().any(|s| s.label.is_some()) => Some(validation_balanced_accuracy(&mut model, v)?),
            _ => None,
        };
        let objective = loss_sum / count.max(1) as f64;
        log.push(EpochRecord {
            epoch,
            objective,
            recon: None,
            regularizer: None,
            validation: val,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        log::info!("classifier {} seed {seed} epoch {epoch}: loss {objective:.4}", task.name());
        if !objective.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= tc.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, m)) = best {
        model = m;
    }
    Ok(ClassifierOutcome { model, log })
}

/// The same encoder backbone and classifier trained end-to-end from random
/// initialization, without a VAE stage.
pub fn supervised_baseline_train(
    studies: &[MultiViewStudy],
    cfg: &ExperimentConfig,
    seed: u64,
    validation: Option<&[MultiViewStudy]>,
) -> Result<ClassifierOutcome> {
    let encoders = cfg
        .views
        .iter()
        .map(|&v| build_encoder(&cfg.encoder, view_seed(seed, v)))
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = cfg.clone();
    cfg.classifier.freeze_encoders = false;
    train_classifier(encoders, studies, &cfg, seed, validation)
}
