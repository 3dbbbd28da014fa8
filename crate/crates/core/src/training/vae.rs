//! VAE pretraining.

use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};

use crate::checkpoint::ModelCheckpoint;
use crate::datasets::{MultiViewStudy, View};
use crate::error::{Error, Result};
use crate::latent::{regularizer_value_and_grad, GaussianPosterior, Regularizer, HALF_LN_2PI};
use crate::networks::{build_decoder, build_encoder, raw_std_grad, Decoder, DecoderConfig, Encoder, EncoderConfig};
use crate::nn::{Adam, Tensor};
use crate::rng::{derive_seed, rng_for, standard_normal_vec, tag_str};

use super::{EpochRecord, ExperimentConfig, KlEstimator, Mode, PretrainConfig, TrainingLog};

/// Encoder/decoder pair of one view.
#[derive(Debug, Clone)]
pub struct ViewVae {
    pub view: View,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// The per-view VAEs produced by one pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainedVaes {
    pub mode: Mode,
    pub seed: u64,
    pub models: Vec<ViewVae>,
}

pub struct PretrainOutcome {
    pub vaes: PretrainedVaes,
    pub log: TrainingLog,
    /// Mean objective of every optimizer step, in order.
    pub step_objectives: Vec<f64>,
}

/// Initialization seed of a view's networks; shared by both pretraining modes.
pub(crate) fn view_seed(seed: u64, view: View) -> u64 {
    derive_seed(seed, &[tag_str("view-init"), view.index() as u64])
}

impl PretrainedVaes {
    pub fn get(&self, view: View) -> Option<&ViewVae> {
        self.models.iter().find(|m| m.view == view)
    }

    pub fn encoder(&self, view: View) -> Result<&Encoder> {
        self.get(view)
            .map(|m| &m.encoder)
            .ok_or_else(|| Error::Training(format!("no pretrained {view} encoder")))
    }

    pub fn views(&self) -> Vec<View> {
        self.models.iter().map(|m| m.view).collect()
    }

    pub fn checkpoint(&self, view: View, config: &serde_json::Value) -> Result<ModelCheckpoint> {
        let m = self
            .get(view)
            .ok_or_else(|| Error::Training(format!("no pretrained {view} model")))?;
        let config = serde_json::json!({
            "mode": self.mode,
            "view": view,
            "encoder": m.encoder.config(),
            "experiment": config,
        });
        Ok(ModelCheckpoint::new("vae", self.seed, config)
            .with_module("", &m.encoder)
            .with_module("", &m.decoder))
    }

    /// Writes `<dir>/<VIEW>.ckpt` for every view.
    pub fn save(&self, dir: &Path, config: &serde_json::Value) -> Result<()> {
        for m in &self.models {
            self.checkpoint(m.view, config)?.save(&dir.join(format!("{}.ckpt", m.view)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, mode: Mode, views: &[View], enc_cfg: &EncoderConfig) -> Result<Self> {
        let dec_cfg = DecoderConfig::mirror(enc_cfg);
        let mut models = Vec::with_capacity(views.len());
        let mut seed = 0;
        for &view in views {
            let ck = ModelCheckpoint::load(&dir.join(format!("{view}.ckpt")))?;
            seed = ck.seed;
            let mut encoder = build_encoder(enc_cfg, 0)?;
            let mut decoder = build_decoder(&dec_cfg, 0)?;
            ck.restore_module("", &mut encoder)?;
            ck.restore_module("", &mut decoder)?;
            models.push(ViewVae { view, encoder, decoder });
        }
        Ok(Self { mode, seed, models })
    }
}

/// Frame `t` (modulo clip length) of `view` for each `(study, t)` item, as `[n, 1, s, s]`.
pub(crate) fn frame_batch(studies: &[&MultiViewStudy], items: &[(usize, usize)], view: View) -> Result<Tensor> {
    let first = studies[items[0].0].clip(view)?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(items.len() * h * w);
    for &(i, t) in items {
        let clip = studies[i].clip(view)?;
        if (clip.height, clip.width) != (h, w) {
            return Err(Error::Data(format!("study {} has a differently sized {view} clip", studies[i].study_id)));
        }
        data.extend(clip.frame(t % clip.num_frames).iter().map(|&v| v as f64));
    }
    Ok(Tensor::from_vec([items.len(), 1, h, w], data))
}

/// Frames pairable across `views`: the length of the shortest clip.
fn paired_frames(study: &MultiViewStudy, views: &[View]) -> Result<usize> {
    let mut t = usize::MAX;
    for &v in views {
        t = t.min(study.clip(v)?.num_frames);
    }
    Ok(t)
}

/// Per-frame means of one batch's objective and its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerms {
    pub objective: f64,
    pub recon: f64,
    pub regularizer: f64,
}

/// Forward pass over the frames `items` (`(study, frame)` pairs), one noise
/// vector per view of length `items.len() * latent_dim`. With `train`, also
/// accumulates the gradient of `-objective` into the parameters.
pub fn vae_step(
    models: &mut [ViewVae],
    studies: &[&MultiViewStudy],
    items: &[(usize, usize)],
    kind: Regularizer,
    noise: &[Vec<f64>],
    train: bool,
) -> Result<StepTerms> {
    let n = items.len();
    let m = models.len();
    let mut outs = Vec::with_capacity(m);
    let mut posts: Vec<Vec<GaussianPosterior>> = Vec::with_capacity(m);
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(m);
    let mut recon = 0.0;
    let mut d_z_recon = Vec::with_capacity(m);
    for (v, model) in models.iter_mut().enumerate() {
        let x = frame_batch(studies, items, model.view)?;
        let out = model.encoder.forward(&x, train);
        let p = out.posteriors();
        let d = out.mean.item_len();
        let z: Vec<Vec<f64>> = p
            .iter()
            .enumerate()
            .map(|(b, q)| (0..d).map(|i| q.mean()[i] + q.std()[i] * noise[v][b * d + i]).collect())
            .collect();
        let zt = Tensor::matrix(n, d, z.concat());
        let xhat = model.decoder.forward(&zt, train);
        let pixels = x.item_len() as f64;
        let mut d_out = Tensor::zeros(x.shape());
        for ((g, a), b) in d_out.data_mut().iter_mut().zip(x.data()).zip(xhat.data()) {
            let r = a - b;
            recon -= 0.5 * r * r;
            *g = -r / n as f64;
        }
        recon -= n as f64 * pixels * HALF_LN_2PI;
        if train {
            d_z_recon.push(model.decoder.backward(&d_out));
        }
        outs.push(out);
        posts.push(p);
        samples.push(z);
    }

    let mut regularizer = 0.0;
    let d = posts[0][0].dim();
    let mut d_mean: Vec<Tensor> = (0..m).map(|_| Tensor::zeros([n, d, 1, 1])).collect();
    let mut d_std: Vec<Vec<f64>> = vec![vec![0.0; n * d]; m];
    for b in 0..n {
        let qs: Vec<GaussianPosterior> = (0..m).map(|v| posts[v][b].clone()).collect();
        let zs: Vec<Vec<f64>> = (0..m).map(|v| samples[v][b].clone()).collect();
        let (value, grads) = regularizer_value_and_grad(kind, &qs, &zs)?;
        regularizer += value;
        if !train {
            continue;
        }
        for (v, g) in grads.iter().enumerate() {
            let dz = &d_z_recon[v].data()[b * d..(b + 1) * d];
            for i in 0..d {
                let dz_total = dz[i] - g.d_sample[i] / n as f64;
                d_mean[v].data_mut()[b * d + i] = dz_total - g.d_mean[i] / n as f64;
                d_std[v][b * d + i] = dz_total * noise[v][b * d + i] - g.d_std[i] / n as f64;
            }
        }
    }
    if train {
        for (v, model) in models.iter_mut().enumerate() {
            let d_raw = raw_std_grad(&outs[v].raw_std, &d_std[v]);
            model.encoder.backward(&d_mean[v], Some(&d_raw), false);
        }
    }
    let nf = n as f64;
    Ok(StepTerms {
        objective: (recon + regularizer) / nf,
        recon: recon / nf,
        regularizer: regularizer / nf,
    })
}

fn draw_noise(rng: &mut rand_chacha::ChaCha8Rng, m: usize, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| standard_normal_vec(rng, n * d)).collect()
}

/// Mean objective per frame over every frame of every study, in inference
/// mode with noise fixed by `seed`.
pub fn evaluate_vaes(models: &mut [ViewVae], studies: &[MultiViewStudy], kind: Regularizer, seed: u64) -> Result<f64> {
    let d = models[0].encoder.config().latent_dim;
    let mut total = 0.0;
    let mut count = 0;
    let views: Vec<View> = models.iter().map(|m| m.view).collect();
    for (i, s) in studies.iter().enumerate() {
        let t = paired_frames(s, &views)?;
        let items: Vec<(usize, usize)> = (0..t).map(|t| (0, t)).collect();
        let mut rng = rng_for(seed, &[tag_str("vae-eval"), i as u64]);
        let noise = draw_noise(&mut rng, models.len(), t, d);
        let terms = vae_step(models, &[s], &items, kind, &noise, false)?;
        total += terms.objective * t as f64;
        count += t;
    }
    Ok(total / count.max(1) as f64)
}

/// Trains one VAE per view. With `Regularizer::MixturePrior` the views of a
/// study are coupled through the mixture prior; otherwise each view's ELBO is
/// independent of the others.
#[allow(clippy::too_many_arguments)]
pub fn train_vaes(
    studies: &[MultiViewStudy],
    views: &[View],
    kind: Regularizer,
    enc_cfg: &EncoderConfig,
    pcfg: &PretrainConfig,
    seed: u64,
    validation: Option<&[MultiViewStudy]>,
) -> Result<PretrainOutcome> {
    let usable: Vec<&MultiViewStudy> = studies.iter().filter(|s| s.has_views(views)).collect();
    if usable.len() < studies.len() {
        log::warn!("pretraining skips {} studies lacking a requested view", studies.len() - usable.len());
    }
    if usable.len() < 2 {
        return Err(Error::Training(format!(
            "pretraining needs at least 2 studies with views {views:?}, found {}",
            usable.len()
        )));
    }
    let dec_cfg = DecoderConfig::mirror(enc_cfg);
    let mut models = views
        .iter()
        .map(|&view| {
            let s = view_seed(seed, view);
            Ok(ViewVae {
                view,
                encoder: build_encoder(enc_cfg, s)?,
                decoder: build_decoder(&dec_cfg, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut opts: Vec<(Adam, Adam)> = views.iter().map(|_| (Adam::new(pcfg.lr), Adam::new(pcfg.lr))).collect();
    let d = enc_cfg.latent_dim;
    let mode = if kind == Regularizer::MixturePrior { Mode::Mmvm } else { Mode::Independent };
    let mut log = TrainingLog::new(format!("pretrain-{}", mode.name()), seed);
    let mut steps = Vec::new();
    let mut noise_rng = rng_for(seed, &[tag_str("vae-noise")]);
    let mut best: Option<(f64, Vec<ViewVae>)> = None;
    let mut since_best = 0;

    for epoch in 0..pcfg.epochs {
        let start = Instant::now();
        let mut rng = rng_for(seed, &[tag_str("vae-epoch"), epoch as u64]);
        let mut items = Vec::new();
        for (i, s) in usable.iter().enumerate() {
            let t = paired_frames(s, views)?;
            let k = pcfg.frames_per_study.min(t);
            let mut picked = index::sample(&mut rng, t, k).into_vec();
            picked.sort_unstable();
            items.extend(picked.into_iter().map(|t| (i, t)));
        }
        items.shuffle(&mut rng);
        let (mut obj, mut rec, mut reg, mut count) = (0.0, 0.0, 0.0, 0);
        for batch in items.chunks(pcfg.batch_size).filter(|b| b.len() >= 2) {
            let noise = draw_noise(&mut noise_rng, views.len(), batch.len(), d);
            let terms = vae_step(&mut models, &usable, batch, kind, &noise, true)?;
            if !terms.objective.is_finite() {
                return Err(Error::Training(format!("non-finite objective at epoch {epoch}")));
            }
            for (model, (oe, od)) in models.iter_mut().zip(opts.iter_mut()) {
                oe.step(&mut model.encoder);
                od.step(&mut model.decoder);
            }
            steps.push(terms.objective);
            let b = batch.len() as f64;
            obj += terms.objective * b;
            rec += terms.recon * b;
            reg += terms.regularizer * b;
            count += batch.len();
        }
        let c = count.max(1) as f64;
        let val = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_vaes(&mut models, v, kind, seed)?),
            _ => None,
        };
        log.push(EpochRecord {
            epoch,
            objective: obj / c,
            recon: Some(rec / c),
            regularizer: Some(reg / c),
            validation: val,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        log::info!("pretrain {} seed {seed} epoch {epoch}: objective {:.3}", mode.name(), obj / c);
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, models.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= pcfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, m)) = best {
        models = m;
    }
    Ok(PretrainOutcome {
        vaes: PretrainedVaes { mode, seed, models },
        log,
        step_objectives: steps,
    })
}

/// Pretrains the VAEs of `cfg.pretrain.views` in `cfg.mode`.
pub fn pretrain_vaes(
    studies: &[MultiViewStudy],
    cfg: &ExperimentConfig,
    mode: Mode,
    seed: u64,
    validation: Option<&[MultiViewStudy]>,
) -> Result<PretrainOutcome> {
    let kind = match (mode, cfg.pretrain.kl_estimator) {
        (Mode::Mmvm, _) => Regularizer::MixturePrior,
        (Mode::Independent, KlEstimator::Analytic) => Regularizer::AnalyticKl,
        (Mode::Independent, KlEstimator::MonteCarlo) => Regularizer::MonteCarloKl,
        (Mode::SupervisedBaseline, _) => {
            return Err(Error::Config("the supervised baseline has no pretraining stage".into()))
        }
    };
    let views = &cfg.pretrain.views;
    if mode == Mode::Mmvm {
        let common = studies.iter().filter(|s| s.has_views(views)).count();
        if views.len() < 2 || common == 0 {
            return Err(Error::Training(format!(
                "mmvm pretraining needs studies sharing at least 2 views; views {views:?} are shared by {common} studies"
            )));
        }
    }
    train_vaes(studies, views, kind, &cfg.encoder, &cfg.pretrain, seed, validation)
}
