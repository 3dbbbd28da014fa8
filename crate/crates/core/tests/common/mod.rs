use std::collections::BTreeMap;

use echoview::datasets::{MultiViewStudy, View, ViewClip};
use echoview::latent::Regularizer;
use echoview::networks::{build_decoder, build_encoder, DecoderConfig, EncoderConfig};
use echoview::nn::Module;
use echoview::rng::{rng_for, standard_normal_vec};
use echoview::training::{vae_step, ViewVae};
use rand::Rng;

const VIEWS: [View; 2] = [View::A4c, View::PsaxP];

fn toy() -> (Vec<ViewVae>, Vec<MultiViewStudy>) {
    let cfg = EncoderConfig {
        input_size: 8,
        blocks: 2,
        channel_schedule: vec![2, 3],
        latent_dim: 2,
    };
    let models = VIEWS
        .iter()
        .enumerate()
        .map(|(i, &view)| ViewVae {
            view,
            encoder: build_encoder(&cfg, 10 + i as u64).unwrap(),
            decoder: build_decoder(&DecoderConfig::mirror(&cfg), 20 + i as u64).unwrap(),
        })
        .collect();
    let mut rng = rng_for(5, &[1]);
    let studies = (0..3)
        .map(|i| {
            let clips: BTreeMap<View, ViewClip> = VIEWS
                .iter()
                .map(|&v| (v, ViewClip::new(v, 2, 8, 8, (0..128).map(|_| rng.random::<f32>()).collect()).unwrap()))
                .collect();
            MultiViewStudy {
                study_id: format!("s{i}"),
                patient_id: format!("p{i}"),
                clips,
                label: None,
            }
        })
        .collect();
    (models, studies)
}

fn for_each_scalar(models: &mut [ViewVae], f: &mut dyn FnMut(&mut f64, f64)) {
    for m in models.iter_mut() {
        m.encoder.visit_params_mut(&mut |p| {
            if p.trainable {
                p.value.iter_mut().zip(&p.grad).for_each(|(v, g)| f(v, *g));
            }
        });
        m.decoder.visit_params_mut(&mut |p| {
            if p.trainable {
                p.value.iter_mut().zip(&p.grad).for_each(|(v, g)| f(v, *g));
            }
        });
    }
}

/// Central-difference check of every trainable parameter of a two-view toy
/// model; returns (parameters within 1e-3 relative error, total, worst error).
pub fn check(kind: Regularizer) -> (usize, usize, f64) {
    let (mut models, studies) = toy();
    let refs: Vec<&MultiViewStudy> = studies.iter().collect();
    let items = [(0, 0), (1, 1), (2, 0)];
    let mut rng = rng_for(6, &[2]);
    let noise: Vec<Vec<f64>> = (0..2).map(|_| standard_normal_vec(&mut rng, items.len() * 2)).collect();
    let loss = |models: &mut [ViewVae]| -vae_step(models, &refs, &items, kind, &noise, true).unwrap().objective;

    for m in models.iter_mut() {
        m.encoder.zero_grad();
        m.decoder.zero_grad();
    }
    loss(&mut models);
    let mut analytic = Vec::new();
    for_each_scalar(&mut models, &mut |_, g| analytic.push(g));

    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let nudge = |models: &mut [ViewVae], delta: f64| {
            let mut i = 0;
            for_each_scalar(models, &mut |v, _| {
                if i == k {
                    *v += delta;
                }
                i += 1;
            });
        };
        nudge(&mut models, h);
        let up = loss(&mut models);
        nudge(&mut models, -2.0 * h);
        let down = loss(&mut models);
        nudge(&mut models, h);
        numeric.push((up - down) / (2.0 * h));
    }
    let mut worst: f64 = 0.0;
    let ok = analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, n)| {
            let rel = (*a - *n).abs() / a.abs().max(n.abs()).max(1e-6);
            worst = worst.max(rel);
            rel < 1e-3
        })
        .count();
    (ok, analytic.len(), worst)
}
