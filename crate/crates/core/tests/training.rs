use echoview::datasets::{generate_synthetic, load_studies, GeneratorConfig, Label, LoadOptions, MultiViewStudy, Task, View};
use echoview::evaluation::balanced_accuracy;
use echoview::latent::Regularizer;
use echoview::networks::{build_encoder, EncoderConfig};
use echoview::nn::{Module, Tensor};
use echoview::training::{
    clip_latent, evaluate_vaes, predict_probabilities, pretrain_vaes, study_representation, supervised_baseline_train,
    train_classifier, train_vaes, Aggregation, ClassifierModel, ExperimentConfig, Mode, PretrainConfig, PretrainedVaes,
};

const VIEWS: [View; 2] = [View::A4c, View::PsaxP];

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_size: 16,
        blocks: 2,
        channel_schedule: vec![2, 4],
        latent_dim: 4,
    }
}

fn studies(patients: usize, unlabeled: f64, seed: u64) -> Vec<MultiViewStudy> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig {
        patients,
        frames_per_clip: 4,
        frame_size: 48,
        unlabeled_fraction: unlabeled,
        heldout_fraction: 0.0,
        views: VIEWS.to_vec(),
        ..GeneratorConfig::default()
    };
    let m = generate_synthetic(&cfg, seed, dir.path()).unwrap();
    let opts = LoadOptions {
        views: VIEWS.to_vec(),
        size: 16,
        equalize: true,
    };
    load_studies(&m, &(0..m.entries.len()).collect::<Vec<_>>(), &opts).unwrap()
}

fn experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        views: VIEWS.to_vec(),
        encoder: tiny_encoder(),
        ..ExperimentConfig::default()
    };
    cfg.pretrain = PretrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 1e-3,
        frames_per_study: 4,
        views: VIEWS.to_vec(),
        ..PretrainConfig::default()
    };
    cfg.classifier.batch_size = 10;
    cfg.classifier.hidden_dims = [16, 8];
    cfg.classifier.lr = 1e-3;
    cfg
}

fn flat_params<M: Module>(m: &M) -> Vec<f64> {
    let mut v = Vec::new();
    m.visit_params(&mut |p| v.extend_from_slice(&p.value));
    v
}

#[test]
fn single_view_mixture_prior_matches_monte_carlo_elbo_per_step() {
    let data = studies(12, 0.2, 1);
    let cfg = experiment();
    let mut p = cfg.pretrain.clone();
    p.epochs = 2;
    let ind = train_vaes(&data, &[View::A4c], Regularizer::MonteCarloKl, &cfg.encoder, &p, 9, None).unwrap();
    let mix = train_vaes(&data, &[View::A4c], Regularizer::MixturePrior, &cfg.encoder, &p, 9, None).unwrap();
    assert_eq!(ind.step_objectives.len(), mix.step_objectives.len());
    assert!(!ind.step_objectives.is_empty());
    for (a, b) in ind.step_objectives.iter().zip(&mix.step_objectives) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn pretraining_improves_the_elbo() {
    let data = studies(20, 0.2, 2);
    let cfg = experiment();
    for mode in [Mode::Independent, Mode::Mmvm] {
        let out = pretrain_vaes(&data, &cfg, mode, 3, None).unwrap();
        let obj = out.log.objectives();
        assert_eq!(obj.len(), 6);
        let rising = obj.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(rising >= 4, "{mode:?}: {obj:?}");
        assert!(out.log.epochs.iter().enumerate().all(|(i, e)| e.epoch == i));
    }
}

#[test]
fn pretraining_is_deterministic() {
    let data = studies(10, 0.2, 3);
    let mut cfg = experiment();
    cfg.pretrain.epochs = 2;
    let a = pretrain_vaes(&data, &cfg, Mode::Mmvm, 5, None).unwrap();
    let b = pretrain_vaes(&data, &cfg, Mode::Mmvm, 5, None).unwrap();
    assert_eq!(a.log.objectives(), b.log.objectives());
    assert_eq!(a.step_objectives, b.step_objectives);
}

#[test]
fn reloaded_checkpoints_reproduce_the_validation_elbo() {
    let data = studies(10, 0.2, 4);
    let mut cfg = experiment();
    cfg.pretrain.epochs = 1;
    let mut out = pretrain_vaes(&data, &cfg, Mode::Mmvm, 6, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.vaes.save(dir.path(), &serde_json::json!({})).unwrap();
    let mut back = PretrainedVaes::load(dir.path(), Mode::Mmvm, &VIEWS, &cfg.encoder).unwrap();
    let a = evaluate_vaes(&mut out.vaes.models, &data, Regularizer::MixturePrior, 1).unwrap();
    let b = evaluate_vaes(&mut back.models, &data, Regularizer::MixturePrior, 1).unwrap();
    assert_eq!(a, b);
    assert!(PretrainedVaes::load(&dir.path().join("nope"), Mode::Mmvm, &VIEWS, &cfg.encoder).is_err());
}

#[test]
fn mmvm_requires_studies_sharing_views() {
    let mut data = studies(6, 0.0, 5);
    for (i, s) in data.iter_mut().enumerate() {
        s.clips.remove(&VIEWS[i % 2]);
    }
    let cfg = experiment();
    assert!(pretrain_vaes(&data, &cfg, Mode::Mmvm, 0, None).is_err());
    assert!(pretrain_vaes(&data, &cfg, Mode::SupervisedBaseline, 0, None).is_err());
}

#[test]
fn study_representation_contracts() {
    let data = studies(4, 0.0, 6);
    let mut encoders = vec![build_encoder(&tiny_encoder(), 1).unwrap(), build_encoder(&tiny_encoder(), 2).unwrap()];

    // One frame: the clip latent is that frame's posterior mean.
    let clip = data[0].clip(View::A4c).unwrap();
    let mut single = clip.clone();
    single.num_frames = 1;
    single.data.truncate(clip.frame_len());
    let x = Tensor::from_vec([1, 1, 16, 16], single.data.iter().map(|&v| v as f64).collect());
    let mean = encoders[0].encode(&x).mean.into_data();
    assert_eq!(clip_latent(&mut encoders[0], &single), mean);

    let a = clip_latent(&mut encoders[0], data[0].clip(View::A4c).unwrap());
    let b = clip_latent(&mut encoders[1], data[0].clip(View::PsaxP).unwrap());
    let cat = study_representation(&mut encoders, &VIEWS, &data[0], Aggregation::Concat).unwrap();
    assert_eq!(cat.len(), 8);
    assert_eq!(&cat[..4], &a[..]);
    assert_eq!(&cat[4..], &b[..]);
    let mean = study_representation(&mut encoders, &VIEWS, &data[0], Aggregation::SharedMean).unwrap();
    for i in 0..4 {
        assert!((mean[i] - (a[i] + b[i]) / 2.0).abs() < 1e-15);
    }

    // Identical latents average to themselves.
    let mut twins = vec![encoders[0].clone(), encoders[0].clone()];
    let mut same = data[0].clone();
    same.clips.insert(View::PsaxP, data[0].clip(View::A4c).unwrap().clone());
    let m = study_representation(&mut twins, &VIEWS, &same, Aggregation::SharedMean).unwrap();
    for i in 0..4 {
        assert!((m[i] - a[i]).abs() < 1e-15);
    }

    let mut missing = data[0].clone();
    missing.clips.remove(&View::PsaxP);
    assert!(study_representation(&mut encoders, &VIEWS, &missing, Aggregation::Concat).is_err());
}

fn encoders_for(cfg: &ExperimentConfig, seed: u64) -> Vec<echoview::networks::Encoder> {
    cfg.views.iter().map(|_| build_encoder(&cfg.encoder, seed).unwrap()).collect()
}

#[test]
fn freezing_keeps_encoders_fixed_and_fine_tuning_moves_them() {
    let data = studies(20, 0.0, 7);
    let mut cfg = experiment();
    cfg.classifier.epochs = 1;
    let before: Vec<Vec<f64>> = encoders_for(&cfg, 3).iter().map(flat_params).collect();

    cfg.classifier.freeze_encoders = true;
    let frozen = train_classifier(encoders_for(&cfg, 3), &data, &cfg, 0, None).unwrap();
    for (e, b) in frozen.model.encoders.iter().zip(&before) {
        assert_eq!(&flat_params(e), b);
    }

    cfg.classifier.freeze_encoders = false;
    let tuned = train_classifier(encoders_for(&cfg, 3), &data, &cfg, 0, None).unwrap();
    for (e, b) in tuned.model.encoders.iter().zip(&before) {
        let delta: f64 = flat_params(e).iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(delta > 0.0);
    }
}

fn train_accuracy(model: &mut ClassifierModel, data: &[MultiViewStudy], task: Task) -> f64 {
    let probs = predict_probabilities(model, data).unwrap();
    let preds: Vec<usize> = probs
        .iter()
        .map(|p| (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap())
        .collect();
    let labels: Vec<usize> = data.iter().map(|s| task.class_of(s.label.unwrap())).collect();
    balanced_accuracy(&preds, &labels, task.num_classes()).unwrap()
}

#[test]
fn classifier_and_baseline_can_overfit_twenty_studies() {
    let data = studies(20, 0.0, 8);
    let mut cfg = experiment();
    cfg.task = Task::Severity;
    cfg.classifier.batch_size = 12;
    cfg.classifier.epochs = 300;
    cfg.classifier.augment = false;
    let mut out = train_classifier(encoders_for(&cfg, 4), &data, &cfg, 1, None).unwrap();
    assert_eq!(train_accuracy(&mut out.model, &data, Task::Severity), 1.0);

    let mut base = supervised_baseline_train(&data, &cfg, 1, None).unwrap();
    assert_eq!(train_accuracy(&mut base.model, &data, Task::Severity), 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cls.ckpt");
    base.model.save(&path, &serde_json::json!({})).unwrap();
    let ck = echoview::checkpoint::ModelCheckpoint::load(&path).unwrap();
    assert!(ck.tensors.iter().all(|t| !t.name.contains("dec.")));
    assert!(ck.tensors.iter().any(|t| t.name.starts_with("A4C/enc.")));
    let mut back = ClassifierModel::load(&path).unwrap();
    assert_eq!(
        predict_probabilities(&mut back, &data).unwrap(),
        predict_probabilities(&mut base.model, &data).unwrap()
    );
}

#[test]
fn untrained_classifier_is_near_chance() {
    let data = studies(40, 0.0, 9);
    let mut cfg = experiment();
    cfg.classifier.epochs = 0;
    let mut sum = 0.0;
    for seed in 0..3 {
        let mut out = train_classifier(encoders_for(&cfg, seed), &data, &cfg, seed, None).unwrap();
        sum += train_accuracy(&mut out.model, &data, Task::Binary);
    }
    assert!((sum / 3.0 - 0.5).abs() <= 0.15, "{}", sum / 3.0);
}

#[test]
fn absent_class_is_rejected() {
    let data: Vec<MultiViewStudy> = studies(20, 0.0, 10)
        .into_iter()
        .filter(|s| s.label != Some(Label::Mild))
        .collect();
    let mut cfg = experiment();
    cfg.task = Task::Severity;
    cfg.classifier.batch_size = 12;
    assert!(train_classifier(encoders_for(&cfg, 0), &data, &cfg, 0, None).is_err());
    cfg.task = Task::Binary;
    cfg.classifier.batch_size = 10;
    cfg.classifier.epochs = 1;
    assert!(train_classifier(encoders_for(&cfg, 0), &data, &cfg, 0, None).is_ok());
}
