//! Subcommand implementations and the run-directory layout:
//!
//! ```text
//! <run>/config.toml        effective configuration
//! <run>/seed               run seed
//! <run>/logs/              training logs (JSON lines) and objective plots
//! <run>/checkpoints/       pretrain-<mode>/<VIEW>.ckpt, classifier-<task>-<views>.ckpt
//! <run>/metrics/           metrics.json, metrics.txt, ROC plots
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echoview::checkpoint::ModelCheckpoint;
use echoview::config::RunConfigFile;
use echoview::datasets::{generate_synthetic, load_manifest, load_studies, LoadOptions, Partition, View};
use echoview::evaluation::{
    config_hash, curves_svg, evaluate_model, roc_svg, run_protocol, Category, Method, MetricsReport, ReportMetadata,
    RowAccumulator, RowKey,
};
use echoview::training::{
    pretrain_vaes, supervised_baseline_train, train_classifier, ClassifierModel, Mode, PretrainedVaes,
};
use echoview::Error;

use crate::{Cli, Command};

fn resolve(cli: &Cli) -> Result<RunConfigFile> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    if let Some(root) = &cli.output_root {
        cfg.output_dir = root.clone();
    }
    let exp = &mut cfg.experiment;
    if let Some(s) = cli.seed {
        exp.seeds = vec![s];
    }
    if let Some(v) = &cli.views {
        exp.views = v.iter().map(|s| s.parse::<View>()).collect::<Result<_, _>>()?;
    }
    if let Some(t) = &cli.task {
        exp.task = t.parse()?;
    }
    if let Some(m) = &cli.mode {
        exp.mode = m.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    if cli.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let seed = cfg.experiment.seeds[0];
    let default_run = || {
        cfg.output_dir
            .join(format!("{}-seed{seed}", cfg.experiment.mode.name()))
    };
    match &cli.command {
        Command::Synth { out } => synth(&cfg, seed, out.as_deref().unwrap_or(&cfg.data_dir)),
        Command::Pretrain { run } => pretrain(&cfg, seed, &run.clone().unwrap_or_else(default_run)),
        Command::Train { run } => train(&cfg, seed, &run.clone().unwrap_or_else(default_run)),
        Command::Eval { run } => eval(&cfg, &run.clone().unwrap_or_else(default_run)),
        Command::Report { runs, out } => report(runs, out.as_deref()),
        Command::Protocol { run } => protocol(&cfg, &run.clone().unwrap_or_else(|| cfg.output_dir.join("protocol"))),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn init_run(cfg: &RunConfigFile, seed: Option<u64>, run: &Path) -> Result<()> {
    write(&run.join("config.toml"), &cfg.to_toml())?;
    if let Some(s) = seed {
        write(&run.join("seed"), &format!("{s}\n"))?;
    }
    for sub in ["logs", "checkpoints", "metrics"] {
        fs::create_dir_all(run.join(sub)).with_context(|| format!("creating {}", run.join(sub).display()))?;
    }
    Ok(())
}

fn experiment_json(cfg: &RunConfigFile) -> serde_json::Value {
    serde_json::to_value(&cfg.experiment).expect("experiment serializes")
}

fn synth(cfg: &RunConfigFile, seed: u64, out: &Path) -> Result<()> {
    let m = generate_synthetic(&cfg.generator, seed, out)?;
    log::info!(
        "wrote {} studies to {} (dev {}, held-out {})",
        m.entries.len(),
        out.display(),
        m.indices_in(Partition::Dev).len(),
        m.indices_in(Partition::HeldOut).len()
    );
    Ok(())
}

fn load(cfg: &RunConfigFile, partition: Partition, views: &[View]) -> Result<Vec<echoview::datasets::MultiViewStudy>> {
    let m = load_manifest(&cfg.data_dir)?;
    let opts = LoadOptions {
        views: views.to_vec(),
        size: cfg.experiment.encoder.input_size,
        equalize: cfg.experiment.equalize,
    };
    Ok(load_studies(&m, &m.indices_in(partition), &opts)?)
}

fn pretrain_dir(run: &Path, mode: Mode) -> PathBuf {
    run.join("checkpoints").join(format!("pretrain-{}", mode.name()))
}

fn pretrain(cfg: &RunConfigFile, seed: u64, run: &Path) -> Result<()> {
    let mode = cfg.experiment.mode;
    if mode == Mode::SupervisedBaseline {
        return Err(Error::Config("the supervised baseline has no pretraining stage".into()).into());
    }
    init_run(cfg, Some(seed), run)?;
    let dev = load(cfg, Partition::Dev, &cfg.experiment.pretrain.views)?;
    let out = pretrain_vaes(&dev, &cfg.experiment, mode, seed, None)?;
    out.vaes.save(&pretrain_dir(run, mode), &experiment_json(cfg))?;
    let name = format!("pretrain-{}", mode.name());
    out.log.write_jsonl(&run.join("logs").join(format!("{name}.jsonl")))?;
    write(
        &run.join("logs").join(format!("{name}.svg")),
        &curves_svg(&name, &[("objective".into(), out.log.objectives())]),
    )?;
    log::info!("pretrained {} views into {}", out.vaes.models.len(), pretrain_dir(run, mode).display());
    Ok(())
}

fn views_slug(views: &[View]) -> String {
    views.iter().map(|v| v.name()).collect::<Vec<_>>().join("+")
}

fn train(cfg: &RunConfigFile, seed: u64, run: &Path) -> Result<()> {
    let exp = &cfg.experiment;
    let dev = load(cfg, Partition::Dev, &exp.views)?;
    let out = if exp.mode == Mode::SupervisedBaseline {
        init_run(cfg, Some(seed), run)?;
        supervised_baseline_train(&dev, exp, seed, None)?
    } else {
        let vaes = PretrainedVaes::load(&pretrain_dir(run, exp.mode), exp.mode, &exp.views, &exp.encoder)?;
        init_run(cfg, Some(seed), run)?;
        let encoders = exp.views.iter().map(|&v| vaes.encoder(v).cloned()).collect::<Result<Vec<_>, _>>()?;
        train_classifier(encoders, &dev, exp, seed, None)?
    };
    let name = format!("classifier-{}-{}", exp.task.name(), views_slug(&exp.views));
    out.model
        .save(&run.join("checkpoints").join(format!("{name}.ckpt")), &experiment_json(cfg))?;
    out.log.write_jsonl(&run.join("logs").join(format!("{name}.jsonl")))?;
    write(
        &run.join("logs").join(format!("{name}.svg")),
        &curves_svg(&name, &[("cross-entropy".into(), out.log.objectives())]),
    )?;
    log::info!("trained {name} in {}", run.display());
    Ok(())
}

fn method_of(mode: Mode) -> Method {
    match mode {
        Mode::Independent => Method::IndVae,
        Mode::Mmvm => Method::MmvmVae,
        Mode::SupervisedBaseline => Method::Supervised,
    }
}

fn eval(cfg: &RunConfigFile, run: &Path) -> Result<()> {
    let ck_dir = run.join("checkpoints");
    let mut paths: Vec<PathBuf> = fs::read_dir(&ck_dir)
        .map_err(|_| Error::MissingCheckpoint { path: ck_dir.clone() })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("classifier-") && n.ends_with(".ckpt"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingCheckpoint { path: ck_dir.join("classifier-*.ckpt") }.into());
    }
    let seed_file = run.join("seed");
    let seed: u64 = fs::read_to_string(&seed_file)
        .map_err(|_| Error::MissingFile { path: seed_file.clone() })?
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{} does not hold a seed", seed_file.display())))?;
    let test = load(cfg, Partition::HeldOut, &View::ALL)?;
    let mut rows = RowAccumulator::default();
    let mut curves = Vec::new();
    for p in &paths {
        let mode: Mode = serde_json::from_value(ModelCheckpoint::load(p)?.config["experiment"]["mode"].clone())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))?;
        let mut model = ClassifierModel::load(p)?;
        let key = RowKey {
            category: if model.views.len() == 1 { Category::SingleView } else { Category::MultiView },
            method: method_of(mode),
            views: model.views.clone(),
        };
        let (scores, roc) = evaluate_model(&mut model, &test, cfg.protocol.f1_average)?;
        rows.add(&key, model.task, scores);
        if let Some(points) = roc {
            curves.push((key.label(), points));
        }
    }
    let report = MetricsReport {
        metadata: ReportMetadata {
            seeds: vec![seed],
            fold_scheme: "held-out".into(),
            f1_average: cfg.protocol.f1_average,
            config_hash: config_hash(&cfg.experiment),
        },
        rows: rows.finish(),
        cross_validation: Vec::new(),
        alignment: Vec::new(),
    };
    let metrics = run.join("metrics");
    let file = report.write(&metrics)?;
    if !curves.is_empty() {
        write(&metrics.join("roc-binary.svg"), &roc_svg("held-out ROC (binary)", &curves))?;
    }
    print!("{}", report.to_table());
    log::info!("wrote {}", file.display());
    Ok(())
}

fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports = runs
        .iter()
        .map(|r| MetricsReport::read(&r.join("metrics")))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = MetricsReport::merge(&reports)?;
    if let Some(dir) = out {
        merged.write(dir)?;
    }
    print!("{}", merged.to_table());
    Ok(())
}

fn protocol(cfg: &RunConfigFile, run: &Path) -> Result<()> {
    init_run(cfg, None, run)?;
    let manifest = load_manifest(&cfg.data_dir)?;
    let out = run_protocol(&manifest, &cfg.experiment, &cfg.protocol)?;
    let logs = run.join("logs");
    let mut pretrain_curves = Vec::new();
    for (name, log) in &out.logs {
        log.write_jsonl(&logs.join(format!("{name}.jsonl")))?;
        if name.starts_with("pretrain-") {
            pretrain_curves.push((name.clone(), log.objectives()));
        }
    }
    if !pretrain_curves.is_empty() {
        write(&logs.join("pretrain.svg"), &curves_svg("pretraining objective", &pretrain_curves))?;
    }
    let metrics = run.join("metrics");
    out.report.write(&metrics)?;
    for &seed in &cfg.experiment.seeds {
        let curves: Vec<(String, Vec<(f64, f64)>)> = out
            .roc
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| (r.row.clone(), r.points.clone()))
            .collect();
        if !curves.is_empty() {
            write(
                &metrics.join(format!("roc-binary-seed{seed}.svg")),
                &roc_svg(&format!("held-out ROC (binary), seed {seed}"), &curves),
            )?;
        }
    }
    print!("{}", out.report.to_table());
    Ok(())
}
