use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mimofuse::backbones::{BackboneRegistry, Checkpoint};
use mimofuse::config::{ExperimentConfig, OUTPUT_ROOT_ENV};
use mimofuse::data::{
    generate_synthetic_dataset, read_dataset, stratified_kfold, write_dataset, Dataset, FoldPlan,
};
use mimofuse::eval::{
    confidence_probe, evaluate, render_profile_png, ComparisonTable, ProbeFill, ProbeMode,
};
use mimofuse::fusion::{FusionModel, LateFusion, Strategy};
use mimofuse::train::{
    fusion_model, run_cross_validation, train_early, train_early_kd, train_late, train_mimo,
    train_mimo_kd, train_single, CvOptions, TrainOutcome,
};

#[derive(Parser, Debug)]
#[command(name = "mimofuse", version, about = "Multimodal fusion experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (sets both data.seed and train.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; defaults to $MIMOFUSE_OUT, then ./artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Directory holding single-modality checkpoints to use as KD teachers.
    #[arg(long, global = true)]
    reuse_teachers: Option<PathBuf>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Registered backbone name.
    #[arg(long, global = true)]
    backbone: Option<String>,
    /// Number of cross-validation folds.
    #[arg(long, global = true)]
    folds: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train one strategy on one fold.
    Train {
        /// single<m> | early | late | mimo | mimo_kd | early_kd (default: train.strategy)
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the strategy ladder over the folds and emit the comparison table.
    Cv {
        /// Only these folds (default: all).
        #[arg(long = "only-fold")]
        only_folds: Vec<usize>,
        /// Only these strategies (default: the full ladder).
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate checkpoints (one file, or M single-modality files for late fusion).
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Evaluate on every sample instead of the fold's validation split.
        #[arg(long)]
        all: bool,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Per-head confidence histograms for a multi-head checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        all: bool,
        /// Fill non-probed slots with zeros instead of replicating the probed image.
        #[arg(long)]
        zero_fill: bool,
        /// A single mode (`all`, `mod<m>`, `mod<m>_zero`); default: every mode.
        #[arg(long)]
        mode: Option<ProbeMode>,
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-render a comparison table written by `cv`.
    Report {
        /// `table.json` or the directory containing it.
        input: PathBuf,
    },
}

impl Command {
    fn overrides(&self) -> &[String] {
        match self {
            Command::GenData { overrides }
            | Command::Train { overrides, .. }
            | Command::Cv { overrides, .. }
            | Command::Eval { overrides, .. }
            | Command::Probe { overrides, .. } => overrides,
            Command::Report { .. } => &[],
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let record = json!({
                "status": "error",
                "kind": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}

/// Validation problems exit with 2, everything else with 1.
fn classify(err: &anyhow::Error) -> (String, u8) {
    if let Some(e) = err.downcast_ref::<mimofuse::Error>() {
        let code = match e {
            mimofuse::Error::Io(_) | mimofuse::Error::Image(_) | mimofuse::Error::Csv(_) => 1,
            _ => 2,
        };
        return (e.kind().to_string(), code);
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return ("usage".into(), 2);
    }
    ("runtime".into(), 1)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn output_root(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

fn resolve_config(common: &Common, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let mut all = Vec::new();
    if let Some(seed) = common.seed {
        all.push(format!("data.seed={seed}"));
        all.push(format!("train.seed={seed}"));
    }
    if let Some(t) = common.temperature {
        all.push(format!("kd.temperature={t}"));
    }
    if let Some(b) = &common.backbone {
        all.push(format!("model.backbone=\"{b}\""));
    }
    if let Some(k) = common.folds {
        all.push(format!("train.folds={k}"));
    }
    all.extend(overrides.iter().cloned());
    Ok(ExperimentConfig::load(common.config.as_deref(), &all)?)
}

fn write_resolved(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()
}

/// Fresh output directory, refusing to reuse a non-empty one without `--force`.
fn fresh_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(mimofuse::Error::NotEmpty(dir.to_path_buf()).into());
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    match &cfg.data.dir {
        Some(dir) => read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display())),
        None => Ok(generate_synthetic_dataset(&cfg.data.synth_config()?)?),
    }
}

fn fold_plan(cfg: &ExperimentConfig, dataset: &Dataset) -> anyhow::Result<FoldPlan> {
    Ok(stratified_kfold(&dataset.labels(), cfg.train.folds, cfg.train.fold_seed)?)
}

fn registry(cfg: &ExperimentConfig) -> anyhow::Result<BackboneRegistry> {
    let reg = BackboneRegistry::default();
    if !reg.names().contains(&cfg.model.backbone.as_str()) {
        return Err(usage(format!(
            "unknown backbone '{}' (registered: {})",
            cfg.model.backbone,
            reg.names().join(", ")
        )));
    }
    Ok(reg)
}

fn split(plan: &FoldPlan, dataset: &Dataset, fold: usize, all: bool) -> anyhow::Result<Vec<usize>> {
    if all {
        return Ok((0..dataset.len()).collect());
    }
    if fold >= plan.n_folds {
        return Err(usage(format!("fold {fold} of a {}-fold plan", plan.n_folds)));
    }
    Ok(plan.validation_indices(fold))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.common;
    if let Command::Report { input } = &cli.command {
        return report(input);
    }
    let cfg = resolve_config(&common, cli.command.overrides())?;
    let root = output_root(&common);
    match cli.command {
        Command::GenData { .. } => gen_data(&cfg, &common, &root),
        Command::Train { strategy, fold, .. } => {
            train(&cfg, &common, &root, strategy.unwrap_or(cfg.train.strategy), fold)
        }
        Command::Cv {
            only_folds,
            strategies,
            ..
        } => cv(&cfg, &common, &root, only_folds, strategies),
        Command::Eval {
            checkpoints,
            fold,
            all,
            ..
        } => eval(&cfg, &root, &checkpoints, fold, all),
        Command::Probe {
            checkpoint,
            fold,
            all,
            zero_fill,
            mode,
            ..
        } => probe(&cfg, &root, &checkpoint, fold, all, zero_fill, mode),
        Command::Report { .. } => unreachable!(),
    }
}

fn gen_data(cfg: &ExperimentConfig, common: &Common, root: &Path) -> anyhow::Result<()> {
    let dir = cfg.data.dir.clone().unwrap_or_else(|| root.join("data"));
    let ds = generate_synthetic_dataset(&cfg.data.synth_config()?)?;
    write_dataset(&dir, &ds, common.force)?;
    let mut resolved = cfg.clone();
    resolved.data.dir = Some(dir.clone());
    fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
    println!(
        "{}",
        json!({
            "status": "ok",
            "dir": dir,
            "n_samples": ds.len(),
            "class_counts": ds.manifest().class_counts,
        })
    );
    Ok(())
}

fn save_outcome(dir: &Path, name: &str, out: &TrainOutcome) -> anyhow::Result<PathBuf> {
    let path = dir.join(format!("{name}.ckpt"));
    out.checkpoint.save(&path)?;
    let mut steps = String::new();
    for s in &out.steps {
        steps.push_str(&serde_json::to_string(s)?);
        steps.push('\n');
    }
    fs::write(dir.join(format!("{name}.steps.jsonl")), steps)?;
    Ok(path)
}

fn load_teachers(paths: &[PathBuf], m: usize) -> anyhow::Result<LateFusion> {
    let ckpts = paths
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading teacher {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(LateFusion::from_checkpoints(&ckpts, m)?)
}

fn teacher_paths(cfg: &ExperimentConfig, common: &Common, m: usize) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(dir) = &common.reuse_teachers {
        let paths: Vec<PathBuf> = (0..m).map(|i| dir.join(format!("single{i}.ckpt"))).collect();
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(usage(format!("teacher checkpoint {} not found", missing.display())));
        }
        return Ok(paths);
    }
    if cfg.kd.teachers.is_empty() {
        return Err(usage(
            "distillation needs teachers: pass --reuse-teachers <dir> or set kd.teachers",
        ));
    }
    Ok(cfg.kd.teachers.clone())
}

fn train(
    cfg: &ExperimentConfig,
    common: &Common,
    root: &Path,
    strategy: Strategy,
    fold: usize,
) -> anyhow::Result<()> {
    let ds = load_dataset(cfg)?;
    let plan = fold_plan(cfg, &ds)?;
    if fold >= plan.n_folds {
        return Err(usage(format!("fold {fold} of a {}-fold plan", plan.n_folds)));
    }
    let reg = registry(cfg)?;
    let train_idx = plan.train_indices(fold);
    let val_idx = plan.validation_indices(fold);
    mimofuse::train::check_disjoint(&train_idx, &val_idx)?;
    let m = ds.spec().n_modalities;

    let mut resolved = cfg.clone();
    resolved.train.strategy = strategy;
    let mut tcfg = resolved.train_config(strategy)?;
    let teachers = if strategy.uses_teachers() {
        let paths = teacher_paths(cfg, common, m)?;
        resolved.kd.teachers = paths.clone();
        tcfg.teachers = paths.clone();
        Some(load_teachers(&paths, m)?)
    } else {
        None
    };
    tcfg.validate()?;

    let dir = root.join("runs").join(format!("{}-{strategy}-fold{fold}", timestamp()));
    fresh_dir(&dir, common.force)?;
    write_resolved(&resolved, &dir)?;
    let (model, checkpoints) = match strategy {
        Strategy::Late => {
            let outs = train_late(&ds, &train_idx, &tcfg, &reg)?;
            let mut paths = Vec::new();
            for (i, o) in outs.iter().enumerate() {
                paths.push(save_outcome(&dir, &format!("single{i}"), o)?);
            }
            let ckpts: Vec<Checkpoint> = outs.into_iter().map(|o| o.checkpoint).collect();
            (FusionModel::Late(LateFusion::from_checkpoints(&ckpts, m)?), paths)
        }
        s => {
            let out = match s {
                Strategy::Single(i) => train_single(i, &ds, &train_idx, &tcfg, &reg)?,
                Strategy::Early => train_early(&ds, &train_idx, &tcfg, &reg)?,
                Strategy::Mimo => train_mimo(&ds, &train_idx, &tcfg, &reg)?,
                Strategy::MimoKd => train_mimo_kd(&ds, &train_idx, &tcfg, teachers.as_ref().unwrap(), &reg)?,
                Strategy::EarlyKd => train_early_kd(&ds, &train_idx, &tcfg, teachers.as_ref().unwrap(), &reg)?,
                Strategy::Late => unreachable!(),
            };
            let name = match s {
                Strategy::Single(i) => format!("single{i}"),
                _ => "model".to_string(),
            };
            let path = save_outcome(&dir, &name, &out)?;
            (fusion_model(&out.checkpoint, s)?, vec![path])
        }
    };
    let metrics = evaluate(&model, &ds, &val_idx)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!(
        "{}",
        json!({
            "status": "ok",
            "run_dir": dir,
            "checkpoints": checkpoints,
            "weighted_f1": metrics.weighted_f1,
        })
    );
    Ok(())
}

fn cv(
    cfg: &ExperimentConfig,
    common: &Common,
    root: &Path,
    only_folds: Vec<usize>,
    strategies: Vec<Strategy>,
) -> anyhow::Result<()> {
    let ds = load_dataset(cfg)?;
    let plan = fold_plan(cfg, &ds)?;
    let reg = registry(cfg)?;
    let base = cfg.train_config(cfg.train.strategy)?;
    let base = mimofuse::train::TrainConfig {
        teachers: Vec::new(),
        ..base
    };
    if let Some(dir) = &common.reuse_teachers {
        if !dir.join("runs").is_dir() {
            return Err(usage(format!("{} holds no runs/ directory to reuse teachers from", dir.display())));
        }
    }
    write_resolved(cfg, root)?;
    let table_path = root.join("table.json");
    if table_path.exists() && !common.force {
        return Err(mimofuse::Error::NotEmpty(table_path).into());
    }
    let opts = CvOptions {
        strategies,
        folds: only_folds,
        out_root: Some(root.to_path_buf()),
        reuse_teachers: common.reuse_teachers.clone(),
        seed_per_fold: false,
    };
    let result = run_cross_validation(&ds, &plan, &base, &reg, &opts)?;
    result.table.write_json(&table_path)?;
    result.table.write_csv(&root.join("table.csv"))?;
    fs::write(root.join("table.txt"), result.table.to_text())?;
    write_json(&root.join("records.json"), &result.records)?;
    print!("{}", result.table.to_text());
    Ok(())
}

fn run_id(checkpoint: &Path) -> String {
    let parent = checkpoint
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or("run");
    let stem = checkpoint.file_stem().and_then(|n| n.to_str()).unwrap_or("model");
    format!("{parent}-{stem}")
}

fn model_from_checkpoints(paths: &[PathBuf], m: usize) -> anyhow::Result<FusionModel> {
    let ckpts = paths
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if ckpts.len() > 1 {
        return Ok(FusionModel::Late(LateFusion::from_checkpoints(&ckpts, m)?));
    }
    let ckpt = &ckpts[0];
    let strategy = match (ckpt.meta.strategy.as_str(), ckpt.meta.modality) {
        ("single", Some(i)) => Strategy::Single(i),
        (s, _) => s
            .parse::<Strategy>()
            .map_err(|_| usage(format!("checkpoint strategy '{s}' not recognised")))?,
    };
    Ok(fusion_model(ckpt, strategy)?)
}

fn eval(cfg: &ExperimentConfig, root: &Path, checkpoints: &[PathBuf], fold: usize, all: bool) -> anyhow::Result<()> {
    let ds = load_dataset(cfg)?;
    let plan = fold_plan(cfg, &ds)?;
    let idx = split(&plan, &ds, fold, all)?;
    let model = model_from_checkpoints(checkpoints, ds.spec().n_modalities)?;
    let metrics = evaluate(&model, &ds, &idx)?;
    let dir = root.join("eval").join(run_id(&checkpoints[0]));
    write_resolved(cfg, &dir)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!(
        "{}",
        json!({
            "status": "ok",
            "metrics": dir.join("metrics.json"),
            "strategy": model.strategy().to_string(),
            "weighted_f1": metrics.weighted_f1,
        })
    );
    Ok(())
}

fn probe(
    cfg: &ExperimentConfig,
    root: &Path,
    checkpoint: &Path,
    fold: usize,
    all: bool,
    zero_fill: bool,
    mode: Option<ProbeMode>,
) -> anyhow::Result<()> {
    let ds = load_dataset(cfg)?;
    let plan = fold_plan(cfg, &ds)?;
    let idx = split(&plan, &ds, fold, all)?;
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let m = ds.spec().n_modalities;
    if ckpt.network.head_plan().n_heads != m {
        return Err(usage(format!(
            "probe needs a {m}-head checkpoint, got {} head(s)",
            ckpt.network.head_plan().n_heads
        )));
    }
    let fill = if zero_fill { ProbeFill::ZeroFill } else { ProbeFill::Replicate };
    let modes = match mode {
        Some(mode) => vec![mode],
        None => ProbeMode::all_modes(m, fill),
    };
    let dir = root.join("eval").join(run_id(checkpoint));
    write_resolved(cfg, &dir)?;
    let mut figures = Vec::new();
    for mode in modes {
        let profile = confidence_probe(&ckpt.network, &ds, &idx, mode)?;
        let tag = mode.file_tag();
        profile.save(&dir.join(format!("profile_{tag}.json")))?;
        let fig = dir.join(format!("fig4_{tag}.png"));
        render_profile_png(&profile, &fig)?;
        figures.push(json!({ "mode": tag, "figure": fig, "means": profile.means() }));
    }
    println!("{}", json!({ "status": "ok", "figures": figures }));
    Ok(())
}

fn report(input: &Path) -> anyhow::Result<()> {
    let path = if input.is_dir() { input.join("table.json") } else { input.to_path_buf() };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table: ComparisonTable = serde_json::from_str(&text).map_err(mimofuse::Error::from)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    table.write_csv(&dir.join("table.csv"))?;
    fs::write(dir.join("table.txt"), table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}
