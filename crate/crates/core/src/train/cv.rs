use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    derive_seed, fusion_model, train_early, train_early_kd, train_mimo, train_mimo_kd, train_single,
    TrainConfig, TrainOutcome,
};
use crate::backbones::{BackboneRegistry, Checkpoint};
use crate::data::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ComparisonTable, MetricsReport, TableRow};
use crate::fusion::{FusionModel, LateFusion, Strategy};

/// Fails with the first dataset index found in both lists.
pub fn check_disjoint(train: &[usize], validation: &[usize]) -> Result<()> {
    let train: HashSet<usize> = train.iter().copied().collect();
    match validation.iter().find(|i| train.contains(i)) {
        Some(&i) => Err(Error::FoldOverlap(i)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    /// Methods to run; empty means the full ladder.
    pub strategies: Vec<Strategy>,
    /// Folds to run; empty means all of them.
    pub folds: Vec<usize>,
    /// Where `runs/<timestamp>-<strategy>-fold<k>/` directories go. Nothing
    /// is written when unset.
    pub out_root: Option<PathBuf>,
    /// Previous cv output root whose single-modality checkpoints are loaded
    /// instead of retraining the teachers.
    pub reuse_teachers: Option<PathBuf>,
    /// Vary the seed per fold (derived from the master seed).
    pub seed_per_fold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub strategy: Strategy,
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub seconds: f64,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub records: Vec<RunRecord>,
    pub table: ComparisonTable,
}

struct RunWriter {
    root: Option<PathBuf>,
    stamp: String,
}

impl RunWriter {
    fn run_id(&self, strategy: Strategy, fold: usize) -> String {
        format!("{}-{strategy}-fold{fold}", self.stamp)
    }

    fn dir(&self, run_id: &str) -> Result<Option<PathBuf>> {
        let Some(root) = &self.root else {
            return Ok(None);
        };
        let dir = root.join("runs").join(run_id);
        if dir.exists() {
            return Err(Error::NotEmpty(dir));
        }
        fs::create_dir_all(&dir)?;
        Ok(Some(dir))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `steps.jsonl` (one JSON object per optimisation step).
pub(crate) fn write_steps(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in &outcome.steps {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn teacher_path(run_dir: &Path, modality: usize) -> PathBuf {
    run_dir.join(format!("single{modality}.ckpt"))
}

fn find_reused_teacher(root: &Path, fold: usize, modality: usize) -> Result<Checkpoint> {
    let suffix = format!("-single{modality}-fold{fold}");
    let runs = root.join("runs");
    let mut found: Vec<PathBuf> = fs::read_dir(&runs)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(&suffix)))
        .map(|p| teacher_path(&p, modality))
        .filter(|p| p.exists())
        .collect();
    found.sort();
    let path = found.pop().ok_or_else(|| {
        Error::Config(format!("no single{modality} checkpoint for fold {fold} under {}", runs.display()))
    })?;
    log::info!("reusing teacher {}", path.display());
    Checkpoint::load(&path)
}

/// Runs every requested method on every requested fold. Single-modality
/// networks of a fold double as its late-fusion members and KD teachers.
pub fn run_cross_validation(
    dataset: &Dataset,
    plan: &FoldPlan,
    base: &TrainConfig,
    registry: &BackboneRegistry,
    opts: &CvOptions,
) -> Result<CvResult> {
    if plan.assignments.len() != dataset.len() {
        return Err(Error::shape(format!("fold plan for {} samples", dataset.len()), plan.assignments.len()));
    }
    let m = dataset.spec().n_modalities;
    let strategies = if opts.strategies.is_empty() {
        Strategy::ladder(m)
    } else {
        opts.strategies.clone()
    };
    let folds: Vec<usize> = if opts.folds.is_empty() {
        (0..plan.n_folds).collect()
    } else {
        opts.folds.clone()
    };
    if let Some(&k) = folds.iter().find(|&&k| k >= plan.n_folds) {
        return Err(Error::InvalidArgument(format!("fold {k} of a {}-fold plan", plan.n_folds)));
    }
    let needs_singles = strategies
        .iter()
        .any(|s| matches!(s, Strategy::Single(_) | Strategy::Late) || s.uses_teachers());
    let writer = RunWriter {
        root: opts.out_root.clone(),
        stamp: chrono::Local::now().format("%Y%m%d-%H%M%S").to_string(),
    };

    let mut records = Vec::new();
    for &k in &folds {
        let train = plan.train_indices(k);
        let val = plan.validation_indices(k);
        check_disjoint(&train, &val)?;
        let seed = if opts.seed_per_fold {
            derive_seed(base.seed, &format!("fold{k}"))
        } else {
            base.seed
        };
        let cfg = TrainConfig { seed, ..base.clone() };
        log::info!("fold {k}: {} train / {} validation", train.len(), val.len());

        let mut record = |strategy: Strategy, model: &FusionModel, dir: Option<PathBuf>, t0: Instant| -> Result<()> {
            let metrics = evaluate(model, dataset, &val)?;
            if let Some(dir) = &dir {
                write_json(&dir.join("metrics.json"), &metrics)?;
            }
            log::info!("fold {k} {strategy}: F1 {:.2}", metrics.weighted_f1);
            records.push(RunRecord {
                run_id: writer.run_id(strategy, k),
                strategy,
                fold: k,
                seed,
                n_train: train.len(),
                n_validation: val.len(),
                seconds: t0.elapsed().as_secs_f64(),
                metrics,
                dir,
            });
            Ok(())
        };

        let mut teacher_ckpts: Vec<Checkpoint> = Vec::with_capacity(m);
        let mut teacher_paths: Vec<PathBuf> = Vec::with_capacity(m);
        if needs_singles {
            for modality in 0..m {
                let strategy = Strategy::Single(modality);
                let t0 = Instant::now();
                let run_id = writer.run_id(strategy, k);
                let (ckpt, dir) = match &opts.reuse_teachers {
                    Some(root) => (find_reused_teacher(root, k, modality)?, None),
                    None => {
                        let out = train_single(modality, dataset, &train, &cfg, registry)?;
                        let dir = writer.dir(&run_id)?;
                        if let Some(dir) = &dir {
                            let single_cfg = cfg.with_strategy(strategy);
                            write_json(&dir.join("config.json"), &single_cfg)?;
                            out.checkpoint.save(&teacher_path(dir, modality))?;
                            write_steps(&dir.join("steps.jsonl"), &out)?;
                            teacher_paths.push(teacher_path(dir, modality));
                        }
                        (out.checkpoint, dir)
                    }
                };
                if strategies.contains(&strategy) {
                    record(strategy, &fusion_model(&ckpt, strategy)?, dir, t0)?;
                }
                teacher_ckpts.push(ckpt);
            }
        }
        let teachers = if needs_singles {
            Some(LateFusion::from_checkpoints(&teacher_ckpts, m)?)
        } else {
            None
        };

        for &strategy in &strategies {
            let t0 = Instant::now();
            let run_id = writer.run_id(strategy, k);
            let late = || teachers.as_ref().ok_or_else(|| Error::Config("teachers missing".into()));
            let out = match strategy {
                Strategy::Single(_) => continue,
                Strategy::Late => {
                    let dir = writer.dir(&run_id)?;
                    if let Some(dir) = &dir {
                        write_json(&dir.join("config.json"), &cfg.with_strategy(strategy))?;
                        write_json(&dir.join("members.json"), &teacher_paths)?;
                    }
                    record(strategy, &FusionModel::Late(late()?.clone()), dir, t0)?;
                    continue;
                }
                Strategy::Early => train_early(dataset, &train, &cfg.with_strategy(strategy), registry)?,
                Strategy::Mimo => train_mimo(dataset, &train, &cfg.with_strategy(strategy), registry)?,
                Strategy::EarlyKd | Strategy::MimoKd => {
                    let kd_cfg = TrainConfig {
                        teachers: teacher_paths.clone(),
                        ..cfg.with_strategy(strategy)
                    };
                    if strategy == Strategy::MimoKd {
                        train_mimo_kd(dataset, &train, &kd_cfg, late()?, registry)?
                    } else {
                        train_early_kd(dataset, &train, &kd_cfg, late()?, registry)?
                    }
                }
            };
            let dir = writer.dir(&run_id)?;
            if let Some(dir) = &dir {
                let mut resolved = cfg.with_strategy(strategy);
                if strategy.uses_teachers() {
                    resolved.teachers = teacher_paths.clone();
                }
                write_json(&dir.join("config.json"), &resolved)?;
                out.checkpoint.save(&dir.join("model.ckpt"))?;
                write_steps(&dir.join("steps.jsonl"), &out)?;
            }
            record(strategy, &fusion_model(&out.checkpoint, strategy)?, dir, t0)?;
        }
    }

    let rows = strategies
        .iter()
        .map(|&s| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == s).collect();
            let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics.clone()).collect();
            let c = runs
                .first()
                .and_then(|r| r.metrics.complexity)
                .unwrap_or_default();
            TableRow::from_runs(s, &reports, c.flops, c.params)
        })
        .collect();
    Ok(CvResult {
        records,
        table: ComparisonTable::new(&base.backbone.name, rows),
    })
}
