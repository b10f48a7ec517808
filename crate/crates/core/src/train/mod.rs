//! Training loops for every strategy and the cross-validation harness.
//!
//! All loops are strictly serial and deterministic: a `(config, seed)` pair
//! fixes network initialisation, batch order and therefore the final bytes of
//! every checkpoint.

mod cv;
mod optim;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, BackboneRegistry, Checkpoint, CheckpointMeta, Network};
use crate::data::{AlignedSampler, Augmentation, Dataset, IndependentSampler, MimoBatch};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, LateFusion, Strategy};
use crate::losses::{objective_with_grad, LogitsBundle, SoftTargets, Temperature};
use crate::tensor::Tensor;

pub use cv::{check_disjoint, run_cross_validation, CvOptions, CvResult, RunRecord};
pub use optim::{OptimizerKind, Schedule, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub seed: u64,
    pub augmentation: Augmentation,
    /// Distillation temperature (KD strategies only).
    pub temperature: Temperature,
    /// Teacher checkpoint paths (KD strategies only).
    pub teachers: Vec<PathBuf>,
    /// Base backbone; `in_channels` is set per strategy.
    pub backbone: BackboneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mimo,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-3,
            optimizer: OptimizerKind::SgdMomentum,
            schedule: Schedule::Cosine,
            seed: 0,
            augmentation: Augmentation::None,
            temperature: Temperature::default(),
            teachers: Vec::new(),
            backbone: BackboneConfig::desknet(3, 32),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("invalid optimizer hyper-parameters".into()));
        }
        if !self.strategy.uses_teachers() && !self.teachers.is_empty() {
            return Err(Error::Config(format!(
                "strategy {} does not take teachers; distillation runs use mimo_kd or early_kd",
                self.strategy
            )));
        }
        Ok(())
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            teachers: if strategy.uses_teachers() {
                self.teachers.clone()
            } else {
                Vec::new()
            },
            ..self.clone()
        }
    }
}

/// Deterministic sub-seed for `tag` under a master seed (FNV-1a, then splitmix64).
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Logged per optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_m: f64,
    pub l_kd: f64,
    pub l_total: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub ce_per_head: Vec<f64>,
    pub kd_per_head: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_m: f64,
    pub l_kd: f64,
    pub l_total: f64,
    pub ce_per_head: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy)]
enum Sampling {
    Aligned,
    Independent,
}

#[derive(Debug, Clone, Copy)]
enum InputSelect {
    Slot(usize),
    Concat,
}

#[derive(Debug, Clone, Copy)]
enum TargetKind {
    /// Teacher `m` supervises head `m`.
    PerHead,
    /// The teachers' averaged soft target supervises the single head.
    Averaged,
}

struct Teachers<'a> {
    late: &'a LateFusion,
    kind: TargetKind,
    temperature: Temperature,
}

impl Teachers<'_> {
    fn targets(&self, batch: &MimoBatch) -> Result<SoftTargets> {
        let stacked = LogitsBundle::stack_heads(&self.late.member_logits(batch)?)?;
        Ok(match self.kind {
            TargetKind::PerHead => SoftTargets::from_logits(&stacked, self.temperature),
            TargetKind::Averaged => SoftTargets::averaged_heads(&stacked, self.temperature),
        })
    }
}

fn check_pool(dataset: &Dataset, pool: &[usize]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty training pool".into()));
    }
    if let Some(&i) = pool.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidArgument(format!("index {i} outside dataset")));
    }
    Ok(())
}

/// Seeds shared by a strategy and its distilled variant, so that KD and
/// non-KD runs differ only in the loss.
fn family_tag(strategy: Strategy) -> String {
    match strategy {
        Strategy::MimoKd => "mimo".into(),
        Strategy::EarlyKd => "early".into(),
        s => s.to_string(),
    }
}

fn build_student(cfg: &TrainConfig, dataset: &Dataset, registry: &BackboneRegistry) -> Result<Network> {
    let spec = dataset.spec();
    let backbone = cfg.backbone.with_in_channels(cfg.strategy.input_channels(&spec));
    cfg.strategy.check_backbone(&backbone, &spec)?;
    let plan = cfg.strategy.head_plan(&spec, dataset.n_classes())?;
    let seed = derive_seed(cfg.seed, &format!("{}/init", family_tag(cfg.strategy)));
    registry.build(&backbone, plan, seed)
}

fn fit(
    net: &mut Network,
    cfg: &TrainConfig,
    dataset: &Dataset,
    pool: &[usize],
    sampling: Sampling,
    select: InputSelect,
    teachers: Option<&Teachers<'_>>,
) -> Result<(Vec<StepRecord>, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_pool(dataset, pool)?;
    let m = dataset.spec().n_modalities;
    let data_seed = derive_seed(cfg.seed, &format!("{}/data", family_tag(cfg.strategy)));
    let mut independent = IndependentSampler::new(pool.to_vec(), m, data_seed)?;
    let mut aligned = AlignedSampler::new(pool.to_vec(), m, data_seed)?;
    let augment = cfg.augmentation.build();
    let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(data_seed, "augment"));
    let apply_aug = cfg.augmentation != Augmentation::None;

    let mut optimizer = Sgd::new(cfg.optimizer, cfg.momentum, cfg.weight_decay, net);
    let steps_per_epoch = pool.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let plan = net.head_plan();
    let mut steps = Vec::with_capacity(total_steps);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = match sampling {
            Sampling::Aligned => aligned.epoch(cfg.batch_size),
            Sampling::Independent => independent.epoch(cfg.batch_size),
        };
        let first_step = steps.len();
        for slots in batches {
            let batch = if apply_aug {
                MimoBatch::gather(dataset, &slots, Some((augment.as_ref(), &mut aug_rng)))?
            } else {
                MimoBatch::gather(dataset, &slots, None)?
            };
            let (input, labels) = match select {
                InputSelect::Slot(s) => (batch.slot_input(s)?, vec![batch.labels[s].clone()]),
                InputSelect::Concat if plan.n_heads == 1 => {
                    (batch.concat_input.clone(), vec![batch.labels[0].clone()])
                }
                InputSelect::Concat => (batch.concat_input.clone(), batch.labels.clone()),
            };
            let targets = teachers.map(|t| t.targets(&batch)).transpose()?;
            let (out, cache) = net.forward_train(&input)?;
            let logits = LogitsBundle::from_output(&out, plan)?;
            let (losses, grad) = objective_with_grad(&logits, &labels, targets.as_ref())?;
            if !losses.l_total.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite loss at step {step} ({})",
                    cfg.strategy
                )));
            }
            let grad = Tensor::from_vec(out.shape(), grad.iter().map(|&g| g as f32).collect())?;
            let grads = net.backward(cache, grad)?;
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            optimizer.step(net, &grads, lr);
            steps.push(StepRecord {
                step,
                epoch,
                lr,
                l_m: losses.l_m,
                l_kd: losses.l_kd,
                l_total: losses.l_total,
                temperature: losses.temperature,
                ce_per_head: losses.ce_per_head,
                kd_per_head: losses.kd_per_head,
            });
            step += 1;
        }
        let window = &steps[first_step..];
        let n = window.len() as f64;
        let mean = |f: fn(&StepRecord) -> f64| window.iter().map(f).sum::<f64>() / n;
        let heads = window[0].ce_per_head.len();
        let rec = EpochRecord {
            epoch,
            l_m: mean(|s| s.l_m),
            l_kd: mean(|s| s.l_kd),
            l_total: mean(|s| s.l_total),
            ce_per_head: (0..heads)
                .map(|h| window.iter().map(|s| s.ce_per_head[h]).sum::<f64>() / n)
                .collect(),
        };
        log::debug!(
            "{} epoch {epoch}: l_m={:.4} l_kd={:.4} l_total={:.4}",
            cfg.strategy,
            rec.l_m,
            rec.l_kd,
            rec.l_total
        );
        epochs.push(rec);
    }
    Ok((steps, epochs))
}

fn outcome(net: Network, strategy: Strategy, steps: Vec<StepRecord>, epochs: Vec<EpochRecord>) -> TrainOutcome {
    let (tag, modality) = match strategy {
        Strategy::Single(m) => ("single".to_string(), Some(m)),
        s => (s.to_string(), None),
    };
    TrainOutcome {
        checkpoint: Checkpoint::new(net, CheckpointMeta { strategy: tag, modality }),
        steps,
        epochs,
    }
}

fn expect_strategy(cfg: &TrainConfig, ok: impl Fn(Strategy) -> bool, what: &str) -> Result<()> {
    if ok(cfg.strategy) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} trainer called with strategy {}", cfg.strategy)))
    }
}

/// Trains a one-head network on modality `modality` only.
pub fn train_single(
    modality: usize,
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    registry: &BackboneRegistry,
) -> Result<TrainOutcome> {
    if modality >= dataset.spec().n_modalities {
        return Err(Error::InvalidArgument(format!(
            "modality {modality} out of range for {} modalities",
            dataset.spec().n_modalities
        )));
    }
    let cfg = cfg.with_strategy(Strategy::Single(modality));
    let mut net = build_student(&cfg, dataset, registry)?;
    let (steps, epochs) = fit(
        &mut net,
        &cfg,
        dataset,
        pool,
        Sampling::Aligned,
        InputSelect::Slot(modality),
        None,
    )?;
    Ok(outcome(net, cfg.strategy, steps, epochs))
}

/// Early fusion: aligned, channel-concatenated input; one head.
pub fn train_early(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    registry: &BackboneRegistry,
) -> Result<TrainOutcome> {
    expect_strategy(cfg, |s| s == Strategy::Early, "early fusion")?;
    let mut net = build_student(cfg, dataset, registry)?;
    let (steps, epochs) = fit(&mut net, cfg, dataset, pool, Sampling::Aligned, InputSelect::Concat, None)?;
    Ok(outcome(net, cfg.strategy, steps, epochs))
}

/// Late fusion: one single-modality network per modality, each with its own
/// derived seeds, returned in modality order.
pub fn train_late(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    registry: &BackboneRegistry,
) -> Result<Vec<TrainOutcome>> {
    (0..dataset.spec().n_modalities)
        .map(|m| train_single(m, dataset, pool, cfg, registry))
        .collect()
}

/// MM-MIMO: independent batches, one head per modality slot, loss `L_M`.
pub fn train_mimo(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    registry: &BackboneRegistry,
) -> Result<TrainOutcome> {
    if cfg.strategy == Strategy::MimoKd || !cfg.teachers.is_empty() {
        return Err(Error::Config(
            "distillation requested without the mimo_kd trainer".into(),
        ));
    }
    expect_strategy(cfg, |s| s == Strategy::Mimo, "MM-MIMO")?;
    let mut net = build_student(cfg, dataset, registry)?;
    let (steps, epochs) = fit(
        &mut net,
        cfg,
        dataset,
        pool,
        Sampling::Independent,
        InputSelect::Concat,
        None,
    )?;
    Ok(outcome(net, cfg.strategy, steps, epochs))
}

fn check_teachers(teachers: &LateFusion, dataset: &Dataset) -> Result<()> {
    let spec = dataset.spec();
    if teachers.len() != spec.n_modalities {
        return Err(Error::Config(format!(
            "{} teachers for {} modalities",
            teachers.len(),
            spec.n_modalities
        )));
    }
    for t in teachers.members() {
        if t.head_plan().classes != dataset.n_classes() {
            return Err(Error::Config(format!(
                "teacher has {} classes, dataset has {}",
                t.head_plan().classes,
                dataset.n_classes()
            )));
        }
        if t.config().in_channels != spec.channels_per_modality || t.config().input_side != spec.image_side {
            return Err(Error::Config("teacher input does not match the dataset's modality images".into()));
        }
    }
    Ok(())
}

/// MM-MIMO + KD: independent batches; teacher `m` runs on slot `m` of the
/// same batch and supervises head `m`; loss `L_M + T²·L_KD`. Teachers are
/// only read.
pub fn train_mimo_kd(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    teachers: &LateFusion,
    registry: &BackboneRegistry,
) -> Result<TrainOutcome> {
    expect_strategy(cfg, |s| s == Strategy::MimoKd, "MM-MIMO + KD")?;
    check_teachers(teachers, dataset)?;
    let mut net = build_student(cfg, dataset, registry)?;
    let t = Teachers {
        late: teachers,
        kind: TargetKind::PerHead,
        temperature: cfg.temperature,
    };
    let (steps, epochs) = fit(
        &mut net,
        cfg,
        dataset,
        pool,
        Sampling::Independent,
        InputSelect::Concat,
        Some(&t),
    )?;
    Ok(outcome(net, cfg.strategy, steps, epochs))
}

/// Early fusion + KD: aligned batches; the single head is distilled towards
/// the mean of the teachers' soft targets.
pub fn train_early_kd(
    dataset: &Dataset,
    pool: &[usize],
    cfg: &TrainConfig,
    teachers: &LateFusion,
    registry: &BackboneRegistry,
) -> Result<TrainOutcome> {
    expect_strategy(cfg, |s| s == Strategy::EarlyKd, "early fusion + KD")?;
    check_teachers(teachers, dataset)?;
    let mut net = build_student(cfg, dataset, registry)?;
    let t = Teachers {
        late: teachers,
        kind: TargetKind::Averaged,
        temperature: cfg.temperature,
    };
    let (steps, epochs) = fit(
        &mut net,
        cfg,
        dataset,
        pool,
        Sampling::Aligned,
        InputSelect::Concat,
        Some(&t),
    )?;
    Ok(outcome(net, cfg.strategy, steps, epochs))
}

/// Wraps a checkpoint of any non-late strategy for evaluation.
pub fn fusion_model(checkpoint: &Checkpoint, strategy: Strategy) -> Result<FusionModel> {
    let network = checkpoint.network.clone();
    Ok(match strategy {
        Strategy::Single(m) => FusionModel::Single { modality: m, network },
        Strategy::Early | Strategy::EarlyKd => FusionModel::Early { strategy, network },
        Strategy::Mimo | Strategy::MimoKd => FusionModel::Mimo { strategy, network },
        Strategy::Late => {
            return Err(Error::InvalidArgument(
                "late fusion is assembled from single-modality checkpoints".into(),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_tag_and_master() {
        let a = derive_seed(1, "single0/init");
        assert_eq!(a, derive_seed(1, "single0/init"));
        assert_ne!(a, derive_seed(1, "single1/init"));
        assert_ne!(a, derive_seed(2, "single0/init"));
    }

    #[test]
    fn teachers_rejected_for_plain_strategies() {
        let cfg = TrainConfig {
            strategy: Strategy::Mimo,
            teachers: vec!["t.ckpt".into()],
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(cfg.with_strategy(Strategy::MimoKd).validate().is_ok());
        assert!(cfg.with_strategy(Strategy::Early).teachers.is_empty());
    }
}
