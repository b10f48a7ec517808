//! Synthetic surrogate for a multimodal leukocyte dataset.
//!
//! Every `(modality, class)` pair owns a fixed template: a random smooth
//! envelope modulating a plane-wave carrier whose orientation is specific to
//! the modality. A specimen's modality image shows the template of its true class with
//! probability `informativeness[m]` (otherwise the template of a uniformly
//! drawn class) plus Gaussian pixel noise. Pixel values are quantised to
//! multiples of 1/255 so that the PNG layout on disk is lossless.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, Image, ModalitySpec, MultimodalSample, SpecimenRecord};
use crate::error::{Error, Result};

/// Per-class specimen counts of the reference leukocyte collection
/// (NEU, LYM, EOS, MO, BAS).
pub const REFERENCE_CLASS_COUNTS: [usize; 5] = [9616, 4448, 677, 124, 47];

pub const WBC_CLASS_NAMES: [&str; 5] = ["NEU", "LYM", "EOS", "MO", "BAS"];

/// Coarse grid resolution of the templates before bilinear upsampling.
const TEMPLATE_GRID: usize = 4;
const TEMPLATE_AMPLITUDE: f32 = 0.35;
const CARRIER_PERIOD: f32 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub class_ratios: Vec<f64>,
    pub class_names: Vec<String>,
    pub spec: ModalitySpec,
    pub informativeness: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The reference class profile scaled to 1/10: 1492 specimens, four
    /// modalities of 3×32×32.
    pub fn reference_scaled() -> Self {
        let total: usize = REFERENCE_CLASS_COUNTS.iter().sum();
        Self {
            n_samples: 1492,
            class_ratios: REFERENCE_CLASS_COUNTS
                .iter()
                .map(|&c| c as f64 / total as f64)
                .collect(),
            class_names: WBC_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            spec: ModalitySpec {
                n_modalities: 4,
                channels_per_modality: 3,
                image_side: 32,
            },
            informativeness: vec![0.85, 0.9, 0.9, 0.95],
            noise_std: 0.15,
            seed: 0,
        }
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties in the
/// remainder go to the lower class index.
pub fn largest_remainder_counts(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::RatioSum(sum));
    }
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    Ok(counts)
}

fn template_seed(seed: u64, modality: usize, class: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((modality as u64) << 32)
        ^ (class as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ 0x7465_6d70_6c61_7465
}

/// Plane-wave carrier of modality `m` out of `n`: period [`CARRIER_PERIOD`]
/// pixels, oriented at `π·m/n`.
fn carrier(modality: usize, n_modalities: usize, y: usize, x: usize) -> f32 {
    let theta = std::f32::consts::PI * modality as f32 / n_modalities as f32;
    let phase = (x as f32 * theta.cos() + y as f32 * theta.sin()) / CARRIER_PERIOD;
    (2.0 * std::f32::consts::PI * phase).cos()
}

/// Zero-mean, unit max-abs raw pattern for `(modality, class)`, before the
/// joint orthogonalisation of [`modality_templates`].
pub fn modality_template(
    seed: u64,
    modality: usize,
    n_modalities: usize,
    class: usize,
    channels: usize,
    side: usize,
) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(template_seed(seed, modality, class));
    let g = TEMPLATE_GRID;
    let mut out = vec![0f32; channels * side * side];
    for c in 0..channels {
        let grid: Vec<f32> = (0..g * g).map(|_| StandardNormal.sample(&mut rng)).collect();
        for y in 0..side {
            let fy = (y as f32 + 0.5) / side as f32 * (g - 1) as f32;
            let y0 = (fy.floor() as usize).min(g - 2);
            let ty = fy - y0 as f32;
            for x in 0..side {
                let fx = (x as f32 + 0.5) / side as f32 * (g - 1) as f32;
                let x0 = (fx.floor() as usize).min(g - 2);
                let tx = fx - x0 as f32;
                let v = grid[y0 * g + x0] * (1.0 - ty) * (1.0 - tx)
                    + grid[y0 * g + x0 + 1] * (1.0 - ty) * tx
                    + grid[(y0 + 1) * g + x0] * ty * (1.0 - tx)
                    + grid[(y0 + 1) * g + x0 + 1] * ty * tx;
                out[(c * side + y) * side + x] = v * carrier(modality, n_modalities, y, x);
            }
        }
    }
    let mean = out.iter().sum::<f32>() / out.len() as f32;
    out.iter_mut().for_each(|v| *v -= mean);
    let max = out.iter().fold(0f32, |a, v| a.max(v.abs())).max(1e-6);
    out.iter_mut().for_each(|v| *v /= max);
    out
}

/// Templates for every `(modality, class)` pair, indexed `[modality][class]`.
/// The raw patterns are orthogonalised jointly (Gram-Schmidt in modality-major
/// order), so a pattern of one modality has no linear component along any
/// other modality's patterns, then rescaled to unit max-abs.
pub fn modality_templates(
    seed: u64,
    n_modalities: usize,
    classes: usize,
    channels: usize,
    side: usize,
) -> Result<Vec<Vec<Vec<f32>>>> {
    let dim = channels * side * side;
    if n_modalities * classes >= dim {
        return Err(Error::InvalidArgument(format!(
            "{n_modalities}x{classes} templates do not fit in {dim} pixels"
        )));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_modalities * classes);
    let mut out = vec![Vec::with_capacity(classes); n_modalities];
    for (m, row) in out.iter_mut().enumerate() {
        for class in 0..classes {
            let mut v: Vec<f64> = modality_template(seed, m, n_modalities, class, channels, side)
                .into_iter()
                .map(f64::from)
                .collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(Error::InvalidArgument("degenerate template set".into()));
            }
            basis.push(v.iter().map(|x| x / norm).collect());
            let max = v.iter().fold(0f64, |a, x| a.max(x.abs()));
            row.push(v.iter().map(|x| (x / max) as f32).collect());
        }
    }
    Ok(out)
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<Dataset> {
    let spec = config.spec;
    spec.validate()?;
    let k = config.class_ratios.len();
    if config.class_names.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} class names for {} ratios",
            config.class_names.len(),
            k
        )));
    }
    if config.informativeness.len() != spec.n_modalities
        || config.informativeness.iter().any(|p| !(0.0..=1.0).contains(p))
    {
        return Err(Error::InvalidArgument(format!(
            "need {} informativeness values in [0,1]",
            spec.n_modalities
        )));
    }
    if !(config.noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be nonnegative".into()));
    }
    if config.n_samples < k {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {} classes",
            config.n_samples, k
        )));
    }
    let counts = largest_remainder_counts(config.n_samples, &config.class_ratios)?;
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {c} receives no samples at n_samples={}",
            config.n_samples
        )));
    }

    let (c, side) = (spec.channels_per_modality, spec.image_side);
    let templates = modality_templates(config.seed, spec.n_modalities, k, c, side)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(cls, &n)| std::iter::repeat_n(cls, n))
        .collect();
    // Fisher-Yates with the dataset rng so that order is part of the seed contract.
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let noise = config.noise_std as f32;
    let width = (config.n_samples - 1).to_string().len().max(5);
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut records = Vec::with_capacity(config.n_samples);
    for (i, &label) in labels.iter().enumerate() {
        let specimen_id = format!("s{i:0width$}");
        let mut images = Vec::with_capacity(spec.n_modalities);
        for m in 0..spec.n_modalities {
            let shown = if rng.random::<f64>() < config.informativeness[m] {
                label
            } else {
                rng.random_range(0..k)
            };
            let tpl = &templates[m][shown];
            let data = tpl
                .iter()
                .map(|&t| {
                    let n: f32 = if noise > 0.0 {
                        noise * rng.sample::<f64, _>(StandardNormal) as f32
                    } else {
                        0.0
                    };
                    quantize(0.5 + TEMPLATE_AMPLITUDE * t + n)
                })
                .collect();
            images.push(Image::new(c, side, data)?);
        }
        records.push(SpecimenRecord {
            specimen_id: specimen_id.clone(),
            label,
        });
        samples.push(MultimodalSample {
            images,
            label,
            specimen_id,
        });
    }

    let manifest = DatasetManifest {
        class_names: config.class_names.clone(),
        class_counts: counts,
        modality_spec: spec,
        samples: records,
        synthetic: Some(config.clone()),
    };
    Dataset::new(manifest, samples)
}
