//! Subnetwork-independence probe for MM-MIMO models: per-head max-softmax
//! confidence when every slot holds the aligned specimen, or when a single
//! modality is fed to all slots.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::Network;
use crate::data::{Dataset, MimoBatch};
use crate::error::{Error, Result};
use crate::fusion::forward_mimo;
use crate::losses::softmax;
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 20;

/// How the non-selected slots are filled in a single-modality probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFill {
    /// Every slot receives the chosen modality's image.
    #[default]
    Replicate,
    /// Only the chosen slot is filled; the others are zero images.
    ZeroFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProbeMode {
    AllModalities,
    SingleModality { modality: usize, fill: ProbeFill },
}

impl ProbeMode {
    /// `all` followed by each single-modality probe.
    pub fn all_modes(n_modalities: usize, fill: ProbeFill) -> Vec<ProbeMode> {
        std::iter::once(ProbeMode::AllModalities)
            .chain((0..n_modalities).map(|modality| ProbeMode::SingleModality { modality, fill }))
            .collect()
    }

    pub fn file_tag(&self) -> String {
        match self {
            ProbeMode::AllModalities => "all".into(),
            ProbeMode::SingleModality { modality, fill: ProbeFill::Replicate } => format!("mod{modality}"),
            ProbeMode::SingleModality { modality, fill: ProbeFill::ZeroFill } => {
                format!("mod{modality}_zero")
            }
        }
    }
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_tag())
    }
}

impl FromStr for ProbeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ProbeMode::AllModalities);
        }
        let rest = s
            .strip_prefix("mod")
            .ok_or_else(|| Error::InvalidArgument(format!("invalid probe mode '{s}'")))?;
        let (num, fill) = match rest.strip_suffix("_zero") {
            Some(n) => (n, ProbeFill::ZeroFill),
            None => (rest, ProbeFill::Replicate),
        };
        let modality = num
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid probe mode '{s}'")))?;
        Ok(ProbeMode::SingleModality { modality, fill })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfidence {
    pub mean: f64,
    /// Counts over `bins` equal-width bins spanning `[1/K, 1]`.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProfile {
    pub mode: ProbeMode,
    pub classes: usize,
    pub n_items: usize,
    pub heads: Vec<HeadConfidence>,
}

impl ConfidenceProfile {
    pub fn from_confidences(mode: ProbeMode, classes: usize, per_head: &[Vec<f64>], bins: usize) -> Self {
        let lo = 1.0 / classes as f64;
        let width = (1.0 - lo) / bins as f64;
        let heads = per_head
            .iter()
            .map(|conf| {
                let mut histogram = vec![0; bins];
                for &c in conf {
                    let bin = (((c - lo) / width).floor().max(0.0) as usize).min(bins - 1);
                    histogram[bin] += 1;
                }
                HeadConfidence {
                    mean: conf.iter().sum::<f64>() / conf.len().max(1) as f64,
                    histogram,
                }
            })
            .collect();
        Self {
            mode,
            classes,
            n_items: per_head.first().map_or(0, Vec::len),
            heads,
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.mean).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn probe_batch(dataset: &Dataset, indices: &[usize], mode: ProbeMode) -> Result<MimoBatch> {
    let mut batch = MimoBatch::aligned(dataset, indices)?;
    let ProbeMode::SingleModality { modality, fill } = mode else {
        return Ok(batch);
    };
    let spec = dataset.spec();
    let c = spec.channels_per_modality;
    let img = c * spec.image_side * spec.image_side;
    let m_total = spec.n_modalities;
    let data = batch.concat_input.data_mut();
    for item in 0..indices.len() {
        let base = item * m_total * img;
        let src: Vec<f32> = data[base + modality * img..base + (modality + 1) * img].to_vec();
        for slot in (0..m_total).filter(|&s| s != modality) {
            let dst = &mut data[base + slot * img..base + (slot + 1) * img];
            match fill {
                ProbeFill::Replicate => dst.copy_from_slice(&src),
                ProbeFill::ZeroFill => dst.fill(0.0),
            }
        }
    }
    Ok(batch)
}

/// Per-head max-softmax confidences of `model` over `indices` under `mode`.
pub fn confidence_probe(
    model: &Network,
    dataset: &Dataset,
    indices: &[usize],
    mode: ProbeMode,
) -> Result<ConfidenceProfile> {
    let spec = dataset.spec();
    if let ProbeMode::SingleModality { modality, .. } = mode {
        if modality >= spec.n_modalities {
            return Err(Error::InvalidArgument(format!(
                "probe modality {modality} out of range for {} modalities",
                spec.n_modalities
            )));
        }
    }
    if model.head_plan().n_heads != spec.n_modalities {
        return Err(Error::InvalidArgument(
            "confidence probe needs a multi-head (MM-MIMO) model".into(),
        ));
    }
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty probe set".into()));
    }
    let mut per_head = vec![Vec::with_capacity(indices.len()); spec.n_modalities];
    for chunk in indices.chunks(128) {
        let batch = probe_batch(dataset, chunk, mode)?;
        let logits = forward_mimo(model, &batch)?;
        for b in 0..logits.batch() {
            for (h, out) in per_head.iter_mut().enumerate() {
                let p = softmax(logits.head(b, h));
                out.push(p.iter().cloned().fold(0.0, f64::max));
            }
        }
    }
    Ok(ConfidenceProfile::from_confidences(
        mode,
        dataset.n_classes(),
        &per_head,
        DEFAULT_BINS,
    ))
}

/// Helper for tests and tooling: the probe input tensor itself.
pub fn probe_input(dataset: &Dataset, indices: &[usize], mode: ProbeMode) -> Result<Tensor> {
    Ok(probe_batch(dataset, indices, mode)?.concat_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!("all".parse::<ProbeMode>().unwrap(), ProbeMode::AllModalities);
        assert_eq!(
            "mod2_zero".parse::<ProbeMode>().unwrap(),
            ProbeMode::SingleModality { modality: 2, fill: ProbeFill::ZeroFill }
        );
        for m in ProbeMode::all_modes(4, ProbeFill::Replicate) {
            assert_eq!(m.to_string().parse::<ProbeMode>().unwrap(), m);
        }
        assert!("bogus".parse::<ProbeMode>().is_err());
    }

    #[test]
    fn histogram_integrates_to_items() {
        let conf = vec![vec![0.2, 0.5, 1.0, 0.99, 0.3], vec![0.2; 5]];
        let p = ConfidenceProfile::from_confidences(ProbeMode::AllModalities, 5, &conf, 10);
        for h in &p.heads {
            assert_eq!(h.histogram.iter().sum::<usize>(), 5);
        }
        assert_eq!(p.heads[1].histogram[0], 5);
        assert_eq!(p.heads[0].histogram[9], 2);
    }
}
