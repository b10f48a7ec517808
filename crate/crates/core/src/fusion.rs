//! Strategy definitions and the forward / prediction contracts of each.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, Checkpoint, HeadPlan, Network};
use crate::data::{MimoBatch, ModalitySpec};
use crate::error::{Error, Result};
use crate::losses::{softmax, LogitsBundle};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Strategy {
    /// One network on one modality.
    Single(usize),
    Early,
    Late,
    Mimo,
    MimoKd,
    EarlyKd,
}

impl Strategy {
    /// The nine-row ladder: singles, early, late, MM-MIMO, early+KD, MM-MIMO+KD.
    pub fn ladder(n_modalities: usize) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = (0..n_modalities).map(Strategy::Single).collect();
        out.extend([
            Strategy::Early,
            Strategy::Late,
            Strategy::Mimo,
            Strategy::EarlyKd,
            Strategy::MimoKd,
        ]);
        out
    }

    pub fn input_channels(&self, spec: &ModalitySpec) -> usize {
        match self {
            Strategy::Single(_) | Strategy::Late => spec.channels_per_modality,
            _ => spec.fused_channels(),
        }
    }

    pub fn n_heads(&self, spec: &ModalitySpec) -> usize {
        match self {
            Strategy::Mimo | Strategy::MimoKd => spec.n_modalities,
            _ => 1,
        }
    }

    pub fn head_plan(&self, spec: &ModalitySpec, classes: usize) -> Result<HeadPlan> {
        HeadPlan::new(self.n_heads(spec), classes)
    }

    pub fn uses_teachers(&self) -> bool {
        matches!(self, Strategy::MimoKd | Strategy::EarlyKd)
    }

    /// Checks a backbone's input channels against the data spec.
    pub fn check_backbone(&self, backbone: &BackboneConfig, spec: &ModalitySpec) -> Result<()> {
        let expected = self.input_channels(spec);
        if backbone.in_channels != expected {
            return Err(Error::Config(format!(
                "{self} expects {expected} input channels, backbone has {}",
                backbone.in_channels
            )));
        }
        if backbone.input_side != spec.image_side {
            return Err(Error::Config(format!(
                "backbone input side {} does not match images of side {}",
                backbone.input_side, spec.image_side
            )));
        }
        if let Strategy::Single(m) = self {
            if *m >= spec.n_modalities {
                return Err(Error::Config(format!(
                    "modality {m} out of range for {} modalities",
                    spec.n_modalities
                )));
            }
        }
        Ok(())
    }

    /// Display name in the style of the comparison table.
    pub fn table_name(&self) -> String {
        match self {
            Strategy::Single(m) => format!("Modality {m}"),
            Strategy::Early => "Early fusion".into(),
            Strategy::Late => "Late fusion".into(),
            Strategy::Mimo => "MM-MIMO".into(),
            Strategy::EarlyKd => "Early fusion + KD".into(),
            Strategy::MimoKd => "MM-MIMO + KD".into(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Single(m) => write!(f, "single{m}"),
            Strategy::Early => f.write_str("early"),
            Strategy::Late => f.write_str("late"),
            Strategy::Mimo => f.write_str("mimo"),
            Strategy::MimoKd => f.write_str("mimo_kd"),
            Strategy::EarlyKd => f.write_str("early_kd"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "early" => Strategy::Early,
            "late" => Strategy::Late,
            "mimo" => Strategy::Mimo,
            "mimo_kd" => Strategy::MimoKd,
            "early_kd" => Strategy::EarlyKd,
            other => {
                let m = other
                    .strip_prefix("single")
                    .map(|r| r.trim_start_matches([':', '_']))
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown strategy '{other}'")))?;
                Strategy::Single(m)
            }
        })
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Lowest index among the maxima.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-item class distributions and the strategy that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPrediction {
    pub probs: Vec<Vec<f64>>,
    pub source: Strategy,
}

impl FusionPrediction {
    pub fn classes(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }
}

/// Softmax each head, then average the head distributions item-wise.
pub fn average_head_probs(bundle: &LogitsBundle) -> Vec<Vec<f64>> {
    let k = bundle.classes();
    (0..bundle.batch())
        .map(|b| {
            let mut acc = vec![0.0; k];
            for h in 0..bundle.n_heads() {
                for (a, p) in acc.iter_mut().zip(softmax(bundle.head(b, h))) {
                    *a += p;
                }
            }
            acc.iter_mut().for_each(|a| *a /= bundle.n_heads() as f64);
            acc
        })
        .collect()
}

fn run(model: &Network, input: &Tensor) -> Result<LogitsBundle> {
    LogitsBundle::from_output(&model.forward(input)?, model.head_plan())
}

fn require_aligned(batch: &MimoBatch) -> Result<()> {
    if batch.is_aligned() {
        Ok(())
    } else {
        Err(Error::UnalignedBatch)
    }
}

/// Early fusion: the channel-concatenated aligned input through one network.
pub fn forward_early(model: &Network, batch: &MimoBatch) -> Result<LogitsBundle> {
    require_aligned(batch)?;
    if model.head_plan().n_heads != 1 {
        return Err(Error::InvalidArgument("early fusion model must have one head".into()));
    }
    run(model, &batch.concat_input)
}

/// Single-head prediction of an early-fusion (or early+KD) model.
pub fn predict_early(model: &Network, batch: &MimoBatch, source: Strategy) -> Result<FusionPrediction> {
    let logits = forward_early(model, batch)?;
    Ok(FusionPrediction {
        probs: average_head_probs(&logits),
        source,
    })
}

/// A single-modality network's prediction on its own slot of an aligned batch.
pub fn predict_single(model: &Network, modality: usize, batch: &MimoBatch) -> Result<FusionPrediction> {
    require_aligned(batch)?;
    let logits = run(model, &batch.slot_input(modality)?)?;
    Ok(FusionPrediction {
        probs: average_head_probs(&logits),
        source: Strategy::Single(modality),
    })
}

/// Late fusion: one single-head network per modality, in modality order.
#[derive(Debug, Clone, PartialEq)]
pub struct LateFusion {
    members: Vec<Network>,
}

impl LateFusion {
    pub fn new(members: Vec<Network>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("late fusion needs at least one member".into()));
        }
        let k = members[0].head_plan().classes;
        if members.iter().any(|m| m.head_plan() != HeadPlan { n_heads: 1, classes: k }) {
            return Err(Error::InvalidArgument(
                "late fusion members must be single-head with equal class counts".into(),
            ));
        }
        Ok(Self { members })
    }

    /// Orders checkpoints by their modality tag; tags must cover `0..M` once each.
    pub fn from_checkpoints(checkpoints: &[Checkpoint], n_modalities: usize) -> Result<Self> {
        let mut slots: Vec<Option<Network>> = vec![None; n_modalities];
        for ck in checkpoints {
            let m = ck.meta.modality.ok_or_else(|| {
                Error::Config("late fusion checkpoint without modality tag".into())
            })?;
            match slots.get_mut(m) {
                Some(slot @ None) => *slot = Some(ck.network.clone()),
                Some(Some(_)) => {
                    return Err(Error::Config(format!("duplicate checkpoint for modality {m}")))
                }
                None => return Err(Error::Config(format!("modality {m} out of range"))),
            }
        }
        let members = slots
            .into_iter()
            .enumerate()
            .map(|(m, s)| s.ok_or_else(|| Error::Config(format!("missing modality model {m}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn members(&self) -> &[Network] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member `m`'s logits on the slot-`m` images of any batch (aligned or not).
    pub fn member_logits(&self, batch: &MimoBatch) -> Result<Vec<LogitsBundle>> {
        if batch.n_modalities() != self.members.len() {
            return Err(Error::InvalidArgument(format!(
                "batch has {} slots, late fusion has {} members",
                batch.n_modalities(),
                self.members.len()
            )));
        }
        self.members
            .iter()
            .enumerate()
            .map(|(m, net)| run(net, &batch.slot_input(m)?))
            .collect()
    }
}

/// Late fusion: each member's softmax on its own modality, arithmetic mean.
pub fn forward_late(
    models: &LateFusion,
    batch: &MimoBatch,
) -> Result<(Vec<LogitsBundle>, FusionPrediction)> {
    require_aligned(batch)?;
    let per_model = models.member_logits(batch)?;
    let stacked = LogitsBundle::stack_heads(&per_model)?;
    let probs = average_head_probs(&stacked);
    Ok((
        per_model,
        FusionPrediction {
            probs,
            source: Strategy::Late,
        },
    ))
}

/// MM-MIMO forward: head `m` reads output units `[m·K, (m+1)·K)`. Accepts
/// independent (training) and aligned batches.
pub fn forward_mimo(model: &Network, batch: &MimoBatch) -> Result<LogitsBundle> {
    let plan = model.head_plan();
    if plan.n_heads != batch.n_modalities() {
        return Err(Error::InvalidArgument(format!(
            "model has {} heads for {} modality slots",
            plan.n_heads,
            batch.n_modalities()
        )));
    }
    if batch.concat_input.shape()[1] != model.config().in_channels {
        return Err(Error::shape(
            format!("{} input channels", model.config().in_channels),
            batch.concat_input.shape()[1],
        ));
    }
    run(model, &batch.concat_input)
}

/// MM-MIMO test-time prediction: softmax every head, average, argmax.
pub fn predict_mimo(model: &Network, batch: &MimoBatch) -> Result<FusionPrediction> {
    require_aligned(batch)?;
    let logits = forward_mimo(model, batch)?;
    Ok(FusionPrediction {
        probs: average_head_probs(&logits),
        source: Strategy::Mimo,
    })
}

/// A trained model of any strategy, ready for aligned evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionModel {
    Single { modality: usize, network: Network },
    /// Early fusion or early fusion + KD.
    Early { strategy: Strategy, network: Network },
    Late(LateFusion),
    /// MM-MIMO or MM-MIMO + KD.
    Mimo { strategy: Strategy, network: Network },
}

impl FusionModel {
    pub fn strategy(&self) -> Strategy {
        match self {
            FusionModel::Single { modality, .. } => Strategy::Single(*modality),
            FusionModel::Early { strategy, .. } | FusionModel::Mimo { strategy, .. } => *strategy,
            FusionModel::Late(_) => Strategy::Late,
        }
    }

    pub fn predict(&self, batch: &MimoBatch) -> Result<FusionPrediction> {
        let mut pred = match self {
            FusionModel::Single { modality, network } => predict_single(network, *modality, batch)?,
            FusionModel::Early { network, strategy } => predict_early(network, batch, *strategy)?,
            FusionModel::Late(late) => forward_late(late, batch)?.1,
            FusionModel::Mimo { network, .. } => predict_mimo(network, batch)?,
        };
        pred.source = self.strategy();
        Ok(pred)
    }

    /// FLOPs and parameters of one aligned forward pass; late fusion sums its members.
    pub fn complexity(&self) -> crate::backbones::ComplexityReport {
        match self {
            FusionModel::Single { network, .. }
            | FusionModel::Early { network, .. }
            | FusionModel::Mimo { network, .. } => network.complexity(),
            FusionModel::Late(late) => late.members().iter().map(Network::complexity).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ladder(4) {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("single:3".parse::<Strategy>().unwrap(), Strategy::Single(3));
        assert!("middle".parse::<Strategy>().is_err());
        assert_eq!(Strategy::ladder(4).len(), 9);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn averaging_examples() {
        // Two heads with opposite one-hot-like logits average to a tie.
        let big = 800.0;
        let b = LogitsBundle::new(1, 4, 2, vec![big, 0.0, 0.0, big, big, 0.0, 0.0, big]).unwrap();
        let p = average_head_probs(&b);
        assert_eq!(p[0], vec![0.5, 0.5]);
        assert_eq!(argmax(&p[0]), 0);
        let same = LogitsBundle::new(1, 3, 3, [0.3, -1.0, 2.0].repeat(3)).unwrap();
        let single = softmax(&[0.3, -1.0, 2.0]);
        for (a, s) in average_head_probs(&same)[0].iter().zip(&single) {
            assert!((a - s).abs() < 1e-15);
        }
    }
}
