//! Summed per-head cross-entropy, temperature-softened targets, per-head KL
//! distillation and their `L_M + T²·L_KD` combination.
//!
//! Everything here is `f64`. Batch reduction is the mean per head, followed by
//! a sum over heads. The KL term is `KL(teacher ‖ student)` with the teacher
//! held constant.

use serde::{Deserialize, Serialize};

use crate::backbones::HeadPlan;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TEMPERATURE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(Self(t))
        } else {
            Err(Error::Temperature(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(DEFAULT_TEMPERATURE)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Per-head logits of one forward pass, stored `[item][head][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBundle {
    batch: usize,
    n_heads: usize,
    classes: usize,
    data: Vec<f64>,
}

impl LogitsBundle {
    pub fn new(batch: usize, n_heads: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * n_heads * classes {
            return Err(Error::shape(batch * n_heads * classes, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self {
            batch,
            n_heads,
            classes,
            data,
        })
    }

    /// Splits a `(B, n_heads·K)` network output into contiguous head blocks.
    pub fn from_output(output: &Tensor, plan: HeadPlan) -> Result<Self> {
        if output.shape().len() != 2 || output.shape()[1] != plan.output_width() {
            return Err(Error::shape(
                format!("(B, {})", plan.output_width()),
                format!("{:?}", output.shape()),
            ));
        }
        Self::new(
            output.batch(),
            plan.n_heads,
            plan.classes,
            output.data().iter().map(|&v| v as f64).collect(),
        )
    }

    /// Stacks single-head bundles (one per model) into one multi-head bundle.
    pub fn stack_heads(parts: &[LogitsBundle]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no bundles to stack".into()))?;
        let (b, k) = (first.batch, first.classes);
        if parts.iter().any(|p| p.batch != b || p.classes != k) {
            return Err(Error::InvalidArgument("bundles differ in batch or classes".into()));
        }
        let n_heads: usize = parts.iter().map(|p| p.n_heads).sum();
        let mut data = Vec::with_capacity(b * n_heads * k);
        for i in 0..b {
            for p in parts {
                for h in 0..p.n_heads {
                    data.extend_from_slice(p.head(i, h));
                }
            }
        }
        Self::new(b, n_heads, k, data)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn head(&self, item: usize, head: usize) -> &[f64] {
        let start = (item * self.n_heads + head) * self.classes;
        &self.data[start..start + self.classes]
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.batch, self.n_heads, self.classes) != (other.batch, other.n_heads, other.classes) {
            return Err(Error::shape(
                format!("{}x{}x{}", self.batch, self.n_heads, self.classes),
                format!("{}x{}x{}", other.batch, other.n_heads, other.classes),
            ));
        }
        Ok(())
    }
}

// Logits are divided by T (not multiplied by 1/T) so that p_s(z, T) and
// p_s(z/T, 1) agree bit for bit.
fn log_sum_exp(z: &[f64], t: f64) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    max + z.iter().map(|&v| (v / t - max).exp()).sum::<f64>().ln()
}

/// `log p_s(z, T)`.
pub fn log_soft_targets(z: &[f64], t: Temperature) -> Vec<f64> {
    let lse = log_sum_exp(z, t.0);
    z.iter().map(|&v| v / t.0 - lse).collect()
}

/// `p_s(z, T)_j = exp(z_j/T) / Σ_k exp(z_k/T)`, evaluated with max subtraction.
pub fn soft_targets(z: &[f64], t: Temperature) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t.0));
    let e: Vec<f64> = z.iter().map(|&v| (v / t.0 - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Plain softmax (`T = 1`).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    soft_targets(z, Temperature(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLosses {
    pub total: f64,
    pub per_head: Vec<f64>,
}

/// `L_M = Σ_heads mean_b −log softmax(z_{b,h})[y_{h,b}]`.
pub fn cross_entropy_sum(logits: &LogitsBundle, labels: &[Vec<usize>]) -> Result<HeadLosses> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Cross-entropy sum and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: &LogitsBundle,
    labels: &[Vec<usize>],
) -> Result<(HeadLosses, Vec<f64>)> {
    if labels.len() != logits.n_heads || labels.iter().any(|l| l.len() != logits.batch) {
        return Err(Error::shape(
            format!("{} label vectors of length {}", logits.n_heads, logits.batch),
            format!("{} vectors", labels.len()),
        ));
    }
    let k = logits.classes;
    if let Some(&bad) = labels.iter().flatten().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let one = Temperature(1.0);
    let inv_b = 1.0 / logits.batch as f64;
    let mut per_head = vec![0.0; logits.n_heads];
    let mut grad = vec![0.0; logits.data.len()];
    for b in 0..logits.batch {
        for (h, head_labels) in labels.iter().enumerate() {
            let z = logits.head(b, h);
            let y = head_labels[b];
            let logp = log_soft_targets(z, one);
            per_head[h] -= logp[y] * inv_b;
            let g = &mut grad[(b * logits.n_heads + h) * k..][..k];
            for (j, gj) in g.iter_mut().enumerate() {
                *gj = (logp[j].exp() - if j == y { 1.0 } else { 0.0 }) * inv_b;
            }
        }
    }
    Ok((
        HeadLosses {
            total: per_head.iter().sum(),
            per_head,
        },
        grad,
    ))
}

/// Teacher distributions `p_s(ẑ, T)` for every `(item, head)`; constants
/// with respect to differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets {
    temperature: Temperature,
    batch: usize,
    n_heads: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl SoftTargets {
    pub fn from_logits(teacher: &LogitsBundle, t: Temperature) -> Self {
        let mut probs = Vec::with_capacity(teacher.data.len());
        for chunk in teacher.data.chunks(teacher.classes) {
            probs.extend(soft_targets(chunk, t));
        }
        Self {
            temperature: t,
            batch: teacher.batch,
            n_heads: teacher.n_heads,
            classes: teacher.classes,
            probs,
        }
    }

    /// One target per item: the mean of the teacher heads' soft targets
    /// (used to distil several teachers into a single-head student).
    pub fn averaged_heads(teacher: &LogitsBundle, t: Temperature) -> Self {
        let per_head = Self::from_logits(teacher, t);
        let k = teacher.classes;
        let mut probs = vec![0.0; teacher.batch * k];
        for b in 0..teacher.batch {
            for h in 0..teacher.n_heads {
                let p = per_head.head(b, h);
                for j in 0..k {
                    probs[b * k + j] += p[j] / teacher.n_heads as f64;
                }
            }
        }
        Self {
            temperature: t,
            batch: teacher.batch,
            n_heads: 1,
            classes: k,
            probs,
        }
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn head(&self, item: usize, head: usize) -> &[f64] {
        let start = (item * self.n_heads + head) * self.classes;
        &self.probs[start..start + self.classes]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdLoss {
    pub total: f64,
    pub per_head: Vec<f64>,
    pub temperature: Temperature,
}

/// `L_KD = Σ_heads mean_b KL(p_s(ẑ, T) ‖ p_s(z, T))`.
pub fn kd_loss(student: &LogitsBundle, teacher: &LogitsBundle, t: Temperature) -> Result<KdLoss> {
    student.same_shape(teacher)?;
    Ok(kd_with_grad(student, &SoftTargets::from_logits(teacher, t))?.0)
}

/// KD loss against precomputed targets, with the gradient of the *unscaled*
/// KD term with respect to the student logits.
pub fn kd_with_grad(student: &LogitsBundle, targets: &SoftTargets) -> Result<(KdLoss, Vec<f64>)> {
    if (student.batch, student.n_heads, student.classes)
        != (targets.batch, targets.n_heads, targets.classes)
    {
        return Err(Error::shape(
            format!("{}x{}x{}", targets.batch, targets.n_heads, targets.classes),
            format!("{}x{}x{}", student.batch, student.n_heads, student.classes),
        ));
    }
    let t = targets.temperature;
    let k = student.classes;
    let inv_b = 1.0 / student.batch as f64;
    let mut per_head = vec![0.0; student.n_heads];
    let mut grad = vec![0.0; student.data.len()];
    for b in 0..student.batch {
        for h in 0..student.n_heads {
            let log_q = log_soft_targets(student.head(b, h), t);
            let p = targets.head(b, h);
            let kl: f64 = p
                .iter()
                .zip(&log_q)
                .filter(|(&pj, _)| pj > 0.0)
                .map(|(&pj, &lq)| pj * (pj.ln() - lq))
                .sum();
            per_head[h] += kl.max(0.0) * inv_b;
            let g = &mut grad[(b * student.n_heads + h) * k..][..k];
            for j in 0..k {
                g[j] = (log_q[j].exp() - p[j]) * inv_b / t.0;
            }
        }
    }
    Ok((
        KdLoss {
            total: per_head.iter().sum(),
            per_head,
            temperature: t,
        },
        grad,
    ))
}

/// `L_T = L_M + T²·L_KD`; `kd` must have been computed at `t`.
pub fn total_loss(l_m: f64, kd: &KdLoss, t: Temperature) -> Result<f64> {
    if kd.temperature != t {
        return Err(Error::TemperatureMismatch {
            computed: kd.temperature.0,
            combined: t.0,
        });
    }
    Ok(combine(l_m, kd.total, t))
}

/// The bare `l_m + T²·l_kd` arithmetic.
pub fn combine(l_m: f64, l_kd: f64, t: Temperature) -> f64 {
    l_m + t.0 * t.0 * l_kd
}

/// One step's loss decomposition, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_kd: f64,
    pub l_total: f64,
    pub temperature: f64,
    pub ce_per_head: Vec<f64>,
    pub kd_per_head: Vec<f64>,
}

/// Loss and gradient of `L_T` with respect to the student logits. Without
/// targets this is plain `L_M` (and `l_kd = 0`).
pub fn objective_with_grad(
    student: &LogitsBundle,
    labels: &[Vec<usize>],
    targets: Option<&SoftTargets>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (ce, mut grad) = cross_entropy_with_grad(student, labels)?;
    let Some(targets) = targets else {
        return Ok((
            LossBreakdown {
                l_m: ce.total,
                l_kd: 0.0,
                l_total: ce.total,
                temperature: 1.0,
                kd_per_head: vec![0.0; ce.per_head.len()],
                ce_per_head: ce.per_head,
            },
            grad,
        ));
    };
    let t = targets.temperature;
    let (kd, kd_grad) = kd_with_grad(student, targets)?;
    let scale = t.0 * t.0;
    for (g, kg) in grad.iter_mut().zip(&kd_grad) {
        *g += scale * kg;
    }
    Ok((
        LossBreakdown {
            l_m: ce.total,
            l_kd: kd.total,
            l_total: total_loss(ce.total, &kd, t)?,
            temperature: t.0,
            ce_per_head: ce.per_head,
            kd_per_head: kd.per_head,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp(t: f64) -> Temperature {
        Temperature::new(t).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = LogitsBundle::new(1, 4, 2, vec![0.0; 8]).unwrap();
        let ce = cross_entropy_sum(&logits, &[vec![0], vec![1], vec![1], vec![0]]).unwrap();
        for h in &ce.per_head {
            assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!((ce.total - 2.772589).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit_drives_ce_to_zero() {
        let mut last = f64::INFINITY;
        for a in [1.0, 5.0, 20.0] {
            let logits = LogitsBundle::new(1, 1, 3, vec![a, 0.0, 0.0]).unwrap();
            let ce = cross_entropy_sum(&logits, &[vec![0]]).unwrap().total;
            assert!(ce < last);
            last = ce;
        }
        let far = LogitsBundle::new(1, 1, 3, vec![700.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy_sum(&far, &[vec![0]]).unwrap().total, 0.0);
    }

    #[test]
    fn label_out_of_range() {
        let logits = LogitsBundle::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            cross_entropy_sum(&logits, &[vec![2]]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn soft_target_values() {
        assert_eq!(soft_targets(&[0.0, 0.0], temp(3.0)), vec![0.5, 0.5]);
        let p = soft_targets(&[2f64.ln(), 0.0], temp(1.0));
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let flat = soft_targets(&[10.0, 0.0], temp(1e6));
        assert!((flat[0] - 0.5).abs() < 1e-5 && (flat[1] - 0.5).abs() < 1e-5);
        // No overflow on huge logits.
        let big = soft_targets(&[1e6, 0.0], temp(1.0));
        assert_eq!(big, vec![1.0, 0.0]);
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        assert_eq!(Temperature::default().value(), 4.0);
    }

    #[test]
    fn kd_zero_for_identical_and_shifted() {
        let s = LogitsBundle::new(2, 2, 3, vec![0.1, -0.4, 2.0, 1.0, 1.0, 0.0, -3.0, 0.5, 0.2, 0.0, 0.0, 0.0]).unwrap();
        assert!(kd_loss(&s, &s, temp(4.0)).unwrap().total.abs() < 1e-15);
        let shifted: Vec<f64> = s
            .data()
            .chunks(6)
            .enumerate()
            .flat_map(|(b, c)| c.iter().map(move |v| v + 3.5 * (b as f64 + 1.0)))
            .collect();
        let t = LogitsBundle::new(2, 2, 3, shifted).unwrap();
        assert!(kd_loss(&s, &t, temp(2.0)).unwrap().total.abs() < 1e-12);
    }

    #[test]
    fn kd_binary_analytic() {
        let teacher = LogitsBundle::new(1, 1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let student = LogitsBundle::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let kd = kd_loss(&student, &teacher, temp(1.0)).unwrap();
        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((kd.total - expected).abs() < 1e-15);
        assert!((kd.total - 0.056633).abs() < 1e-6);
    }

    #[test]
    fn kd_shape_mismatch() {
        let a = LogitsBundle::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let b = LogitsBundle::new(1, 1, 2, vec![0.0; 2]).unwrap();
        assert!(kd_loss(&a, &b, temp(1.0)).is_err());
    }

    #[test]
    fn total_loss_combination() {
        let kd = |v: f64, t: f64| KdLoss {
            total: v,
            per_head: vec![v],
            temperature: temp(t),
        };
        assert_eq!(total_loss(0.7, &kd(0.2, 1.0), temp(1.0)).unwrap(), 0.7 + 0.2);
        assert_eq!(total_loss(0.7, &kd(0.0, 3.0), temp(3.0)).unwrap(), 0.7);
        assert_eq!(total_loss(1.0, &kd(0.25, 2.0), temp(2.0)).unwrap(), 2.0);
        assert!(matches!(
            total_loss(1.0, &kd(0.25, 2.0), temp(4.0)),
            Err(Error::TemperatureMismatch { .. })
        ));
    }

    #[test]
    fn averaged_targets_are_distributions() {
        let teacher = LogitsBundle::new(2, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 0.0, 0.0, 5.0, 0.0, 0.0, 5.0]).unwrap();
        let avg = SoftTargets::averaged_heads(&teacher, temp(1.0));
        for b in 0..2 {
            let p = avg.head(b, 0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((avg.head(1, 0)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stack_and_split_heads() {
        let out = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let bundle = LogitsBundle::from_output(&out, HeadPlan::new(2, 2).unwrap()).unwrap();
        assert_eq!(bundle.head(1, 0), &[5.0, 6.0]);
        assert_eq!(bundle.head(1, 1), &[7.0, 8.0]);
        let a = LogitsBundle::new(2, 1, 2, vec![1.0, 2.0, 5.0, 6.0]).unwrap();
        let b = LogitsBundle::new(2, 1, 2, vec![3.0, 4.0, 7.0, 8.0]).unwrap();
        assert_eq!(LogitsBundle::stack_heads(&[a, b]).unwrap(), bundle);
    }
}
