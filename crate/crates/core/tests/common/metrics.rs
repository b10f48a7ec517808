//! Brute-force weighted metrics: explicit per-class counting and pairwise AUC.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Oracle {
    pub f1: f64,
    pub sens: f64,
    pub spec: f64,
    pub auc: f64,
}

pub fn first_max(p: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..p.len() {
        if p[j] > p[best] {
            best = j;
        }
    }
    best
}

/// Mann-Whitney form: P(score⁺ > score⁻) + ½·P(score⁺ = score⁻).
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

pub fn oracle(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Oracle {
    let n = labels.len() as f64;
    let pred: Vec<usize> = probs.iter().map(|p| first_max(p)).collect();
    let (mut f1, mut sens, mut spec, mut auc, mut auc_w) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        let mut tn = 0.0;
        for i in 0..labels.len() {
            match (labels[i] == c, pred[i] == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        let support = tp + fn_;
        if support == 0.0 {
            continue;
        }
        let w = support / n;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = tp / support;
        f1 += w * if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        sens += w * r;
        spec += w * if tn + fp > 0.0 { tn / (tn + fp) } else { 1.0 };
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(a) = pairwise_auc(&scores, &pos) {
            auc += w * a;
            auc_w += w;
        }
    }
    Oracle {
        f1: 100.0 * f1,
        sens: 100.0 * sens,
        spec: 100.0 * spec,
        auc: if auc_w > 0.0 { 100.0 * auc / auc_w } else { f64::NAN },
    }
}

/// Scores drawn from a coarse grid so that ties are common.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>, usize) {
    let k = rng.random_range(2..=5);
    let n = rng.random_range(1..=60);
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0..6) as f64).collect();
            let s: f64 = raw.iter().sum::<f64>().max(1.0);
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    (probs, labels, k)
}
