use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of every sample to exactly one validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    /// `counts[fold][class]`.
    pub fn class_counts(&self, labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; n_classes]; self.n_folds];
        for (&f, &y) in self.assignments.iter().zip(labels) {
            counts[f][y] += 1;
        }
        counts
    }

    /// Checks the partition and the ±1 stratification tolerance.
    pub fn check(&self, labels: &[usize], n_classes: usize) -> Result<()> {
        if self.assignments.len() != labels.len() {
            return Err(Error::shape(labels.len(), self.assignments.len()));
        }
        if let Some(&f) = self.assignments.iter().find(|&&f| f >= self.n_folds) {
            return Err(Error::InvalidArgument(format!("fold index {f} out of range")));
        }
        let counts = self.class_counts(labels, n_classes);
        for k in 0..n_classes {
            let total: usize = counts.iter().map(|c| c[k]).sum();
            let exact = total as f64 / self.n_folds as f64;
            for fold in &counts {
                if (fold[k] as f64 - exact).abs() >= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "class {k}: fold holds {} of {total}, expected about {exact:.2}",
                        fold[k]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stratified k-fold split. Within each class the samples are shuffled and
/// dealt round-robin, starting where the previous class stopped so that fold
/// sizes stay balanced too.
pub fn stratified_kfold(labels: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut cursor = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if !members.is_empty() && members.len() < n_folds {
            log::warn!(
                "class {class} has {} samples for {n_folds} folds; some folds get none",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for &i in &members {
            assignments[i] = cursor % n_folds;
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        n_folds,
        assignments,
    })
}
