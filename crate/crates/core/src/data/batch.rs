//! Batch construction.
//!
//! Aligned batches put the same specimen in every modality slot (early fusion,
//! late fusion and every evaluation path). Independent batches fill each slot
//! from its own shuffled stream over the training pool, which is how MM-MIMO
//! is trained.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Augment, Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MimoBatch {
    /// `(B, M·C, S, S)`; channels `[m·C, (m+1)·C)` hold modality `m`.
    pub concat_input: Tensor,
    /// `M` label vectors of length `B`, one per modality slot.
    pub labels: Vec<Vec<usize>>,
    /// Specimen id behind each `(slot, item)`.
    pub specimens: Vec<Vec<String>>,
    pub channels_per_modality: usize,
}

impl MimoBatch {
    pub fn batch_size(&self) -> usize {
        self.concat_input.batch()
    }

    pub fn n_modalities(&self) -> usize {
        self.labels.len()
    }

    /// True when every item holds one specimen in all slots.
    pub fn is_aligned(&self) -> bool {
        let first = &self.specimens[0];
        self.specimens[1..].iter().all(|s| s == first)
    }

    /// Images of slot `m` as a `(B, C, S, S)` tensor.
    pub fn slot_input(&self, m: usize) -> Result<Tensor> {
        let c = self.channels_per_modality;
        self.concat_input.channel_slice(m * c, c)
    }

    /// Gathers `slots[m][b]` (dataset indices) into a batch, applying
    /// `augment` to every image when given.
    pub fn gather(
        dataset: &Dataset,
        slots: &[Vec<usize>],
        mut augment: Option<(&dyn Augment, &mut dyn RngCore)>,
    ) -> Result<Self> {
        let spec = dataset.spec();
        if slots.len() != spec.n_modalities {
            return Err(Error::shape(
                format!("{} slots", spec.n_modalities),
                slots.len(),
            ));
        }
        let b = slots[0].len();
        if slots.iter().any(|s| s.len() != b) {
            return Err(Error::InvalidArgument("slots differ in batch size".into()));
        }
        let (c, side) = (spec.channels_per_modality, spec.image_side);
        let img_len = spec.image_len();
        let mut data = vec![0f32; b * spec.n_modalities * img_len];
        for item in 0..b {
            for (m, slot) in slots.iter().enumerate() {
                let sample = dataset.sample(slot[item]);
                let dst = &mut data[(item * spec.n_modalities + m) * img_len..][..img_len];
                match augment.as_mut() {
                    Some((aug, rng)) => {
                        let mut img = sample.images[m].clone();
                        aug.apply(&mut img, &mut **rng);
                        dst.copy_from_slice(&img.data);
                    }
                    None => dst.copy_from_slice(&sample.images[m].data),
                }
            }
        }
        Ok(Self {
            concat_input: Tensor::from_vec(&[b, spec.n_modalities * c, side, side], data)?,
            labels: slots
                .iter()
                .map(|s| s.iter().map(|&i| dataset.sample(i).label).collect())
                .collect(),
            specimens: slots
                .iter()
                .map(|s| s.iter().map(|&i| dataset.sample(i).specimen_id.clone()).collect())
                .collect(),
            channels_per_modality: c,
        })
    }

    /// Aligned batch of dataset `indices`.
    pub fn aligned(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let slots = vec![indices.to_vec(); dataset.spec().n_modalities];
        Self::gather(dataset, &slots, None)
    }
}

/// Channel-concatenates each sample's modality images in modality order.
pub fn make_aligned_batch(samples: &[&MultimodalSample]) -> Result<MimoBatch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty sample list".into()))?;
    let m = first.images.len();
    if m == 0 {
        return Err(Error::InvalidArgument("sample without images".into()));
    }
    let (c, side) = (first.images[0].channels, first.images[0].side);
    let img_len = c * side * side;
    let mut data = Vec::with_capacity(samples.len() * m * img_len);
    for s in samples {
        if s.images.len() != m {
            return Err(Error::shape(format!("{m} modalities"), s.images.len()));
        }
        for img in &s.images {
            if img.channels != c || img.side != side {
                return Err(Error::shape(
                    format!("{c}x{side}x{side}"),
                    format!("{}x{}x{}", img.channels, img.side, img.side),
                ));
            }
            data.extend_from_slice(&img.data);
        }
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let ids: Vec<String> = samples.iter().map(|s| s.specimen_id.clone()).collect();
    Ok(MimoBatch {
        concat_input: Tensor::from_vec(&[samples.len(), m * c, side, side], data)?,
        labels: vec![labels; m],
        specimens: vec![ids; m],
        channels_per_modality: c,
    })
}

/// One independent batch: each slot takes the head of its own fresh shuffle of
/// the dataset (reshuffling when `batch_size` exceeds the dataset).
pub fn make_independent_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<MimoBatch> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let n = dataset.len();
    let slots: Vec<Vec<usize>> = (0..dataset.spec().n_modalities)
        .map(|_| {
            let mut stream = Vec::with_capacity(batch_size);
            while stream.len() < batch_size {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                stream.extend(perm.into_iter().take(batch_size - stream.len()));
            }
            stream
        })
        .collect();
    MimoBatch::gather(dataset, &slots, None)
}

/// Per-epoch independent shuffles of a training pool, one per modality slot.
#[derive(Debug, Clone)]
pub struct IndependentSampler {
    pool: Vec<usize>,
    n_modalities: usize,
    rng: ChaCha8Rng,
}

impl IndependentSampler {
    pub fn new(pool: Vec<usize>, n_modalities: usize, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidArgument("empty training pool".into()));
        }
        Ok(Self {
            pool,
            n_modalities,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Slot index lists for every batch of the next epoch.
    pub fn epoch(&mut self, batch_size: usize) -> Vec<Vec<Vec<usize>>> {
        let perms: Vec<Vec<usize>> = (0..self.n_modalities)
            .map(|_| {
                let mut p = self.pool.clone();
                p.shuffle(&mut self.rng);
                p
            })
            .collect();
        (0..self.pool.len())
            .step_by(batch_size.max(1))
            .map(|start| {
                let end = (start + batch_size).min(self.pool.len());
                perms.iter().map(|p| p[start..end].to_vec()).collect()
            })
            .collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Per-epoch shuffle of a training pool where every slot sees the same specimen.
#[derive(Debug, Clone)]
pub struct AlignedSampler {
    pool: Vec<usize>,
    n_modalities: usize,
    rng: ChaCha8Rng,
}

impl AlignedSampler {
    pub fn new(pool: Vec<usize>, n_modalities: usize, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidArgument("empty training pool".into()));
        }
        Ok(Self {
            pool,
            n_modalities,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn epoch(&mut self, batch_size: usize) -> Vec<Vec<Vec<usize>>> {
        let mut perm = self.pool.clone();
        perm.shuffle(&mut self.rng);
        perm.chunks(batch_size.max(1))
            .map(|chunk| vec![chunk.to_vec(); self.n_modalities])
            .collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
