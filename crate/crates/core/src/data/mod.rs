//! Multimodal datasets: domain types, the synthetic surrogate generator,
//! batch construction for each fusion strategy and stratified folds.

mod augment;
mod batch;
mod folds;
mod imageops;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{Augment, Augmentation, NoAugment, RandAugmentLite};
pub use batch::{
    make_aligned_batch, make_independent_batch, AlignedSampler, IndependentSampler, MimoBatch,
};
pub use folds::{stratified_kfold, FoldPlan};
pub use imageops::center_crop;
pub use io::{read_dataset, write_dataset, MANIFEST_FILE};
pub use synth::{
    generate_synthetic_dataset, largest_remainder_counts, modality_template, modality_templates, SynthConfig,
    REFERENCE_CLASS_COUNTS, WBC_CLASS_NAMES,
};

/// Shape shared by every modality of a dataset. Modality ids are `0..n_modalities`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub n_modalities: usize,
    pub channels_per_modality: usize,
    pub image_side: usize,
}

impl ModalitySpec {
    pub fn new(n_modalities: usize, channels_per_modality: usize, image_side: usize) -> Result<Self> {
        let spec = Self {
            n_modalities,
            channels_per_modality,
            image_side,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modalities < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 modalities, got {}",
                self.n_modalities
            )));
        }
        if self.channels_per_modality == 0 || self.image_side == 0 {
            return Err(Error::InvalidArgument(
                "channels_per_modality and image_side must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Channels of the channel-concatenated (early / MM-MIMO) input.
    pub fn fused_channels(&self) -> usize {
        self.n_modalities * self.channels_per_modality
    }

    pub fn image_len(&self) -> usize {
        self.channels_per_modality * self.image_side * self.image_side
    }
}

/// A `(channels × side × side)` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * side * side {
            return Err(Error::shape(channels * side * side, data.len()));
        }
        Ok(Self {
            channels,
            side,
            data,
        })
    }

    pub fn zeros(channels: usize, side: usize) -> Self {
        Self {
            channels,
            side,
            data: vec![0.0; channels * side * side],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.side + y) * self.side + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// One specimen: `M` aligned modality images and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub images: Vec<Image>,
    pub label: usize,
    pub specimen_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecimenRecord {
    pub specimen_id: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub modality_spec: ModalitySpec,
    pub samples: Vec<SpecimenRecord>,
    /// Generator parameters when the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthConfig>,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// An immutable in-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, samples: Vec<MultimodalSample>) -> Result<Self> {
        let ds = Self { manifest, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.modality_spec.validate()?;
        let k = m.n_classes();
        if m.class_counts.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{} class names but {} class counts",
                k,
                m.class_counts.len()
            )));
        }
        if m.class_counts.iter().sum::<usize>() != self.samples.len()
            || m.samples.len() != self.samples.len()
        {
            return Err(Error::InvalidArgument(format!(
                "class counts sum to {} but dataset holds {} samples",
                m.class_counts.iter().sum::<usize>(),
                self.samples.len()
            )));
        }
        let mut counts = vec![0usize; k];
        let spec = m.modality_spec;
        for (s, rec) in self.samples.iter().zip(&m.samples) {
            if s.label >= k {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: k,
                });
            }
            if s.specimen_id != rec.specimen_id || s.label != rec.label {
                return Err(Error::InvalidArgument(format!(
                    "sample {} disagrees with its manifest record",
                    s.specimen_id
                )));
            }
            if s.images.len() != spec.n_modalities {
                return Err(Error::shape(
                    format!("{} modality images", spec.n_modalities),
                    s.images.len(),
                ));
            }
            for img in &s.images {
                if img.channels != spec.channels_per_modality || img.side != spec.image_side {
                    return Err(Error::shape(
                        format!("{}x{}x{}", spec.channels_per_modality, spec.image_side, spec.image_side),
                        format!("{}x{}x{}", img.channels, img.side, img.side),
                    ));
                }
            }
            counts[s.label] += 1;
        }
        if counts != m.class_counts {
            return Err(Error::InvalidArgument(format!(
                "manifest class counts {:?} disagree with labels {:?}",
                m.class_counts, counts
            )));
        }
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn samples(&self) -> &[MultimodalSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &MultimodalSample {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn spec(&self) -> ModalitySpec {
        self.manifest.modality_spec
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Dataset restricted to `indices`, with class counts recomputed.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples: Vec<_> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut class_counts = vec![0; self.n_classes()];
        for s in &samples {
            class_counts[s.label] += 1;
        }
        let manifest = DatasetManifest {
            class_names: self.manifest.class_names.clone(),
            class_counts,
            modality_spec: self.manifest.modality_spec,
            samples: indices.iter().map(|&i| self.manifest.samples[i].clone()).collect(),
            synthetic: self.manifest.synthetic.clone(),
        };
        Dataset::new(manifest, samples)
    }
}
