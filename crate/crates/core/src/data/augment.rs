//! Training-time augmentation hook.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::Image;

pub trait Augment: Send + Sync {
    fn apply(&self, image: &mut Image, rng: &mut dyn RngCore);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoAugment;

impl Augment for NoAugment {
    fn apply(&self, _image: &mut Image, _rng: &mut dyn RngCore) {}
}

/// Augmentation named in a training config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    #[default]
    None,
    /// RandAugment-style policy: `n` ops drawn uniformly per image, all at
    /// magnitude `magnitude` on the usual 0..30 scale.
    RandAugment { n: usize, magnitude: u32 },
}

impl Augmentation {
    pub fn build(&self) -> Box<dyn Augment> {
        match *self {
            Augmentation::None => Box::new(NoAugment),
            Augmentation::RandAugment { n, magnitude } => Box::new(RandAugmentLite { n, magnitude }),
        }
    }
}

/// Photometric subset of RandAugment. Geometric ops are left out because the
/// synthetic class templates are not flip/rotation invariant.
#[derive(Debug, Clone, Copy)]
pub struct RandAugmentLite {
    pub n: usize,
    pub magnitude: u32,
}

impl Augment for RandAugmentLite {
    fn apply(&self, image: &mut Image, rng: &mut dyn RngCore) {
        let level = self.magnitude.min(30) as f32 / 30.0;
        for _ in 0..self.n {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            match rng.random_range(0..5u8) {
                0 => {}
                1 => {
                    // brightness
                    let f = 1.0 + sign * 0.9 * level;
                    image.data.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
                }
                2 => {
                    // contrast around the image mean
                    let f = 1.0 + sign * 0.9 * level;
                    let mean = image.mean() as f32;
                    image
                        .data
                        .iter_mut()
                        .for_each(|v| *v = (mean + (*v - mean) * f).clamp(0.0, 1.0));
                }
                3 => {
                    // posterize
                    let bits = (8.0 - 4.0 * level).round().max(1.0);
                    let q = (2f32.powf(bits) - 1.0).max(1.0);
                    image.data.iter_mut().for_each(|v| *v = (*v * q).round() / q);
                }
                _ => {
                    // solarize
                    let threshold = 1.0 - level;
                    image
                        .data
                        .iter_mut()
                        .for_each(|v| if *v >= threshold { *v = 1.0 - *v });
                }
            }
        }
    }
}
