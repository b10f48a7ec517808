//! Feature extractors, head planning and complexity accounting.
//!
//! Every strategy shares one backbone implementation; strategies differ only
//! in the number of input channels and in the width of the output layer
//! (`n_heads · K`, laid out as contiguous per-head blocks).

mod checkpoint;
mod layers;
mod network;

use std::collections::BTreeMap;
use std::iter::Sum;
use std::ops::Add;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use layers::{Conv2d, Layer, LayerSpec, Linear};
pub use network::{ForwardCache, Network};

/// Conventions used by [`ComplexityReport`].
pub const FLOP_CONVENTION: &str =
    "conv/affine: 2 x multiply-accumulates (bias not counted); input normalisation, ReLU and \
     global average pooling: 1 per input element; per forward pass of one item";

pub const DESKNET: &str = "desknet";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Registry key: `desknet` or a registered plug-in name.
    pub name: String,
    pub in_channels: usize,
    pub input_side: usize,
    /// Output channels of each downsampling stage; the last one is the feature width `d`.
    pub widths: Vec<usize>,
    /// Convolutions per stage (the first one strided).
    pub depths: Vec<usize>,
}

impl BackboneConfig {
    pub fn desknet(in_channels: usize, input_side: usize) -> Self {
        Self {
            name: DESKNET.into(),
            in_channels,
            input_side,
            widths: vec![16, 32, 64],
            depths: vec![1, 1, 1],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn input_item_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.input_side, self.input_side]
    }

    pub fn with_in_channels(&self, in_channels: usize) -> Self {
        Self {
            in_channels,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_side == 0 {
            return Err(Error::Config("backbone input must be non-empty".into()));
        }
        if self.widths.is_empty() || self.widths.len() != self.depths.len() {
            return Err(Error::Config(
                "backbone widths and depths must be non-empty and of equal length".into(),
            ));
        }
        if self.widths.contains(&0) || self.depths.contains(&0) {
            return Err(Error::Config("stage widths and depths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPlan {
    pub n_heads: usize,
    pub classes: usize,
}

impl HeadPlan {
    pub fn new(n_heads: usize, classes: usize) -> Result<Self> {
        if n_heads == 0 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "head plan needs n_heads ≥ 1 and K ≥ 2, got {n_heads} × {classes}"
            )));
        }
        Ok(Self { n_heads, classes })
    }

    pub fn output_width(&self) -> usize {
        self.n_heads * self.classes
    }

    /// Output units of head `h`.
    pub fn head_range(&self, h: usize) -> std::ops::Range<usize> {
        h * self.classes..(h + 1) * self.classes
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub flops: u64,
    pub params: u64,
}

impl ComplexityReport {
    pub fn new(flops: u64, params: u64) -> Self {
        Self { flops, params }
    }

    pub fn convention() -> &'static str {
        FLOP_CONVENTION
    }
}

impl Add for ComplexityReport {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.flops + rhs.flops, self.params + rhs.params)
    }
}

impl Sum for ComplexityReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::new(0, 0), Add::add)
    }
}

/// Builds a network from a config, a head plan and an initialisation rng.
pub type BackboneBuilder = fn(&BackboneConfig, &HeadPlan, &mut ChaCha8Rng) -> Result<Vec<Layer>>;

/// Name → builder table. Plug-ins (e.g. larger reference architectures)
/// register here and are then usable anywhere a `desknet` is.
#[derive(Debug, Clone)]
pub struct BackboneRegistry {
    builders: BTreeMap<String, BackboneBuilder>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut builders = BTreeMap::new();
        builders.insert(DESKNET.to_string(), desknet_layers as BackboneBuilder);
        Self { builders }
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, name: &str, builder: BackboneBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, config: &BackboneConfig, head_plan: HeadPlan, seed: u64) -> Result<Network> {
        config.validate()?;
        let builder = self
            .builders
            .get(&config.name)
            .ok_or_else(|| Error::Config(format!("unknown backbone '{}'", config.name)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = builder(config, &head_plan, &mut rng)?;
        Network::from_layers(config.clone(), head_plan, seed, layers)
    }
}

/// Builds with the default registry.
pub fn build_backbone(config: &BackboneConfig, head_plan: HeadPlan, seed: u64) -> Result<Network> {
    BackboneRegistry::default().build(config, head_plan, seed)
}

/// Desk-scale CNN: fixed input normalisation, strided 3×3 conv stages with
/// ReLU, global average pooling and one affine output layer.
fn desknet_layers(
    config: &BackboneConfig,
    head_plan: &HeadPlan,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer>> {
    let mut layers = vec![Layer::InputNorm {
        mean: 0.5,
        std: 0.25,
    }];
    let mut in_c = config.in_channels;
    for (&width, &depth) in config.widths.iter().zip(&config.depths) {
        for d in 0..depth {
            let stride = if d == 0 { 2 } else { 1 };
            layers.push(Layer::Conv2d(Conv2d::new(in_c, width, 3, stride, 1, rng)));
            layers.push(Layer::Relu);
            in_c = width;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear(Linear::new(in_c, head_plan.output_width(), rng)));
    Ok(layers)
}
