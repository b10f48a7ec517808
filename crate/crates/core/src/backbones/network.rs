use super::layers::{Layer, LayerCache, Linear};
use super::{BackboneConfig, ComplexityReport, HeadPlan};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A sequential feed-forward network mapping `(B, C, S, S)` to `(B, n_heads·K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: BackboneConfig,
    head_plan: HeadPlan,
    seed: u64,
    layers: Vec<Layer>,
}

/// Per-layer caches from [`Network::forward_train`].
#[derive(Debug)]
pub struct ForwardCache(Vec<LayerCache>);

impl Network {
    pub fn from_layers(
        config: BackboneConfig,
        head_plan: HeadPlan,
        seed: u64,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let net = Self {
            config,
            head_plan,
            seed,
            layers,
        };
        let out = net.output_item_shape()?;
        if out != [head_plan.output_width()] {
            return Err(Error::shape(
                format!("output width {}", head_plan.output_width()),
                format!("{out:?}"),
            ));
        }
        Ok(net)
    }

    fn output_item_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.config.input_item_shape();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn head_plan(&self) -> HeadPlan {
        self.head_plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Width of the features feeding the output layer.
    pub fn feature_dim(&self) -> usize {
        self.final_linear().map_or(0, |l| l.in_features)
    }

    pub fn final_linear(&self) -> Option<&Linear> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }

    pub fn final_linear_mut(&mut self) -> Option<&mut Linear> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin),
            _ => None,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let expected = self.config.input_item_shape();
        if x.shape().len() != 4 || x.shape()[1..] != expected[..] {
            return Err(Error::shape(
                format!("(B, {}, {}, {})", expected[0], expected[1], expected[2]),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(h, false)?.0;
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(h, true)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, ForwardCache(caches)))
    }

    /// Parameter gradients of `Σ grad_out · output`, in [`Network::params`] order.
    pub fn backward(&self, cache: ForwardCache, grad_out: Tensor) -> Result<Vec<Tensor>> {
        let mut per_layer: Vec<Vec<Tensor>> = self
            .layers
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        // Input gradients are not needed below the first trainable layer.
        let first_trainable = self
            .layers
            .iter()
            .position(|l| !l.params().is_empty())
            .unwrap_or(0);
        let mut g = grad_out;
        for (idx, (layer, c)) in self.layers.iter().zip(cache.0).enumerate().rev() {
            let need = idx > first_trainable;
            match layer.backward(c, g, &mut per_layer[idx], need)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(per_layer.into_iter().flatten().collect())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn count_params(&self) -> u64 {
        self.params().iter().map(|p| p.len() as u64).sum()
    }

    /// FLOPs of one forward pass over `input_shape = (B, C, S, S)`.
    pub fn count_flops(&self, input_shape: &[usize]) -> Result<u64> {
        let expected = self.config.input_item_shape();
        if input_shape.len() != 4 || input_shape[1..] != expected[..] {
            return Err(Error::shape(
                format!("(B, {}, {}, {})", expected[0], expected[1], expected[2]),
                format!("{input_shape:?}"),
            ));
        }
        let mut shape = expected;
        let mut per_item = 0u64;
        for layer in &self.layers {
            per_item += layer.flops(&shape)?;
            shape = layer.output_shape(&shape)?;
        }
        Ok(per_item * input_shape[0] as u64)
    }

    /// Complexity of a single-item forward pass at the configured input size.
    pub fn complexity(&self) -> ComplexityReport {
        let mut shape = vec![1];
        shape.extend(self.config.input_item_shape());
        ComplexityReport::new(
            self.count_flops(&shape).expect("configured shape is valid"),
            self.count_params(),
        )
    }
}
