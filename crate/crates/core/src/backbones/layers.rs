//! Layer primitives with hand-written backward passes. Activations are
//! `(B, C, H, W)` or `(B, D)` row-major `f32` tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c = alpha·a·b + beta·c` for row-major (possibly transposed via strides) operands.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices holding at least the addressed extents; the
    // strides describe either the row-major matrix or its transpose.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Serializable description of a layer, enough to rebuild it without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    InputNorm { mean: f32, std: f32 },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    GlobalAvgPool,
    Linear { in_features: usize, out_features: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in, k, k)`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let n = out_channels * in_channels * kernel * kernel;
        let w: Vec<f32> = (0..n).map(|_| normal.sample(rng)).collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::from_vec(&[out_channels, in_channels, kernel, kernel], w)
                .expect("consistent shape"),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, input: &[f32], side: usize, out_side: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let plane = out_side * out_side;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..out_side {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let drow = &mut dst[oy * out_side..(oy + 1) * out_side];
                        if iy < 0 || iy >= side as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let src = &input[(c * side + iy as usize) * side..][..side];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= side as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], side: usize, out_side: usize, grad_in: &mut [f32]) {
        let k = self.kernel;
        let plane = out_side * out_side;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..out_side {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        let dst = &mut grad_in[(c * side + iy as usize) * side..][..side];
                        for ox in 0..out_side {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < side as isize {
                                dst[ix as usize] += src[oy * out_side + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out, in)`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(±1/√fan_in) initialisation for weights and biases.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w: Vec<f32> = (0..in_features * out_features).map(|_| u.sample(rng)).collect();
        let b: Vec<f32> = (0..out_features).map(|_| u.sample(rng)).collect();
        Self {
            in_features,
            out_features,
            weight: Tensor::from_vec(&[out_features, in_features], w).expect("consistent shape"),
            bias: Tensor::from_vec(&[out_features], b).expect("consistent shape"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Fixed (non-trainable) `(x - mean) / std`.
    InputNorm { mean: f32, std: f32 },
    Conv2d(Conv2d),
    Relu,
    GlobalAvgPool,
    Linear(Linear),
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Debug)]
pub enum LayerCache {
    None,
    Conv { cols: Vec<f32>, side: usize, out_side: usize },
    Relu { output: Vec<f32> },
    Pool { plane: usize },
    Linear { input: Tensor },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::InputNorm { mean, std } => LayerSpec::InputNorm { mean: *mean, std: *std },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
            },
        }
    }

    /// Rebuilds a zero-weight layer from its spec.
    pub fn from_spec(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::InputNorm { mean, std } => Layer::InputNorm { mean, std },
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                    bias: Tensor::zeros(&[out_channels]),
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Linear { in_features, out_features } => Layer::Linear(Linear {
                in_features,
                out_features,
                weight: Tensor::zeros(&[out_features, in_features]),
                bias: Tensor::zeros(&[out_features]),
            }),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::InputNorm { .. } | Layer::Relu => Ok(input.to_vec()),
            Layer::Conv2d(c) => match *input {
                [ch, h, w] if ch == c.in_channels && h == w && h + 2 * c.padding >= c.kernel => {
                    let s = c.output_side(h);
                    Ok(vec![c.out_channels, s, s])
                }
                _ => Err(Error::shape(
                    format!("({}, S, S)", c.in_channels),
                    format!("{input:?}"),
                )),
            },
            Layer::GlobalAvgPool => match *input {
                [ch, _, _] => Ok(vec![ch]),
                _ => Err(Error::shape("(C, H, W)", format!("{input:?}"))),
            },
            Layer::Linear(l) => match *input {
                [d] if d == l.in_features => Ok(vec![l.out_features]),
                _ => Err(Error::shape(format!("({})", l.in_features), format!("{input:?}"))),
            },
        }
    }

    /// Per-item FLOPs: conv/affine 2·MACs, elementwise ops 1 per element.
    pub fn flops(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        let in_elems: usize = input.iter().product();
        let out_elems: usize = out.iter().product();
        Ok(match self {
            Layer::InputNorm { .. } | Layer::Relu => in_elems as u64,
            Layer::GlobalAvgPool => in_elems as u64,
            Layer::Conv2d(c) => 2 * (out_elems * c.in_channels * c.kernel * c.kernel) as u64,
            Layer::Linear(l) => 2 * (l.in_features * l.out_features) as u64,
        })
    }

    pub fn forward(&self, x: Tensor, train: bool) -> Result<(Tensor, LayerCache)> {
        let item_shape = &x.shape()[1..];
        let out_item = self.output_shape(item_shape)?;
        let b = x.batch();
        match self {
            Layer::InputNorm { mean, std } => {
                let mut x = x;
                let inv = 1.0 / std;
                x.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * inv);
                Ok((x, LayerCache::None))
            }
            Layer::Relu => {
                let mut x = x;
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                let cache = if train {
                    LayerCache::Relu { output: x.data().to_vec() }
                } else {
                    LayerCache::None
                };
                Ok((x, cache))
            }
            Layer::GlobalAvgPool => {
                let (c, plane) = (item_shape[0], item_shape[1] * item_shape[2]);
                let mut out = Tensor::zeros(&[b, c]);
                for i in 0..b {
                    let src = x.item(i);
                    let dst = out.item_mut(i);
                    for ch in 0..c {
                        dst[ch] = src[ch * plane..(ch + 1) * plane].iter().sum::<f32>() / plane as f32;
                    }
                }
                Ok((out, LayerCache::Pool { plane }))
            }
            Layer::Linear(l) => {
                let mut out = Tensor::zeros(&[b, l.out_features]);
                for row in out.data_mut().chunks_mut(l.out_features) {
                    row.copy_from_slice(l.bias.data());
                }
                // (B × in) · (in × out), weight read transposed.
                gemm(
                    b,
                    l.in_features,
                    l.out_features,
                    x.data(),
                    (l.in_features as isize, 1),
                    l.weight.data(),
                    (1, l.in_features as isize),
                    1.0,
                    out.data_mut(),
                );
                let cache = if train { LayerCache::Linear { input: x } } else { LayerCache::None };
                Ok((out, cache))
            }
            Layer::Conv2d(c) => {
                let side = item_shape[1];
                let out_side = out_item[1];
                let plane = out_side * out_side;
                let rows = c.col_rows();
                let mut out = Tensor::zeros(&[b, c.out_channels, out_side, out_side]);
                let mut cols = vec![0f32; if train { b * rows * plane } else { rows * plane }];
                for i in 0..b {
                    let col = if train {
                        &mut cols[i * rows * plane..(i + 1) * rows * plane]
                    } else {
                        &mut cols[..]
                    };
                    c.im2col(x.item(i), side, out_side, col);
                    let dst = out.item_mut(i);
                    for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                        chunk.fill(c.bias.data()[oc]);
                    }
                    gemm(
                        c.out_channels,
                        rows,
                        plane,
                        c.weight.data(),
                        (rows as isize, 1),
                        col,
                        (plane as isize, 1),
                        1.0,
                        dst,
                    );
                }
                let cache = if train {
                    LayerCache::Conv { cols, side, out_side }
                } else {
                    LayerCache::None
                };
                Ok((out, cache))
            }
        }
    }

    /// Returns the input gradient and accumulates parameter gradients into
    /// `grads` (same order as [`Layer::params`]).
    pub fn backward(
        &self,
        cache: LayerCache,
        grad_out: Tensor,
        grads: &mut [Tensor],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let b = grad_out.batch();
        match (self, cache) {
            (Layer::InputNorm { std, .. }, _) => {
                let mut g = grad_out;
                let inv = 1.0 / std;
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
                Ok(Some(g))
            }
            (Layer::Relu, LayerCache::Relu { output }) => {
                let mut g = grad_out;
                for (gv, &o) in g.data_mut().iter_mut().zip(&output) {
                    if o <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok(Some(g))
            }
            (Layer::GlobalAvgPool, LayerCache::Pool { plane }) => {
                let c = grad_out.shape()[1];
                let side = (plane as f64).sqrt().round() as usize;
                let mut g = Tensor::zeros(&[b, c, side, side]);
                for i in 0..b {
                    let src = grad_out.item(i).to_vec();
                    let dst = g.item_mut(i);
                    for ch in 0..c {
                        dst[ch * plane..(ch + 1) * plane].fill(src[ch] / plane as f32);
                    }
                }
                Ok(Some(g))
            }
            (Layer::Linear(l), LayerCache::Linear { input }) => {
                let (gw, gb) = grads.split_at_mut(1);
                // dW (out × in) += dYᵀ (out × B) · X (B × in)
                gemm(
                    l.out_features,
                    b,
                    l.in_features,
                    grad_out.data(),
                    (1, l.out_features as isize),
                    input.data(),
                    (l.in_features as isize, 1),
                    1.0,
                    gw[0].data_mut(),
                );
                for row in grad_out.data().chunks(l.out_features) {
                    for (acc, v) in gb[0].data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                if !need_input_grad {
                    return Ok(None);
                }
                let mut gx = Tensor::zeros(input.shape());
                gemm(
                    b,
                    l.out_features,
                    l.in_features,
                    grad_out.data(),
                    (l.out_features as isize, 1),
                    l.weight.data(),
                    (l.in_features as isize, 1),
                    0.0,
                    gx.data_mut(),
                );
                Ok(Some(gx))
            }
            (Layer::Conv2d(c), LayerCache::Conv { cols, side, out_side }) => {
                let plane = out_side * out_side;
                let rows = c.col_rows();
                let (gw, gb) = grads.split_at_mut(1);
                let mut gx = if need_input_grad {
                    Some(Tensor::zeros(&[b, c.in_channels, side, side]))
                } else {
                    None
                };
                let mut dcols = vec![0f32; rows * plane];
                for i in 0..b {
                    let g = grad_out.item(i);
                    let col = &cols[i * rows * plane..(i + 1) * rows * plane];
                    // dW (out × rows) += dY (out × plane) · colsᵀ (plane × rows)
                    gemm(
                        c.out_channels,
                        plane,
                        rows,
                        g,
                        (plane as isize, 1),
                        col,
                        (1, plane as isize),
                        1.0,
                        gw[0].data_mut(),
                    );
                    for (oc, chunk) in g.chunks(plane).enumerate() {
                        gb[0].data_mut()[oc] += chunk.iter().sum::<f32>();
                    }
                    if let Some(gx) = gx.as_mut() {
                        // dcols (rows × plane) = Wᵀ (rows × out) · dY (out × plane)
                        gemm(
                            rows,
                            c.out_channels,
                            plane,
                            c.weight.data(),
                            (1, rows as isize),
                            g,
                            (plane as isize, 1),
                            0.0,
                            &mut dcols,
                        );
                        c.col2im(&dcols, side, out_side, gx.item_mut(i));
                    }
                }
                Ok(gx)
            }
            _ => Err(Error::InvalidArgument(
                "layer cache does not match layer (forward run without train mode?)".into(),
            )),
        }
    }
}
