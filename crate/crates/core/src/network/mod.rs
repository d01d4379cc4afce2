//! Residual convolutional network mapping an LR slice to its HR estimate on
//! the same grid, with hand-written backpropagation.

mod adam;
pub mod conv;
mod io;
mod train;

use std::fmt::Debug;

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
pub use adam::{adam_step, AdamConfig, OptimizerState};
use conv::{im2col, ConvParams};
pub use io::{load_weights, load_weights_expecting, save_weights, WEIGHTS_MAGIC};
pub use train::{train, TrainConfig, TrainOutcome};

pub const DEFAULT_BLOCKS: usize = 8;
pub const DEFAULT_FEATURES: usize = 64;
pub const DEFAULT_RESIDUAL_SCALING: f64 = 0.1;

/// Scalar type the network can run in. Training uses `f32`; `f64` is the
/// reference path for gradient checks.
pub trait Real: Float + NumAssign + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub blocks: usize,
    pub features: usize,
}

impl Architecture {
    pub fn new(blocks: usize, features: usize) -> Result<Self> {
        if blocks == 0 || features == 0 {
            return Err(Error::invalid(format!(
                "network needs at least one block and one feature (got B={blocks}, F={features})"
            )));
        }
        Ok(Self { blocks, features })
    }

    pub fn conv_count(&self) -> usize {
        2 * self.blocks + 3
    }

    /// `(in_channels, out_channels)` of each conv in execution order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let f = self.features;
        let mut shapes = vec![(1, f)];
        shapes.extend(std::iter::repeat_n((f, f), 2 * self.blocks + 1));
        shapes.push((f, 1));
        shapes
    }

    pub fn conv_name(&self, index: usize) -> String {
        let b = self.blocks;
        match index {
            0 => "head".to_string(),
            i if i <= 2 * b => format!("blocks.{}.conv{}", (i - 1) / 2, (i - 1) % 2 + 1),
            i if i == 2 * b + 1 => "tail".to_string(),
            _ => "out".to_string(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes().iter().map(|&(ci, co)| ci * co * 9 + co).sum()
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            blocks: DEFAULT_BLOCKS,
            features: DEFAULT_FEATURES,
        }
    }
}

/// Weights, gradients and optimizer moments all share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            convs: arch
                .conv_shapes()
                .into_iter()
                .map(|(ci, co)| ConvParams::zeros(ci, co))
                .collect(),
        }
    }

    /// Flat views in a fixed order: weight then bias of each conv.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.convs
            .iter()
            .flat_map(|c| {
                [
                    c.weight.as_slice().expect("contiguous weights"),
                    c.bias.as_slice().expect("contiguous bias"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|c| {
                [
                    c.weight.as_slice_mut().expect("contiguous weights"),
                    c.bias.as_slice_mut().expect("contiguous bias"),
                ]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.convs.iter().map(ConvParams::param_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: c.weight.mapv(|v| U::of(v.to_f64().unwrap_or(f64::NAN))),
                    bias: c.bias.mapv(|v| U::of(v.to_f64().unwrap_or(f64::NAN))),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrModel<T = f32> {
    pub arch: Architecture,
    pub residual_scaling: T,
    pub params: ParamSet<T>,
}

impl<T: Real> SrModel<T> {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            residual_scaling: T::of(DEFAULT_RESIDUAL_SCALING),
            params: ParamSet::zeros(&arch),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> SrModel<U> {
        SrModel {
            arch: self.arch,
            residual_scaling: U::of(self.residual_scaling.to_f64().unwrap_or(f64::NAN)),
            params: self.params.cast(),
        }
    }

    fn head(&self) -> &ConvParams<T> {
        &self.params.convs[0]
    }

    fn block(&self, b: usize) -> (&ConvParams<T>, &ConvParams<T>) {
        (&self.params.convs[1 + 2 * b], &self.params.convs[2 + 2 * b])
    }

    fn tail(&self) -> &ConvParams<T> {
        &self.params.convs[2 * self.arch.blocks + 1]
    }

    fn out(&self) -> &ConvParams<T> {
        &self.params.convs[2 * self.arch.blocks + 2]
    }
}

/// Uniform weights in `±1/sqrt(fan_in)` (the He-uniform rule with a leaky
/// slope of `sqrt(5)`), zero biases.
pub fn init_model(arch: Architecture, seed: u64) -> SrModel<f32> {
    let mut model = SrModel::<f32>::zeros(arch);
    let mut rng = seed::rng(seed, "init", 0);
    for conv in &mut model.params.convs {
        let bound = init_bound(conv.in_channels());
        conv.weight
            .mapv_inplace(|_| rng.random_range(-bound..=bound) as f32);
    }
    model
}

pub fn init_bound(in_channels: usize) -> f64 {
    (1.0 / (9 * in_channels) as f64).sqrt()
}

/// Intermediate values kept for the backward pass.
struct Cache<T> {
    h: usize,
    w: usize,
    /// Unfolded input of every conv, in execution order.
    cols: Vec<Array2<T>>,
    /// Pre-activation of each block's ReLU.
    pre_relu: Vec<Array2<T>>,
}

fn check_input<T: Real>(x: &Array2<T>) -> Result<()> {
    let (h, w) = x.dim();
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("network input must be at least 3x3, got {h}x{w}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input contains non-finite values".into()));
    }
    Ok(())
}

fn forward_impl<T: Real>(m: &SrModel<T>, x: &Array2<T>, keep: bool) -> (Array2<T>, Option<Cache<T>>) {
    let (h, w) = x.dim();
    let x0 = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, h * w))
        .expect("standard layout reshapes");
    let mut cols = Vec::new();
    let mut pre_relu = Vec::new();
    let run = |conv: &ConvParams<T>, input: &Array2<T>, cols_store: &mut Vec<Array2<T>>| {
        let c = im2col(input, h, w);
        let out = conv.apply_cols(&c);
        if keep {
            cols_store.push(c);
        }
        out
    };

    let head = run(m.head(), &x0, &mut cols);
    let mut r = head.clone();
    for b in 0..m.arch.blocks {
        let (c1, c2) = m.block(b);
        let a = run(c1, &r, &mut cols);
        let act = a.mapv(|v| v.max(T::zero()));
        if keep {
            pre_relu.push(a);
        }
        let c = run(c2, &act, &mut cols);
        r.scaled_add(m.residual_scaling, &c);
    }
    let mut u = run(m.tail(), &r, &mut cols);
    u += &head;
    let y = run(m.out(), &u, &mut cols);
    let y = y.into_shape_with_order((h, w)).expect("single output channel");
    let cache = keep.then_some(Cache { h, w, cols, pre_relu });
    (y, cache)
}

/// Predicts the HR slice from an LR slice of the same size.
pub fn forward<T: Real>(m: &SrModel<T>, x: &Array2<T>) -> Result<Array2<T>> {
    check_input(x)?;
    Ok(forward_impl(m, x, false).0)
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(pred: &Array2<T>, target: &Array2<T>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::shape("loss of empty arrays"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (*p - *t).abs().to_f64().unwrap_or(f64::NAN))
        .sum();
    Ok(sum / n as f64)
}

fn backward_impl<T: Real>(m: &SrModel<T>, cache: Cache<T>, d_y: Array2<T>, grads: &mut ParamSet<T>) {
    let Cache { h, w, mut cols, mut pre_relu } = cache;
    let nb = m.arch.blocks;
    let d_y = d_y.into_shape_with_order((1, h * w)).expect("single output channel");

    let mut next_cols = || cols.pop().expect("one cached input per conv");
    let out_cols = next_cols();
    let d_u = m
        .out()
        .backward(&out_cols, &d_y, &mut grads.convs[2 * nb + 2], h, w, true)
        .expect("input gradient requested");
    let tail_cols = next_cols();
    let mut d_r = m
        .tail()
        .backward(&tail_cols, &d_u, &mut grads.convs[2 * nb + 1], h, w, true)
        .expect("input gradient requested");
    for b in (0..nb).rev() {
        let (c1, c2) = m.block(b);
        let d_c = d_r.mapv(|v| v * m.residual_scaling);
        let c2_cols = next_cols();
        let mut d_act = c2
            .backward(&c2_cols, &d_c, &mut grads.convs[2 + 2 * b], h, w, true)
            .expect("input gradient requested");
        let a = pre_relu.pop().expect("one cached activation per block");
        d_act.zip_mut_with(&a, |g, &pre| {
            if pre <= T::zero() {
                *g = T::zero();
            }
        });
        let c1_cols = next_cols();
        let d_in = c1
            .backward(&c1_cols, &d_act, &mut grads.convs[1 + 2 * b], h, w, true)
            .expect("input gradient requested");
        d_r += &d_in;
    }
    // Global skip: the head output feeds both the first block and the tail sum.
    d_r += &d_u;
    let head_cols = next_cols();
    m.head().backward(&head_cols, &d_r, &mut grads.convs[0], h, w, false);
}

/// Runs one sample forward and backward, adding `weight * dL/dθ` of its L1
/// loss into `grads`. Returns the unweighted loss.
pub(crate) fn accumulate_gradients<T: Real>(
    m: &SrModel<T>,
    x: &Array2<T>,
    target: &Array2<T>,
    weight: f64,
    grads: &mut ParamSet<T>,
) -> Result<f64> {
    check_input(x)?;
    if x.dim() != target.dim() {
        return Err(Error::shape(format!(
            "target shape {:?} does not match input {:?}",
            target.dim(),
            x.dim()
        )));
    }
    let (pred, cache) = forward_impl(m, x, true);
    let loss = l1_loss(&pred, target)?;
    let g = T::of(weight / pred.len() as f64);
    let mut d_y = pred;
    d_y.zip_mut_with(target, |p, &t| {
        let diff = *p - t;
        *p = if diff > T::zero() {
            g
        } else if diff < T::zero() {
            -g
        } else {
            T::zero()
        };
    });
    backward_impl(m, cache.expect("cache requested"), d_y, grads);
    Ok(loss)
}

/// Exact gradient of `l1_loss(forward(m, x), target)` with respect to every
/// weight; the subgradient at `pred == target` is taken as zero.
pub fn backward<T: Real>(m: &SrModel<T>, x: &Array2<T>, target: &Array2<T>) -> Result<(f64, ParamSet<T>)> {
    let mut grads = ParamSet::zeros(&m.arch);
    let loss = accumulate_gradients(m, x, target, 1.0, &mut grads)?;
    Ok((loss, grads))
}
