//! A minimal double-precision CNN: dense blocks, transitions, a pooled linear
//! head, exact reverse-mode gradients and an Adam training loop.

mod adam;
pub mod checkpoint;
mod model;
mod ops;
mod tensor;
mod train;

use thiserror::Error;

use crate::arch::ArchError;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use model::{forward, loss_and_grad, Model};
pub use tensor::Tensor;
pub use train::{train_and_curve, TrainOptions, TrainingRun};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layer {layer}: {detail}")]
    LayerShapeMismatch { layer: usize, detail: String },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("non-finite loss in epoch {0}")]
    NonFiniteLossAtEpoch(usize),
    #[error("spatial size {height}x{width} is too small to pool")]
    SpatialUnderflow { height: usize, width: usize },
    #[error("training needs at least one epoch")]
    ZeroEpochs,
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// One dense layer: a 3×3 kernel of shape (growth, in_channels, 3, 3) and a
/// bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerParams {
    pub growth: usize,
    pub in_channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayerParams {
    pub fn zeros(growth: usize, in_channels: usize) -> Self {
        Self {
            growth,
            in_channels,
            kernel: vec![0.0; growth * in_channels * 9],
            bias: vec![0.0; growth],
        }
    }
}

/// Runs a dense block: layer `l` sees the channel concatenation of the block
/// input and every earlier layer output, applies ReLU then a 3×3 padded
/// convolution, and the block returns the concatenation of its input and all
/// layer outputs.
pub fn dense_block_forward(x: &Tensor, layers: &[DenseLayerParams]) -> Result<Tensor> {
    let (c0, h, w) = x.chw()?;
    let n = x.batch();
    let hw = h * w;
    let mut c = c0;
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_channels != c
            || layer.kernel.len() != layer.growth * c * 9
            || layer.bias.len() != layer.growth
        {
            return Err(NnError::LayerShapeMismatch {
                layer: i,
                detail: format!(
                    "expects {} input channels, running concatenation has {c}",
                    layer.in_channels
                ),
            });
        }
        c += layer.growth;
    }
    let total = c;
    let mut out = vec![0.0; n * total * hw];
    let mut cols = Vec::new();
    for s in 0..n {
        let sample = &mut out[s * total * hw..(s + 1) * total * hw];
        sample[..c0 * hw].copy_from_slice(x.sample(s));
        let mut c_in = c0;
        for layer in layers {
            cols.resize(c_in * 9 * hw, 0.0);
            let (prefix, rest) = sample.split_at_mut(c_in * hw);
            ops::im2col3(prefix, c_in, h, w, true, &mut cols);
            let dst = &mut rest[..layer.growth * hw];
            ops::gemm(layer.growth, c_in * 9, hw, &layer.kernel, false, &cols, false, 0.0, dst);
            ops::add_bias(dst, &layer.bias, hw);
            c_in += layer.growth;
        }
    }
    Tensor::new(vec![n, total, h, w], out)
}

/// 1×1 convolution with a (C, C) kernel and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionParams {
    pub channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TransitionParams {
    pub fn identity(channels: usize) -> Self {
        let mut kernel = vec![0.0; channels * channels];
        for c in 0..channels {
            kernel[c * channels + c] = 1.0;
        }
        Self {
            channels,
            kernel,
            bias: vec![0.0; channels],
        }
    }
}

/// 1×1 convolution then 2×2 mean pooling; odd sizes are zero-padded first.
pub fn transition_forward(x: &Tensor, params: &TransitionParams) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if c != params.channels || params.kernel.len() != c * c || params.bias.len() != c {
        return Err(NnError::ShapeMismatch(format!(
            "transition for {} channels applied to {c}",
            params.channels
        )));
    }
    if h < 2 || w < 2 {
        return Err(NnError::SpatialUnderflow {
            height: h,
            width: w,
        });
    }
    let n = x.batch();
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; n * c * ho * wo];
    let mut tmp = vec![0.0; c * h * w];
    for s in 0..n {
        ops::gemm(c, c, h * w, &params.kernel, false, x.sample(s), false, 0.0, &mut tmp);
        ops::add_bias(&mut tmp, &params.bias, h * w);
        ops::avg_pool2(&tmp, c, h, w, &mut out[s * c * ho * wo..(s + 1) * c * ho * wo]);
    }
    Tensor::new(vec![n, c, ho, wo], out)
}
