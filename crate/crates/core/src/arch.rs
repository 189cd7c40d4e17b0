//! Dense-block architectures: the particle encoding, decoding, stacking by
//! widening and deepening, and the derived channel and parameter counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard per-layer channel cap applied when widening.
pub const DEFAULT_WIDTH_CAP: usize = 512;
/// Output channels of the stem convolution.
pub const DEFAULT_STEM_CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchError {
    #[error("position has {got} dimensions, codec expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("every layer decoded to the disable sentinel")]
    AllLayersDisabled,
    #[error("position dimension {0} is not finite")]
    NonFinitePosition(usize),
    #[error("block has {layers} layers, codec allows at most {max}")]
    TooManyLayers { layers: usize, max: usize },
    #[error("widened growth rate {value} exceeds the cap of {cap}")]
    CapExceeded { value: usize, cap: usize },
    #[error("spatial size {height}x{width} cannot be halved again before block {block}")]
    SpatialUnderflow {
        block: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid block: {0}")]
    InvalidBlock(String),
    #[error("invalid codec: {0}")]
    InvalidCodec(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

pub type Result<T, E = ArchError> = std::result::Result<T, E>;

/// Maps real-valued particle positions to dense blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub max_layers: usize,
    pub disable_sentinel: i64,
    pub growth_min: usize,
    pub growth_max: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            max_layers: 16,
            disable_sentinel: 7,
            growth_min: 1,
            growth_max: 32,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_layers == 0 {
            return Err(ArchError::InvalidCodec("max_layers must be >= 1".into()));
        }
        if self.growth_min == 0 {
            return Err(ArchError::InvalidCodec("growth_min must be >= 1".into()));
        }
        if self.growth_min > self.growth_max {
            return Err(ArchError::InvalidCodec(
                "growth_min must not exceed growth_max".into(),
            ));
        }
        let s = self.disable_sentinel;
        if s < self.growth_min as i64 || s > self.growth_max as i64 {
            return Err(ArchError::InvalidCodec(format!(
                "sentinel {s} is outside [{}, {}]",
                self.growth_min, self.growth_max
            )));
        }
        Ok(())
    }

    /// Position bounds implied by the growth-rate range.
    pub fn position_bounds(&self) -> (f64, f64) {
        (self.growth_min as f64, self.growth_max as f64)
    }

    fn is_sentinel(&self, value: usize) -> bool {
        value as i64 == self.disable_sentinel
    }

    /// Checks that `block` could have been produced by this codec.
    pub fn admits(&self, block: &BlockSpec) -> Result<()> {
        if block.len() > self.max_layers {
            return Err(ArchError::TooManyLayers {
                layers: block.len(),
                max: self.max_layers,
            });
        }
        for &g in block.growth_rates() {
            if g < self.growth_min || g > self.growth_max || self.is_sentinel(g) {
                return Err(ArchError::InvalidBlock(format!(
                    "growth rate {g} is not decodable under this codec"
                )));
            }
        }
        Ok(())
    }
}

/// A decoded dense block: the growth rate of every enabled layer, in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BlockRepr")]
pub struct BlockSpec {
    growth_rates: Vec<usize>,
}

#[derive(Deserialize)]
struct BlockRepr {
    growth_rates: Vec<usize>,
}

impl TryFrom<BlockRepr> for BlockSpec {
    type Error = ArchError;
    fn try_from(r: BlockRepr) -> Result<Self> {
        BlockSpec::new(r.growth_rates)
    }
}

impl BlockSpec {
    pub fn new(growth_rates: Vec<usize>) -> Result<Self> {
        if growth_rates.is_empty() {
            return Err(ArchError::InvalidBlock("block has no layers".into()));
        }
        if growth_rates.contains(&0) {
            return Err(ArchError::InvalidBlock("growth rates must be >= 1".into()));
        }
        Ok(Self { growth_rates })
    }

    pub fn growth_rates(&self) -> &[usize] {
        &self.growth_rates
    }

    pub fn len(&self) -> usize {
        self.growth_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.growth_rates.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("block serialization cannot fail")
    }
}

/// Decodes a particle position into a block.
///
/// Each dimension is clamped to the growth range and rounded half away from
/// zero; dimensions landing on the sentinel are dropped.
pub fn decode_block(position: &[f64], codec: &CodecConfig) -> Result<BlockSpec> {
    if position.len() != codec.max_layers {
        return Err(ArchError::LengthMismatch {
            expected: codec.max_layers,
            got: position.len(),
        });
    }
    let (lo, hi) = codec.position_bounds();
    let mut rates = Vec::with_capacity(position.len());
    for (d, &x) in position.iter().enumerate() {
        if !x.is_finite() {
            return Err(ArchError::NonFinitePosition(d));
        }
        let g = x.clamp(lo, hi).round() as usize;
        if !codec.is_sentinel(g) {
            rates.push(g);
        }
    }
    if rates.is_empty() {
        return Err(ArchError::AllLayersDisabled);
    }
    Ok(BlockSpec {
        growth_rates: rates,
    })
}

/// The position that decodes to `block`: its growth rates padded with the sentinel.
pub fn canonical_position(block: &BlockSpec, codec: &CodecConfig) -> Result<Vec<f64>> {
    if block.len() > codec.max_layers {
        return Err(ArchError::TooManyLayers {
            layers: block.len(),
            max: codec.max_layers,
        });
    }
    let mut pos: Vec<f64> = block.growth_rates.iter().map(|&g| g as f64).collect();
    pos.resize(codec.max_layers, codec.disable_sentinel as f64);
    Ok(pos)
}

pub fn widen_block(block: &BlockSpec, factor: usize) -> Result<BlockSpec> {
    widen_block_capped(block, factor, DEFAULT_WIDTH_CAP)
}

pub fn widen_block_capped(block: &BlockSpec, factor: usize, cap: usize) -> Result<BlockSpec> {
    if factor == 0 {
        return Err(ArchError::InvalidBlock("widening factor must be >= 1".into()));
    }
    let growth_rates = block
        .growth_rates
        .iter()
        .map(|&g| {
            let value = g.saturating_mul(factor);
            if value > cap {
                Err(ArchError::CapExceeded { value, cap })
            } else {
                Ok(value)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockSpec { growth_rates })
}

/// Channel count of the concatenated block output.
pub fn count_channels(block: &BlockSpec, input_channels: usize) -> usize {
    input_channels + block.growth_rates.iter().sum::<usize>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel_size: usize,
    pub out_channels: usize,
}

impl Default for StemSpec {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            out_channels: DEFAULT_STEM_CHANNELS,
        }
    }
}

/// Image shape as (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape(pub usize, pub usize, pub usize);

impl InputShape {
    pub fn channels(&self) -> usize {
        self.0
    }
    pub fn height(&self) -> usize {
        self.1
    }
    pub fn width(&self) -> usize {
        self.2
    }
}

/// A stacked network: stem, `deepen` copies of the widened block joined by
/// transitions, then global pooling and a linear head.
///
/// Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub stem: StemSpec,
    pub widen: usize,
    pub deepen: usize,
    pub block: BlockSpec,
    pub num_classes: usize,
    pub input_shape: InputShape,
}

/// Knobs of `build_network` that have fixed defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub stem_channels: usize,
    pub width_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            stem_channels: DEFAULT_STEM_CHANNELS,
            width_cap: DEFAULT_WIDTH_CAP,
        }
    }
}

pub fn build_network(
    block: &BlockSpec,
    widen: usize,
    deepen: usize,
    input_shape: InputShape,
    num_classes: usize,
) -> Result<NetworkSpec> {
    build_network_with(
        block,
        widen,
        deepen,
        input_shape,
        num_classes,
        &BuildOptions::default(),
    )
}

pub fn build_network_with(
    block: &BlockSpec,
    widen: usize,
    deepen: usize,
    input_shape: InputShape,
    num_classes: usize,
    options: &BuildOptions,
) -> Result<NetworkSpec> {
    if deepen == 0 {
        return Err(ArchError::InvalidNetwork("deepening factor must be >= 1".into()));
    }
    widen_block_capped(block, widen, options.width_cap)?;
    let spec = NetworkSpec {
        stem: StemSpec {
            kernel_size: 3,
            out_channels: options.stem_channels,
        },
        widen,
        deepen,
        block: block.clone(),
        num_classes,
        input_shape,
    };
    spec.validate()?;
    Ok(spec)
}

/// Spatial size after one transition: odd sizes are zero-padded before pooling.
pub fn halve(size: usize) -> usize {
    size.div_ceil(2)
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let InputShape(c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(ArchError::InvalidNetwork("input shape has a zero dimension".into()));
        }
        if self.num_classes < 2 {
            return Err(ArchError::InvalidNetwork("need at least 2 classes".into()));
        }
        if self.stem.kernel_size != 3 || self.stem.out_channels == 0 {
            return Err(ArchError::InvalidNetwork("stem must be a 3x3 conv with >= 1 channel".into()));
        }
        if self.widen == 0 || self.deepen == 0 {
            return Err(ArchError::InvalidNetwork(
                "widen and deepen must be >= 1".into(),
            ));
        }
        self.spatial_sizes().map(|_| ())
    }

    /// The block as it appears in the network, after widening.
    pub fn widened_block(&self) -> BlockSpec {
        widen_block_capped(&self.block, self.widen, usize::MAX).expect("factor >= 1")
    }

    pub fn num_transitions(&self) -> usize {
        self.deepen - 1
    }

    /// (height, width) seen by each block in turn.
    pub fn spatial_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.input_shape.1, self.input_shape.2);
        let mut out = vec![(h, w)];
        for block in 1..self.deepen {
            if h < 2 || w < 2 {
                return Err(ArchError::SpatialUnderflow {
                    block,
                    height: h,
                    width: w,
                });
            }
            h = halve(h);
            w = halve(w);
            out.push((h, w));
        }
        Ok(out)
    }

    /// Channel count entering each block, and the count reaching the head.
    pub fn block_input_channels(&self) -> (Vec<usize>, usize) {
        let block = self.widened_block();
        let mut c = self.stem.out_channels;
        let mut inputs = Vec::with_capacity(self.deepen);
        for _ in 0..self.deepen {
            inputs.push(c);
            // transitions preserve the channel count
            c = count_channels(&block, c);
        }
        (inputs, c)
    }

    pub fn final_channels(&self) -> usize {
        self.block_input_channels().1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization cannot fail")
    }
}

/// Exact count of trainable scalars, biases included.
pub fn count_parameters(spec: &NetworkSpec) -> usize {
    let block = spec.widened_block();
    let k = spec.stem.kernel_size;
    let mut total = k * k * spec.input_shape.channels() * spec.stem.out_channels
        + spec.stem.out_channels;
    let (inputs, final_channels) = spec.block_input_channels();
    for (i, &c0) in inputs.iter().enumerate() {
        let mut c_in = c0;
        for &g in block.growth_rates() {
            total += 9 * c_in * g + g;
            c_in += g;
        }
        if i + 1 < inputs.len() {
            total += c_in * c_in + c_in;
        }
    }
    total + final_channels * spec.num_classes + spec.num_classes
}
