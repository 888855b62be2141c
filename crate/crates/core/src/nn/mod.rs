//! Regression CNN: `conv → norm → ReLU` blocks, a fully connected layer with
//! a per-round unit mask, and a linear output layer.

mod checkpoint;
mod network;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use network::{BatchResult, Network, NormStats, Sample};
pub use optim::{draw_dropout_mask, sgd_step, DropoutMask};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `L + 1`.
    pub input_rows: usize,
    /// `M̄`.
    pub input_cols: usize,
    /// Re, Im, phase.
    pub input_channels: usize,
    pub conv_layers: usize,
    pub filters: usize,
    /// `(rows, cols)`; both odd so "same" padding is symmetric.
    pub kernel: (usize, usize),
    pub fc_units: usize,
    /// Dropout keep probability κ.
    pub keep_prob: f64,
    /// `2 M (L + 1)`.
    pub output_dim: usize,
}

impl NetworkSpec {
    /// The ten-layer configuration: three 128-filter 3×3 convolutions, a
    /// 1024-unit fully connected layer, κ = 1/2.
    pub fn standard(m: usize, l: usize, m_bar: usize) -> Self {
        NetworkSpec {
            input_rows: l + 1,
            input_cols: m_bar,
            input_channels: 3,
            conv_layers: 3,
            filters: 128,
            kernel: (3, 3),
            fc_units: 1024,
            keep_prob: 0.5,
            output_dim: 2 * m * (l + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_rows", self.input_rows),
            ("input_cols", self.input_cols),
            ("input_channels", self.input_channels),
            ("filters", self.filters),
            ("fc_units", self.fc_units),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("network {name} must be positive")));
            }
        }
        if self.output_dim % 2 != 0 {
            return Err(Error::invalid("network output_dim must be even"));
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(Error::invalid(format!("kernel {:?} must have odd sides", self.kernel)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid(format!("keep probability {} outside (0, 1]", self.keep_prob)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_rows * self.input_cols
    }

    /// Transmitted-parameter count used for overhead accounting:
    /// `N_CL · C · N_SF · W_x · W_y + κ · N_SF · W_x · W_y · N_FCL`.
    ///
    /// This is a bookkeeping convention; the network actually stores
    /// [`NetworkSpec::storage_count`] values.
    pub fn parameter_count(&self) -> u64 {
        let window = (self.filters * self.kernel.0 * self.kernel.1) as u64;
        let conv = self.conv_layers as u64 * self.input_channels as u64 * window;
        let fc = self.keep_prob * (window * self.fc_units as u64) as f64;
        conv + fc.round() as u64
    }

    /// Length of θ.
    pub fn storage_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Location of one weight block inside θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlocks {
    pub in_channels: usize,
    /// `[filters][in_channels][kh][kw]`.
    pub weight: Block,
    pub bias: Block,
    pub scale: Block,
    pub shift: Block,
}

/// Offsets of every block of θ, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub conv: Vec<ConvBlocks>,
    /// `[fc_units][flattened features]`.
    pub fc_weight: Block,
    pub fc_bias: Block,
    /// `[output_dim][fc_units]`.
    pub out_weight: Block,
    pub out_bias: Block,
    pub features: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let mut cursor = 0;
        let mut take = |len: usize| {
            let b = Block { offset: cursor, len };
            cursor += len;
            b
        };
        let plane = spec.input_rows * spec.input_cols;
        let window = spec.kernel.0 * spec.kernel.1;
        let mut conv = Vec::with_capacity(spec.conv_layers);
        let mut channels = spec.input_channels;
        for _ in 0..spec.conv_layers {
            conv.push(ConvBlocks {
                in_channels: channels,
                weight: take(spec.filters * channels * window),
                bias: take(spec.filters),
                scale: take(spec.filters),
                shift: take(spec.filters),
            });
            channels = spec.filters;
        }
        let features = channels * plane;
        let fc_weight = take(spec.fc_units * features);
        let fc_bias = take(spec.fc_units);
        let out_weight = take(spec.output_dim * spec.fc_units);
        let out_bias = take(spec.output_dim);
        Layout {
            conv,
            fc_weight,
            fc_bias,
            out_weight,
            out_bias,
            features,
            total: cursor,
        }
    }

    /// Coordinates of θ that a dropped fully connected unit owns.
    pub fn fc_unit_coordinates(&self, unit: usize) -> impl Iterator<Item = usize> {
        let row = self.fc_weight.offset + unit * self.features;
        (row..row + self.features).chain(std::iter::once(self.fc_bias.offset + unit))
    }
}
