use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::pooled_len;

pub const FRAME_HEIGHT: usize = 32;
pub const FRAME_WIDTH: usize = 64;
pub const KERNEL: usize = 3;
pub const POOL_WINDOW: usize = 3;

/// Architecture and regularisation hyper-parameters of the dual-head network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv block, in order.
    pub conv_channels: Vec<usize>,
    /// Number of leading conv blocks followed by max pooling.
    pub pooled_blocks: usize,
    pub pool_stride: usize,
    pub dense_width: usize,
    /// Subject classes (M).
    pub num_subjects: usize,
    /// Posture classes (N).
    pub num_postures: usize,
    pub leaky_slope: f64,
    pub conv_dropout: Vec<f64>,
    pub dense_dropout: f64,
    pub l2_sigma: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Full-size network for `num_subjects` × `num_postures`.
    pub fn standard(num_subjects: usize, num_postures: usize) -> Self {
        Self {
            input_height: FRAME_HEIGHT,
            input_width: FRAME_WIDTH,
            conv_channels: vec![32, 64, 128, 128],
            pooled_blocks: 2,
            pool_stride: 2,
            dense_width: 256,
            num_subjects,
            num_postures,
            leaky_slope: 0.2,
            conv_dropout: vec![0.1, 0.2, 0.3, 0.4],
            dense_dropout: 0.5,
            l2_sigma: 0.002,
            bn_eps: 1e-5,
            bn_momentum: 0.99,
        }
    }

    /// Tiny network with the same topology, for gradient verification.
    pub fn miniature(num_subjects: usize, num_postures: usize) -> Self {
        Self {
            conv_channels: vec![2, 2, 4, 4],
            dense_width: 8,
            ..Self::standard(num_subjects, num_postures)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subjects < 2 || self.num_postures < 2 {
            return config_err(format!(
                "need at least 2 subjects and 2 postures, got M={} N={}",
                self.num_subjects, self.num_postures
            ));
        }
        if self.conv_channels.is_empty() || self.conv_channels.iter().any(|&c| c == 0) {
            return config_err("conv_channels must be non-empty and positive");
        }
        if self.conv_dropout.len() != self.conv_channels.len() {
            return config_err(format!(
                "{} conv dropout rates for {} conv blocks",
                self.conv_dropout.len(),
                self.conv_channels.len()
            ));
        }
        if self.pooled_blocks > self.conv_channels.len() {
            return config_err("more pooled blocks than conv blocks");
        }
        if self.dense_width == 0 {
            return config_err("dense_width must be positive");
        }
        for &p in self.conv_dropout.iter().chain([&self.dense_dropout]) {
            if !(0.0..1.0).contains(&p) {
                return config_err(format!("dropout rate {p} outside [0,1)"));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return config_err(format!("leaky slope {} outside (0,1)", self.leaky_slope));
        }
        if self.l2_sigma < 0.0 || !self.l2_sigma.is_finite() {
            return config_err("l2_sigma must be a nonnegative finite number");
        }
        if self.bn_eps <= 0.0 || !(0.0..1.0).contains(&self.bn_momentum) {
            return config_err("batch-norm eps must be positive and momentum in [0,1)");
        }
        self.block_shapes().map(|_| ())
    }

    /// `(channels, height, width)` after each conv block, checked against the
    /// valid-conv and pooling arithmetic.
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut shapes = Vec::with_capacity(self.conv_channels.len());
        for (i, &c) in self.conv_channels.iter().enumerate() {
            if h < KERNEL || w < KERNEL {
                return config_err(format!(
                    "conv block {} receives {h}x{w}, smaller than the {KERNEL}x{KERNEL} kernel",
                    i + 1
                ));
            }
            h -= KERNEL - 1;
            w -= KERNEL - 1;
            if i < self.pooled_blocks {
                h = pooled_len(h, POOL_WINDOW, self.pool_stride)
                    .or_else(|e| config_err(format!("pool after block {}: {e}", i + 1)))?;
                w = pooled_len(w, POOL_WINDOW, self.pool_stride)
                    .or_else(|e| config_err(format!("pool after block {}: {e}", i + 1)))?;
            }
            shapes.push((c, h, w));
        }
        Ok(shapes)
    }

    pub fn flat_features(&self) -> Result<usize> {
        let &(c, h, w) = self.block_shapes()?.last().expect("validated non-empty");
        Ok(c * h * w)
    }
}
