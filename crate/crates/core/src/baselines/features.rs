//! Fixed 18-entry statistical summary of a normalized frame.
//!
//! Order (version 1):
//!  0 mean, 1 std, 2 skewness, 3 excess kurtosis, 4 active cells (> 0.05),
//!  5 centre-of-pressure row, 6 centre-of-pressure column,
//!  7..13 region means over a 2×3 partition (row-major),
//!  13..18 region stds for the first five regions.

use crate::error::{shape_err, Result};
use crate::nn::{FRAME_HEIGHT, FRAME_WIDTH};

pub const NUM_FEATURES: usize = 18;
pub const FEATURE_VERSION: u32 = 1;
pub const ACTIVE_LEVEL: f32 = 0.05;

const REGION_ROWS: usize = 2;
const REGION_COLS: usize = 3;

pub type FeatureVector = [f64; NUM_FEATURES];

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

/// Region `r` spans rows `[r/3 · 16, ...)` and columns at thirds of 64.
pub fn region_bounds(r: usize) -> ((usize, usize), (usize, usize)) {
    let (ri, ci) = (r / REGION_COLS, r % REGION_COLS);
    let rows = (ri * FRAME_HEIGHT / REGION_ROWS, (ri + 1) * FRAME_HEIGHT / REGION_ROWS);
    let cols = (ci * FRAME_WIDTH / REGION_COLS, (ci + 1) * FRAME_WIDTH / REGION_COLS);
    (rows, cols)
}

pub fn extract_features(frame: &[f32]) -> Result<FeatureVector> {
    if frame.len() != FRAME_HEIGHT * FRAME_WIDTH {
        return shape_err(format!(
            "feature extraction needs a {FRAME_HEIGHT}x{FRAME_WIDTH} frame, got {} values",
            frame.len()
        ));
    }
    let mut f = [0.0; NUM_FEATURES];
    let all = frame.iter().map(|&v| v as f64);
    let (mean, var, m3, m4) = moments(all);
    let std = var.sqrt();
    f[0] = mean;
    f[1] = std;
    // a flat frame has no shape: skewness and kurtosis are reported as 0
    if var > 0.0 {
        f[2] = m3 / var.powf(1.5);
        f[3] = m4 / (var * var) - 3.0;
    }
    f[4] = frame.iter().filter(|&&v| v > ACTIVE_LEVEL).count() as f64;
    let total: f64 = frame.iter().map(|&v| v as f64).sum();
    if total > 0.0 {
        let (mut r, mut c) = (0.0, 0.0);
        for (i, &v) in frame.iter().enumerate() {
            r += (i / FRAME_WIDTH) as f64 * v as f64;
            c += (i % FRAME_WIDTH) as f64 * v as f64;
        }
        f[5] = r / total;
        f[6] = c / total;
    } else {
        f[5] = (FRAME_HEIGHT as f64 - 1.0) / 2.0;
        f[6] = (FRAME_WIDTH as f64 - 1.0) / 2.0;
    }
    for r in 0..REGION_ROWS * REGION_COLS {
        let ((r0, r1), (c0, c1)) = region_bounds(r);
        let cells = (r0..r1).flat_map(|y| (c0..c1).map(move |x| frame[y * FRAME_WIDTH + x] as f64));
        let (m, v, _, _) = moments(cells);
        f[7 + r] = m;
        if r < 5 {
            f[13 + r] = v.sqrt();
        }
    }
    Ok(f)
}

/// Per-feature mean and standard deviation of a training set; applying it
/// z-scores features so no statistic dominates Euclidean distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}
