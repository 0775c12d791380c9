//! Measured-data preprocessing: dark subtraction, centre crop, rotated Tukey
//! window and square root, plus outlier flagging for manual review.

use std::f64::consts::PI;

use ndarray::{s, Array2, Zip};
use pmace_core::RealImage;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Side length of the square centre crop.
    pub crop_size: usize,
    /// Tukey taper fraction in `[0, 1]`; 0 is a box, 1 a Hann window.
    #[serde(default = "default_window_shape")]
    pub window_shape: f64,
    /// Robust z-score above which a frame is flagged.
    #[serde(default = "default_outlier_threshold")]
    pub outlier_threshold: f64,
}

fn default_window_shape() -> f64 {
    0.5
}
fn default_outlier_threshold() -> f64 {
    3.5
}

impl PreprocessConfig {
    pub fn new(crop_size: usize) -> Self {
        Self {
            crop_size,
            window_shape: default_window_shape(),
            outlier_threshold: default_outlier_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    /// Total cropped counts of the frame.
    pub total: f64,
    /// `|total − median| / (1.4826 · MAD)` over all frames; saturates at
    /// `f64::MAX` when the MAD vanishes but the frame deviates.
    pub score: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub amplitudes: Vec<RealImage>,
    pub scores: Vec<FrameScore>,
}

impl Preprocessed {
    pub fn flagged(&self) -> Vec<usize> {
        self.scores
            .iter()
            .filter(|s| s.flagged)
            .map(|s| s.index)
            .collect()
    }
}

/// Pixels removed before and after the crop along one axis. An odd excess
/// puts the extra pixel after (621 → 512 removes 54 then 55).
pub fn crop_margins(size: usize, crop: usize) -> (usize, usize) {
    let excess = size - crop;
    (excess / 2, excess - excess / 2)
}

/// 1-D Tukey profile at normalized distance `t = |x| / half-width`.
pub fn tukey(t: f64, shape: f64) -> f64 {
    let flat = 1.0 - shape;
    if t <= flat {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * (t - flat) / shape).cos())
    }
}

/// 2-D window obtained by rotating the 1-D Tukey profile about the centre;
/// the radius is normalized so the edge midpoints sit at `t = 1`.
pub fn rotated_tukey(n: usize, shape: f64) -> RealImage {
    let center = (n as f64 - 1.0) / 2.0;
    let half = center.max(0.5);
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (di, dj) = (i as f64 - center, j as f64 - center);
        tukey((di * di + dj * dj).sqrt() / half, shape)
    })
}

pub fn preprocess_measured(
    frames: &[RealImage],
    dark: &[RealImage],
    cfg: &PreprocessConfig,
) -> CliResult<Preprocessed> {
    let shape = frames
        .first()
        .ok_or_else(|| CliError::Config("no frames to preprocess".into()))?
        .dim();
    if frames.iter().chain(dark).any(|f| f.dim() != shape) {
        return Err(CliError::Config(
            "frames and dark frames must share one shape".into(),
        ));
    }
    if cfg.crop_size == 0 || cfg.crop_size > shape.0 || cfg.crop_size > shape.1 {
        return Err(CliError::Config(format!(
            "crop {} does not fit frames of shape {:?}",
            cfg.crop_size, shape
        )));
    }
    if !(0.0..=1.0).contains(&cfg.window_shape) {
        return Err(CliError::Config("window shape must lie in [0, 1]".into()));
    }

    let mut mean_dark = Array2::<f64>::zeros(shape);
    for d in dark {
        mean_dark += d;
    }
    if !dark.is_empty() {
        mean_dark /= dark.len() as f64;
    }
    let (top, _) = crop_margins(shape.0, cfg.crop_size);
    let (left, _) = crop_margins(shape.1, cfg.crop_size);
    let n = cfg.crop_size;
    let window = rotated_tukey(n, cfg.window_shape);

    let mut totals = Vec::with_capacity(frames.len());
    let amplitudes = frames
        .iter()
        .map(|f| {
            let cropped = Zip::from(f.slice(s![top..top + n, left..left + n]))
                .and(mean_dark.slice(s![top..top + n, left..left + n]))
                .map_collect(|&v, &d| (v - d).max(0.0));
            totals.push(cropped.sum());
            Zip::from(&cropped)
                .and(&window)
                .map_collect(|&v, &w| (v * w).sqrt())
        })
        .collect();
    Ok(Preprocessed {
        amplitudes,
        scores: robust_scores(&totals, cfg.outlier_threshold),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn robust_scores(totals: &[f64], threshold: f64) -> Vec<FrameScore> {
    let med = median(&mut totals.to_vec());
    let mad = median(&mut totals.iter().map(|t| (t - med).abs()).collect::<Vec<_>>());
    totals
        .iter()
        .enumerate()
        .map(|(index, &total)| {
            let dev = (total - med).abs();
            let score = if dev == 0.0 {
                0.0
            } else if mad > 0.0 {
                dev / (1.4826 * mad)
            } else {
                f64::MAX
            };
            FrameScore {
                index,
                total,
                score,
                flagged: score > threshold,
            }
        })
        .collect()
}
