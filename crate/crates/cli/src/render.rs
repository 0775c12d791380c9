//! Grayscale PNG rendering of reconstructions.
//!
//! Phase is shown after removing the circular mean phase over a central
//! rectangle, so a constant-phase image renders uniform mid-gray with
//! symmetric limits. Limits and the alignment rectangle are recorded in a
//! sidecar `render.json`.

use std::path::Path;

use ndarray::{s, Array2};
use pmace_core::metrics::{aligned_nrmse, alignment_scalar, Region, TraceRecord};
use pmace_core::{ComplexImage, RealImage, C64};
use serde::{Deserialize, Serialize};

use crate::config::RenderConfig;
use crate::dataset::{version, write_json};
use crate::error::{CliError, CliResult};
use crate::experiment::{write_trace, TRACE_FILE};

pub const MAGNITUDE_PNG: &str = "magnitude.png";
pub const PHASE_PNG: &str = "phase.png";
pub const MAGNITUDE_DIFF_PNG: &str = "magnitude_difference.png";
pub const PHASE_DIFF_PNG: &str = "phase_difference.png";
pub const SIDECAR_FILE: &str = "render.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSidecar {
    pub files: Vec<String>,
    pub magnitude_limits: (f64, f64),
    pub phase_limits: (f64, f64),
    /// Central rectangle `(top, left, height, width)` used for alignment.
    pub alignment_rect: (usize, usize, usize, usize),
    /// Phase in radians subtracted before rendering.
    pub phase_offset: f64,
    /// Present when ground truth was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub nrmse: f64,
    /// Symmetric limits of the magnitude difference `|c x̂| − |x|`.
    pub magnitude_difference_limits: (f64, f64),
    /// Limits of the wrapped phase difference `arg(c x̂ · x*)`.
    pub phase_difference_limits: (f64, f64),
}

/// Central `fraction`-sized rectangle as `(top, left, height, width)`.
pub fn central_rect(shape: (usize, usize), fraction: f64) -> (usize, usize, usize, usize) {
    let side = |n: usize| ((n as f64 * fraction).round() as usize).clamp(1, n);
    let (h, w) = (side(shape.0), side(shape.1));
    ((shape.0 - h) / 2, (shape.1 - w) / 2, h, w)
}

/// Circular mean phase of the nonzero pixels in the rectangle; 0 when they
/// all vanish or cancel.
pub fn central_phase(x: &ComplexImage, rect: (usize, usize, usize, usize)) -> f64 {
    let (top, left, h, w) = rect;
    let sum: C64 = x
        .slice(s![top..top + h, left..left + w])
        .iter()
        .filter(|z| z.norm() > 0.0)
        .map(|z| z / z.norm())
        .sum();
    if sum.norm() > 0.0 {
        sum.arg()
    } else {
        0.0
    }
}

/// Linear map of `[lo, hi]` onto 0..=255 with clamping. Values within
/// `1e-9 · (hi − lo)` of zero are snapped to zero so rounding noise cannot
/// move the zero level off its gray value.
pub fn to_gray(values: &RealImage, (lo, hi): (f64, f64)) -> Vec<u8> {
    let snap = 1e-9 * (hi - lo);
    values
        .iter()
        .map(|&v| {
            let v = if v.abs() < snap { 0.0 } else { v };
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect()
}

fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * std::f64::consts::PI);
    if t > std::f64::consts::PI {
        t - 2.0 * std::f64::consts::PI
    } else {
        t
    }
}

fn save_png(path: &Path, values: &RealImage, limits: (f64, f64)) -> CliResult<()> {
    let (rows, cols) = values.dim();
    image::save_buffer(
        path,
        &to_gray(values, limits),
        cols as u32,
        rows as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes magnitude and phase PNGs, difference PNGs when `truth` is given,
/// the trace CSV when `trace` is given, and the sidecar.
pub fn render_outputs(
    xhat: &ComplexImage,
    truth: Option<(&ComplexImage, &Region)>,
    trace: Option<&[TraceRecord]>,
    cfg: &RenderConfig,
    out_dir: &Path,
) -> CliResult<RenderSidecar> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let rect = central_rect(xhat.dim(), cfg.center_fraction);
    let offset = central_phase(xhat, rect);
    let rotation = C64::from_polar(1.0, -offset);

    let magnitude = xhat.mapv(|z| z.norm());
    let magnitude_limits = cfg.magnitude_limits.unwrap_or_else(|| {
        let peak = magnitude.iter().copied().fold(0.0, f64::max);
        (0.0, if peak > 0.0 { peak } else { 1.0 })
    });
    let phase = xhat.mapv(|z| wrap((z * rotation).arg()));
    save_png(&out_dir.join(MAGNITUDE_PNG), &magnitude, magnitude_limits)?;
    save_png(&out_dir.join(PHASE_PNG), &phase, cfg.phase_limits)?;
    let mut files = vec![MAGNITUDE_PNG.to_string(), PHASE_PNG.to_string()];

    let comparison = match truth {
        Some((x, region)) => {
            if x.dim() != xhat.dim() {
                return Err(CliError::Config(format!(
                    "ground truth is {:?}, reconstruction is {:?}",
                    x.dim(),
                    xhat.dim()
                )));
            }
            let nrmse = aligned_nrmse(xhat, x, region)?;
            let c = alignment_scalar(xhat, x);
            let aligned = xhat.mapv(|z| c * z);
            let mag_diff: RealImage =
                Array2::from_shape_fn(x.dim(), |p| aligned[p].norm() - x[p].norm());
            let phase_diff: RealImage =
                Array2::from_shape_fn(x.dim(), |p| wrap((aligned[p] * x[p].conj()).arg()));
            let peak = x
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let half = 0.5 * (cfg.phase_limits.1 - cfg.phase_limits.0);
            let comparison = Comparison {
                nrmse,
                magnitude_difference_limits: (-peak, peak),
                phase_difference_limits: (-half, half),
            };
            save_png(
                &out_dir.join(MAGNITUDE_DIFF_PNG),
                &mag_diff,
                comparison.magnitude_difference_limits,
            )?;
            save_png(
                &out_dir.join(PHASE_DIFF_PNG),
                &phase_diff,
                comparison.phase_difference_limits,
            )?;
            files.push(MAGNITUDE_DIFF_PNG.to_string());
            files.push(PHASE_DIFF_PNG.to_string());
            Some(comparison)
        }
        None => None,
    };

    if let Some(records) = trace {
        write_trace(&out_dir.join(TRACE_FILE), records)?;
        files.push(TRACE_FILE.to_string());
    }

    let sidecar = RenderSidecar {
        files,
        magnitude_limits,
        phase_limits: cfg.phase_limits,
        alignment_rect: rect,
        phase_offset: offset,
        comparison,
        version: version(),
    };
    write_json(&out_dir.join(SIDECAR_FILE), &sidecar)?;
    Ok(sidecar)
}
