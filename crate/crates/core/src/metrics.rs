//! Reconstruction quality metrics and convergence traces.

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::fft::Fft2;
use crate::ptycho::{far_field, MeasurementSet, Probe, ScanPattern};
use crate::{ComplexImage, Error, Result, C64};

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Relative update norm of the iterated state.
    pub residual: f64,
    /// Aligned NRMSE against ground truth, when known.
    pub nrmse: Option<f64>,
    /// Wall-clock seconds since the solver started.
    pub seconds: f64,
    /// Relative update norm of the image estimate, when tracked separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_residual: Option<f64>,
    /// Objective value, for methods that minimize one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Aligned NRMSE of the initial guess, when ground truth is known.
    pub initial_nrmse: Option<f64>,
    records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    /// Appends a record; iteration indices must increase and residuals be
    /// non-negative.
    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                record.iteration > last.iteration,
                "trace iterations must increase"
            );
        }
        assert!(!(record.residual < 0.0), "residuals are non-negative");
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn at(&self, iteration: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.iteration == iteration)
    }

    pub fn final_nrmse(&self) -> Option<f64> {
        self.last().and_then(|r| r.nrmse)
    }
}

/// Pixels a metric is evaluated over.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Region {
    #[default]
    Full,
    /// Rectangle with top-left corner `(top, left)`.
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Mask(Array2<bool>),
}

impl Region {
    /// Centered `height × width` rectangle inside an image of `shape`.
    pub fn central(shape: (usize, usize), height: usize, width: usize) -> Result<Self> {
        if height > shape.0 || width > shape.1 || height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "crop {height}x{width} does not fit {shape:?}"
            )));
        }
        Ok(Region::Crop {
            top: (shape.0 - height) / 2,
            left: (shape.1 - width) / 2,
            height,
            width,
        })
    }

    /// Values of `x` inside the region, in row-major order.
    pub fn select(&self, x: &ComplexImage) -> Result<Vec<C64>> {
        match self {
            Region::Full => Ok(x.iter().copied().collect()),
            Region::Crop {
                top,
                left,
                height,
                width,
            } => {
                if top + height > x.nrows() || left + width > x.ncols() {
                    return Err(Error::InvalidParameter("crop exceeds image".into()));
                }
                Ok(x.slice(s![*top..top + height, *left..left + width])
                    .iter()
                    .copied()
                    .collect())
            }
            Region::Mask(mask) => {
                if mask.dim() != x.dim() {
                    return Err(Error::ShapeMismatch {
                        expected: x.dim(),
                        found: mask.dim(),
                    });
                }
                Ok(x.iter()
                    .zip(mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(z, _)| *z)
                    .collect())
            }
        }
    }
}

/// `min_c ‖c x̂ − x‖ / ‖x‖` over complex scalars `c`.
///
/// The minimizer is `c = ⟨x̂, x⟩ / ‖x̂‖²` with the inner product conjugate
/// linear in `x̂`, so the metric ignores a global phase and gain. Returns 1
/// for `x̂ = 0`.
pub fn aligned_nrmse(xhat: &ComplexImage, x: &ComplexImage, region: &Region) -> Result<f64> {
    if xhat.dim() != x.dim() {
        return Err(Error::ShapeMismatch {
            expected: x.dim(),
            found: xhat.dim(),
        });
    }
    let a = region.select(xhat)?;
    let b = region.select(x)?;
    aligned_nrmse_slices(&a, &b)
}

fn aligned_nrmse_slices(xhat: &[C64], x: &[C64]) -> Result<f64> {
    let x_sq: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    if x_sq <= 0.0 {
        return Err(Error::ZeroNormalizer(
            "reference image has zero norm".into(),
        ));
    }
    let xhat_sq: f64 = xhat.iter().map(|z| z.norm_sqr()).sum();
    if xhat_sq == 0.0 {
        return Ok(1.0);
    }
    let inner: C64 = xhat.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
    let c = inner / xhat_sq;
    let err: f64 = xhat
        .iter()
        .zip(x)
        .map(|(a, b)| (c * a - b).norm_sqr())
        .sum();
    Ok((err / x_sq).sqrt())
}

/// The optimal alignment scalar `c = ⟨x̂, x⟩ / ‖x̂‖²`.
pub fn alignment_scalar(xhat: &ComplexImage, x: &ComplexImage) -> C64 {
    let xhat_sq: f64 = xhat.iter().map(|z| z.norm_sqr()).sum();
    if xhat_sq == 0.0 {
        return C64::new(0.0, 0.0);
    }
    xhat.iter()
        .zip(x.iter())
        .map(|(a, b)| a.conj() * b)
        .sum::<C64>()
        / xhat_sq
}

/// Overlap ratio `r_{j,k} = ‖P_jᵀ|d| ⊙ P_kᵀ|d|‖₁ / ‖|d| ⊙ |d|‖₁`.
pub fn overlap_ratio_pair(probe: &Probe, scan: &ScanPattern, j: usize, k: usize) -> Result<f64> {
    scan.check_patch(probe.shape())?;
    let (rj, cj) = scan.position(j)?;
    let (rk, ck) = scan.position(k)?;
    let magnitude = probe.magnitude();
    let n = scan.patch_size() as i64;
    let (dr, dc) = (rk as i64 - rj as i64, ck as i64 - cj as i64);
    let mut shared = 0.0;
    // pixel (a, b) of patch j coincides with pixel (a - dr, b - dc) of patch k
    for a in dr.max(0)..n.min(n + dr) {
        for b in dc.max(0)..n.min(n + dc) {
            shared += magnitude[[a as usize, b as usize]]
                * magnitude[[(a - dr) as usize, (b - dc) as usize]];
        }
    }
    let total: f64 = magnitude.iter().map(|m| m * m).sum();
    Ok(shared / total)
}

/// Mean of [`overlap_ratio_pair`] over grid-adjacent position pairs.
pub fn overlap_ratio(probe: &Probe, scan: &ScanPattern) -> Result<f64> {
    let pairs = scan.adjacent_pairs()?;
    let mut sum = 0.0;
    for &(j, k) in &pairs {
        sum += overlap_ratio_pair(probe, scan, j, k)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Pixels whose accumulated probe magnitude `Σ_j P_jᵀ|d|` reaches
/// `threshold · max|d|`.
pub fn illuminated_mask(probe: &Probe, scan: &ScanPattern, threshold: f64) -> Result<Array2<bool>> {
    let magnitude = probe.magnitude();
    let peak = magnitude.iter().copied().fold(0.0, f64::max);
    let lit = scan.embedding_sum(&magnitude)?;
    Ok(lit.mapv(|v| v >= threshold * peak && v > 0.0))
}

/// How predicted amplitudes are scaled before comparison with data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AmplitudeScale {
    /// Compare `|F D P_j x̂|` with the data directly (measured data).
    Raw,
    /// Apply the synthetic-data normalization
    /// `sqrt(r_p |F D P_j x̂|² / max_k ‖F D P_k x̂‖²_∞ + λ)`.
    Synthetic { peak_rate: f64, dark_current: f64 },
}

/// `‖ |F D P x̂| − y ‖ / ‖y‖` over all scan positions.
pub fn forward_nrmse(
    xhat: &ComplexImage,
    measurements: &MeasurementSet,
    probe: &Probe,
    scale: AmplitudeScale,
) -> Result<f64> {
    let scan = measurements.scan();
    let y_sq = measurements.energy();
    if y_sq <= 0.0 {
        return Err(Error::ZeroNormalizer("measurements have zero norm".into()));
    }
    let fft = Fft2::square(scan.patch_size());
    let mut predicted = Vec::with_capacity(scan.len());
    for j in 0..scan.len() {
        let field = far_field(&fft, probe, &scan.extract_patch(xhat, j)?)?;
        predicted.push(field.mapv(|z| z.norm_sqr()));
    }
    let peak = predicted
        .iter()
        .flat_map(|p| p.iter())
        .copied()
        .fold(0.0, f64::max);
    let mut err = 0.0;
    for (p, y) in predicted.iter().zip(measurements.amplitudes()) {
        err += Zip::from(p).and(y).fold(0.0, |acc, &i, &yv| {
            let amp = match scale {
                _ if peak == 0.0 => 0.0,
                AmplitudeScale::Raw => i.sqrt(),
                AmplitudeScale::Synthetic {
                    peak_rate,
                    dark_current,
                } => (peak_rate * i / peak + dark_current).sqrt(),
            };
            acc + (amp - yv).powi(2)
        });
    }
    Ok((err / y_sq).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptycho::{generate_probe, simulate_measurements, NoiseConfig, ProbeKind};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample(n: usize) -> ComplexImage {
        Array2::from_shape_fn((n, n), |(i, j)| {
            c(1.0 + 0.1 * i as f64, (0.3 * j as f64).sin())
        })
    }

    #[test]
    fn identical_and_rotated_images_score_zero() {
        let x = sample(6);
        assert!(aligned_nrmse(&x, &x, &Region::Full).unwrap() < 1e-15);
        let rotated = x.mapv(|z| z * C64::from_polar(1.0, 2.1));
        assert!(aligned_nrmse(&rotated, &x, &Region::Full).unwrap() < 1e-12);
    }

    #[test]
    fn zero_estimate_and_zero_reference() {
        let x = sample(3);
        assert_eq!(
            aligned_nrmse(&Array2::zeros((3, 3)), &x, &Region::Full).unwrap(),
            1.0
        );
        assert!(aligned_nrmse(&x, &Array2::zeros((3, 3)), &Region::Full).is_err());
    }

    #[test]
    fn alignment_never_hurts() {
        let x = sample(5);
        let xhat = x.mapv(|z| z * 0.8 + c(0.05, -0.02));
        let raw = (&xhat - &x)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
            / x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(aligned_nrmse(&xhat, &x, &Region::Full).unwrap() <= raw);
    }

    #[test]
    fn regions() {
        let x = sample(6);
        let mut xhat = x.clone();
        xhat[[0, 0]] = c(100.0, 0.0);
        let crop = Region::central((6, 6), 4, 4).unwrap();
        assert!(aligned_nrmse(&xhat, &x, &crop).unwrap() < 1e-15);
        let mut mask = Array2::from_elem((6, 6), true);
        mask[[0, 0]] = false;
        assert!(aligned_nrmse(&xhat, &x, &Region::Mask(mask)).unwrap() < 1e-15);
        assert!(Region::central((6, 6), 7, 2).is_err());
    }

    fn uniform_probe(n: usize) -> Probe {
        Probe::new(Array2::from_elem((n, n), c(1.0, 0.0))).unwrap()
    }

    #[test]
    fn overlap_ratio_special_cases() {
        let probe = generate_probe(8, &ProbeKind::default(), 0).unwrap();
        let scan = ScanPattern::new((20, 20), 8, vec![(3, 3), (3, 3), (12, 12), (3, 5)]).unwrap();
        assert!((overlap_ratio_pair(&probe, &scan, 0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(overlap_ratio_pair(&probe, &scan, 0, 2).unwrap(), 0.0);
        let a = overlap_ratio_pair(&probe, &scan, 0, 3).unwrap();
        let b = overlap_ratio_pair(&probe, &scan, 3, 0).unwrap();
        assert!((a - b).abs() < 1e-15 && a > 0.0 && a < 1.0);
        let scaled = probe.scaled(c(0.0, 3.0)).unwrap();
        assert!((overlap_ratio_pair(&scaled, &scan, 0, 3).unwrap() - a).abs() < 1e-14);
    }

    #[test]
    fn uniform_probe_closed_form() {
        let probe = uniform_probe(256);
        let scan = ScanPattern::new((600, 600), 256, vec![(0, 0), (0, 68)]).unwrap();
        let r = overlap_ratio_pair(&probe, &scan, 0, 1).unwrap();
        assert_eq!(r, 188.0 / 256.0);
    }

    #[test]
    fn grid_average_uses_both_directions() {
        let probe = uniform_probe(10);
        // rows 4 apart, columns 3 apart
        let positions = vec![(0, 0), (0, 3), (4, 0), (4, 3)];
        let scan = ScanPattern::new((20, 20), 10, positions)
            .unwrap()
            .with_grid_cells(vec![(0, 0), (0, 1), (1, 0), (1, 1)])
            .unwrap();
        let r = overlap_ratio(&probe, &scan).unwrap();
        assert!((r - (0.7 + 0.6) / 2.0).abs() < 1e-15);

        let pair = ScanPattern::new((20, 20), 10, vec![(0, 0), (0, 3)])
            .unwrap()
            .with_grid_cells(vec![(0, 0), (0, 1)])
            .unwrap();
        assert_eq!(
            overlap_ratio(&probe, &pair).unwrap(),
            overlap_ratio_pair(&probe, &pair, 0, 1).unwrap()
        );
    }

    #[test]
    fn forward_nrmse_of_self_generated_data() {
        let probe = generate_probe(8, &"gaussian".parse::<ProbeKind>().unwrap(), 2).unwrap();
        let scan = ScanPattern::new((16, 16), 8, vec![(0, 0), (4, 6), (8, 8)]).unwrap();
        let x = sample(16);
        let noise = NoiseConfig {
            peak_rate: 100.0,
            dark_current: 0.5,
            seed: 0,
            noiseless: true,
        };
        let y = simulate_measurements(&x, &probe, &scan, &noise).unwrap();
        let scale = AmplitudeScale::Synthetic {
            peak_rate: 100.0,
            dark_current: 0.5,
        };
        assert!(forward_nrmse(&x, &y, &probe, scale).unwrap() < 1e-10);
        let rotated = x.mapv(|z| z * C64::from_polar(1.0, 0.7));
        assert!(forward_nrmse(&rotated, &y, &probe, scale).unwrap() < 1e-10);
        for scale in [scale, AmplitudeScale::Raw] {
            let e = forward_nrmse(&Array2::zeros((16, 16)), &y, &probe, scale).unwrap();
            assert!((e - 1.0).abs() < 1e-15);
        }
    }
}
