//! Far-field forward model and measurement synthesis.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Probe, ScanPattern};
use crate::fft::Fft2;
use crate::rng::{substream, Stream};
use crate::{ComplexImage, Error, RealImage, Result};

/// `F (d ⊙ v)` with the unitary 2D DFT.
pub fn far_field(fft: &Fft2, probe: &Probe, v: &ComplexImage) -> Result<ComplexImage> {
    if v.dim() != probe.shape() {
        return Err(Error::ShapeMismatch {
            expected: probe.shape(),
            found: v.dim(),
        });
    }
    let mut field = v * probe.values();
    fft.forward(&mut field)?;
    Ok(field)
}

/// Noiseless diffraction intensity `|F (d ⊙ v)|²`.
pub fn forward_intensity(fft: &Fft2, probe: &Probe, v: &ComplexImage) -> Result<RealImage> {
    Ok(far_field(fft, probe, v)?.mapv(|z| z.norm_sqr()))
}

/// Square-rooted diffraction data, one amplitude patch per scan position.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    amplitudes: Vec<RealImage>,
    scan: ScanPattern,
}

impl MeasurementSet {
    pub fn new(amplitudes: Vec<RealImage>, scan: ScanPattern) -> Result<Self> {
        if amplitudes.len() != scan.len() {
            return Err(Error::LengthMismatch {
                expected: scan.len(),
                found: amplitudes.len(),
            });
        }
        for y in &amplitudes {
            scan.check_patch(y.dim())?;
            if y.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::InvalidParameter(
                    "amplitudes must be finite and non-negative".into(),
                ));
            }
        }
        Ok(Self { amplitudes, scan })
    }

    pub fn amplitudes(&self) -> &[RealImage] {
        &self.amplitudes
    }

    pub fn scan(&self) -> &ScanPattern {
        &self.scan
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Same data with scan positions relabeled (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let scan = self.scan.permuted(perm)?;
        Ok(Self {
            amplitudes: perm.iter().map(|&p| self.amplitudes[p].clone()).collect(),
            scan,
        })
    }

    /// Total energy `Σ_j ‖y_j‖²`.
    pub fn energy(&self) -> f64 {
        self.amplitudes
            .iter()
            .flat_map(|y| y.iter())
            .map(|v| v * v)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Photon count assigned to the brightest detector pixel over all patches.
    pub peak_rate: f64,
    /// Mean dark-current counts added inside the Poisson mean.
    pub dark_current: f64,
    pub seed: u64,
    /// Use the Poisson mean instead of drawing samples.
    pub noiseless: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            peak_rate: 1e4,
            dark_current: 0.5,
            seed: 0,
            noiseless: false,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            peak_rate: 1.0,
            dark_current: 0.0,
            seed: 0,
            noiseless: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_rate > 0.0 && self.peak_rate.is_finite()) {
            return Err(Error::InvalidParameter("peak rate must be positive".into()));
        }
        if !(self.dark_current >= 0.0 && self.dark_current.is_finite()) {
            return Err(Error::InvalidParameter(
                "dark current must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Simulates `y_j = sqrt(Pois(r_p |F D P_j x|² / max_k ‖F D P_j x_k‖²_∞ + λ))`.
///
/// Patch `j` draws from its own noise substream, so the result does not
/// depend on the evaluation order or thread count.
pub fn simulate_measurements(
    x: &ComplexImage,
    probe: &Probe,
    scan: &ScanPattern,
    noise: &NoiseConfig,
) -> Result<MeasurementSet> {
    noise.validate()?;
    scan.check_image(x.dim())?;
    scan.check_patch(probe.shape())?;
    let fft = Fft2::square(scan.patch_size());

    let intensities = (0..scan.len())
        .into_par_iter()
        .map(|j| forward_intensity(&fft, probe, &scan.extract_patch(x, j)?))
        .collect::<Result<Vec<_>>>()?;
    let peak = intensities
        .iter()
        .flat_map(|i| i.iter())
        .copied()
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::ZeroNormalizer(
            "object is identically zero under the probe".into(),
        ));
    }
    let scale = noise.peak_rate / peak;

    let amplitudes = intensities
        .into_par_iter()
        .enumerate()
        .map(|(j, intensity)| {
            let mean = intensity.mapv(|i| scale * i + noise.dark_current);
            if noise.noiseless {
                return Ok(mean.mapv(f64::sqrt));
            }
            let mut rng = substream(noise.seed, Stream::Noise, j as u32);
            let mut out = Array2::zeros(mean.dim());
            Zip::from(&mut out).and(&mean).for_each(|o, &mu| {
                *o = if mu > 0.0 {
                    let counts: f64 = rng.sample(Poisson::new(mu).expect("positive finite mean"));
                    counts.sqrt()
                } else {
                    0.0
                };
            });
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(amplitudes, scan.clone())
}
