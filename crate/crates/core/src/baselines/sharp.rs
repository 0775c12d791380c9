//! Relaxed averaged alternating reflections in the frame domain
//! `u_j = d ⊙ P_j x`, as used by SHARP.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::{BaselineConfig, Tracker};
use crate::fft::Fft2;
use crate::ptycho::{MeasurementSet, Probe, ScanPattern};
use crate::recon::{ReconstructionResult, Reference};
use crate::solver::{init_guess, replace_magnitudes};
use crate::{ComplexImage, Error, RealImage, Result};

/// Orthogonal projection `P_Q` onto frames generated by one image:
/// `x̄ = Λ₂⁻¹ Σ_j P_jᵀ d* u_j`, `Λ₂ = Σ_j P_jᵀ |d|²`, then `u_j = d ⊙ P_j x̄`.
#[derive(Debug, Clone)]
pub struct FrameProjector {
    scan: ScanPattern,
    probe: ComplexImage,
    inv_lambda: RealImage,
}

impl FrameProjector {
    pub fn new(scan: &ScanPattern, probe: &Probe) -> Result<Self> {
        scan.check_patch(probe.shape())?;
        let lambda = scan.embedding_sum(&probe.values().mapv(|d| d.norm_sqr()))?;
        let covered = scan.support();
        let blind = Zip::from(&lambda)
            .and(&covered)
            .fold(0usize, |n, &l, &c| n + usize::from(c && l <= 0.0));
        if blind > 0 {
            return Err(Error::InvalidParameter(format!(
                "{blind} scanned pixels receive no illumination"
            )));
        }
        Ok(Self {
            scan: scan.clone(),
            probe: probe.values().clone(),
            inv_lambda: lambda.mapv(|l| if l > 0.0 { 1.0 / l } else { 0.0 }),
        })
    }

    /// The least-squares image `x̄` of a frame stack.
    pub fn image(&self, u: &[ComplexImage]) -> Result<ComplexImage> {
        if u.len() != self.scan.len() {
            return Err(Error::LengthMismatch {
                expected: self.scan.len(),
                found: u.len(),
            });
        }
        let mut acc = Array2::zeros(self.scan.image_shape());
        for (j, uj) in u.iter().enumerate() {
            let back = Zip::from(uj)
                .and(&self.probe)
                .map_collect(|&u, d| d.conj() * u);
            self.scan.add_embedded(&mut acc, back.view(), j)?;
        }
        Ok(acc * &self.inv_lambda)
    }

    /// `[d ⊙ P_j x]_j`.
    pub fn frames(&self, x: &ComplexImage) -> Result<Vec<ComplexImage>> {
        (0..self.scan.len())
            .map(|j| Ok(self.scan.extract_patch(x, j)? * &self.probe))
            .collect()
    }

    pub fn project(&self, u: &[ComplexImage]) -> Result<Vec<ComplexImage>> {
        self.frames(&self.image(u)?)
    }
}

/// RAAR with relaxation `β`:
/// `u ← 2β P_Q P_a u + (1 − 2β) P_a u + β (u − P_Q u)`, where `P_a` sets the
/// Fourier magnitudes of each frame to `y_j` (2 FFTs per position). The
/// reported image is `x̄(P_a u)`.
pub fn sharp_reconstruct(
    measurements: &MeasurementSet,
    probe: &Probe,
    cfg: &BaselineConfig,
    reference: Option<Reference<'_>>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let scan = measurements.scan();
    let projector = FrameProjector::new(scan, probe)?;
    let fft = Fft2::square(scan.patch_size());
    let beta = cfg.tunable;

    let x0 = init_guess(measurements, probe)?;
    let mut u = projector.frames(&x0)?;
    let mut image = x0;
    let mut tracker = Tracker::new(reference, &image)?;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let pa = u
            .par_iter()
            .zip(measurements.amplitudes())
            .map(|(uj, y)| {
                let mut f = uj.clone();
                fft.forward(&mut f)?;
                replace_magnitudes(&mut f, y);
                fft.inverse(&mut f)?;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let pa_image = projector.image(&pa)?;
        let qpa = projector.frames(&pa_image)?;
        let qu = projector.project(&u)?;

        let mut change_sq = 0.0;
        let mut norm_sq = 0.0;
        for (((uj, a), qa), q) in u.iter_mut().zip(&pa).zip(&qpa).zip(&qu) {
            Zip::from(uj)
                .and(a)
                .and(qa)
                .and(q)
                .for_each(|u, &a, &qa, &q| {
                    let next = qa * (2.0 * beta) + a * (1.0 - 2.0 * beta) + (*u - q) * beta;
                    change_sq += (next - *u).norm_sqr();
                    norm_sq += next.norm_sqr();
                    *u = next;
                });
        }
        if !change_sq.is_finite() {
            return Err(Error::Diverged { iteration: k });
        }
        let state_residual = crate::consensus::relative(change_sq.sqrt(), norm_sq.sqrt());
        let previous = std::mem::replace(&mut image, pa_image);
        tracker.record(k, &image, &previous, Some(state_residual), None)?;
        if state_residual <= cfg.residual_tol {
            converged = true;
            break;
        }
    }
    Ok(tracker.finish(cfg, image, iterations, converged, fft.calls()))
}
