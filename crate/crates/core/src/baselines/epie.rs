//! Extended ptychographic iterative engine with a known probe.

use ndarray::{s, Zip};
use rand::seq::SliceRandom;

use super::{BaselineConfig, Tracker};
use crate::fft::Fft2;
use crate::ptycho::{MeasurementSet, Probe};
use crate::recon::{ReconstructionResult, Reference};
use crate::rng::{substream, Stream};
use crate::solver::{init_guess, replace_magnitudes};
use crate::{ComplexImage, Result};

/// One ePIE sweep over `order`. Each visit of position `j` performs
/// `x ← x + step · P_jᵀ( d* / max|d|² ⊙ (ψ' − d ⊙ P_j x) )`, where `ψ'` is
/// `d ⊙ P_j x` with its Fourier magnitudes replaced by `y_j` (2 FFTs).
pub fn epie_sweep(
    fft: &Fft2,
    measurements: &MeasurementSet,
    probe: &Probe,
    x: &mut ComplexImage,
    order: &[usize],
    step: f64,
) -> Result<()> {
    let scan = measurements.scan();
    scan.check_image(x.dim())?;
    scan.check_patch(probe.shape())?;
    let gain = probe
        .values()
        .mapv(|d| d.conj() * (step / probe.max_intensity()));
    let n = scan.patch_size();
    for &j in order {
        let (r, c) = scan.position(j)?;
        let mut view = x.slice_mut(s![r..r + n, c..c + n]);
        let exit = &view * probe.values();
        let mut revised = exit.clone();
        fft.forward(&mut revised)?;
        replace_magnitudes(&mut revised, &measurements.amplitudes()[j]);
        fft.inverse(&mut revised)?;
        Zip::from(&mut view)
            .and(&revised)
            .and(&exit)
            .and(&gain)
            .for_each(|x, &new, &old, &g| *x += g * (new - old));
    }
    Ok(())
}

/// Sequential ePIE from the shared initial guess. One iteration visits every
/// position once, in ascending order unless shuffling is enabled.
pub fn epie_reconstruct(
    measurements: &MeasurementSet,
    probe: &Probe,
    cfg: &BaselineConfig,
    reference: Option<Reference<'_>>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let scan = measurements.scan();
    scan.check_patch(probe.shape())?;
    let fft = Fft2::square(scan.patch_size());

    let mut x = init_guess(measurements, probe)?;
    let mut tracker = Tracker::new(reference, &x)?;
    let mut order: Vec<usize> = (0..scan.len()).collect();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        if cfg.shuffle {
            order.shuffle(&mut substream(cfg.seed, Stream::Solver, k as u32));
        }
        let previous = x.clone();
        epie_sweep(&fft, measurements, probe, &mut x, &order, cfg.tunable)?;
        let change = tracker.record(k, &x, &previous, None, None)?;
        if change <= cfg.residual_tol {
            converged = true;
            break;
        }
    }
    Ok(tracker.finish(cfg, x, iterations, converged, fft.calls()))
}
