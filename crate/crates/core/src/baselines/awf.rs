//! Accelerated Wirtinger flow on the amplitude loss
//! `f(x) = Σ_j ‖ |F D P_j x| − y_j ‖²`.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::{BaselineConfig, Tracker};
use crate::fft::Fft2;
use crate::ptycho::{MeasurementSet, Probe};
use crate::recon::{ReconstructionResult, Reference};
use crate::solver::init_guess;
use crate::{ComplexImage, Error, Result, C64};

/// `f(x)`, costing one FFT per position.
pub fn amplitude_loss(
    fft: &Fft2,
    measurements: &MeasurementSet,
    probe: &Probe,
    x: &ComplexImage,
) -> Result<f64> {
    let scan = measurements.scan();
    scan.check_image(x.dim())?;
    let losses = (0..scan.len())
        .into_par_iter()
        .map(|j| {
            let mut z = scan.extract_patch(x, j)? * probe.values();
            fft.forward(&mut z)?;
            Ok(Zip::from(&z)
                .and(&measurements.amplitudes()[j])
                .fold(0.0, |acc, z, &y| acc + (z.norm() - y).powi(2)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum())
}

/// `f(x)` and its gradient with respect to `(Re x, Im x)`, packed as the
/// complex image `Σ_j P_jᵀ D* F*( 2(|z_j| − y_j) z_j / |z_j| )` with
/// `z_j = F D P_j x`. Where `z_j = 0` the term is taken as zero.
/// Costs two FFTs per position.
pub fn amplitude_loss_gradient(
    fft: &Fft2,
    measurements: &MeasurementSet,
    probe: &Probe,
    x: &ComplexImage,
) -> Result<(f64, ComplexImage)> {
    let scan = measurements.scan();
    scan.check_image(x.dim())?;
    let parts = (0..scan.len())
        .into_par_iter()
        .map(|j| {
            let mut z = scan.extract_patch(x, j)? * probe.values();
            fft.forward(&mut z)?;
            let mut loss = 0.0;
            Zip::from(&mut z)
                .and(&measurements.amplitudes()[j])
                .for_each(|z, &y| {
                    let m = z.norm();
                    loss += (m - y).powi(2);
                    *z = if m > 0.0 {
                        *z * (2.0 * (m - y) / m)
                    } else {
                        C64::new(0.0, 0.0)
                    };
                });
            fft.inverse(&mut z)?;
            Zip::from(&mut z)
                .and(probe.values())
                .for_each(|g, d| *g *= d.conj());
            Ok((loss, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = Array2::zeros(x.dim());
    let mut loss = 0.0;
    for (j, (l, g)) in parts.iter().enumerate() {
        loss += l;
        scan.add_embedded(&mut grad, g.view(), j)?;
    }
    Ok((loss, grad))
}

/// Gradient descent with step `tunable / (2 max Λ₂)`, `Λ₂ = Σ_j P_jᵀ |d|²`,
/// and Nesterov extrapolation `(k − 1)/(k + 2)` when momentum is on. The
/// recorded objective is `f` at the point where the gradient was taken.
pub fn awf_reconstruct(
    measurements: &MeasurementSet,
    probe: &Probe,
    cfg: &BaselineConfig,
    reference: Option<Reference<'_>>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let scan = measurements.scan();
    scan.check_patch(probe.shape())?;
    let fft = Fft2::square(scan.patch_size());
    let lambda_max = scan
        .embedding_sum(&probe.values().mapv(|d| d.norm_sqr()))?
        .fold(0.0f64, |a, &b| a.max(b));
    if lambda_max <= 0.0 {
        return Err(Error::ZeroNormalizer("probe illuminates nothing".into()));
    }
    let step = cfg.tunable / (2.0 * lambda_max);

    let mut x = init_guess(measurements, probe)?;
    let mut x_prev = x.clone();
    let mut tracker = Tracker::new(reference, &x)?;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let point = if cfg.momentum {
            let beta = (k as f64 - 1.0) / (k as f64 + 2.0);
            Zip::from(&x)
                .and(&x_prev)
                .map_collect(|&a, &b| a + (a - b) * beta)
        } else {
            x.clone()
        };
        let (loss, grad) = amplitude_loss_gradient(&fft, measurements, probe, &point)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: k });
        }
        let next = Zip::from(&point)
            .and(&grad)
            .map_collect(|&p, &g| p - g * step);
        x_prev = std::mem::replace(&mut x, next);
        let change = tracker.record(k, &x, &x_prev, None, Some(loss))?;
        if change <= cfg.residual_tol {
            converged = true;
            break;
        }
    }
    Ok(tracker.finish(cfg, x, iterations, converged, fft.calls()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptycho::ScanPattern;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut gen = |shape| {
            Array2::from_shape_simple_fn(shape, || {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
        };
        let probe = Probe::new(gen((4, 4))).unwrap();
        let x: ComplexImage = gen((6, 6));
        let scan = ScanPattern::new((6, 6), 4, vec![(0, 0), (0, 2), (2, 1)]).unwrap();
        let amplitudes = (0..3).map(|_| gen((4, 4)).mapv(|z| z.norm())).collect();
        let m = MeasurementSet::new(amplitudes, scan).unwrap();
        let fft = Fft2::square(4);

        let (loss, grad) = amplitude_loss_gradient(&fft, &m, &probe, &x).unwrap();
        assert!((loss - amplitude_loss(&fft, &m, &probe, &x).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for &(i, j) in &[(0, 0), (2, 3), (5, 5), (3, 1)] {
            for (dir, component) in [
                (C64::new(h, 0.0), grad[[i, j]].re),
                (C64::new(0.0, h), grad[[i, j]].im),
            ] {
                let mut plus = x.clone();
                plus[[i, j]] += dir;
                let mut minus = x.clone();
                minus[[i, j]] -= dir;
                let fd = (amplitude_loss(&fft, &m, &probe, &plus).unwrap()
                    - amplitude_loss(&fft, &m, &probe, &minus).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - component).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{fd} vs {component}"
                );
            }
        }
    }
}
