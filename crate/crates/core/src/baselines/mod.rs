//! Reference phase-retrieval methods run under the same conventions as
//! PMACE: same initial guess, same measurements, one FFT plan whose call
//! counter is reported in the result, and the same trace format.

mod awf;
mod epie;
mod sharp;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use awf::{amplitude_loss, amplitude_loss_gradient, awf_reconstruct};
pub use epie::{epie_reconstruct, epie_sweep};
pub use sharp::{sharp_reconstruct, FrameProjector};

use crate::consensus::relative;
use crate::metrics::{ConvergenceTrace, TraceRecord};
use crate::ptycho::{MeasurementSet, Probe};
use crate::recon::{Method, MethodConfig, ReconstructionResult, Reference};
use crate::solver::{image_distance, norm, pmace_reconstruct};
use crate::{ComplexImage, Error, Result};

/// Settings of one baseline run.
///
/// `tunable` is the method's single tuning parameter: the ePIE step size,
/// the AWF step scale (multiplying `1 / (2 max Λ₂)`) or the SHARP relaxation
/// `β ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: Method,
    pub tunable: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once the relative image update falls to this value.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// ePIE: visit positions in a fresh seeded order every sweep instead of
    /// ascending order.
    #[serde(default)]
    pub shuffle: bool,
    /// AWF: Nesterov momentum.
    #[serde(default = "default_true")]
    pub momentum: bool,
}

fn default_max_iters() -> usize {
    100
}
fn default_residual_tol() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}

impl BaselineConfig {
    pub fn new(method: Method, tunable: f64) -> Self {
        Self {
            method,
            tunable,
            max_iters: default_max_iters(),
            residual_tol: default_residual_tol(),
            seed: 0,
            shuffle: false,
            momentum: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tunable;
        match self.method {
            Method::Pmace => {
                return Err(Error::InvalidParameter("PMACE is not a baseline".into()));
            }
            Method::Epie | Method::Awf if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::InvalidParameter(format!(
                    "{} step must be positive, got {t}",
                    self.method
                )));
            }
            Method::Sharp if !(t > 0.0 && t < 1.0) => {
                return Err(Error::InvalidParameter(format!(
                    "sharp beta must lie strictly inside (0, 1), got {t}"
                )));
            }
            _ => {}
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "residual_tol must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Runs the method described by `config`.
pub fn reconstruct(
    config: &MethodConfig,
    measurements: &MeasurementSet,
    probe: &Probe,
    reference: Option<Reference<'_>>,
) -> Result<ReconstructionResult> {
    match config {
        MethodConfig::Pmace(cfg) => pmace_reconstruct(measurements, probe, cfg, reference),
        MethodConfig::Baseline(cfg) => match cfg.method {
            Method::Epie => epie_reconstruct(measurements, probe, cfg, reference),
            Method::Awf => awf_reconstruct(measurements, probe, cfg, reference),
            Method::Sharp => sharp_reconstruct(measurements, probe, cfg, reference),
            Method::Pmace => Err(Error::InvalidParameter("PMACE is not a baseline".into())),
        },
    }
}

/// Shared trace bookkeeping for the iterative baselines.
pub(crate) struct Tracker<'a> {
    reference: Option<Reference<'a>>,
    trace: ConvergenceTrace,
    start: Instant,
}

impl<'a> Tracker<'a> {
    pub(crate) fn new(reference: Option<Reference<'a>>, x0: &ComplexImage) -> Result<Self> {
        let mut trace = ConvergenceTrace::default();
        trace.initial_nrmse = reference.map(|r| r.nrmse(x0)).transpose()?;
        Ok(Self {
            reference,
            trace,
            start: Instant::now(),
        })
    }

    /// Records iteration `k` and returns the relative image update.
    pub(crate) fn record(
        &mut self,
        k: usize,
        image: &ComplexImage,
        previous: &ComplexImage,
        state_residual: Option<f64>,
        objective: Option<f64>,
    ) -> Result<f64> {
        if image.iter().any(|z| !z.is_finite()) {
            return Err(Error::Diverged { iteration: k });
        }
        let image_residual = relative(image_distance(image, previous), norm(previous));
        self.trace.push(TraceRecord {
            iteration: k,
            residual: state_residual.unwrap_or(image_residual),
            nrmse: self.reference.map(|r| r.nrmse(image)).transpose()?,
            seconds: self.start.elapsed().as_secs_f64(),
            image_residual: state_residual.map(|_| image_residual),
            objective,
        });
        Ok(image_residual)
    }

    pub(crate) fn finish(
        self,
        cfg: &BaselineConfig,
        image: ComplexImage,
        iterations_run: usize,
        converged: bool,
        fft_calls: u64,
    ) -> ReconstructionResult {
        ReconstructionResult {
            method: cfg.method,
            image,
            trace: self.trace,
            iterations_run,
            converged,
            fft_calls,
            config: MethodConfig::Baseline(*cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(BaselineConfig::new(Method::Pmace, 0.5).validate().is_err());
        assert!(BaselineConfig::new(Method::Epie, 0.0).validate().is_err());
        assert!(BaselineConfig::new(Method::Awf, -1.0).validate().is_err());
        assert!(BaselineConfig::new(Method::Sharp, 1.0).validate().is_err());
        assert!(BaselineConfig::new(Method::Sharp, 0.5).validate().is_ok());
        assert!(BaselineConfig::new(Method::Epie, 2.0).validate().is_ok());
        let mut cfg = BaselineConfig::new(Method::Awf, 1.0);
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }
}
