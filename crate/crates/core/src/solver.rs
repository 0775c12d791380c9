//! PMACE for ptychography.
//!
//! Each scan position gets a data-fitting agent
//!
//! ```text
//! F_j(v) = (1 − α) v + α D_ε⁻¹ F*( y_j · F D v / |F D v| )
//! ```
//!
//! which averages the input patch with its projection onto the measured
//! Fourier magnitudes. The consensus weights are `W = |d|^κ`, and the final
//! image is `x̂ = Λ⁻¹ Σ_j P_jᵀ W v_j`.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::consensus::{
    mann_solve_monitored, relative, Agent, AgentSet, ConsensusOperator, MannConfig, Observation,
    PatchStack,
};
use crate::fft::Fft2;
use crate::ptycho::{MeasurementSet, Probe};
use crate::recon::{Method, MethodConfig, ReconstructionResult, Reference};
use crate::{ComplexImage, Error, RealImage, Result, C64};

/// Which inverse of the probe the data-fitting agent applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInverse {
    /// `d* / (|d|² + ε)`.
    #[default]
    Stabilized,
    /// `d* / |d|²` (zero where `d = 0`); makes the agent exactly invertible.
    Exact,
}

/// Replaces the Fourier magnitudes of `F D v` with `y`, keeping the phase.
/// Where `F D v` vanishes the phase factor is taken as 1.
pub(crate) fn replace_magnitudes(field: &mut ComplexImage, y: &RealImage) {
    Zip::from(field).and(y).for_each(|z, &amp| {
        let m = z.norm();
        *z = if m > 0.0 {
            *z * (amp / m)
        } else {
            C64::new(amp, 0.0)
        };
    });
}

/// The data-fitting agent of one scan position.
pub struct DataFitAgent {
    probe: Arc<Probe>,
    fft: Arc<Fft2>,
    amplitude: RealImage,
    alpha: f64,
    inverse: ProbeInverse,
}

impl DataFitAgent {
    /// `alpha` may be any value in `[0, 1]`; 0 gives the identity.
    pub fn new(
        probe: Arc<Probe>,
        fft: Arc<Fft2>,
        amplitude: RealImage,
        alpha: f64,
    ) -> Result<Self> {
        if amplitude.dim() != probe.shape() {
            return Err(Error::ShapeMismatch {
                expected: probe.shape(),
                found: amplitude.dim(),
            });
        }
        if fft.shape() != probe.shape() {
            return Err(Error::ShapeMismatch {
                expected: probe.shape(),
                found: fft.shape(),
            });
        }
        if amplitude.iter().any(|&y| !(y >= 0.0 && y.is_finite())) {
            return Err(Error::InvalidParameter(
                "amplitudes must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            probe,
            fft,
            amplitude,
            alpha,
            inverse: ProbeInverse::Stabilized,
        })
    }

    pub fn with_inverse(mut self, inverse: ProbeInverse) -> Self {
        self.inverse = inverse;
        self
    }
}

impl Agent for DataFitAgent {
    fn apply(&self, v: &ComplexImage) -> Result<ComplexImage> {
        if v.dim() != self.probe.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.probe.shape(),
                found: v.dim(),
            });
        }
        let mut field = v * self.probe.values();
        self.fft.forward(&mut field)?;
        replace_magnitudes(&mut field, &self.amplitude);
        self.fft.inverse(&mut field)?;
        let inv = match self.inverse {
            ProbeInverse::Stabilized => self.probe.stable_inverse(),
            ProbeInverse::Exact => self.probe.exact_inverse(),
        };
        let a = self.alpha;
        Zip::from(&mut field)
            .and(v)
            .and(inv)
            .for_each(|f, &x, &di| *f = x * (1.0 - a) + di * *f * a);
        Ok(field)
    }
}

/// Convenience constructor with a private FFT plan.
pub fn data_fit_agent(probe: &Probe, amplitude: &RealImage, alpha: f64) -> Result<DataFitAgent> {
    let fft = Arc::new(Fft2::square(probe.size()));
    DataFitAgent::new(Arc::new(probe.clone()), fft, amplitude.clone(), alpha)
}

/// Recovers `v` from `w = F_j(v)` for the exact-inverse agent.
///
/// Applying `F D` to the agent gives
/// `F D F_j(v) = ((1−α)|F D v| + α y) · F D v / |F D v|`, so
/// `|F D v| = (|F D w| − α y) / (1 − α)` and the phase of `F D v` is that of
/// `F D w`. The probe must be nonzero wherever `w` is.
pub fn invert_data_fit_agent(
    probe: &Probe,
    amplitude: &RealImage,
    alpha: f64,
    w: &ComplexImage,
) -> Result<ComplexImage> {
    let fft = Fft2::square(probe.size());
    invert_with(&fft, probe, amplitude, alpha, w)
}

fn invert_with(
    fft: &Fft2,
    probe: &Probe,
    amplitude: &RealImage,
    alpha: f64,
    w: &ComplexImage,
) -> Result<ComplexImage> {
    for dim in [amplitude.dim(), w.dim()] {
        if dim != probe.shape() {
            return Err(Error::ShapeMismatch {
                expected: probe.shape(),
                found: dim,
            });
        }
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "agent is invertible only for alpha in [0, 1), got {alpha}"
        )));
    }
    let blind = Zip::from(probe.values()).and(w).fold(0usize, |n, d, z| {
        n + usize::from(d.norm_sqr() == 0.0 && z.norm_sqr() > 0.0)
    });
    if blind > 0 {
        return Err(Error::NotInRange(format!(
            "{blind} zero probe pixels carry a nonzero field"
        )));
    }

    let mut field = w * probe.values();
    fft.forward(&mut field)?;
    let mut worst = 0.0f64;
    Zip::from(&mut field).and(amplitude).for_each(|z, &y| {
        let mw = z.norm();
        let mv = (mw - alpha * y) / (1.0 - alpha);
        let tolerance = 1e-9 * (mw + alpha * y);
        if mv < -tolerance {
            worst = worst.min(mv);
        }
        *z = if mw > 0.0 {
            *z * (mv.max(0.0) / mw)
        } else {
            C64::new(0.0, 0.0)
        };
    });
    if worst < 0.0 {
        return Err(Error::NotInRange(format!(
            "solved Fourier magnitude is negative ({worst:e})"
        )));
    }
    fft.inverse(&mut field)?;
    Ok(&field * probe.exact_inverse())
}

/// Consensus weights `W = |d|^κ`, `κ ∈ [1, 2]`.
pub fn weight_map(probe: &Probe, kappa: f64) -> Result<RealImage> {
    if !(1.0..=2.0).contains(&kappa) {
        return Err(Error::InvalidParameter(format!(
            "kappa must lie in [1, 2], got {kappa}"
        )));
    }
    Ok(probe.values().mapv(|z| z.norm().powf(kappa)))
}

/// Initial image `x⁽⁰⁾ = Λ₀⁻¹ Σ_j P_jᵀ (‖y_j‖ / ‖d‖) 𝟙`: every patch votes
/// for the constant that matches its measured energy, and overlapping votes
/// are averaged by coverage count. Real valued; zero outside the coverage.
pub fn init_guess(measurements: &MeasurementSet, probe: &Probe) -> Result<ComplexImage> {
    let scan = measurements.scan();
    scan.check_patch(probe.shape())?;
    let d_norm = probe.norm();
    if d_norm <= 0.0 {
        return Err(Error::ZeroNormalizer("probe has zero norm".into()));
    }
    let mut acc: RealImage = Array2::zeros(scan.image_shape());
    for (j, y) in measurements.amplitudes().iter().enumerate() {
        let level = y.iter().map(|v| v * v).sum::<f64>().sqrt() / d_norm;
        let patch = Array2::from_elem(scan.patch_shape(), level);
        scan.add_embedded(&mut acc, patch.view(), j)?;
    }
    let coverage = scan.coverage();
    Ok(Zip::from(&acc)
        .and(&coverage)
        .map_collect(|&a, &c| C64::new(if c > 0.0 { a / c } else { 0.0 }, 0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmaceConfig {
    /// Data-fit strength in `(0, 1)`.
    pub alpha: f64,
    /// Exponent of the probe-magnitude consensus weights, in `[1, 2]`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_kappa() -> f64 {
    1.5
}
fn default_rho() -> f64 {
    0.5
}
fn default_max_iters() -> usize {
    100
}
fn default_residual_tol() -> f64 {
    1e-6
}

impl PmaceConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            kappa: default_kappa(),
            rho: default_rho(),
            max_iters: default_max_iters(),
            residual_tol: default_residual_tol(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        if !(1.0..=2.0).contains(&self.kappa) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in [1, 2], got {}",
                self.kappa
            )));
        }
        self.mann().validate()
    }

    fn mann(&self) -> MannConfig {
        MannConfig {
            rho: self.rho,
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
            record_trace: true,
        }
    }
}

/// Builds the data-fitting agents for every scan position, sharing one FFT
/// plan (and call counter).
pub fn build_agents(
    measurements: &MeasurementSet,
    probe: &Arc<Probe>,
    fft: &Arc<Fft2>,
    alpha: f64,
) -> Result<AgentSet> {
    measurements
        .amplitudes()
        .iter()
        .map(|y| {
            DataFitAgent::new(probe.clone(), fft.clone(), y.clone(), alpha)
                .map(|a| Box::new(a) as Box<dyn Agent>)
        })
        .collect()
}

/// Runs PMACE (Mann iteration on the data-fitting agents with `|d|^κ`
/// consensus weights) from the energy-matched initial guess.
pub fn pmace_reconstruct(
    measurements: &MeasurementSet,
    probe: &Probe,
    cfg: &PmaceConfig,
    reference: Option<Reference<'_>>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let scan = measurements.scan();
    scan.check_patch(probe.shape())?;
    let op = ConsensusOperator::new(scan.clone(), weight_map(probe, cfg.kappa)?)?;
    let probe = Arc::new(probe.clone());
    let fft = Arc::new(Fft2::square(scan.patch_size()));
    let agents = build_agents(measurements, &probe, &fft, cfg.alpha)?;

    let x0 = init_guess(measurements, &probe)?;
    let v0 = PatchStack::from_image(scan, &x0)?;

    let initial_nrmse = reference.map(|r| r.nrmse(&x0)).transpose()?;
    let mut previous = op.weighted_mean(&v0)?;
    let mut monitor_error = None;
    let solution = mann_solve_monitored(&op, &agents, v0, &cfg.mann(), |_, v| {
        let image = match op.weighted_mean(v) {
            Ok(image) => image,
            Err(e) => {
                monitor_error.get_or_insert(e);
                return Observation::default();
            }
        };
        let change = image_distance(&image, &previous);
        let obs = Observation {
            nrmse: reference.and_then(|r| r.nrmse(&image).ok()),
            image_residual: Some(relative(change, norm(&previous))),
        };
        previous = image;
        obs
    })?;
    if let Some(e) = monitor_error {
        return Err(e);
    }

    let mut trace = solution.trace;
    trace.initial_nrmse = initial_nrmse;
    Ok(ReconstructionResult {
        method: Method::Pmace,
        image: op.weighted_mean(&solution.state)?,
        trace,
        iterations_run: solution.iterations,
        converged: solution.converged,
        fft_calls: fft.calls(),
        config: MethodConfig::Pmace(*cfg),
    })
}

pub(crate) fn norm(x: &ComplexImage) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn image_distance(a: &ComplexImage, b: &ComplexImage) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, x, y| acc + (x - y).norm_sqr())
        .sqrt()
}
