//! The illumination function `d` and its inverses.

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::field::smooth_random_field;
use crate::rng::{substream, Stream};
use crate::{ComplexImage, Error, RealImage, Result, C64};

/// Relative size of the stabilizer added to `|d|²` in the stable inverse.
pub const STABILIZER_SCALE: f64 = 1e-6;

/// Complex probe with its precomputed inverses.
///
/// The stabilizer is `ε = 1e-6 · sqrt(‖d‖² / dim(d))` and the stable inverse
/// is `d* / (|d|² + ε)`. The exact (pseudo) inverse is `d* / |d|²` where
/// `d ≠ 0` and zero elsewhere. Both are recomputed on every construction, so
/// a `Probe` can never hold stale inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    values: ComplexImage,
    epsilon: f64,
    stable_inverse: ComplexImage,
    exact_inverse: ComplexImage,
}

impl Probe {
    pub fn new(values: ComplexImage) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || rows != cols {
            return Err(Error::InvalidParameter(format!(
                "probe must be square and non-empty, got {rows}x{cols}"
            )));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("probe".into()));
        }
        let energy: f64 = values.iter().map(|z| z.norm_sqr()).sum();
        if energy <= 0.0 {
            return Err(Error::InvalidParameter("probe has zero norm".into()));
        }
        let epsilon = STABILIZER_SCALE * (energy / values.len() as f64).sqrt();
        let stable_inverse = values.mapv(|z| z.conj() / (z.norm_sqr() + epsilon));
        let exact_inverse = values.mapv(|z| {
            let m = z.norm_sqr();
            if m > 0.0 {
                z.conj() / m
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Ok(Self {
            values,
            epsilon,
            stable_inverse,
            exact_inverse,
        })
    }

    pub fn values(&self) -> &ComplexImage {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `d_ε⁻¹ = d* / (|d|² + ε)`.
    pub fn stable_inverse(&self) -> &ComplexImage {
        &self.stable_inverse
    }

    /// `d* / |d|²` on the nonzero pixels of `d`, zero elsewhere.
    pub fn exact_inverse(&self) -> &ComplexImage {
        &self.exact_inverse
    }

    pub fn magnitude(&self) -> RealImage {
        self.values.mapv(|z| z.norm())
    }

    /// `‖d‖`.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_intensity(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn has_zeros(&self) -> bool {
        self.values.iter().any(|z| z.norm_sqr() == 0.0)
    }

    /// Probe multiplied by a complex constant.
    pub fn scaled(&self, gain: C64) -> Result<Self> {
        Self::new(self.values.mapv(|z| z * gain))
    }
}

/// Synthetic probe families.
///
/// Lengths are in pixels unless noted; `radius` and `width` are fractions of
/// the patch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    /// Circular aperture with a logistic edge of width `edge` pixels and a
    /// quadratic phase reaching `defocus` radians at the aperture radius.
    Disk {
        #[serde(default = "default_disk_radius")]
        radius: f64,
        #[serde(default = "default_disk_edge")]
        edge: f64,
        #[serde(default)]
        defocus: f64,
    },
    /// Gaussian envelope with a smooth random phase of peak amplitude
    /// `phase_amplitude` radians and correlation length `correlation` pixels.
    /// The default diffuser-like phase spreads the far field over most of
    /// the detector.
    Gaussian {
        #[serde(default = "default_gaussian_width")]
        width: f64,
        #[serde(default = "default_phase_amplitude")]
        phase_amplitude: f64,
        #[serde(default = "default_correlation")]
        correlation: f64,
    },
}

fn default_disk_radius() -> f64 {
    0.375
}
fn default_disk_edge() -> f64 {
    2.0
}
fn default_gaussian_width() -> f64 {
    0.2
}
fn default_phase_amplitude() -> f64 {
    10.0
}
fn default_correlation() -> f64 {
    4.0
}

impl Default for ProbeKind {
    fn default() -> Self {
        ProbeKind::Disk {
            radius: default_disk_radius(),
            edge: default_disk_edge(),
            defocus: 0.0,
        }
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(Self::default()),
            "gaussian" => Ok(ProbeKind::Gaussian {
                width: default_gaussian_width(),
                phase_amplitude: default_phase_amplitude(),
                correlation: default_correlation(),
            }),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Synthesizes an `patch_size × patch_size` probe of the given kind.
pub fn generate_probe(patch_size: usize, kind: &ProbeKind, seed: u64) -> Result<Probe> {
    if patch_size == 0 {
        return Err(Error::InvalidParameter(
            "patch size must be positive".into(),
        ));
    }
    let n = patch_size as f64;
    let center = (n - 1.0) / 2.0;
    let radius_at = |i: usize, j: usize| {
        let (di, dj) = (i as f64 - center, j as f64 - center);
        (di * di + dj * dj).sqrt()
    };
    let values = match *kind {
        ProbeKind::Disk {
            radius,
            edge,
            defocus,
        } => {
            if radius <= 0.0 || edge <= 0.0 || !defocus.is_finite() {
                return Err(Error::InvalidParameter(
                    "disk probe needs positive radius and edge".into(),
                ));
            }
            let r0 = radius * n;
            Array2::from_shape_fn((patch_size, patch_size), |(i, j)| {
                let r = radius_at(i, j);
                let amplitude = 1.0 / (1.0 + ((r - r0) / edge).exp());
                C64::from_polar(amplitude, defocus * (r / r0).powi(2))
            })
        }
        ProbeKind::Gaussian {
            width,
            phase_amplitude,
            correlation,
        } => {
            if width <= 0.0 || correlation <= 0.0 {
                return Err(Error::InvalidParameter(
                    "gaussian probe needs positive width and correlation".into(),
                ));
            }
            let sigma = width * n;
            let mut rng = substream(seed, Stream::Probe, 0);
            let phase = smooth_random_field((patch_size, patch_size), correlation, &mut rng);
            Array2::from_shape_fn((patch_size, patch_size), |(i, j)| {
                let r = radius_at(i, j);
                let amplitude = (-r * r / (2.0 * sigma * sigma)).exp();
                let theta = phase_amplitude * (2.0 * phase[[i, j]] - 1.0);
                C64::from_polar(amplitude, theta)
            })
        }
    };
    Probe::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_matches_formula() {
        let probe = generate_probe(32, &ProbeKind::default(), 0).unwrap();
        let energy: f64 = probe.values().iter().map(|z| z.norm_sqr()).sum();
        let expected = 1e-6 * (energy / (32.0 * 32.0)).sqrt();
        assert_eq!(probe.epsilon(), expected);
    }

    #[test]
    fn focused_disk_is_real_and_non_negative() {
        let probe = generate_probe(16, &ProbeKind::default(), 0).unwrap();
        assert!(probe.norm() > 0.0);
        assert!(probe.values().iter().all(|z| z.im == 0.0 && z.re >= 0.0));
        // zero-free thanks to the logistic edge
        assert!(!probe.has_zeros());
    }

    #[test]
    fn inverses() {
        let d = Array2::from_shape_vec(
            (2, 2),
            vec![
                C64::new(2.0, 0.0),
                C64::new(0.0, 1.0),
                C64::new(0.0, 0.0),
                C64::new(1.0, 1.0),
            ],
        )
        .unwrap();
        let probe = Probe::new(d.clone()).unwrap();
        let exact = probe.exact_inverse();
        assert_eq!(exact[[0, 0]], C64::new(0.5, 0.0));
        assert_eq!(exact[[1, 0]], C64::new(0.0, 0.0));
        let eps = probe.epsilon();
        let stable = probe.stable_inverse();
        assert!((stable[[0, 1]] - C64::new(0.0, -1.0 / (1.0 + eps))).norm() < 1e-15);
        assert!((stable[[1, 1]] * d[[1, 1]] - 2.0 / (2.0 + eps)).norm() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_probes() {
        assert!(Probe::new(Array2::zeros((4, 4))).is_err());
        assert!(Probe::new(Array2::from_elem((2, 3), C64::new(1.0, 0.0))).is_err());
        assert!(Probe::new(Array2::from_elem((2, 2), C64::new(f64::NAN, 0.0))).is_err());
    }

    #[test]
    fn gaussian_probe_is_seeded() {
        let kind: ProbeKind = "gaussian".parse().unwrap();
        let a = generate_probe(16, &kind, 3).unwrap();
        let b = generate_probe(16, &kind, 3).unwrap();
        let c = generate_probe(16, &kind, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_kind() {
        assert_eq!(
            "airy".parse::<ProbeKind>(),
            Err(Error::UnknownKind("airy".into()))
        );
    }
}
