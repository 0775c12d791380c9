//! Synthetic complex transmittance phantoms.

use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::smooth_random_field;
use crate::rng::{substream, Stream};
use crate::{ComplexImage, Error, RealImage, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    /// Magnitude 1 and phase 0 everywhere.
    Constant,
    /// Independent smooth random fields for magnitude and phase.
    Smooth {
        #[serde(default = "default_correlation")]
        correlation: f64,
    },
    /// Soft-edged elliptical inclusions of random magnitude and phase on a
    /// smooth background.
    Blobs {
        #[serde(default = "default_blob_count")]
        count: usize,
        #[serde(default = "default_min_radius")]
        min_radius: f64,
        #[serde(default = "default_max_radius")]
        max_radius: f64,
    },
}

fn default_correlation() -> f64 {
    8.0
}
fn default_blob_count() -> usize {
    24
}
fn default_min_radius() -> f64 {
    4.0
}
fn default_max_radius() -> f64 {
    24.0
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PhantomKind::Constant),
            "smooth" => Ok(PhantomKind::Smooth {
                correlation: default_correlation(),
            }),
            "blobs" => Ok(PhantomKind::Blobs {
                count: default_blob_count(),
                min_radius: default_min_radius(),
                max_radius: default_max_radius(),
            }),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl Default for PhantomKind {
    fn default() -> Self {
        PhantomKind::Blobs {
            count: default_blob_count(),
            min_radius: default_min_radius(),
            max_radius: default_max_radius(),
        }
    }
}

/// Kind plus the value ranges the phantom is mapped into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    /// Magnitudes lie in `[magnitude_min, 1]`; must be positive.
    #[serde(default = "default_magnitude_min")]
    pub magnitude_min: f64,
    #[serde(default = "default_phase_range")]
    pub phase_range: (f64, f64),
}

fn default_magnitude_min() -> f64 {
    0.5
}
fn default_phase_range() -> (f64, f64) {
    (-FRAC_PI_2, FRAC_PI_2)
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::new(PhantomKind::default())
    }
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind) -> Self {
        Self {
            kind,
            magnitude_min: default_magnitude_min(),
            phase_range: default_phase_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude_min > 0.0 && self.magnitude_min <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "magnitude_min must lie in (0, 1], got {}",
                self.magnitude_min
            )));
        }
        let (lo, hi) = self.phase_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter("invalid phase range".into()));
        }
        Ok(())
    }
}

/// Builds a phantom whose magnitude lies in `(0, 1]` and whose phase lies in
/// the configured range.
pub fn generate_phantom(
    shape: (usize, usize),
    spec: &PhantomSpec,
    seed: u64,
) -> Result<ComplexImage> {
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::InvalidParameter(
            "phantom shape must be positive".into(),
        ));
    }
    spec.validate()?;
    let mut rng = substream(seed, Stream::Phantom, 0);
    let (magnitude, phase): (RealImage, RealImage) = match spec.kind {
        PhantomKind::Constant => {
            return Ok(Array2::from_elem(shape, C64::new(1.0, 0.0)));
        }
        PhantomKind::Smooth { correlation } => {
            if correlation <= 0.0 {
                return Err(Error::InvalidParameter(
                    "correlation must be positive".into(),
                ));
            }
            let m = smooth_random_field(shape, correlation, &mut rng);
            let p = smooth_random_field(shape, correlation, &mut rng);
            (m, p)
        }
        PhantomKind::Blobs {
            count,
            min_radius,
            max_radius,
        } => {
            if !(min_radius > 0.0 && min_radius <= max_radius) {
                return Err(Error::InvalidParameter("invalid blob radii".into()));
            }
            let corr = 2.0 * max_radius;
            let mut m = smooth_random_field(shape, corr, &mut rng).mapv(|v| 0.6 + 0.4 * v);
            let mut p = smooth_random_field(shape, corr, &mut rng).mapv(|v| 0.3 + 0.4 * v);
            for _ in 0..count {
                let cy = rng.random_range(0.0..shape.0 as f64);
                let cx = rng.random_range(0.0..shape.1 as f64);
                let ry = rng.random_range(min_radius..=max_radius);
                let rx = rng.random_range(min_radius..=max_radius);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let mag: f64 = rng.random_range(0.0..=1.0);
                let ph: f64 = rng.random_range(0.0..=1.0);
                let (sin, cos) = angle.sin_cos();
                for (((i, j), mv), pv) in m.indexed_iter_mut().zip(p.iter_mut()) {
                    let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                    let u = (cos * dx + sin * dy) / rx;
                    let w = (-sin * dx + cos * dy) / ry;
                    let r = (u * u + w * w).sqrt();
                    // logistic edge about one pixel wide
                    let inside = 1.0 / (1.0 + ((r - 1.0) * rx.min(ry)).exp());
                    *mv += inside * (mag - *mv);
                    *pv += inside * (ph - *pv);
                }
            }
            (m, p)
        }
    };
    let (lo, hi) = spec.phase_range;
    let mmin = spec.magnitude_min;
    Ok(Array2::from_shape_fn(shape, |ix| {
        let a = mmin + (1.0 - mmin) * magnitude[ix].clamp(0.0, 1.0);
        let theta = lo + (hi - lo) * phase[ix].clamp(0.0, 1.0);
        C64::from_polar(a, theta)
    }))
}

/// Combines separately stored magnitude and phase images.
pub fn phantom_from_parts(magnitude: &RealImage, phase: &RealImage) -> Result<ComplexImage> {
    if magnitude.dim() != phase.dim() {
        return Err(Error::ShapeMismatch {
            expected: magnitude.dim(),
            found: phase.dim(),
        });
    }
    if magnitude.iter().chain(phase.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("phantom parts".into()));
    }
    Ok(ndarray::Zip::from(magnitude)
        .and(phase)
        .map_collect(|&m, &p| C64::from_polar(m, p)))
}
