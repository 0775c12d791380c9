//! Smooth random fields used by the synthetic generators.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::fft::Fft2;
use crate::{RealImage, C64};

/// White Gaussian noise low-passed with a Gaussian kernel of standard
/// deviation `correlation` pixels (periodic boundary), then min-max scaled
/// into `[0, 1]`.
pub fn smooth_random_field<R: Rng>(
    shape: (usize, usize),
    correlation: f64,
    rng: &mut R,
) -> RealImage {
    let (rows, cols) = shape;
    let mut noise: Array2<C64> =
        Array2::from_shape_simple_fn(shape, || C64::new(rng.sample(StandardNormal), 0.0));
    let fft = Fft2::new(rows, cols);
    fft.forward(&mut noise).expect("shape matches plan");
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        k / n as f64
    };
    let two_pi_sq = 2.0 * std::f64::consts::PI.powi(2) * correlation * correlation;
    for ((i, j), z) in noise.indexed_iter_mut() {
        let (fi, fj) = (freq(i, rows), freq(j, cols));
        *z *= (-two_pi_sq * (fi * fi + fj * fj)).exp();
    }
    fft.inverse(&mut noise).expect("shape matches plan");
    let field = noise.mapv(|z| z.re);
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        field.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::from_elem(shape, 0.5)
    }
}
