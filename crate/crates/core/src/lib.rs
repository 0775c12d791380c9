//! Projected multi-agent consensus equilibrium (PMACE) and its application to
//! ptychographic phase retrieval.
//!
//! The crate is split along the lines of the computation:
//!
//! * [`consensus`] holds the application-agnostic machinery: patch stacks,
//!   agents, the pixel-weighted consensus projection and the Mann iteration.
//! * [`ptycho`] holds the ptychography physics: patch selectors, probes,
//!   phantoms, the far-field forward model and scan patterns.
//! * [`solver`] instantiates PMACE for ptychography.
//! * [`baselines`] implements ePIE, accelerated Wirtinger flow and SHARP with
//!   the same result contract.
//! * [`metrics`] computes aligned NRMSE, overlap ratios and forward errors.

pub mod baselines;
pub mod consensus;
mod error;
pub mod fft;
pub mod metrics;
pub mod ptycho;
pub mod recon;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};

/// Double precision complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;

/// 2D complex field: a reconstruction, a phantom or a single patch.
pub type ComplexImage = ndarray::Array2<C64>;

/// 2D real-valued array (weights, intensities, amplitudes).
pub type RealImage = ndarray::Array2<f64>;
