//! Ptychography physics: selectors, probes, phantoms, forward model, scans.

mod field;
mod forward;
mod phantom;
mod probe;
mod scan;

pub use field::smooth_random_field;
pub use forward::{
    far_field, forward_intensity, simulate_measurements, MeasurementSet, NoiseConfig,
};
pub use phantom::{generate_phantom, phantom_from_parts, PhantomKind, PhantomSpec};
pub use probe::{generate_probe, Probe, ProbeKind, STABILIZER_SCALE};
pub use scan::{generate_scan_pattern, ScanPattern};
