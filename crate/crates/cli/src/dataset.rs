//! Measurement datasets on disk.
//!
//! A dataset directory holds `amplitudes.arr` (float64, `J × N_p × N_p`),
//! `probe.arr` (complex), `scan.json`, `dataset.json` (provenance) and, for
//! simulated data, the ground truth `object.arr`.

use std::path::Path;

use pmace_core::metrics::{overlap_ratio, Region};
use pmace_core::ptycho::{
    generate_scan_pattern, simulate_measurements, MeasurementSet, Probe, ScanPattern,
};
use pmace_core::ComplexImage;
use serde::{Deserialize, Serialize};

use crate::array_io::{read_array, write_array, ArrayData};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::preprocess::{FrameScore, PreprocessConfig};

pub const AMPLITUDES_FILE: &str = "amplitudes.arr";
pub const PROBE_FILE: &str = "probe.arr";
pub const OBJECT_FILE: &str = "object.arr";
pub const SCAN_FILE: &str = "scan.json";
pub const META_FILE: &str = "dataset.json";

/// Version string recorded in every metadata file.
pub fn version() -> String {
    format!("pmace-cli {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetMeta {
    /// Enough to regenerate the data: the config, the spacing and the seed.
    Simulated {
        config: Box<ExperimentConfig>,
        spacing: usize,
        seed: u64,
        overlap_ratio: f64,
        version: String,
    },
    Measured {
        preprocess: PreprocessConfig,
        frame_scores: Vec<FrameScore>,
        version: String,
    },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub probe: Probe,
    pub measurements: MeasurementSet,
    pub object: Option<ComplexImage>,
    pub meta: DatasetMeta,
}

/// Scan for one repetition: jitter is drawn from `seed`.
pub fn scan_for(cfg: &ExperimentConfig, spacing: usize, seed: u64) -> CliResult<ScanPattern> {
    Ok(generate_scan_pattern(
        cfg.image_shape,
        cfg.probe.patch_size,
        spacing,
        cfg.scan.jitter,
        seed,
    )?)
}

/// Simulates the measurements of one (spacing, seed) cell from a shared
/// object and probe.
pub fn simulate(
    cfg: &ExperimentConfig,
    object: &ComplexImage,
    probe: &Probe,
    spacing: usize,
    seed: u64,
) -> CliResult<Dataset> {
    let scan = scan_for(cfg, spacing, seed)?;
    let ratio = overlap_ratio(probe, &scan)?;
    let measurements = simulate_measurements(object, probe, &scan, &cfg.noise.with_seed(seed))?;
    Ok(Dataset {
        probe: probe.clone(),
        measurements,
        object: Some(object.clone()),
        meta: DatasetMeta::Simulated {
            config: Box::new(cfg.clone()),
            spacing,
            seed,
            overlap_ratio: ratio,
            version: version(),
        },
    })
}

impl Dataset {
    /// Region NRMSE is evaluated over: the configured one for simulated
    /// data, the scan support otherwise.
    pub fn evaluation_region(&self) -> CliResult<Region> {
        match &self.meta {
            DatasetMeta::Simulated { config, .. } => config
                .evaluation
                .region(&self.probe, self.measurements.scan()),
            DatasetMeta::Measured { .. } => Ok(Region::Mask(self.measurements.scan().support())),
        }
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let stack = ArrayData::from_real_stack(self.measurements.amplitudes())
            .map_err(|source| array_error(dir.join(AMPLITUDES_FILE), source))?;
        write(dir, AMPLITUDES_FILE, &stack)?;
        write(
            dir,
            PROBE_FILE,
            &ArrayData::from_complex_image(self.probe.values()),
        )?;
        if let Some(object) = &self.object {
            write(dir, OBJECT_FILE, &ArrayData::from_complex_image(object))?;
        }
        write_json(&dir.join(SCAN_FILE), self.measurements.scan())?;
        write_json(&dir.join(META_FILE), &self.meta)
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let amplitudes = read(dir, AMPLITUDES_FILE)?
            .into_real_stack()
            .map_err(|source| array_error(dir.join(AMPLITUDES_FILE), source))?;
        let probe = read_complex(dir, PROBE_FILE)?;
        let object_path = dir.join(OBJECT_FILE);
        let object = if object_path.exists() {
            Some(read_complex(dir, OBJECT_FILE)?)
        } else {
            None
        };
        let scan: ScanPattern = read_json(&dir.join(SCAN_FILE))?;
        let meta: DatasetMeta = read_json(&dir.join(META_FILE))?;
        Ok(Dataset {
            probe: Probe::new(probe)?,
            measurements: MeasurementSet::new(amplitudes, scan)?,
            object,
            meta,
        })
    }
}

fn array_error(path: std::path::PathBuf, source: crate::array_io::ArrayError) -> CliError {
    CliError::Array { path, source }
}

fn write(dir: &Path, name: &str, data: &ArrayData) -> CliResult<()> {
    let path = dir.join(name);
    write_array(&path, data).map_err(|source| array_error(path, source))
}

fn read(dir: &Path, name: &str) -> CliResult<ArrayData> {
    let path = dir.join(name);
    read_array(&path).map_err(|source| array_error(path, source))
}

pub fn read_complex(dir: &Path, name: &str) -> CliResult<ComplexImage> {
    read(dir, name)?
        .into_complex_image()
        .map_err(|source| array_error(dir.join(name), source))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
