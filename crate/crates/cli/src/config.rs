//! Experiment configuration: one JSON document per experiment.
//!
//! Every field has a default, so `{}` is a valid configuration describing
//! the desk-scale overlap sweep. Command-line flags override fields after
//! loading; see [`ExperimentConfig::apply_overrides`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use pmace_core::baselines::BaselineConfig;
use pmace_core::metrics::{illuminated_mask, Region};
use pmace_core::ptycho::{
    generate_phantom, generate_probe, NoiseConfig, PhantomSpec, Probe, ProbeKind, ScanPattern,
};
use pmace_core::recon::{Method, MethodConfig};
use pmace_core::solver::PmaceConfig;
use pmace_core::ComplexImage;
use serde::{Deserialize, Serialize};

use crate::array_io::read_array;
use crate::error::{CliError, CliResult};

/// Environment variable that overrides the configured worker count.
pub const THREADS_ENV: &str = "PMACE_NUM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_image_shape")]
    pub image_shape: (usize, usize),
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodGrid>,
    /// Each seed drives the scan jitter, the measurement noise and any
    /// solver randomness of one repetition. Results are averaged over seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub pmace: PmaceOptions,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub render: RenderConfig,
    /// Worker threads; `None` uses all cores. Overridden by the
    /// `PMACE_NUM_THREADS` environment variable.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// The phantom is shared by every seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    #[serde(default)]
    pub spec: PhantomSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "desk_probe")]
    pub model: ProbeKind,
    #[serde(default)]
    pub seed: u64,
    /// Complex probe stored as an array file; replaces `model` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            patch_size: default_patch_size(),
            model: desk_probe(),
            seed: 0,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Nominal grid spacings in pixels; one sweep row per spacing.
    #[serde(default = "default_spacings")]
    pub spacings: Vec<usize>,
    #[serde(default = "default_jitter")]
    pub jitter: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            spacings: default_spacings(),
            jitter: default_jitter(),
        }
    }
}

/// Noise model without its seed, which comes from the repetition seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_peak_rate")]
    pub peak_rate: f64,
    #[serde(default = "default_dark_current")]
    pub dark_current: f64,
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            peak_rate: default_peak_rate(),
            dark_current: default_dark_current(),
            noiseless: false,
        }
    }
}

impl NoiseSpec {
    pub fn with_seed(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            peak_rate: self.peak_rate,
            dark_current: self.dark_current,
            seed,
            noiseless: self.noiseless,
        }
    }
}

/// A method and the values of its single tunable to search over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodGrid {
    pub method: Method,
    /// Defaults to [`default_grid`] for the method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

impl MethodGrid {
    pub fn new(method: Method) -> Self {
        Self { method, grid: None }
    }

    pub fn tunables(&self) -> Vec<f64> {
        self.grid
            .clone()
            .unwrap_or_else(|| default_grid(self.method))
    }
}

/// Default search grid: α and β over 0.1..=0.9, ePIE step over
/// {0.25, 0.5, 1, 2}, AWF step scale over decades 0.01..=10.
pub fn default_grid(method: Method) -> Vec<f64> {
    match method {
        Method::Pmace | Method::Sharp => (1..=9).map(|k| k as f64 / 10.0).collect(),
        Method::Epie => vec![0.25, 0.5, 1.0, 2.0],
        Method::Awf => vec![0.01, 0.1, 1.0, 10.0],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmaceOptions {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

impl Default for PmaceOptions {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            rho: default_rho(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// NRMSE is computed where the accumulated probe magnitude reaches this
    /// fraction of the probe peak; 0 selects the full scan support.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
        }
    }
}

impl EvaluationConfig {
    pub fn region(&self, probe: &Probe, scan: &ScanPattern) -> CliResult<Region> {
        if self.threshold <= 0.0 {
            return Ok(Region::Mask(scan.support()));
        }
        let mask = illuminated_mask(probe, scan, self.threshold)?;
        if !mask.iter().any(|&m| m) {
            return Err(CliError::Config(format!(
                "evaluation threshold {} selects no pixels",
                self.threshold
            )));
        }
        Ok(Region::Mask(mask))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    /// Phase gray scale runs from black at `phase_limits.0` to white at
    /// `phase_limits.1`; 0 maps to mid-gray when the limits are symmetric.
    #[serde(default = "default_phase_limits")]
    pub phase_limits: (f64, f64),
    /// Side of the central rectangle used for phase alignment, as a
    /// fraction of each image dimension.
    #[serde(default = "default_center_fraction")]
    pub center_fraction: f64,
    /// Magnitude gray scale; `None` stretches to the image maximum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_limits: Option<(f64, f64)>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            phase_limits: default_phase_limits(),
            center_fraction: default_center_fraction(),
            magnitude_limits: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> CliResult<()> {
        let (lo, hi) = self.phase_limits;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CliError::Config(
                "phase limits must be finite and increasing".into(),
            ));
        }
        if let Some((lo, hi)) = self.magnitude_limits {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::Config(
                    "magnitude limits must be finite and increasing".into(),
                ));
            }
        }
        if !(self.center_fraction > 0.0 && self.center_fraction <= 1.0) {
            return Err(CliError::Config(
                "center_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn default_image_shape() -> (usize, usize) {
    (256, 256)
}
fn default_patch_size() -> usize {
    64
}
fn desk_probe() -> ProbeKind {
    "gaussian".parse().expect("known probe kind")
}
fn default_spacings() -> Vec<usize> {
    vec![14, 34]
}
fn default_jitter() -> usize {
    2
}
fn default_peak_rate() -> f64 {
    1e4
}
fn default_dark_current() -> f64 {
    0.5
}
fn default_methods() -> Vec<MethodGrid> {
    Method::ALL.iter().map(|&m| MethodGrid::new(m)).collect()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_max_iters() -> usize {
    100
}
fn default_kappa() -> f64 {
    1.5
}
fn default_rho() -> f64 {
    0.5
}
fn default_threshold() -> f64 {
    0.5
}
fn default_phase_limits() -> (f64, f64) {
    (-PI, PI)
}
fn default_center_fraction() -> f64 {
    0.5
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("pmace-out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

/// Command-line overrides; `None` keeps the configured value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub max_iters: Option<usize>,
    pub spacings: Option<Vec<usize>>,
    pub methods: Option<Vec<Method>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads a config file. Relative probe file paths resolve against the
    /// directory of the config.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(file), Some(dir)) = (cfg.probe.file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    /// The config without execution settings (worker count, output
    /// directory), which must not influence results. Summaries embed this
    /// so they compare equal across thread counts and locations.
    pub fn experiment_snapshot(&self) -> Self {
        Self {
            threads: None,
            output_dir: PathBuf::from("."),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// A seed override replaces the seed list with that single seed.
    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(n) = o.max_iters {
            self.max_iters = n;
        }
        if let Some(s) = &o.spacings {
            self.scan.spacings = s.clone();
        }
        if let Some(methods) = &o.methods {
            self.methods = methods
                .iter()
                .map(|&m| {
                    self.methods
                        .iter()
                        .find(|g| g.method == m)
                        .cloned()
                        .unwrap_or_else(|| MethodGrid::new(m))
                })
                .collect();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.image_shape.0 == 0 || self.image_shape.1 == 0 {
            return bad("image_shape must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.scan.spacings.is_empty() || self.scan.spacings.contains(&0) {
            return bad("spacings must be a non-empty list of positive values".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        let n = self.probe.patch_size;
        if n == 0 || n > self.image_shape.0 || n > self.image_shape.1 {
            return bad(format!("patch size {n} does not fit the image"));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        for (k, g) in self.methods.iter().enumerate() {
            if self.methods[..k].iter().any(|h| h.method == g.method) {
                return bad(format!("method {} listed twice", g.method));
            }
            let tunables = g.tunables();
            if tunables.is_empty() {
                return bad(format!("empty tunable grid for {}", g.method));
            }
            for t in tunables {
                self.method_config(g.method, t, 0).validate()?;
            }
        }
        self.phantom.spec.validate()?;
        self.noise.with_seed(0).validate()?;
        self.render.validate()?;
        if !self.evaluation.threshold.is_finite() {
            return bad("evaluation threshold must be finite".into());
        }
        Ok(())
    }

    /// Solver settings for one sweep cell.
    pub fn method_config(&self, method: Method, tunable: f64, seed: u64) -> MethodConfig {
        match method {
            Method::Pmace => MethodConfig::Pmace(PmaceConfig {
                kappa: self.pmace.kappa,
                rho: self.pmace.rho,
                max_iters: self.max_iters,
                seed,
                ..PmaceConfig::with_alpha(tunable)
            }),
            _ => MethodConfig::Baseline(BaselineConfig {
                max_iters: self.max_iters,
                seed,
                ..BaselineConfig::new(method, tunable)
            }),
        }
    }

    pub fn ground_truth(&self) -> CliResult<ComplexImage> {
        Ok(generate_phantom(
            self.image_shape,
            &self.phantom.spec,
            self.phantom.seed,
        )?)
    }

    pub fn probe(&self) -> CliResult<Probe> {
        let n = self.probe.patch_size;
        let Some(path) = &self.probe.file else {
            return Ok(generate_probe(n, &self.probe.model, self.probe.seed)?);
        };
        let values = read_array(path)
            .and_then(|a| a.into_complex_image())
            .map_err(|source| CliError::Array {
                path: path.clone(),
                source,
            })?;
        if values.dim() != (n, n) {
            return Err(CliError::Config(format!(
                "probe file {} is {:?}, expected {n}x{n}",
                path.display(),
                values.dim()
            )));
        }
        Ok(Probe::new(values)?)
    }
}

/// Worker count: the environment variable wins over the configured value.
pub fn resolve_threads(configured: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(configured),
    }
}

/// Runs `f` inside a pool of the resolved size.
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_threads(threads)? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg.image_shape, (256, 256));
        assert_eq!(cfg.max_iters, 100);
        assert_eq!(cfg.methods.len(), 4);
        assert_eq!(cfg.evaluation.threshold, 0.5);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.methods[1].grid = Some(vec![0.5]);
        cfg.probe.model = ProbeKind::default();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn default_grids() {
        assert_eq!(default_grid(Method::Pmace).len(), 9);
        assert_eq!(default_grid(Method::Sharp)[8], 0.9);
        assert_eq!(default_grid(Method::Epie), vec![0.25, 0.5, 1.0, 2.0]);
        assert_eq!(default_grid(Method::Awf), vec![0.01, 0.1, 1.0, 10.0]);
    }

    #[test]
    fn invalid_configs() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        for text in [
            r#"{"methods": []}"#,
            r#"{"seeds": []}"#,
            r#"{"scan": {"spacings": [0]}}"#,
            r#"{"methods": [{"method": "pmace", "grid": [1.0]}]}"#,
            r#"{"methods": [{"method": "sharp", "grid": []}]}"#,
            r#"{"methods": [{"method": "awf"}, {"method": "awf"}]}"#,
            r#"{"probe": {"patch_size": 512}}"#,
            r#"{"noise": {"peak_rate": 0}}"#,
            r#"{"render": {"phase_limits": [1, -1]}}"#,
        ] {
            let err = ExperimentConfig::from_json(text)
                .and_then(|c| c.validate())
                .unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"methods": [{"method": "epie", "grid": [0.5]}], "seeds": [1, 2]}"#,
        )
        .unwrap();
        cfg.apply_overrides(&Overrides {
            seed: Some(7),
            methods: Some(vec![Method::Epie, Method::Pmace]),
            spacings: Some(vec![20]),
            ..Overrides::default()
        });
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.scan.spacings, vec![20]);
        assert_eq!(cfg.methods[0].tunables(), vec![0.5]);
        assert_eq!(cfg.methods[1], MethodGrid::new(Method::Pmace));
    }

    #[test]
    fn method_configs_carry_shared_settings() {
        let mut cfg = ExperimentConfig::default();
        cfg.max_iters = 7;
        cfg.pmace.rho = 0.8;
        match cfg.method_config(Method::Pmace, 0.3, 4) {
            MethodConfig::Pmace(p) => {
                assert_eq!((p.alpha, p.rho, p.max_iters, p.seed), (0.3, 0.8, 7, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
        match cfg.method_config(Method::Awf, 10.0, 4) {
            MethodConfig::Baseline(b) => assert_eq!((b.tunable, b.max_iters), (10.0, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
