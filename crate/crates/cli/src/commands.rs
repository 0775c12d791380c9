//! Command-line surface. `run` parses arguments and maps every outcome to
//! an exit code: 0 success, 1 usage or configuration error, 2 runtime
//! failure (including a sweep with failed cells, whose partial results are
//! kept on disk).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pmace_core::baselines::reconstruct;
use pmace_core::metrics::{aligned_nrmse, forward_nrmse, AmplitudeScale};
use pmace_core::ptycho::{MeasurementSet, Probe, ScanPattern};
use pmace_core::recon::{Method, Reference};
use serde::Serialize;

use crate::array_io::read_array;
use crate::config::{with_pool, ExperimentConfig, Overrides, RenderConfig};
use crate::dataset::{
    read_complex, read_json, simulate, version, write_json, Dataset, DatasetMeta,
};
use crate::error::{CliError, CliResult};
use crate::experiment::{
    evaluate_sweep, read_trace, run_experiment, write_run, RunMeta, RunOutcome, IMAGE_FILE,
    RUN_FILE, TRACE_FILE,
};
use crate::preprocess::{preprocess_measured, PreprocessConfig};
use crate::render::render_outputs;

#[derive(Debug, Parser)]
#[command(
    name = "pmace",
    version,
    about = "Ptychographic reconstruction experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset (object, probe, scan, noisy amplitudes).
    Simulate(SimulateArgs),
    /// Turn raw detector frames into an amplitude dataset.
    Preprocess(PreprocessArgs),
    /// Reconstruct one dataset with one method.
    Reconstruct(ReconstructArgs),
    /// Grid-search sweep over spacings, methods, tunables and seeds.
    Sweep(SweepArgs),
    /// Score a sweep or a single reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a reconstruction to PNG images.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (the PMACE_NUM_THREADS environment variable wins).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, extra: Overrides) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&Overrides {
            seed: self.seed,
            threads: self.threads,
            ..extra
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Scan spacing; defaults to the first configured spacing.
    #[arg(long)]
    pub spacing: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw frames, float64 or float32 array of shape J × H × W.
    #[arg(long)]
    pub frames: PathBuf,
    /// Dark frames, same layout; omitted means no dark subtraction.
    #[arg(long)]
    pub dark: Option<PathBuf>,
    #[arg(long)]
    pub crop: usize,
    #[arg(long, default_value_t = 0.5)]
    pub window: f64,
    #[arg(long, default_value_t = 3.5)]
    pub outlier_threshold: f64,
    /// Complex probe array matching the cropped size.
    #[arg(long)]
    pub probe: PathBuf,
    /// Scan pattern JSON (image_shape, patch_size, positions).
    #[arg(long)]
    pub scan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub method: Method,
    /// α for PMACE, step for ePIE, step scale for AWF, β for SHARP.
    #[arg(long)]
    pub tunable: f64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.5)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Seed for solver randomness (the ePIE visiting order when shuffled).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Visit ePIE positions in a seeded random order each sweep.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma-separated spacings replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    pub spacings: Option<Vec<usize>>,
    /// Comma-separated methods replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Sweep output directory; writes `evaluation.json` there.
    #[arg(long, conflicts_with_all = ["dataset", "run"])]
    pub sweep: Option<PathBuf>,
    /// Dataset of a single reconstruction.
    #[arg(long, requires = "run")]
    pub dataset: Option<PathBuf>,
    /// Run directory of a single reconstruction; writes `evaluation.json`
    /// there.
    #[arg(long, requires = "dataset")]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Run directory holding `image.arr` (and optionally `trace.csv`).
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset with ground truth for difference images and NRMSE.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Experiment JSON whose `render` section sets the limits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Phase limits `lo,hi` in radians.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub phase_limits: Option<Vec<f64>>,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Messages go to stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = a.common.load(Overrides::default())?;
    let spacing = a.spacing.unwrap_or(cfg.scan.spacings[0]);
    if spacing == 0 {
        return Err(CliError::Config("spacing must be positive".into()));
    }
    let seed = cfg.seeds[0];
    let data = with_pool(cfg.threads, || -> CliResult<Dataset> {
        simulate(&cfg, &cfg.ground_truth()?, &cfg.probe()?, spacing, seed)
    })??;
    data.save(&a.out)?;
    if let DatasetMeta::Simulated { overlap_ratio, .. } = &data.meta {
        println!(
            "wrote {} positions to {} (overlap ratio {overlap_ratio:.4})",
            data.measurements.len(),
            a.out.display()
        );
    }
    Ok(())
}

fn read_stack(path: &Path) -> CliResult<Vec<pmace_core::RealImage>> {
    read_array(path)
        .and_then(|a| a.into_real_stack())
        .map_err(|source| CliError::Array {
            path: path.to_path_buf(),
            source,
        })
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult<()> {
    let frames = read_stack(&a.frames)?;
    let dark = match &a.dark {
        Some(p) => read_stack(p)?,
        None => Vec::new(),
    };
    let cfg = PreprocessConfig {
        crop_size: a.crop,
        window_shape: a.window,
        outlier_threshold: a.outlier_threshold,
    };
    let pre = preprocess_measured(&frames, &dark, &cfg)?;
    let probe_values = read_array(&a.probe)
        .and_then(|p| p.into_complex_image())
        .map_err(|source| CliError::Array {
            path: a.probe.clone(),
            source,
        })?;
    let scan: ScanPattern = read_json(&a.scan)?;
    let flagged = pre.flagged();
    let data = Dataset {
        probe: Probe::new(probe_values)?,
        measurements: MeasurementSet::new(pre.amplitudes, scan)?,
        object: None,
        meta: DatasetMeta::Measured {
            preprocess: cfg,
            frame_scores: pre.scores,
            version: version(),
        },
    };
    data.save(&a.out)?;
    println!(
        "wrote {} frames to {}",
        data.measurements.len(),
        a.out.display()
    );
    if !flagged.is_empty() {
        println!("frames flagged for review: {flagged:?}");
    }
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> CliResult<()> {
    let data = Dataset::load(&a.dataset)?;
    let mut base = ExperimentConfig::default();
    base.max_iters = a.iters;
    base.pmace.kappa = a.kappa;
    base.pmace.rho = a.rho;
    let mut method_cfg = base.method_config(a.method, a.tunable, a.seed);
    if let pmace_core::recon::MethodConfig::Baseline(b) = &mut method_cfg {
        b.shuffle = a.shuffle;
    }
    method_cfg.validate()?;
    let region = data.evaluation_region()?;
    let reference = data.object.as_ref().map(|x| Reference::new(x, &region));
    let result = with_pool(a.threads, || {
        reconstruct(&method_cfg, &data.measurements, &data.probe, reference)
    })?;
    let (spacing, seed) = match &data.meta {
        DatasetMeta::Simulated { spacing, seed, .. } => (Some(*spacing), Some(*seed)),
        DatasetMeta::Measured { .. } => (None, None),
    };
    let outcome = match &result {
        Ok(r) => RunOutcome::of(r),
        Err(e) => RunOutcome::Failed {
            error: e.to_string(),
        },
    };
    let meta = RunMeta {
        method: a.method,
        tunable: a.tunable,
        config: method_cfg,
        spacing,
        seed,
        dataset: Some(a.dataset.clone()),
        outcome,
        version: version(),
    };
    write_run(&a.out, result.as_ref().ok(), &meta)?;
    let result = result.map_err(|e| CliError::Runtime(e.to_string()))?;
    match result.final_nrmse() {
        Some(v) => println!("{} iterations, final NRMSE {v:.6}", result.iterations_run),
        None => println!("{} iterations", result.iterations_run),
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let cfg = a.common.load(Overrides {
        output_dir: a.out.clone(),
        max_iters: a.iters,
        spacings: a.spacings.clone(),
        methods: a.methods.clone(),
        ..Overrides::default()
    })?;
    let report = run_experiment(&cfg, !a.quiet)?;
    for row in &report.summary.rows {
        println!(
            "spacing {:>3}  overlap {:.3}  {:<6} best {:>6}  nrmse {}",
            row.spacing,
            row.overlap_ratio,
            row.method.name(),
            row.best_tunable
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into()),
            row.final_nrmse
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    if report.has_failures() {
        return Err(CliError::Runtime(format!(
            "{} sweep cells failed; see {}",
            report.summary.failures.len(),
            report
                .output_dir
                .join(crate::experiment::SUMMARY_FILE)
                .display()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunEvaluation {
    method: Method,
    tunable: f64,
    /// Aligned NRMSE against the dataset's ground truth, if it has one.
    nrmse: Option<f64>,
    /// `‖|F D P x̂| − y‖ / ‖y‖`, comparing raw predicted amplitudes.
    forward_nrmse_raw: f64,
    /// The same after the simulated-data scaling, for simulated datasets.
    forward_nrmse_scaled: Option<f64>,
    version: String,
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    if let Some(root) = &a.sweep {
        let summary = evaluate_sweep(root, a.threads)?;
        println!(
            "evaluated {} rows, {} failed cells",
            summary.rows.len(),
            summary.failures.len()
        );
        return Ok(());
    }
    let (Some(dataset), Some(run)) = (&a.dataset, &a.run) else {
        return Err(CliError::Config(
            "evaluate needs --sweep or --dataset with --run".into(),
        ));
    };
    let data = Dataset::load(dataset)?;
    let meta: RunMeta = read_json(&run.join(RUN_FILE))?;
    let image = read_complex(run, IMAGE_FILE)?;
    let nrmse = match &data.object {
        Some(x) => Some(aligned_nrmse(&image, x, &data.evaluation_region()?)?),
        None => None,
    };
    let scaled = match &data.meta {
        DatasetMeta::Simulated { config, .. } => Some(forward_nrmse(
            &image,
            &data.measurements,
            &data.probe,
            AmplitudeScale::Synthetic {
                peak_rate: config.noise.peak_rate,
                dark_current: config.noise.dark_current,
            },
        )?),
        DatasetMeta::Measured { .. } => None,
    };
    let eval = RunEvaluation {
        method: meta.method,
        tunable: meta.tunable,
        nrmse,
        forward_nrmse_raw: forward_nrmse(
            &image,
            &data.measurements,
            &data.probe,
            AmplitudeScale::Raw,
        )?,
        forward_nrmse_scaled: scaled,
        version: version(),
    };
    write_json(&run.join(crate::experiment::EVALUATION_FILE), &eval)?;
    if let Some(v) = nrmse {
        println!("NRMSE {v:.6}");
    }
    println!("forward NRMSE {:.6}", eval.forward_nrmse_raw);
    Ok(())
}

fn cmd_render(a: RenderArgs) -> CliResult<()> {
    let mut render = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.render,
        None => RenderConfig::default(),
    };
    if let Some(l) = &a.phase_limits {
        render.phase_limits = (l[0], l[1]);
    }
    let image = read_complex(&a.run, IMAGE_FILE)?;
    let trace_path = a.run.join(TRACE_FILE);
    let trace = if trace_path.exists() {
        Some(read_trace(&trace_path)?)
    } else {
        None
    };
    let data = a.dataset.as_deref().map(Dataset::load).transpose()?;
    let region = data.as_ref().map(|d| d.evaluation_region()).transpose()?;
    let truth = match (&data, &region) {
        (Some(d), Some(r)) => d.object.as_ref().map(|x| (x, r)),
        _ => None,
    };
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let side = render_outputs(&image, truth, trace.as_deref(), &render, &out)?;
    println!("wrote {} files to {}", side.files.len() + 1, out.display());
    if let Some(c) = side.comparison {
        println!("NRMSE {:.6}", c.nrmse);
    }
    Ok(())
}
