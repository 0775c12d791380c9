//! Grid-search sweep over spacings, methods, tunables and seeds.
//!
//! Cells are independent jobs run on a bounded pool. Each job owns its
//! solver and writes only its own run directory; results are collected in
//! cell order, so the summary does not depend on scheduling. Timings appear
//! only in per-run traces, never in the summary.

use std::path::{Path, PathBuf};

use pmace_core::baselines::reconstruct;
use pmace_core::metrics::{aligned_nrmse, Region, TraceRecord};
use pmace_core::ptycho::Probe;
use pmace_core::recon::{Method, MethodConfig, ReconstructionResult, Reference};
use pmace_core::ComplexImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_io::{write_array, ArrayData};
use crate::config::{with_pool, ExperimentConfig};
use crate::dataset::{read_complex, read_json, simulate, version, write_json, Dataset};
use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const CONFIG_FILE: &str = "config.json";
pub const IMAGE_FILE: &str = "image.arr";
pub const TRACE_FILE: &str = "trace.csv";
pub const RUN_FILE: &str = "run.json";

/// Metadata written next to every reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: Method,
    pub tunable: f64,
    pub config: MethodConfig,
    pub spacing: Option<usize>,
    pub seed: Option<u64>,
    /// Dataset directory for standalone reconstructions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub outcome: RunOutcome,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed {
        iterations_run: usize,
        converged: bool,
        fft_calls: u64,
        initial_nrmse: Option<f64>,
        final_nrmse: Option<f64>,
    },
    Failed {
        error: String,
    },
}

impl RunOutcome {
    pub fn of(result: &ReconstructionResult) -> Self {
        RunOutcome::Completed {
            iterations_run: result.iterations_run,
            converged: result.converged,
            fft_calls: result.fft_calls,
            initial_nrmse: result.trace.initial_nrmse,
            final_nrmse: result.final_nrmse(),
        }
    }
}

/// Writes `trace.csv` with the fixed header `iteration,residual,nrmse,seconds`.
/// A missing NRMSE is an empty field.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["iteration", "residual", "nrmse", "seconds"])
        .map_err(io)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.residual.to_string(),
            r.nrmse.map(|v| v.to_string()).unwrap_or_default(),
            r.seconds.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_trace(path: &Path) -> CliResult<Vec<TraceRecord>> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header != vec!["iteration", "residual", "nrmse", "seconds"] {
        return Err(bad("unexpected trace header".into()));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| row[k].parse::<f64>().map_err(|e| bad(e.to_string()));
        out.push(TraceRecord {
            iteration: row[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            residual: num(1)?,
            nrmse: if row[2].is_empty() {
                None
            } else {
                Some(num(2)?)
            },
            seconds: num(3)?,
            image_residual: None,
            objective: None,
        });
    }
    Ok(out)
}

/// Writes `image.arr`, `trace.csv` and `run.json` (or only `run.json` for a
/// failed run) into `dir`.
pub fn write_run(
    dir: &Path,
    result: Option<&ReconstructionResult>,
    meta: &RunMeta,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    if let Some(result) = result {
        let path = dir.join(IMAGE_FILE);
        write_array(&path, &ArrayData::from_complex_image(&result.image))
            .map_err(|source| CliError::Array { path, source })?;
        write_trace(&dir.join(TRACE_FILE), result.trace.records())?;
    }
    write_json(&dir.join(RUN_FILE), meta)
}

/// One job of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub spacing_index: usize,
    pub seed_index: usize,
    pub method: Method,
    pub tunable: f64,
}

/// Cells in summary order: spacing, method, tunable, seed.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for spacing_index in 0..cfg.scan.spacings.len() {
        for grid in &cfg.methods {
            for tunable in grid.tunables() {
                for seed_index in 0..cfg.seeds.len() {
                    out.push(Cell {
                        spacing_index,
                        seed_index,
                        method: grid.method,
                        tunable,
                    });
                }
            }
        }
    }
    out
}

/// Run directory of one cell. Tunables use Rust's shortest round-trip
/// float syntax (`0.5`, `1.0`, `1e300`), which stays short for any value.
pub fn run_dir(root: &Path, spacing: usize, method: Method, tunable: f64, seed: u64) -> PathBuf {
    root.join("runs")
        .join(format!("spacing-{spacing}"))
        .join(method.name())
        .join(format!("tunable-{tunable:?}"))
        .join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    /// See [`ExperimentConfig::experiment_snapshot`].
    pub config: ExperimentConfig,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

/// One method at one spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub spacing: usize,
    /// Mean over seeds of the scan's overlap ratio.
    pub overlap_ratio: f64,
    /// Tunable with the lowest mean final NRMSE among those that completed
    /// on every seed; ties keep the earlier grid value.
    pub best_tunable: Option<f64>,
    pub final_nrmse: Option<f64>,
    pub tunables: Vec<TunableStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunableStat {
    pub tunable: f64,
    /// `None` unless every seed completed.
    pub mean_nrmse: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub spacing: usize,
    pub method: Method,
    pub tunable: f64,
    pub seed: u64,
    pub error: String,
}

impl Summary {
    pub fn row(&self, method: Method, spacing: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.spacing == spacing)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        text
    }
}

/// Builds the summary from per-cell NRMSEs given in [`cells`] order.
pub fn summarize(
    cfg: &ExperimentConfig,
    overlap: &[f64],
    outcomes: &[Result<f64, String>],
) -> Summary {
    let cells = cells(cfg);
    assert_eq!(cells.len(), outcomes.len(), "one outcome per cell");
    let n_seeds = cfg.seeds.len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut k = 0;
    for (si, &spacing) in cfg.scan.spacings.iter().enumerate() {
        for grid in &cfg.methods {
            let mut tunables = Vec::new();
            for tunable in grid.tunables() {
                let per_seed: Vec<Option<f64>> = outcomes[k..k + n_seeds]
                    .iter()
                    .zip(&cfg.seeds)
                    .map(|(o, &seed)| match o {
                        Ok(v) => Some(*v),
                        Err(error) => {
                            failures.push(CellFailure {
                                spacing,
                                method: grid.method,
                                tunable,
                                seed,
                                error: error.clone(),
                            });
                            None
                        }
                    })
                    .collect();
                k += n_seeds;
                let mean_nrmse = per_seed
                    .iter()
                    .copied()
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / v.len() as f64);
                tunables.push(TunableStat {
                    tunable,
                    mean_nrmse,
                    per_seed,
                });
            }
            let best = tunables
                .iter()
                .filter_map(|t| t.mean_nrmse.map(|m| (t.tunable, m)))
                .fold(None, |acc: Option<(f64, f64)>, (t, m)| match acc {
                    Some((_, best)) if best <= m => acc,
                    _ => Some((t, m)),
                });
            rows.push(SummaryRow {
                method: grid.method,
                spacing,
                overlap_ratio: overlap[si],
                best_tunable: best.map(|b| b.0),
                final_nrmse: best.map(|b| b.1),
                tunables,
            });
        }
    }
    Summary {
        version: version(),
        config: cfg.experiment_snapshot(),
        rows,
        failures,
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Summary,
    pub output_dir: PathBuf,
}

impl Report {
    pub fn has_failures(&self) -> bool {
        !self.summary.failures.is_empty()
    }
}

/// Simulated data for every (spacing, seed), indexed `[spacing][seed]`.
struct Instances {
    truth: ComplexImage,
    probe: Probe,
    datasets: Vec<Vec<Dataset>>,
    regions: Vec<Vec<Region>>,
}

fn build_instances(cfg: &ExperimentConfig) -> CliResult<Instances> {
    let truth = cfg.ground_truth()?;
    let probe = cfg.probe()?;
    let pairs: Vec<(usize, u64)> = cfg
        .scan
        .spacings
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let flat = pairs
        .par_iter()
        .map(|&(s, seed)| {
            let data = simulate(cfg, &truth, &probe, s, seed)?;
            let region = data.evaluation_region()?;
            Ok((data, region))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut datasets = Vec::new();
    let mut regions = Vec::new();
    let mut it = flat.into_iter();
    for _ in &cfg.scan.spacings {
        let (d, r): (Vec<_>, Vec<_>) = it.by_ref().take(cfg.seeds.len()).unzip();
        datasets.push(d);
        regions.push(r);
    }
    Ok(Instances {
        truth,
        probe,
        datasets,
        regions,
    })
}

fn overlaps(datasets: &[Vec<Dataset>]) -> Vec<f64> {
    datasets
        .iter()
        .map(|per_seed| {
            let sum: f64 = per_seed
                .iter()
                .map(|d| match &d.meta {
                    crate::dataset::DatasetMeta::Simulated { overlap_ratio, .. } => *overlap_ratio,
                    crate::dataset::DatasetMeta::Measured { .. } => f64::NAN,
                })
                .sum();
            sum / per_seed.len() as f64
        })
        .collect()
}

/// Runs the sweep and writes `config.json`, the per-run artifacts and
/// `summary.json` under the output directory. A failing cell is recorded in
/// the summary and does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig, progress: bool) -> CliResult<Report> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    write_json(&root.join(CONFIG_FILE), cfg)?;

    let summary = with_pool(cfg.threads, || -> CliResult<Summary> {
        let inst = build_instances(cfg)?;
        let cells = cells(cfg);
        let total = cells.len();
        let outcomes = cells
            .par_iter()
            .enumerate()
            .map(|(k, cell)| {
                let outcome = run_cell(cfg, &inst, &root, cell);
                if progress {
                    let seed = cfg.seeds[cell.seed_index];
                    let spacing = cfg.scan.spacings[cell.spacing_index];
                    match &outcome {
                        Ok(v) => eprintln!(
                            "[{}/{total}] spacing {spacing} {} {} seed {seed}: nrmse {v:.4}",
                            k + 1,
                            cell.method,
                            cell.tunable
                        ),
                        Err(e) => eprintln!(
                            "[{}/{total}] spacing {spacing} {} {} seed {seed}: failed: {e}",
                            k + 1,
                            cell.method,
                            cell.tunable
                        ),
                    }
                }
                outcome
            })
            .collect::<Vec<_>>();
        Ok(summarize(cfg, &overlaps(&inst.datasets), &outcomes))
    })??;

    std::fs::write(root.join(SUMMARY_FILE), summary.to_json())
        .map_err(|e| CliError::io(root.join(SUMMARY_FILE), e))?;
    Ok(Report {
        summary,
        output_dir: root,
    })
}

/// Runs one cell and writes its artifacts. Errors writing artifacts count
/// as a cell failure.
fn run_cell(
    cfg: &ExperimentConfig,
    inst: &Instances,
    root: &Path,
    cell: &Cell,
) -> Result<f64, String> {
    let seed = cfg.seeds[cell.seed_index];
    let spacing = cfg.scan.spacings[cell.spacing_index];
    let data = &inst.datasets[cell.spacing_index][cell.seed_index];
    let region = &inst.regions[cell.spacing_index][cell.seed_index];
    let method_cfg = cfg.method_config(cell.method, cell.tunable, seed);
    let reference = Reference::new(&inst.truth, region);
    let result = reconstruct(
        &method_cfg,
        &data.measurements,
        &inst.probe,
        Some(reference),
    );
    let outcome = match &result {
        Ok(r) => RunOutcome::of(r),
        Err(e) => RunOutcome::Failed {
            error: e.to_string(),
        },
    };
    let meta = RunMeta {
        method: cell.method,
        tunable: cell.tunable,
        config: method_cfg,
        spacing: Some(spacing),
        seed: Some(seed),
        dataset: None,
        outcome,
        version: version(),
    };
    let dir = run_dir(root, spacing, cell.method, cell.tunable, seed);
    write_run(&dir, result.as_ref().ok(), &meta).map_err(|e| e.to_string())?;
    let result = result.map_err(|e| e.to_string())?;
    result
        .final_nrmse()
        .ok_or_else(|| "solver recorded no NRMSE".to_string())
}

/// Recomputes every cell's NRMSE from the stored images of a finished sweep
/// and writes `evaluation.json` in the same format as the summary. Cells
/// without an image keep the error recorded in their `run.json`.
pub fn evaluate_sweep(root: &Path, threads: Option<usize>) -> CliResult<Summary> {
    let cfg: ExperimentConfig = read_json(&root.join(CONFIG_FILE))?;
    cfg.validate()?;
    let summary = with_pool(threads.or(cfg.threads), || -> CliResult<Summary> {
        let inst = build_instances(&cfg)?;
        let outcomes = cells(&cfg)
            .par_iter()
            .map(|cell| {
                let seed = cfg.seeds[cell.seed_index];
                let spacing = cfg.scan.spacings[cell.spacing_index];
                let dir = run_dir(root, spacing, cell.method, cell.tunable, seed);
                if !dir.join(IMAGE_FILE).exists() {
                    let meta: RunMeta = read_json(&dir.join(RUN_FILE))?;
                    return Ok(Err(match meta.outcome {
                        RunOutcome::Failed { error } => error,
                        RunOutcome::Completed { .. } => "image missing".into(),
                    }));
                }
                let image = read_complex(&dir, IMAGE_FILE)?;
                let region = &inst.regions[cell.spacing_index][cell.seed_index];
                Ok(aligned_nrmse(&image, &inst.truth, region).map_err(|e| e.to_string()))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(summarize(&cfg, &overlaps(&inst.datasets), &outcomes))
    })??;
    std::fs::write(root.join(EVALUATION_FILE), summary.to_json())
        .map_err(|e| CliError::io(root.join(EVALUATION_FILE), e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MethodGrid;

    fn two_by_two() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scan.spacings = vec![10, 20];
        cfg.seeds = vec![0, 1];
        cfg.methods = vec![
            MethodGrid {
                method: Method::Epie,
                grid: Some(vec![0.5, 1.0]),
            },
            MethodGrid {
                method: Method::Sharp,
                grid: Some(vec![0.5]),
            },
        ];
        cfg
    }

    #[test]
    fn cell_order() {
        let cfg = two_by_two();
        let c = cells(&cfg);
        assert_eq!(c.len(), 2 * 3 * 2);
        assert_eq!(
            (c[0].method, c[0].tunable, c[0].seed_index),
            (Method::Epie, 0.5, 0)
        );
        assert_eq!((c[1].tunable, c[1].seed_index), (0.5, 1));
        assert_eq!((c[2].tunable, c[2].seed_index), (1.0, 0));
        assert_eq!((c[4].method, c[4].spacing_index), (Method::Sharp, 0));
        assert_eq!(c[6].spacing_index, 1);
    }

    #[test]
    fn summary_picks_best_complete_tunable() {
        let cfg = two_by_two();
        let outcomes = vec![
            // spacing 10, epie 0.5 / 1.0, sharp 0.5
            Ok(0.3),
            Ok(0.1),
            Ok(0.05),
            Err("diverged".to_string()),
            Ok(0.2),
            Ok(0.2),
            // spacing 20: a tie between epie grid values
            Ok(0.4),
            Ok(0.2),
            Ok(0.2),
            Ok(0.4),
            Ok(0.5),
            Ok(0.7),
        ];
        let s = summarize(&cfg, &[0.7, 0.3], &outcomes);
        let r = s.row(Method::Epie, 10).unwrap();
        assert_eq!(r.best_tunable, Some(0.5));
        assert!((r.final_nrmse.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(r.tunables[1].mean_nrmse, None);
        assert_eq!(r.tunables[1].per_seed, vec![Some(0.05), None]);
        assert_eq!(s.failures.len(), 1);
        assert_eq!((s.failures[0].tunable, s.failures[0].seed), (1.0, 1));
        assert_eq!(s.row(Method::Epie, 20).unwrap().best_tunable, Some(0.5));
        assert_eq!(s.row(Method::Sharp, 20).unwrap().overlap_ratio, 0.3);
        assert_eq!(s.rows.len(), 4);
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![
            TraceRecord {
                iteration: 1,
                residual: 0.5,
                nrmse: Some(0.25),
                seconds: 0.125,
                image_residual: None,
                objective: None,
            },
            TraceRecord {
                iteration: 2,
                residual: 1e-7,
                nrmse: None,
                seconds: 0.25,
                image_residual: None,
                objective: None,
            },
        ];
        write_trace(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,residual,nrmse,seconds\n1,0.5,0.25,0.125\n2,"));
        assert_eq!(read_trace(&path).unwrap(), records);
    }
}
