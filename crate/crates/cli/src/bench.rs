//! Grid sweeps: generate, fit and score every (grid point, seed) pair.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tlscm::eval::AggregateReport;
use tlscm::io::{write_dataset, write_json, FORMAT_VERSION, METRICS_SCOPE};
use tlscm::{
    aggregate, baseline_var_ols, evaluate_checkpoint, fit, generate, prf1, CheckpointDoc, GenConfig, GroundTruthDoc,
    MetricsReport, ModelDims, NoiseKind,
};

use crate::commands::{out_dir, Overrides};
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variational: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Some seeds failed; aggregates cover the rest.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    /// Generator settings of the grid point; `seed` is the base seed.
    pub generator: GenConfig,
    pub latent: usize,
    pub status: CellStatus,
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variational: Option<AggregateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<AggregateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub scope: String,
    pub config: RunConfig,
    pub cells: Vec<CellReport>,
}

struct Job<'a> {
    cell: usize,
    generator: &'a GenConfig,
    seed: u64,
}

fn run_one(cfg: &RunConfig, job: &Job<'_>, keep: Option<&Path>) -> RunReport {
    let mut report = RunReport {
        seed: job.seed,
        epochs: None,
        variational: None,
        baseline: None,
        error: None,
    };
    let started = Instant::now();
    if let Err(e) = run_inner(cfg, job, keep, &mut report) {
        warn!("cell {} seed {}: {e}", job.cell, job.seed);
        report.error = Some(e.to_string());
    }
    info!(
        "cell {} seed {} done in {:.1} s",
        job.cell,
        job.seed,
        started.elapsed().as_secs_f64()
    );
    report
}

fn run_inner(cfg: &RunConfig, job: &Job<'_>, keep: Option<&Path>, report: &mut RunReport) -> tlscm::Result<()> {
    let bench = cfg.benchmark.as_ref().expect("validated");
    let mut g = job.generator.clone();
    g.seed = job.seed;
    let (gen, ds) = generate::<f64>(&g)?;
    let truth_doc = GroundTruthDoc::from_generated(&gen, &g, &ds.names);
    if bench.baseline {
        let e = &cfg.evaluate;
        let base = baseline_var_ols(&ds, e.baseline_ridge, e.baseline_threshold)?;
        report.baseline = Some(prf1(base.adjacency.view(), gen.truth.params.observed_adjacency().view())?);
    }
    let dims = ModelDims::new(ds.observed(), gen.truth.dims.latent, ds.timesteps(), bench.components)?;
    let model = fit(&ds, dims, &cfg.prior, &cfg.train)?;
    report.epochs = Some(model.epochs);
    let ckpt = CheckpointDoc::from_fit(&model, &cfg.prior, &ds.names);
    report.variational = Some(evaluate_checkpoint(&ckpt, &truth_doc, cfg.evaluate.threshold)?.metrics);
    if let Some(root) = keep {
        let dir = root.join(format!("cell{}_seed{}", job.cell, job.seed));
        fs::create_dir_all(&dir)?;
        write_dataset(&dir.join("dataset.csv"), &ds)?;
        write_json(&dir.join("truth.json"), &truth_doc)?;
        write_json(&dir.join("checkpoint.json"), &ckpt)?;
    }
    Ok(())
}

fn noise_label(n: &NoiseKind) -> String {
    match n {
        NoiseKind::Gmm { components } => format!("gmm{components}"),
        NoiseKind::Uniform => "uniform".into(),
        NoiseKind::ChiSquare => "chi_square".into(),
    }
}

fn write_csv(path: &Path, cells: &[CellReport]) -> tlscm::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cell",
        "observed",
        "latent",
        "avg_in_degree",
        "latent_ratio",
        "timesteps",
        "noise",
        "method",
        "runs",
        "failed",
        "precision_mean",
        "precision_sd",
        "recall_mean",
        "recall_sd",
        "f1_mean",
        "f1_sd",
    ])?;
    for c in cells {
        let failed = c.runs.iter().filter(|r| r.error.is_some()).count();
        for (method, agg) in [("variational", &c.variational), ("var-ols", &c.baseline)] {
            let g = &c.generator;
            let mut row = vec![
                c.cell.to_string(),
                g.observed.to_string(),
                c.latent.to_string(),
                format!("{:?}", g.avg_in_degree),
                format!("{:?}", g.latent_ratio),
                g.timesteps.to_string(),
                noise_label(&g.noise),
                method.to_owned(),
                c.runs.len().to_string(),
                failed.to_string(),
            ];
            match agg {
                Some(a) => {
                    for m in [a.precision, a.recall, a.f1] {
                        row.push(format!("{:?}", m.mean));
                        row.push(format!("{:?}", m.sd));
                    }
                }
                None if method == "var-ols" && c.runs.iter().all(|r| r.baseline.is_none() && r.error.is_none()) => continue,
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep and writes `benchmark_report.json` and `benchmark.csv`.
/// Returns the report path. Failed runs are recorded, not fatal.
pub fn cmd_benchmark(cfg: &RunConfig, ov: &Overrides) -> Result<PathBuf, CliError> {
    let mut cfg = cfg.clone();
    let bench = cfg
        .benchmark
        .as_mut()
        .ok_or_else(|| CliError::Input("config has no [benchmark] section".into()))?;
    if let Some(s) = ov.seed {
        bench.seed_base = s;
    }
    let (seeds, base, keep_files) = (bench.seeds, bench.seed_base, bench.keep_files);
    let cells = cfg.benchmark_cells()?;
    let dir = out_dir(&cfg, ov)?;
    let keep = keep_files.then(|| dir.join("runs"));
    let jobs: Vec<Job<'_>> = cells
        .iter()
        .enumerate()
        .flat_map(|(cell, generator)| {
            (0..seeds as u64).map(move |k| Job {
                cell,
                generator,
                seed: base + k,
            })
        })
        .collect();
    let workers = ov.workers.unwrap_or(1).max(1);
    info!("{} grid points x {seeds} seeds on {workers} worker(s)", cells.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunReport> = pool.install(|| jobs.par_iter().map(|j| run_one(&cfg, j, keep.as_deref())).collect());

    let mut reports = Vec::with_capacity(cells.len());
    for (i, (g, chunk)) in cells.iter().zip(runs.chunks(seeds)).enumerate() {
        let ok = chunk.iter().filter(|r| r.error.is_none()).count();
        let status = match ok {
            0 => CellStatus::Failed,
            n if n == chunk.len() => CellStatus::Ok,
            _ => CellStatus::Partial,
        };
        let collect = |f: fn(&RunReport) -> Option<MetricsReport>| {
            let v: Vec<MetricsReport> = chunk.iter().filter(|r| r.error.is_none()).filter_map(f).collect();
            if v.is_empty() {
                None
            } else {
                aggregate(&v).ok()
            }
        };
        reports.push(CellReport {
            cell: i,
            generator: g.clone(),
            latent: g.latent_count(),
            status,
            runs: chunk.to_vec(),
            variational: collect(|r| r.variational),
            baseline: collect(|r| r.baseline),
        });
    }
    let report = BenchmarkReport {
        format_version: FORMAT_VERSION,
        scope: METRICS_SCOPE.to_owned(),
        config: cfg,
        cells: reports,
    };
    let json = dir.join("benchmark_report.json");
    write_json(&json, &report).map_err(|e| CliError::Input(format!("{}: {e}", json.display())))?;
    let csv_path = dir.join("benchmark.csv");
    write_csv(&csv_path, &report.cells).map_err(|e| CliError::Input(format!("{}: {e}", csv_path.display())))?;
    Ok(json)
}
