use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use tlscm::io::{read_dataset, read_json, write_dataset, write_json, FORMAT_VERSION};
use tlscm::{
    baseline_var_ols, evaluate_checkpoint, fit, generate, CheckpointDoc, Error, GroundTruthDoc, MetricsDoc, ModelDims,
    TimeSeriesDataset,
};

use crate::config::{Method, RunConfig};
use crate::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub(crate) fn out_dir(cfg: &RunConfig, ov: &Overrides) -> Result<PathBuf, CliError> {
    let dir = ov
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn at(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(io) => CliError::Input(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

/// Record of one `generate` invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRun {
    pub format_version: u32,
    pub config: RunConfig,
    pub outputs: Vec<GeneratedFiles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedFiles {
    pub seed: u64,
    pub dataset: String,
    pub truth: String,
    pub latent: usize,
    pub rescale_factor: f64,
    pub raw_spectral_radius: f64,
}

/// Writes one dataset CSV and one ground-truth JSON per seed, plus
/// `generate_run.json` echoing the effective configuration.
pub fn cmd_generate(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let base = cfg
        .generate
        .as_ref()
        .ok_or_else(|| CliError::Input("config has no [generate] section".into()))?;
    let seeds = match (ov.seed, &cfg.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) => list.clone(),
        (None, None) => vec![base.seed],
    };
    let dir = out_dir(cfg, ov)?;
    let mut written = Vec::new();
    let mut outputs = Vec::new();
    for &seed in &seeds {
        let mut g = base.clone();
        g.seed = seed;
        let (truth, ds) = generate::<f64>(&g)?;
        let dataset = format!("dataset_seed{seed}.csv");
        let truth_name = format!("truth_seed{seed}.json");
        let dpath = dir.join(&dataset);
        let tpath = dir.join(&truth_name);
        write_dataset(&dpath, &ds).map_err(at(&dpath))?;
        write_json(&tpath, &GroundTruthDoc::from_generated(&truth, &g, &ds.names)).map_err(at(&tpath))?;
        info!(
            "seed {seed}: {} x {} series, {} latents, rescale {}",
            ds.timesteps(),
            ds.observed(),
            truth.truth.dims.latent,
            truth.rescale_factor
        );
        outputs.push(GeneratedFiles {
            seed,
            dataset,
            truth: truth_name,
            latent: truth.truth.dims.latent,
            rescale_factor: truth.rescale_factor,
            raw_spectral_radius: truth.raw_spectral_radius,
        });
        written.push(dpath);
        written.push(tpath);
    }
    let mut effective = cfg.clone();
    effective.seeds = Some(seeds);
    let meta = dir.join("generate_run.json");
    write_json(
        &meta,
        &GenerateRun {
            format_version: FORMAT_VERSION,
            config: effective,
            outputs,
        },
    )
    .map_err(at(&meta))?;
    written.push(meta);
    Ok(written)
}

/// Objective trace left behind by a diverged fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceTrace {
    pub format_version: u32,
    pub error: String,
    pub trace: Vec<f64>,
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".checkpoint.json", ".json", ".csv"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_owned();
        }
    }
    name
}

/// Fits the dataset and writes `<stem>.checkpoint.json` (or
/// `<stem>.var-ols.checkpoint.json` for the baseline).
pub fn cmd_fit(cfg: &RunConfig, dataset: Option<&Path>, ov: &Overrides) -> Result<PathBuf, CliError> {
    let section = cfg
        .fit
        .as_ref()
        .ok_or_else(|| CliError::Input("config has no [fit] section (it must give `latent`)".into()))?;
    let path = dataset
        .map(Path::to_path_buf)
        .or_else(|| section.dataset.clone())
        .ok_or_else(|| CliError::Input("no dataset given on the command line or in [fit]".into()))?;
    let ds: TimeSeriesDataset<f64> = read_dataset(&path).map_err(at(&path))?;
    let dir = out_dir(cfg, ov)?;
    let name = stem(&path);
    match section.method {
        Method::Variational => {
            let mut train = cfg.train.clone();
            if let Some(s) = ov.seed {
                train.seed = s;
            }
            let dims = ModelDims::new(ds.observed(), section.latent, ds.timesteps(), section.components)?;
            cfg.prior
                .validate(dims.total())
                .map_err(|e| CliError::Input(format!("[prior] {e}")))?;
            let started = Instant::now();
            let model = match fit(&ds, dims, &cfg.prior, &train) {
                Ok(m) => m,
                Err(Error::Divergence { epoch, reason, trace }) => {
                    let tpath = dir.join(format!("{name}.trace.json"));
                    let message = format!("training diverged at epoch {epoch}: {reason}");
                    write_json(
                        &tpath,
                        &DivergenceTrace {
                            format_version: FORMAT_VERSION,
                            error: message.clone(),
                            trace,
                        },
                    )
                    .map_err(at(&tpath))?;
                    return Err(CliError::Numerical {
                        message: format!("{message} (trace written to {})", tpath.display()),
                        trace: Some(tpath),
                    });
                }
                Err(e) => return Err(e.into()),
            };
            info!(
                "fitted in {} epochs, {:.1} s, final objective {}",
                model.epochs,
                started.elapsed().as_secs_f64(),
                model.trace.last().copied().unwrap_or(f64::NAN)
            );
            let out = dir.join(format!("{name}.checkpoint.json"));
            write_json(&out, &CheckpointDoc::from_fit(&model, &cfg.prior, &ds.names)).map_err(at(&out))?;
            Ok(out)
        }
        Method::VarOls => {
            let e = &cfg.evaluate;
            let base = baseline_var_ols(&ds, e.baseline_ridge, e.baseline_threshold)?;
            let doc = CheckpointDoc::from_baseline(&base, e.baseline_ridge, e.baseline_threshold, ds.timesteps(), &ds.names);
            let out = dir.join(format!("{name}.var-ols.checkpoint.json"));
            write_json(&out, &doc).map_err(at(&out))?;
            Ok(out)
        }
    }
}

/// Scores a checkpoint against a truth file and writes `<stem>.metrics.json`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    truth: Option<&Path>,
    threshold: Option<f64>,
    ov: &Overrides,
) -> Result<PathBuf, CliError> {
    let missing = |what: &str| CliError::Input(format!("no {what} path given on the command line or in [evaluate]"));
    let cpath = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.evaluate.checkpoint.clone())
        .ok_or_else(|| missing("checkpoint"))?;
    let tpath = truth
        .map(Path::to_path_buf)
        .or_else(|| cfg.evaluate.truth.clone())
        .ok_or_else(|| missing("truth"))?;
    let tau = threshold.unwrap_or(cfg.evaluate.threshold);
    let ckpt: CheckpointDoc = read_json(&cpath).map_err(at(&cpath))?;
    let gt: GroundTruthDoc = read_json(&tpath).map_err(at(&tpath))?;
    let doc: MetricsDoc = evaluate_checkpoint(&ckpt, &gt, tau).map_err(|e| CliError::Input(e.to_string()))?;
    let m = &doc.metrics;
    info!("precision {:.4}, recall {:.4}, F1 {:.4} at threshold {tau}", m.precision, m.recall, m.f1);
    let dir = out_dir(cfg, ov)?;
    let out = dir.join(format!("{}.metrics.json", stem(&cpath)));
    write_json(&out, &doc).map_err(at(&out))?;
    Ok(out)
}
