//! The run configuration document shared by all verbs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tlscm::io::read_json;
use tlscm::{GenConfig, NoiseKind, PriorConfig, TrainConfig};

use crate::CliError;

/// One JSON document per run. Sections a verb does not use are ignored by
/// it but still validated when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Generator settings; `generate` draws one dataset per entry of `seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenConfig>,
    /// Seeds for `generate`; defaults to the generator's own seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Variational,
    VarOls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Dataset CSV; a path on the command line takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Number of latent series to posit.
    pub latent: usize,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Edge-probability threshold `τ`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Ridge penalty of the latent-blind baseline.
    #[serde(default)]
    pub baseline_ridge: f64,
    /// `|B_ij|` cut-off of the baseline.
    #[serde(default = "default_weight_threshold")]
    pub baseline_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            threshold: default_threshold(),
            baseline_ridge: 0.0,
            baseline_threshold: default_weight_threshold(),
            checkpoint: None,
            truth: None,
        }
    }
}

/// Cartesian grid of generator settings swept over `seeds` seeds each.
/// Unlisted axes fall back to the `generate` section or its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub observed: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub avg_in_degree: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latent_ratio: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timesteps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise: Vec<NoiseKind>,
    #[serde(default = "default_seed_count")]
    pub seeds: usize,
    /// First generator seed; runs use `seed_base..seed_base + seeds`.
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_true")]
    pub baseline: bool,
    /// Keep each run's dataset, truth and checkpoint under `runs/`.
    #[serde(default)]
    pub keep_files: bool,
}

fn default_components() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.5
}
fn default_weight_threshold() -> f64 {
    0.1
}
fn default_seed_count() -> usize {
    5
}
fn default_true() -> bool {
    true
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = read_json(path).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section that is present.
    pub fn validate(&self) -> Result<(), CliError> {
        fn ctx(section: &'static str) -> impl Fn(tlscm::Error) -> CliError {
            move |e| invalid(format!("[{section}] {e}"))
        }
        if let Some(g) = &self.generate {
            g.validate().map_err(ctx("generate"))?;
            g.dims().map_err(ctx("generate"))?;
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(invalid("[seeds] list is empty"));
            }
        }
        self.train.validate().map_err(ctx("train"))?;
        if let Some(f) = &self.fit {
            if f.components == 0 {
                return Err(invalid("[fit] components must be at least 1"));
            }
        }
        let e = &self.evaluate;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(invalid(format!("[evaluate] threshold {} must lie in (0, 1)", e.threshold)));
        }
        if !(e.baseline_ridge >= 0.0 && e.baseline_ridge.is_finite()) {
            return Err(invalid("[evaluate] baseline_ridge must be non-negative"));
        }
        if !(e.baseline_threshold > 0.0) {
            return Err(invalid("[evaluate] baseline_threshold must be positive"));
        }
        if let Some(b) = &self.benchmark {
            if b.observed.is_empty() {
                return Err(invalid("[benchmark] observed grid is empty"));
            }
            if b.seeds == 0 {
                return Err(invalid("[benchmark] seeds must be at least 1"));
            }
            if b.components == 0 {
                return Err(invalid("[benchmark] components must be at least 1"));
            }
            for cell in self.benchmark_cells()? {
                cell.validate().map_err(ctx("benchmark"))?;
                cell.dims().map_err(ctx("benchmark"))?;
            }
        }
        Ok(())
    }

    /// Generator configurations of every benchmark grid point, in
    /// row-major order over (observed, avg_in_degree, latent_ratio,
    /// timesteps, noise). Seeds are left at the base value.
    pub fn benchmark_cells(&self) -> Result<Vec<GenConfig>, CliError> {
        let b = self.benchmark.as_ref().ok_or_else(|| invalid("config has no [benchmark] section"))?;
        let base = self.generate.clone().unwrap_or_else(|| GenConfig::new(b.observed[0], 0.4, 1000, 1.25));
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let degrees = or(&b.avg_in_degree, base.avg_in_degree);
        let ratios = or(&b.latent_ratio, base.latent_ratio);
        let lengths = if b.timesteps.is_empty() { vec![base.timesteps] } else { b.timesteps.clone() };
        let noises = if b.noise.is_empty() { vec![base.noise] } else { b.noise.clone() };
        let mut cells = Vec::new();
        for &m in &b.observed {
            for &d in &degrees {
                for &r in &ratios {
                    for &t in &lengths {
                        for &noise in &noises {
                            let mut g = base.clone();
                            g.observed = m;
                            g.latent = None;
                            g.avg_in_degree = d;
                            g.latent_ratio = r;
                            g.timesteps = t;
                            g.noise = noise;
                            g.seed = b.seed_base;
                            cells.push(g);
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = parse("{}").unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.evaluate.threshold, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{"trian": {}}"#).is_err());
        assert!(parse(r#"{"train": {"lamda": 1}}"#).is_err());
        assert!(parse(r#"{"fit": {"latent": 1, "extra": 0}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse(r#"{"evaluate": {"threshold": 1.0}}"#).is_err());
        assert!(parse(r#"{"train": {"mc_samples": 0}}"#).is_err());
        let err = parse(r#"{"generate": {"observed": 20, "timesteps": 100, "avg_in_degree": 200, "latent_ratio": 0.4}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("edge probability"), "{err}");
    }

    #[test]
    fn grid_is_cartesian() {
        let cfg = parse(r#"{"benchmark": {"observed": [5, 10], "avg_in_degree": [1.0, 1.25, 1.5], "seeds": 3}}"#).unwrap();
        let cells = cfg.benchmark_cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[0].observed, cells[0].avg_in_degree), (5, 1.0));
        assert_eq!((cells[5].observed, cells[5].avg_in_degree), (10, 1.5));
        assert!(cells.iter().all(|c| c.timesteps == 1000 && c.latent_ratio == 0.4));
    }
}
