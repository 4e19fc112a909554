//! On-disk formats: datasets as CSV, everything else as versioned JSON.
//!
//! Matrices are row-major nested arrays. Floats are written in shortest
//! round-trip form, so reading a file and writing it back reproduces it byte
//! for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::eval::{extract_adjacency, match_latents, observed_block, prf1, LatentMatch, MetricsReport, VarOlsFit, MAX_MATCH_LATENTS};
use crate::likelihood::PriorConfig;
use crate::model::{CausalParams, GmmNoiseParams, GroundTruth, MixtureParams, ModelDims, NoiseModel, TimeSeriesDataset};
use crate::scalar::{lit, softplus_inv, Scalar};
use crate::simulate::{GenConfig, GeneratedTruth};
use crate::vi::{FittedModel, RawMixture, Standardization, TrainConfig, VariationalState};

pub const FORMAT_VERSION: u32 = 1;

/// Row-major nested array.
pub type Rows = Vec<Vec<f64>>;

fn to_f64<F: Scalar>(v: F) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

pub fn to_rows<F: Scalar>(a: ArrayView2<F>) -> Rows {
    a.outer_iter().map(|r| r.iter().map(|&v| to_f64(v)).collect()).collect()
}

/// Parses nested rows into a matrix with `cols` columns.
pub fn from_rows<F: Scalar>(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Array2<F>> {
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::Structure(format!(
                "{what}: row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        for (j, &v) in r.iter().enumerate() {
            out[[i, j]] = lit(v);
        }
    }
    Ok(out)
}

fn expect_dim<T>(a: &Array2<T>, dim: (usize, usize), what: &str) -> Result<()> {
    if a.dim() != dim {
        return Err(Error::Structure(format!("{what} is {:?}, expected {dim:?}", a.dim())));
    }
    Ok(())
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format_version {found} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

/// Writes the dataset as CSV with a header row of variable names.
pub fn write_dataset_csv<F: Scalar, W: Write>(ds: &TimeSeriesDataset<F>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&ds.names)?;
    let mut record = Vec::with_capacity(ds.observed());
    for row in ds.data.outer_iter() {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a header-plus-rows CSV into a dataset without ground truth.
pub fn read_dataset_csv<F: Scalar, R: Read>(reader: R) -> Result<TimeSeriesDataset<F>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Parse("CSV header is empty".into()));
    }
    let m = names.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::Parse(format!("row {} has {} fields, header has {m}", t + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}, column `{}`: `{field}` is not a number", t + 1, names[j])))?;
            values.push(lit::<F>(v));
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, m), values).map_err(|e| Error::Structure(e.to_string()))?;
    TimeSeriesDataset::new(data, names)
}

pub fn write_dataset<F: Scalar>(path: &Path, ds: &TimeSeriesDataset<F>) -> Result<()> {
    let file = File::create(path)?;
    write_dataset_csv(ds, BufWriter::new(file))
}

pub fn read_dataset<F: Scalar>(path: &Path) -> Result<TimeSeriesDataset<F>> {
    read_dataset_csv(BufReader::new(File::open(path)?))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(to_json_string(doc)?.as_bytes())?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Per-row mixture weights, means and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDoc {
    pub weights: Rows,
    pub means: Rows,
    pub scales: Rows,
}

impl MixtureDoc {
    pub fn from_params<F: Scalar>(p: &MixtureParams<F>) -> Self {
        MixtureDoc {
            weights: to_rows(p.weights.view()),
            means: to_rows(p.means.view()),
            scales: to_rows(p.scales.view()),
        }
    }

    pub fn to_params<F: Scalar>(&self, rows: usize, components: usize) -> Result<MixtureParams<F>> {
        let w = from_rows(&self.weights, components, "mixture weights")?;
        let mu = from_rows(&self.means, components, "mixture means")?;
        let sd = from_rows(&self.scales, components, "mixture scales")?;
        expect_dim(&w, (rows, components), "mixture weights")?;
        let p = MixtureParams::new(w, mu, sd)?;
        p.check()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDoc {
    Gmm { observed: MixtureDoc, latent: MixtureDoc },
    Uniform { low: f64, high: f64 },
    ChiSquare { df: f64 },
}

impl NoiseDoc {
    pub fn from_model<F: Scalar>(noise: &NoiseModel<F>) -> Self {
        match noise {
            NoiseModel::Gmm(g) => NoiseDoc::Gmm {
                observed: MixtureDoc::from_params(&g.observed),
                latent: MixtureDoc::from_params(&g.latent),
            },
            NoiseModel::Uniform { low, high } => NoiseDoc::Uniform {
                low: to_f64(*low),
                high: to_f64(*high),
            },
            NoiseModel::ChiSquare { df } => NoiseDoc::ChiSquare { df: to_f64(*df) },
        }
    }

    pub fn to_model<F: Scalar>(&self, dims: &ModelDims) -> Result<NoiseModel<F>> {
        Ok(match self {
            NoiseDoc::Gmm { observed, latent } => {
                let c = observed.weights.first().map_or(0, Vec::len);
                NoiseModel::Gmm(GmmNoiseParams {
                    observed: observed.to_params(dims.observed, c)?,
                    latent: latent.to_params(dims.latent, c)?,
                })
            }
            NoiseDoc::Uniform { low, high } => NoiseModel::Uniform {
                low: lit(*low),
                high: lit(*high),
            },
            NoiseDoc::ChiSquare { df } => NoiseModel::ChiSquare { df: lit(*df) },
        })
    }
}

/// How a ground truth was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthMetadata {
    pub generator: GenConfig,
    /// Scalar applied to `W` to meet the stationarity cap; 1 when untouched.
    pub rescale_factor: f64,
    pub raw_spectral_radius: f64,
}

/// Ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDoc {
    pub format_version: u32,
    pub dims: ModelDims,
    pub names: Vec<String>,
    /// `(m+n)×(m+n)` entries in `{0, 1}`.
    pub adjacency: Vec<Vec<u8>>,
    pub weights: Rows,
    /// `T × n`
    pub latent_path: Rows,
    pub noise: NoiseDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<TruthMetadata>,
}

impl GroundTruthDoc {
    pub fn from_truth<F: Scalar>(truth: &GroundTruth<F>, names: &[String]) -> Self {
        GroundTruthDoc {
            format_version: FORMAT_VERSION,
            dims: truth.dims,
            names: names.to_vec(),
            adjacency: truth
                .params
                .adjacency
                .outer_iter()
                .map(|r| r.iter().map(|&b| u8::from(b)).collect())
                .collect(),
            weights: to_rows(truth.params.weights.view()),
            latent_path: to_rows(truth.latent_path.view()),
            noise: NoiseDoc::from_model(&truth.noise),
            metadata: None,
        }
    }

    pub fn from_generated<F: Scalar>(gen: &GeneratedTruth<F>, config: &GenConfig, names: &[String]) -> Self {
        let mut doc = Self::from_truth(&gen.truth, names);
        doc.metadata = Some(TruthMetadata {
            generator: config.clone(),
            rescale_factor: gen.rescale_factor,
            raw_spectral_radius: gen.raw_spectral_radius,
        });
        doc
    }

    pub fn to_truth<F: Scalar>(&self) -> Result<GroundTruth<F>> {
        check_version(self.format_version)?;
        self.dims.check()?;
        let k = self.dims.total();
        let mut adjacency = Array2::from_elem((self.adjacency.len(), k), false);
        let mut bad = Vec::new();
        for (i, r) in self.adjacency.iter().enumerate() {
            if r.len() != k {
                return Err(Error::Structure(format!("adjacency row {i} has {} entries, expected {k}", r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                match v {
                    0 => {}
                    1 => adjacency[[i, j]] = true,
                    _ => bad.push(Violation::NonBinary { row: i, col: j }),
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let weights = from_rows(&self.weights, k, "weights")?;
        let latent_path = from_rows(&self.latent_path, self.dims.latent, "latent path")?;
        let truth = GroundTruth {
            params: CausalParams::new(adjacency, weights, self.dims.observed)?,
            latent_path,
            noise: self.noise.to_model(&self.dims)?,
            dims: self.dims,
        };
        truth.check()?;
        Ok(truth)
    }
}

/// Constrained variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDoc {
    /// `m × (m+n)`
    pub edge_probs: Rows,
    pub weight_mean: Rows,
    pub weight_std: Rows,
    pub latent_ar_mean: Vec<f64>,
    pub latent_ar_std: Vec<f64>,
    /// `T × n`
    pub latent_mean: Rows,
    pub latent_std: Rows,
    pub obs_noise: MixtureDoc,
    pub latent_noise: MixtureDoc,
}

impl StateDoc {
    pub fn from_state<F: Scalar>(s: &VariationalState<F>) -> Self {
        let vec = |a: Array1<F>| a.iter().map(|&v| to_f64(v)).collect();
        StateDoc {
            edge_probs: to_rows(s.edge_probs().view()),
            weight_mean: to_rows(s.weight_mean.view()),
            weight_std: to_rows(s.weight_std().view()),
            latent_ar_mean: vec(s.latent_ar_mean.clone()),
            latent_ar_std: vec(s.latent_ar_std()),
            latent_mean: to_rows(s.latent_mean.view()),
            latent_std: to_rows(s.latent_std().view()),
            obs_noise: MixtureDoc::from_params(&s.obs_noise.constrained()),
            latent_noise: MixtureDoc::from_params(&s.latent_noise.constrained()),
        }
    }

    /// Maps back to unconstrained storage. Probabilities of exactly 0 or 1
    /// are nudged inside the open interval first.
    pub fn to_state<F: Scalar>(&self, dims: ModelDims) -> Result<VariationalState<F>> {
        let (m, n, t, c) = (dims.observed, dims.latent, dims.timesteps, dims.components);
        let k = m + n;
        let mut s = VariationalState::zeros(dims);
        let probs: Array2<f64> = from_rows(&self.edge_probs, k, "edge_probs")?;
        expect_dim(&probs, (m, k), "edge_probs")?;
        let tiny = f64::MIN_POSITIVE;
        s.edge_logits = probs.mapv(|p| {
            let p = p.clamp(tiny, 1.0 - f64::EPSILON / 2.0);
            lit(p.ln() - (-p).ln_1p())
        });
        s.weight_mean = from_rows(&self.weight_mean, k, "weight_mean")?;
        expect_dim(&s.weight_mean, (m, k), "weight_mean")?;
        s.weight_scale_raw = from_rows::<F>(&self.weight_std, k, "weight_std")?.mapv(softplus_inv);
        expect_dim(&s.weight_scale_raw, (m, k), "weight_std")?;
        if self.latent_ar_mean.len() != n || self.latent_ar_std.len() != n {
            return Err(Error::Structure(format!("latent AR vectors must have {n} entries")));
        }
        s.latent_ar_mean = self.latent_ar_mean.iter().map(|&v| lit(v)).collect();
        s.latent_ar_scale_raw = self.latent_ar_std.iter().map(|&v| softplus_inv(lit::<F>(v))).collect();
        s.latent_mean = from_rows(&self.latent_mean, n, "latent_mean")?;
        expect_dim(&s.latent_mean, (t, n), "latent_mean")?;
        s.latent_scale_raw = from_rows::<F>(&self.latent_std, n, "latent_std")?.mapv(softplus_inv);
        expect_dim(&s.latent_scale_raw, (t, n), "latent_std")?;
        let raw = |doc: &MixtureDoc, rows: usize| -> Result<RawMixture<F>> {
            let mut p = doc.to_params::<F>(rows, c)?;
            p.weights.mapv_inplace(|w| w.max(F::min_positive_value()));
            Ok(RawMixture::from_constrained(&p))
        };
        s.obs_noise = raw(&self.obs_noise, m)?;
        s.latent_noise = raw(&self.latent_noise, n)?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationDoc {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

/// The estimator that produced a checkpoint, with its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CheckpointBody {
    Variational {
        state: StateDoc,
        standardization: StandardizationDoc,
        /// Objective per completed epoch.
        trace: Vec<f64>,
        epochs: usize,
        train: TrainConfig,
        prior: PriorConfig,
    },
    VarOls {
        /// `m × m` coefficients of `X(t) ≈ B X(t−1) + c`.
        weights: Rows,
        intercept: Vec<f64>,
        adjacency: Vec<Vec<u8>>,
        ridge: f64,
        weight_threshold: f64,
    },
}

/// Fitted-model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format_version: u32,
    pub dims: ModelDims,
    pub names: Vec<String>,
    #[serde(flatten)]
    pub body: CheckpointBody,
}

impl CheckpointDoc {
    pub fn from_fit<F: Scalar>(fit: &FittedModel<F>, prior: &PriorConfig, names: &[String]) -> Self {
        let vec = |v: &[F]| v.iter().map(|&x| to_f64(x)).collect();
        CheckpointDoc {
            format_version: FORMAT_VERSION,
            dims: fit.dims,
            names: names.to_vec(),
            body: CheckpointBody::Variational {
                state: StateDoc::from_state(&fit.state),
                standardization: StandardizationDoc {
                    center: vec(&fit.standardization.center),
                    scale: vec(&fit.standardization.scale),
                },
                trace: fit.trace.clone(),
                epochs: fit.epochs,
                train: fit.config.clone(),
                prior: prior.clone(),
            },
        }
    }

    /// Baseline checkpoint; `dims.latent` is 0.
    pub fn from_baseline<F: Scalar>(
        fit: &VarOlsFit<F>,
        ridge: f64,
        weight_threshold: f64,
        timesteps: usize,
        names: &[String],
    ) -> Self {
        let m = fit.weights.nrows();
        CheckpointDoc {
            format_version: FORMAT_VERSION,
            dims: ModelDims {
                observed: m,
                latent: 0,
                timesteps,
                components: 1,
            },
            names: names.to_vec(),
            body: CheckpointBody::VarOls {
                weights: to_rows(fit.weights.view()),
                intercept: fit.intercept.iter().map(|&v| to_f64(v)).collect(),
                adjacency: fit
                    .adjacency
                    .outer_iter()
                    .map(|r| r.iter().map(|&b| u8::from(b)).collect())
                    .collect(),
                ridge,
                weight_threshold,
            },
        }
    }

    pub fn method(&self) -> &'static str {
        match self.body {
            CheckpointBody::Variational { .. } => "variational",
            CheckpointBody::VarOls { .. } => "var-ols",
        }
    }

    /// Recovered observed adjacency `m × m` at threshold `tau`. Baseline
    /// checkpoints carry their own weight threshold and ignore `tau`.
    pub fn observed_adjacency(&self, tau: f64) -> Result<Array2<bool>> {
        check_version(self.format_version)?;
        let m = self.dims.observed;
        match &self.body {
            CheckpointBody::Variational { state, .. } => {
                let k = self.dims.total();
                let probs: Array2<f64> = from_rows(&state.edge_probs, k, "edge_probs")?;
                expect_dim(&probs, (m, k), "edge_probs")?;
                let mut full = Array2::zeros((k, k));
                full.slice_mut(s![..m, ..]).assign(&probs);
                Ok(observed_block(extract_adjacency(full.view(), m, tau)?.view(), m))
            }
            CheckpointBody::VarOls { adjacency, .. } => {
                let mut out = Array2::from_elem((m, m), false);
                if adjacency.len() != m || adjacency.iter().any(|r| r.len() != m) {
                    return Err(Error::Structure(format!("baseline adjacency must be {m}x{m}")));
                }
                for (i, r) in adjacency.iter().enumerate() {
                    for (j, &v) in r.iter().enumerate() {
                        out[[i, j]] = v != 0;
                    }
                }
                Ok(out)
            }
        }
    }

    /// `ρ̂ · μ̂ʷ` for the latent columns in data units, `m × n`.
    pub fn latent_effects(&self) -> Result<Option<Array2<f64>>> {
        let CheckpointBody::Variational {
            state, standardization, ..
        } = &self.body
        else {
            return Ok(None);
        };
        let (m, k) = (self.dims.observed, self.dims.total());
        let probs: Array2<f64> = from_rows(&state.edge_probs, k, "edge_probs")?;
        let mean: Array2<f64> = from_rows(&state.weight_mean, k, "weight_mean")?;
        expect_dim(&probs, (m, k), "edge_probs")?;
        expect_dim(&mean, (m, k), "weight_mean")?;
        let mut full = Array2::zeros((k, k));
        full.slice_mut(s![..m, ..]).assign(&(&probs * &mean));
        let st = Standardization {
            center: standardization.center.clone(),
            scale: standardization.scale.clone(),
        };
        Ok(Some(st.unscale_matrix(&full).slice(s![..m, m..]).to_owned()))
    }
}

/// Metrics file written by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub format_version: u32,
    pub method: String,
    /// Which part of the adjacency the scores cover.
    pub scope: String,
    pub threshold: f64,
    pub dims: ModelDims,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_match: Option<LatentMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_match_note: Option<String>,
    /// Training configuration echoed from the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

pub const METRICS_SCOPE: &str = "observed-to-observed block A^XX";

/// Scores a checkpoint against a ground truth at edge-probability threshold `tau`.
pub fn evaluate_checkpoint(ckpt: &CheckpointDoc, truth: &GroundTruthDoc, tau: f64) -> Result<MetricsDoc> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("threshold {tau} must lie in (0, 1)")));
    }
    let gt = truth.to_truth::<f64>()?;
    let m = ckpt.dims.observed;
    if m != gt.dims.observed {
        return Err(Error::Structure(format!(
            "checkpoint has {m} observed variables, truth has {}",
            gt.dims.observed
        )));
    }
    let is_variational = matches!(ckpt.body, CheckpointBody::Variational { .. });
    if is_variational && ckpt.dims.latent != gt.dims.latent {
        return Err(Error::Structure(format!(
            "checkpoint has {} latents, truth has {}",
            ckpt.dims.latent, gt.dims.latent
        )));
    }
    let predicted = ckpt.observed_adjacency(tau)?;
    let metrics = prf1(predicted.view(), gt.params.observed_adjacency().view())?;
    let (mut latent_match, mut latent_match_note) = (None, None);
    if let Some(est) = ckpt.latent_effects()? {
        let n = gt.dims.latent;
        if n == 0 {
        } else if n > MAX_MATCH_LATENTS {
            latent_match_note = Some(format!("skipped: {n} latents exceed {MAX_MATCH_LATENTS}"));
        } else {
            let true_effects = (&gt.params.adjacency.mapv(|b| if b { 1.0 } else { 0.0 }) * &gt.params.weights)
                .slice(s![..m, m..])
                .to_owned();
            latent_match = Some(match_latents(est.view(), true_effects.view())?);
        }
    }
    let train = match &ckpt.body {
        CheckpointBody::Variational { train, .. } => Some(train.clone()),
        CheckpointBody::VarOls { .. } => None,
    };
    Ok(MetricsDoc {
        format_version: FORMAT_VERSION,
        method: ckpt.method().to_owned(),
        scope: METRICS_SCOPE.to_owned(),
        threshold: tau,
        dims: ckpt.dims,
        metrics,
        latent_match,
        latent_match_note,
        train,
    })
}
