//! Training loop.

use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use super::init::{residual_pca_latents, LatentInit};
use super::objective::{check_gradient, objective_grad, NoiseDraws};
use super::state::VariationalState;
use crate::error::{Error, Result};
use crate::likelihood::PriorConfig;
use crate::model::{ModelDims, TimeSeriesDataset};
use crate::scalar::{lit, Scalar};

/// Objective values above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Minimum decrease that resets the patience counter.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

/// Per-column affine map applied to the data before fitting:
/// `x' = (x − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization<F: Scalar> {
    pub center: Vec<F>,
    pub scale: Vec<F>,
}

impl<F: Scalar> Standardization<F> {
    pub fn identity(m: usize) -> Self {
        Standardization {
            center: vec![F::zero(); m],
            scale: vec![F::one(); m],
        }
    }

    /// Column means and sample standard deviations; constant columns keep scale 1.
    pub fn from_data(data: ArrayView2<F>) -> Self {
        let (t, m) = data.dim();
        let mut center = Vec::with_capacity(m);
        let mut scale = Vec::with_capacity(m);
        let tn: F = lit(t as f64);
        for col in data.columns() {
            let mean = col.iter().copied().sum::<F>() / tn;
            let ss: F = col.iter().map(|&x| (x - mean) * (x - mean)).sum();
            let sd = if t > 1 { (ss / lit((t - 1) as f64)).sqrt() } else { F::zero() };
            center.push(mean);
            scale.push(if sd > F::zero() && sd.is_finite() { sd } else { F::one() });
        }
        Standardization { center, scale }
    }

    pub fn apply(&self, data: ArrayView2<F>) -> Array2<F> {
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| (x - self.center[j]) / self.scale[j]);
        }
        out
    }

    /// Converts a `k × k` matrix of lag coefficients fitted on standardized
    /// data back to the original units of the observed columns.
    pub fn unscale_matrix(&self, w: &Array2<F>) -> Array2<F> {
        let m = self.scale.len();
        let mut out = w.clone();
        for ((i, j), v) in out.indexed_iter_mut() {
            let di = if i < m { self.scale[i] } else { F::one() };
            let dj = if j < m { self.scale[j] } else { F::one() };
            *v = *v * di / dj;
        }
        out
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FittedModel<F: Scalar> {
    pub state: VariationalState<F>,
    /// Objective value at every completed epoch.
    pub trace: Vec<f64>,
    pub dims: ModelDims,
    pub config: TrainConfig,
    pub epochs: usize,
    pub elapsed: Duration,
    pub standardization: Standardization<F>,
}

impl<F: Scalar> FittedModel<F> {
    /// Edge probabilities in `(m+n)×(m+n)` layout.
    pub fn edge_probs(&self) -> Array2<F> {
        self.state.edge_prob_matrix()
    }

    /// Posterior-mean `A ⊙ W` proxy `ρ̂ · μ̂ʷ` in the units of the input data.
    pub fn expected_causal_matrix(&self) -> Array2<F> {
        let probs = self.state.edge_prob_matrix();
        let w = self.state.weight_mean_matrix();
        self.standardization.unscale_matrix(&(&probs * &w))
    }

    /// Latent effects block `m × n` of [`expected_causal_matrix`](Self::expected_causal_matrix).
    pub fn latent_effects(&self) -> Array2<F> {
        let m = self.dims.observed;
        self.expected_causal_matrix().slice(s![..m, m..]).to_owned()
    }

    /// Mean of the first and last `window` trace entries.
    pub fn smoothed_endpoints(&self, window: usize) -> Option<(f64, f64)> {
        if self.trace.is_empty() || window == 0 {
            return None;
        }
        let w = window.min(self.trace.len());
        let head = self.trace[..w].iter().sum::<f64>() / w as f64;
        let tail = self.trace[self.trace.len() - w..].iter().sum::<f64>() / w as f64;
        Some((head, tail))
    }
}

fn to_f64_state<F: Scalar>(s: &VariationalState<F>) -> Result<VariationalState<f64>> {
    let mut out = VariationalState::zeros(s.dims);
    let flat: Vec<f64> = s.to_flat().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    out.set_flat(&flat)?;
    Ok(out)
}

fn run_grad_check<F: Scalar>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    prior: &PriorConfig,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let state64 = to_f64_state(state)?;
    let data64 = data.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let settings = config.settings_at(0, prior);
    let draws: Vec<_> = (0..settings.mc_samples)
        .map(|_| NoiseDraws::<f64>::sample(&state.dims, rng))
        .collect();
    // every block is probed, spread evenly across at most 256 coordinates
    let len = state64.len();
    let stride = len.div_ceil(256).max(1);
    let coords: Vec<usize> = (0..len).step_by(stride).collect();
    let bad = check_gradient(data64.view(), &state64, &settings, &draws, 1e-5, 1e-4, 1e-6, Some(&coords))?;
    if let Some(first) = bad.first() {
        return Err(Error::Numerical(format!(
            "gradient check failed on {} coordinates; first {}[{}]: analytic {} vs numeric {}",
            bad.len(),
            first.block,
            first.index,
            first.analytic,
            first.numeric
        )));
    }
    log::debug!("gradient check passed on {} coordinates", coords.len());
    Ok(())
}

/// Fits the variational posterior to `dataset` by Adam on the Monte-Carlo
/// objective, drawing fresh noise at every epoch.
pub fn fit<F: Scalar>(
    dataset: &TimeSeriesDataset<F>,
    dims: ModelDims,
    prior: &PriorConfig,
    config: &TrainConfig,
) -> Result<FittedModel<F>> {
    dims.check()?;
    config.validate()?;
    prior.validate(dims.total())?;
    if dataset.data.is_empty() {
        return Err(Error::Structure("dataset is empty".into()));
    }
    dataset.check()?;
    if dataset.observed() != dims.observed || dataset.timesteps() != dims.timesteps {
        return Err(Error::Structure(format!(
            "dataset is {}x{}, dims expect {}x{}",
            dataset.timesteps(),
            dataset.observed(),
            dims.timesteps,
            dims.observed
        )));
    }

    let started = Instant::now();
    let standardization = if config.standardize {
        Standardization::from_data(dataset.data.view())
    } else {
        Standardization::identity(dims.observed)
    };
    let data = standardization.apply(dataset.data.view());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = VariationalState::initial(dims, &mut rng)?;
    if config.latent_init == LatentInit::ResidualPca {
        state.latent_mean = residual_pca_latents(data.view(), dims.latent)?;
    }
    if config.grad_check {
        run_grad_check(data.view(), &state, prior, config, &mut rng)?;
    }

    let mut adam = Adam::new(state.len(), lit::<F>(config.learning_rate));
    let mut params = state.to_flat();
    let mut trace = Vec::with_capacity(config.max_epochs);
    let settled = config.settled_epoch();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        let settings = config.settings_at(epoch, prior);
        let (value, grad) = match objective_grad(data.view(), &state, &settings, &mut rng) {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                return Err(Error::Divergence {
                    epoch,
                    reason: e.to_string(),
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        let v = value.value.to_f64().unwrap_or(f64::NAN);
        trace.push(v);
        if !v.is_finite() || v > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                reason: format!("objective {v} outside the finite range"),
                trace,
            });
        }
        if !grad.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "gradient is not finite".into(),
                trace,
            });
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch} objective {v:.6} temperature {:.4}", settings.temperature);
        }

        if v < best - IMPROVEMENT_TOL {
            best = v;
            stale = 0;
        } else if epoch >= settled {
            stale += 1;
        }
        if config.patience > 0 && epoch >= settled && stale >= config.patience {
            log::debug!("early stop at epoch {epoch}");
            break;
        }

        adam.update(&mut params, &grad.to_flat());
        state.set_flat(&params)?;
    }

    let epochs = trace.len();
    if let Some(last) = trace.last() {
        log::debug!("finished after {epochs} epochs, objective {last:.6}");
    }
    Ok(FittedModel {
        state,
        trace,
        dims,
        config: config.clone(),
        epochs,
        elapsed: started.elapsed(),
        standardization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardization_roundtrip() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let s = Standardization::from_data(x.view());
        assert_eq!(s.center, vec![3.0, 5.0]);
        assert_eq!(s.scale, vec![2.0, 1.0]);
        let y = s.apply(x.view());
        assert_eq!(y.column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(y.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn unscale_converts_coefficients() {
        // x1' = w' x2' with x_i = d_i x_i' gives x1 = w' d1/d2 x2
        let s = Standardization {
            center: vec![0.0, 0.0],
            scale: vec![2.0, 4.0],
        };
        let w = array![[0.0, 0.8, 0.3], [0.0, 0.0, 0.0], [0.0, 0.0, 0.5]];
        let u = s.unscale_matrix(&w);
        assert_eq!(u[[0, 1]], 0.4);
        assert_eq!(u[[0, 2]], 0.6);
        assert_eq!(u[[2, 2]], 0.5);
    }

    #[test]
    fn rejects_mismatched_dims() {
        let ds = TimeSeriesDataset::new(Array2::<f64>::zeros((5, 2)), TimeSeriesDataset::<f64>::default_names(2)).unwrap();
        let dims = ModelDims::new(3, 0, 5, 1).unwrap();
        let err = fit(&ds, dims, &PriorConfig::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn short_run_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((40, 2), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let ds = TimeSeriesDataset::new(data, TimeSeriesDataset::<f64>::default_names(2)).unwrap();
        let dims = ModelDims::new(2, 1, 40, 2).unwrap();
        let config = TrainConfig {
            max_epochs: 30,
            grad_check: true,
            ..TrainConfig::default()
        };
        let a = fit(&ds, dims, &PriorConfig::default(), &config).unwrap();
        let b = fit(&ds, dims, &PriorConfig::default(), &config).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.len() <= 30);
        assert_eq!(a.epochs, a.trace.len());
    }

    #[test]
    fn patience_stops_early() {
        let data = Array2::from_shape_fn((20, 1), |(t, _)| (t as f64 * 0.7).sin());
        let ds = TimeSeriesDataset::new(data, TimeSeriesDataset::<f64>::default_names(1)).unwrap();
        let dims = ModelDims::new(1, 0, 20, 1).unwrap();
        let config = TrainConfig {
            max_epochs: 5000,
            patience: 5,
            learning_rate: 1e-9,
            temperature: super::super::config::TemperatureSchedule::constant(0.5),
            ..TrainConfig::default()
        };
        let f = fit(&ds, dims, &PriorConfig::default(), &config).unwrap();
        assert!(f.epochs < 5000);
    }

    #[test]
    fn divergence_reports_trace() {
        let data = Array2::from_shape_fn((20, 1), |(t, _)| 1e7 * (t as f64 + 1.0));
        let ds = TimeSeriesDataset::new(data, TimeSeriesDataset::<f64>::default_names(1)).unwrap();
        let dims = ModelDims::new(1, 0, 20, 1).unwrap();
        let config = TrainConfig {
            max_epochs: 10,
            standardize: false,
            ..TrainConfig::default()
        };
        match fit(&ds, dims, &PriorConfig::default(), &config) {
            Err(Error::Divergence { trace, epoch, .. }) => {
                assert_eq!(epoch, 0);
                assert_eq!(trace.len(), 1);
                assert!(trace[0] > DIVERGENCE_LIMIT);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
