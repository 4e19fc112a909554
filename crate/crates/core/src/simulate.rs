//! Synthetic ground-truth models and lag-1 series rollouts.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    causal_matrix, spectral_radius, CausalParams, GmmNoiseParams, GroundTruth, MixtureParams, ModelDims,
    NoiseModel, TimeSeriesDataset,
};
use crate::scalar::{lit, Scalar};

/// Noise family used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// Random per-variable Gaussian mixtures.
    Gmm { components: usize },
    /// `U(0, 1)`
    Uniform,
    /// `χ²` with 2 degrees of freedom.
    ChiSquare,
}

impl Default for NoiseKind {
    fn default() -> Self {
        NoiseKind::Gmm { components: 5 }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(NoiseKind::Gmm { components: 5 }),
            "uniform" => Ok(NoiseKind::Uniform),
            "chi_square" | "chi-square" | "chisquare" => Ok(NoiseKind::ChiSquare),
            other => Err(Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

fn default_weight_mean_range() -> (f64, f64) {
    (0.5, 0.9)
}
fn default_weight_std_range() -> (f64, f64) {
    (0.001, 0.01)
}
fn default_cap() -> f64 {
    0.95
}
fn default_burn_in() -> usize {
    100
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub observed: usize,
    /// Latent count; `round(latent_ratio · observed)` when absent.
    #[serde(default)]
    pub latent: Option<usize>,
    pub timesteps: usize,
    pub avg_in_degree: f64,
    #[serde(default)]
    pub latent_ratio: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default = "default_weight_mean_range")]
    pub weight_mean_range: (f64, f64),
    #[serde(default = "default_weight_std_range")]
    pub weight_std_range: (f64, f64),
    #[serde(default = "default_cap")]
    pub stationarity_cap: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GenConfig {
    /// Defaults with the given sizes.
    pub fn new(observed: usize, latent_ratio: f64, timesteps: usize, avg_in_degree: f64) -> Self {
        GenConfig {
            observed,
            latent: None,
            timesteps,
            avg_in_degree,
            latent_ratio,
            noise: NoiseKind::default(),
            weight_mean_range: default_weight_mean_range(),
            weight_std_range: default_weight_std_range(),
            stationarity_cap: default_cap(),
            burn_in: default_burn_in(),
            seed: 0,
        }
    }

    pub fn latent_count(&self) -> usize {
        self.latent
            .unwrap_or_else(|| (self.latent_ratio * self.observed as f64).round() as usize)
    }

    pub fn dims(&self) -> Result<ModelDims> {
        let components = match self.noise {
            NoiseKind::Gmm { components } => components,
            _ => 1,
        };
        ModelDims::new(self.observed, self.latent_count(), self.timesteps, components)
    }

    /// Bernoulli parameter giving expected in-degree `avg_in_degree`.
    pub fn edge_probability(&self) -> f64 {
        self.avg_in_degree / (self.observed + self.latent_count()) as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if !(self.avg_in_degree > 0.0) || !self.avg_in_degree.is_finite() {
            return Err(Error::Config("avg_in_degree must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.latent_ratio) {
            return Err(Error::Config("latent_ratio must lie in [0, 1]".into()));
        }
        let p = self.edge_probability();
        if p > 1.0 {
            return Err(Error::Config(format!(
                "edge probability exceeds 1 ({p:.3}): use a smaller avg_in_degree or more variables"
            )));
        }
        for (name, (lo, hi)) in [
            ("weight_mean_range", self.weight_mean_range),
            ("weight_std_range", self.weight_std_range),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("{name} is not a valid interval")));
            }
        }
        if self.weight_std_range.0 < 0.0 {
            return Err(Error::Config("weight_std_range must be non-negative".into()));
        }
        if !(self.stationarity_cap > 0.0 && self.stationarity_cap < 1.0) {
            return Err(Error::Config("stationarity_cap must lie in (0, 1)".into()));
        }
        if let NoiseKind::Gmm { components: 0 } = self.noise {
            return Err(Error::Config("gmm noise needs at least one component".into()));
        }
        Ok(())
    }
}

/// A sampled model plus the stationarity rescaling that was applied.
#[derive(Debug, Clone)]
pub struct GeneratedTruth<F: Scalar> {
    pub truth: GroundTruth<F>,
    /// Factor applied to `W`; 1 when no rescale was needed.
    pub rescale_factor: f64,
    /// Spectral radius of `A ⊙ W` before rescaling.
    pub raw_spectral_radius: f64,
}

const LATENT_AR_FLOOR: f64 = 0.05;

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws `A`, `W` and noise parameters.
pub fn sample_ground_truth<F: Scalar, R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Result<GeneratedTruth<F>> {
    config.validate()?;
    let dims = config.dims()?;
    let (m, n) = (dims.observed, dims.latent);
    let k = m + n;
    let p_edge = config.edge_probability();

    let mut adjacency = Array2::from_elem((k, k), false);
    for i in 0..m {
        for j in 0..k {
            adjacency[[i, j]] = rng.random_bool(p_edge);
        }
    }
    for i in m..k {
        adjacency[[i, i]] = true;
    }

    let w_mean = uniform(rng, config.weight_mean_range);
    let w_std = uniform(rng, config.weight_std_range);
    let mut weights = Array2::<f64>::zeros((k, k));
    for i in 0..m {
        for j in 0..k {
            let g: f64 = rng.sample(StandardNormal);
            weights[[i, j]] = w_mean + w_std * g;
        }
    }
    for i in m..k {
        let g: f64 = rng.sample(StandardNormal);
        let w = w_mean + w_std * g;
        weights[[i, i]] = if w.abs() < LATENT_AR_FLOOR {
            LATENT_AR_FLOOR.copysign(if w == 0.0 { 1.0 } else { w })
        } else {
            w
        };
    }

    let params64 = CausalParams::new(adjacency.clone(), weights.clone(), m)?;
    let radius = spectral_radius(causal_matrix(&params64).view(), 1e-12)?;
    let mut factor = 1.0;
    if radius > config.stationarity_cap {
        factor = config.stationarity_cap / radius * (1.0 - 1e-9);
        weights.mapv_inplace(|w| w * factor);
    }

    let noise = match config.noise {
        NoiseKind::Gmm { components } => NoiseModel::Gmm(GmmNoiseParams {
            observed: random_mixture(m, components, rng),
            latent: random_mixture(n, components, rng),
        }),
        NoiseKind::Uniform => NoiseModel::Uniform {
            low: F::zero(),
            high: F::one(),
        },
        NoiseKind::ChiSquare => NoiseModel::ChiSquare { df: lit(2.0) },
    };

    let params = CausalParams::new(adjacency, weights.mapv(lit::<F>), m)?;
    let truth = GroundTruth {
        params,
        latent_path: Array2::zeros((dims.timesteps, n)),
        noise,
        dims,
    };
    truth.check()?;
    Ok(GeneratedTruth {
        truth,
        rescale_factor: factor,
        raw_spectral_radius: radius,
    })
}

/// Dirichlet(1) weights, means in `[-2, 2]`, scales in `[0.1, 1]`.
fn random_mixture<F: Scalar, R: Rng + ?Sized>(rows: usize, components: usize, rng: &mut R) -> MixtureParams<F> {
    let mut weights = Array2::zeros((rows, components));
    let mut means = Array2::zeros((rows, components));
    let mut scales = Array2::zeros((rows, components));
    for i in 0..rows {
        let raw: Vec<f64> = (0..components).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = raw.iter().sum();
        for c in 0..components {
            weights[[i, c]] = lit(raw[c] / total);
            means[[i, c]] = lit(rng.random_range(-2.0..=2.0));
            scales[[i, c]] = lit(rng.random_range(0.1..=1.0));
        }
    }
    MixtureParams {
        weights,
        means,
        scales,
    }
}

/// Noise law of a single variable.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFamily<F: Scalar> {
    Gmm { weights: Vec<F>, means: Vec<F>, scales: Vec<F> },
    Uniform { low: F, high: F },
    ChiSquare { df: F },
}

impl<F: Scalar> NoiseFamily<F> {
    /// Family of observed (`latent == false`) or latent variable `index`.
    pub fn of(model: &NoiseModel<F>, latent: bool, index: usize) -> Self {
        match model {
            NoiseModel::Gmm(g) => {
                let p = if latent { &g.latent } else { &g.observed };
                NoiseFamily::Gmm {
                    weights: p.weights.row(index).to_vec(),
                    means: p.means.row(index).to_vec(),
                    scales: p.scales.row(index).to_vec(),
                }
            }
            NoiseModel::Uniform { low, high } => NoiseFamily::Uniform { low: *low, high: *high },
            NoiseModel::ChiSquare { df } => NoiseFamily::ChiSquare { df: *df },
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            NoiseFamily::Gmm { weights, means, scales } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != scales.len() {
                    return Err(Error::Structure("mixture component vectors disagree".into()));
                }
                if scales.iter().any(|&s| !(s > F::zero())) {
                    return Err(Error::Domain("mixture scales must be positive".into()));
                }
            }
            NoiseFamily::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::Domain("uniform noise needs low < high".into()));
                }
            }
            NoiseFamily::ChiSquare { df } => {
                if !(*df > F::zero()) {
                    return Err(Error::Domain("chi-square degrees of freedom must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match self {
            NoiseFamily::Gmm { weights, means, scales } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = weights.len() - 1;
                for (c, w) in weights.iter().enumerate() {
                    acc += w.to_f64().unwrap_or(0.0);
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                let g: f64 = rng.sample(StandardNormal);
                means[pick] + scales[pick] * lit(g)
            }
            NoiseFamily::Uniform { low, high } => {
                let u: f64 = rng.random();
                *low + (*high - *low) * lit(u)
            }
            NoiseFamily::ChiSquare { df } => {
                let d = ChiSquared::new(df.to_f64().unwrap_or(2.0)).expect("validated df");
                lit(d.sample(rng))
            }
        }
    }
}

/// `count` i.i.d. draws from `family`. Mixture draws pick a component first.
pub fn sample_noise<F: Scalar, R: Rng + ?Sized>(family: &NoiseFamily<F>, count: usize, rng: &mut R) -> Result<Vec<F>> {
    if count == 0 {
        return Err(Error::Structure("noise sample count must be at least 1".into()));
    }
    family.check()?;
    Ok((0..count).map(|_| family.draw(rng)).collect())
}

/// Rolls `state(t) = M · state(t-1) + noise(t, i)` forward from `initial`.
///
/// Returns `steps × k` with row 0 equal to `initial`.
pub fn rollout<F: Scalar>(
    matrix: ArrayView2<F>,
    initial: &[F],
    steps: usize,
    mut noise: impl FnMut(usize, usize) -> F,
) -> Result<Array2<F>> {
    let k = initial.len();
    if matrix.dim() != (k, k) {
        return Err(Error::Structure(format!(
            "transition is {:?}, state has {k} entries",
            matrix.dim()
        )));
    }
    let mut out = Array2::zeros((steps, k));
    if steps == 0 {
        return Ok(out);
    }
    out.row_mut(0).assign(&ndarray::ArrayView1::from(initial));
    for t in 1..steps {
        for i in 0..k {
            let mut v = F::zero();
            for j in 0..k {
                let a = matrix[[i, j]];
                if a != F::zero() {
                    v += a * out[[t - 1, j]];
                }
            }
            v += noise(t, i);
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite value at timestep {t}, variable {i}: non-stationary configuration"
                )));
            }
            out[[t, i]] = v;
        }
    }
    Ok(out)
}

/// Simulates `burn_in + timesteps` steps from pure-noise initial values and
/// keeps the last `timesteps` rows.
pub fn simulate_series<F: Scalar, R: Rng + ?Sized>(
    truth: &GroundTruth<F>,
    timesteps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<TimeSeriesDataset<F>> {
    let mut dims = truth.dims;
    dims.timesteps = timesteps;
    dims.check()?;
    crate::model::validate_block_structure(&truth.params, &dims)?;
    let (m, n) = (dims.observed, dims.latent);
    let families: Vec<NoiseFamily<F>> = (0..m)
        .map(|i| NoiseFamily::of(&truth.noise, false, i))
        .chain((0..n).map(|i| NoiseFamily::of(&truth.noise, true, i)))
        .collect();
    for f in &families {
        f.check()?;
    }
    let initial: Vec<F> = families.iter().map(|f| f.draw(rng)).collect();
    let transition = causal_matrix(&truth.params);
    let total = burn_in + timesteps;
    let path = rollout(transition.view(), &initial, total, |_, i| families[i].draw(rng))?;
    let kept = path.slice(ndarray::s![burn_in.., ..]);
    let data = kept.slice(ndarray::s![.., ..m]).to_owned();
    let latent_path = kept.slice(ndarray::s![.., m..]).to_owned();
    let mut ds = TimeSeriesDataset::new(data, TimeSeriesDataset::<F>::default_names(m))?;
    ds.truth = Some(GroundTruth {
        params: truth.params.clone(),
        latent_path,
        noise: truth.noise.clone(),
        dims,
    });
    Ok(ds)
}

/// Ground truth and a series of `config.timesteps` rows, both drawn from
/// one generator seeded with `config.seed`. The returned truth carries the
/// simulated latent path.
pub fn generate<F: Scalar>(config: &GenConfig) -> Result<(GeneratedTruth<F>, TimeSeriesDataset<F>)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut generated = sample_ground_truth(config, &mut rng)?;
    let dataset = simulate_series(&generated.truth, config.timesteps, config.burn_in, &mut rng)?;
    if let Some(t) = &dataset.truth {
        generated.truth.latent_path = t.latent_path.clone();
    }
    Ok((generated, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn latent_count_from_ratio() {
        let c = GenConfig::new(5, 0.4, 100, 1.25);
        assert_eq!(c.latent_count(), 2);
        let c = GenConfig::new(20, 0.4, 100, 1.25);
        assert_eq!(c.latent_count(), 8);
    }

    #[test]
    fn saturated_degree_gives_full_blocks() {
        let mut c = GenConfig::new(4, 0.5, 50, 6.0);
        c.seed = 1;
        assert_eq!(c.edge_probability(), 1.0);
        let g = sample_ground_truth::<f64, _>(&c, &mut rng(3)).unwrap();
        let a = &g.truth.params.adjacency;
        for i in 0..4 {
            for j in 0..6 {
                assert!(a[[i, j]]);
            }
        }
    }

    #[test]
    fn excessive_degree_rejected() {
        let mut c = GenConfig::new(20, 0.4, 100, 200.0);
        c.latent = Some(8);
        let err = sample_ground_truth::<f64, _>(&c, &mut rng(0)).unwrap_err();
        assert!(err.to_string().contains("edge probability exceeds 1"), "{err}");
    }

    #[test]
    fn stationarity_over_random_configs() {
        let mut r = rng(11);
        for s in 0..100u64 {
            let m = 2 + (s as usize % 9);
            let d = [0.75, 1.0, 1.25, 1.5, 1.75][s as usize % 5];
            let ratio = [0.2, 0.3, 0.4, 0.5, 0.6][(s as usize / 5) % 5];
            let mut c = GenConfig::new(m, ratio, 50, d);
            c.weight_mean_range = (0.5, 0.9);
            if c.edge_probability() > 1.0 {
                continue;
            }
            let g = sample_ground_truth::<f64, _>(&c, &mut r).unwrap();
            let rho = spectral_radius(causal_matrix(&g.truth.params).view(), 1e-12).unwrap();
            assert!(rho <= 0.95, "radius {rho}");
            for v in g.truth.params.latent_ar() {
                assert!(v.abs() > 0.0);
            }
        }
    }

    #[test]
    fn in_degree_matches_target() {
        let c = GenConfig::new(20, 0.4, 50, 1.25);
        let mut total = 0.0;
        let seeds = 50;
        for s in 0..seeds {
            let g = sample_ground_truth::<f64, _>(&c, &mut rng(s)).unwrap();
            let a = &g.truth.params.adjacency;
            let edges = (0..20).map(|i| (0..28).filter(|&j| a[[i, j]]).count()).sum::<usize>();
            total += edges as f64 / 20.0;
        }
        let mean = total / seeds as f64;
        assert!((mean - 1.25).abs() <= 0.125, "mean in-degree {mean}");
    }

    #[test]
    fn uniform_and_chi_square_means() {
        let n = 100_000;
        let u = sample_noise(&NoiseFamily::Uniform { low: 0.0, high: 1.0 }, n, &mut rng(1)).unwrap();
        let mean = u.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let c = sample_noise(&NoiseFamily::ChiSquare { df: 2.0 }, n, &mut rng(2)).unwrap();
        let mean = c.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.05);
    }

    fn std_normal_cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    fn erfc(x: f64) -> f64 {
        // Numerical Recipes erfcc, fractional error < 1.2e-7.
        let z = x.abs();
        let t = 1.0 / (1.0 + 0.5 * z);
        let r = t * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
        if x >= 0.0 {
            r
        } else {
            2.0 - r
        }
    }

    #[test]
    fn single_component_mixture_is_standard_normal() {
        let fam = NoiseFamily::Gmm {
            weights: vec![1.0],
            means: vec![0.0],
            scales: vec![1.0],
        };
        let n = 100_000;
        let mut xs = sample_noise(&fam, n, &mut rng(5)).unwrap();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = std_normal_cdf(x);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn sample_noise_errors() {
        let fam = NoiseFamily::Uniform { low: 0.0f64, high: 1.0 };
        assert!(sample_noise(&fam, 0, &mut rng(0)).is_err());
        assert!("laplace".parse::<NoiseKind>().is_err());
        assert_eq!("uniform".parse::<NoiseKind>().unwrap(), NoiseKind::Uniform);
    }

    #[test]
    fn constant_noise_process() {
        let m = Array2::<f64>::zeros((3, 3));
        let path = rollout(m.view(), &[1.5, 1.5, 1.5], 20, |_, _| 1.5).unwrap();
        assert!(path.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn scalar_ar_hand_rollout() {
        let m = array![[0.5f64]];
        let path = rollout(m.view(), &[1.0], 6, |_, _| 0.0).unwrap();
        let expect = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];
        for (t, e) in expect.iter().enumerate() {
            assert_eq!(path[[t, 0]], *e);
        }
    }

    #[test]
    fn explosive_rollout_errors_with_timestep() {
        let m = array![[1e200f64]];
        let err = rollout(m.view(), &[1e200], 10, |_, _| 0.0).unwrap_err();
        assert!(err.to_string().contains("timestep 1"), "{err}");
    }

    #[test]
    fn shapes_and_determinism() {
        let mut c = GenConfig::new(20, 0.4, 1000, 1.25);
        c.latent = Some(8);
        let make = |seed| {
            let mut r = rng(seed);
            let g = sample_ground_truth::<f64, _>(&c, &mut r).unwrap();
            simulate_series(&g.truth, 1000, c.burn_in, &mut r).unwrap()
        };
        let a = make(9);
        assert_eq!(a.data.dim(), (1000, 20));
        assert_eq!(a.truth.as_ref().unwrap().latent_path.dim(), (1000, 8));
        let b = make(9);
        assert_eq!(a, b);
        assert_ne!(a, make(10));
    }

    #[test]
    fn long_series_variance_bounded() {
        let mut c = GenConfig::new(5, 0.4, 5000, 1.25);
        c.noise = NoiseKind::Gmm { components: 5 };
        let mut r = rng(21);
        let g = sample_ground_truth::<f64, _>(&c, &mut r).unwrap();
        // Zero-mean unit Gaussian noise on every variable.
        let mut truth = g.truth.clone();
        truth.noise = NoiseModel::Gmm(GmmNoiseParams {
            observed: MixtureParams::single(5, 0.0, 1.0),
            latent: MixtureParams::single(2, 0.0, 1.0),
        });
        let ds = simulate_series(&truth, 5000, 100, &mut r).unwrap();
        for col in ds.data.columns() {
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            assert!(var.is_finite() && var < 1e3, "variance {var}");
        }
    }
}
