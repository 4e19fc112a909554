//! Mean-field variational parameters, stored unconstrained.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{MixtureParams, ModelDims};
use crate::scalar::{lit, sigmoid, softmax_into, softplus, softplus_inv, Scalar};

/// Unconstrained mixture parameters: softmax logits, means, softplus-scales.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMixture<F: Scalar> {
    pub logits: Array2<F>,
    pub means: Array2<F>,
    pub scale_raw: Array2<F>,
}

impl<F: Scalar> RawMixture<F> {
    fn zeros(rows: usize, c: usize) -> Self {
        RawMixture {
            logits: Array2::zeros((rows, c)),
            means: Array2::zeros((rows, c)),
            scale_raw: Array2::zeros((rows, c)),
        }
    }

    /// Uniform weights, means spread over `[-1, 1]`, unit scales.
    fn initial(rows: usize, c: usize) -> Self {
        let mut r = Self::zeros(rows, c);
        let raw_one = softplus_inv(F::one());
        for i in 0..rows {
            for k in 0..c {
                r.means[[i, k]] = if c == 1 {
                    F::zero()
                } else {
                    lit::<F>(-1.0 + 2.0 * k as f64 / (c - 1) as f64)
                };
                r.scale_raw[[i, k]] = raw_one;
            }
        }
        r
    }

    pub fn from_constrained(p: &MixtureParams<F>) -> Self {
        RawMixture {
            logits: p.weights.mapv(|w| w.ln()),
            means: p.means.clone(),
            scale_raw: p.scales.mapv(softplus_inv),
        }
    }

    pub fn constrained(&self) -> MixtureParams<F> {
        let (rows, c) = self.logits.dim();
        let mut weights = Array2::zeros((rows, c));
        let mut buf = vec![F::zero(); c];
        for i in 0..rows {
            let logits: Vec<F> = self.logits.row(i).to_vec();
            softmax_into(&logits, &mut buf);
            for k in 0..c {
                weights[[i, k]] = buf[k];
            }
        }
        MixtureParams {
            weights,
            means: self.means.clone(),
            scales: self.scale_raw.mapv(softplus),
        }
    }
}

/// Variational posterior `q(A) q(W) q(Z)` plus the learned noise mixtures.
///
/// Edge and weight blocks cover the estimated region: observed rows × all
/// `m + n` columns. Latent self-coefficients have their own Gaussian factor.
/// Positive quantities are stored through softplus, probabilities as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState<F: Scalar> {
    pub dims: ModelDims,
    /// `m × (m+n)` logits of `ρ̂`.
    pub edge_logits: Array2<F>,
    pub weight_mean: Array2<F>,
    pub weight_scale_raw: Array2<F>,
    /// Latent autoregressive coefficients, `n`.
    pub latent_ar_mean: Array1<F>,
    pub latent_ar_scale_raw: Array1<F>,
    /// `T × n`
    pub latent_mean: Array2<F>,
    pub latent_scale_raw: Array2<F>,
    pub obs_noise: RawMixture<F>,
    pub latent_noise: RawMixture<F>,
}

/// Names of the parameter blocks in flattening order.
pub const BLOCK_NAMES: [&str; 13] = [
    "edge_logits",
    "weight_mean",
    "weight_scale_raw",
    "latent_ar_mean",
    "latent_ar_scale_raw",
    "latent_mean",
    "latent_scale_raw",
    "obs_noise.logits",
    "obs_noise.means",
    "obs_noise.scale_raw",
    "latent_noise.logits",
    "latent_noise.means",
    "latent_noise.scale_raw",
];

impl<F: Scalar> VariationalState<F> {
    /// All-zero parameters of the right shapes (used for gradients).
    pub fn zeros(dims: ModelDims) -> Self {
        let (m, n, t, c) = (dims.observed, dims.latent, dims.timesteps, dims.components);
        let k = m + n;
        VariationalState {
            dims,
            edge_logits: Array2::zeros((m, k)),
            weight_mean: Array2::zeros((m, k)),
            weight_scale_raw: Array2::zeros((m, k)),
            latent_ar_mean: Array1::zeros(n),
            latent_ar_scale_raw: Array1::zeros(n),
            latent_mean: Array2::zeros((t, n)),
            latent_scale_raw: Array2::zeros((t, n)),
            obs_noise: RawMixture::zeros(m, c),
            latent_noise: RawMixture::zeros(n, c),
        }
    }

    /// Starting point: `ρ̂ = 0.5`, `μ̂ʷ ~ U[-0.1, 0.1]`, `σ̂ʷ = 0.1`,
    /// `q(Z) = N(0, 1)`, uniform-weight unit-scale mixtures.
    pub fn initial<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.check()?;
        let mut s = Self::zeros(dims);
        let w_raw = softplus_inv(lit::<F>(0.1));
        s.weight_mean.mapv_inplace(|_| lit(rng.random_range(-0.1..=0.1)));
        s.weight_scale_raw.fill(w_raw);
        s.latent_ar_mean.mapv_inplace(|_| lit(rng.random_range(-0.1..=0.1)));
        s.latent_ar_scale_raw.fill(w_raw);
        s.latent_scale_raw.fill(softplus_inv(F::one()));
        s.obs_noise = RawMixture::initial(dims.observed, dims.components);
        s.latent_noise = RawMixture::initial(dims.latent, dims.components);
        Ok(s)
    }

    /// `ρ̂`, `m × (m+n)`.
    pub fn edge_probs(&self) -> Array2<F> {
        self.edge_logits.mapv(sigmoid)
    }

    /// `ρ̂` embedded in an `(m+n)×(m+n)` matrix: latent rows carry the fixed
    /// diagonal self-loop and zeros elsewhere.
    pub fn edge_prob_matrix(&self) -> Array2<F> {
        let (m, n) = (self.dims.observed, self.dims.latent);
        let k = m + n;
        let mut out = Array2::zeros((k, k));
        out.slice_mut(ndarray::s![..m, ..]).assign(&self.edge_probs());
        for i in m..k {
            out[[i, i]] = F::one();
        }
        out
    }

    pub fn weight_std(&self) -> Array2<F> {
        self.weight_scale_raw.mapv(softplus)
    }

    pub fn latent_ar_std(&self) -> Array1<F> {
        self.latent_ar_scale_raw.mapv(softplus)
    }

    pub fn latent_std(&self) -> Array2<F> {
        self.latent_scale_raw.mapv(softplus)
    }

    /// Posterior-mean weights in `(m+n)×(m+n)` layout.
    pub fn weight_mean_matrix(&self) -> Array2<F> {
        let (m, n) = (self.dims.observed, self.dims.latent);
        let k = m + n;
        let mut out = Array2::zeros((k, k));
        out.slice_mut(ndarray::s![..m, ..]).assign(&self.weight_mean);
        for i in 0..n {
            out[[m + i, m + i]] = self.latent_ar_mean[i];
        }
        out
    }

    fn slices(&self) -> [&[F]; 13] {
        [
            self.edge_logits.as_slice().expect("standard layout"),
            self.weight_mean.as_slice().expect("standard layout"),
            self.weight_scale_raw.as_slice().expect("standard layout"),
            self.latent_ar_mean.as_slice().expect("standard layout"),
            self.latent_ar_scale_raw.as_slice().expect("standard layout"),
            self.latent_mean.as_slice().expect("standard layout"),
            self.latent_scale_raw.as_slice().expect("standard layout"),
            self.obs_noise.logits.as_slice().expect("standard layout"),
            self.obs_noise.means.as_slice().expect("standard layout"),
            self.obs_noise.scale_raw.as_slice().expect("standard layout"),
            self.latent_noise.logits.as_slice().expect("standard layout"),
            self.latent_noise.means.as_slice().expect("standard layout"),
            self.latent_noise.scale_raw.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [F]; 13] {
        [
            self.edge_logits.as_slice_mut().expect("standard layout"),
            self.weight_mean.as_slice_mut().expect("standard layout"),
            self.weight_scale_raw.as_slice_mut().expect("standard layout"),
            self.latent_ar_mean.as_slice_mut().expect("standard layout"),
            self.latent_ar_scale_raw.as_slice_mut().expect("standard layout"),
            self.latent_mean.as_slice_mut().expect("standard layout"),
            self.latent_scale_raw.as_slice_mut().expect("standard layout"),
            self.obs_noise.logits.as_slice_mut().expect("standard layout"),
            self.obs_noise.means.as_slice_mut().expect("standard layout"),
            self.obs_noise.scale_raw.as_slice_mut().expect("standard layout"),
            self.latent_noise.logits.as_slice_mut().expect("standard layout"),
            self.latent_noise.means.as_slice_mut().expect("standard layout"),
            self.latent_noise.scale_raw.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Number of unconstrained scalars.
    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(block name, start offset, length)` for every block.
    pub fn layout(&self) -> Vec<(&'static str, usize, usize)> {
        let mut off = 0;
        self.slices()
            .iter()
            .zip(BLOCK_NAMES)
            .map(|(s, name)| {
                let e = (name, off, s.len());
                off += s.len();
                e
            })
            .collect()
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Structure(format!(
                "flat vector has {} entries, state has {}",
                flat.len(),
                self.len()
            )));
        }
        let mut off = 0;
        for s in self.slices_mut() {
            let l = s.len();
            s.copy_from_slice(&flat[off..off + l]);
            off += l;
        }
        Ok(())
    }

    /// Adds `scale · other` entrywise.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
