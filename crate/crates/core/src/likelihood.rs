//! Log-densities of the noise mixtures, the observed and latent trajectories,
//! and the priors over `A` and `W`. Everything stays in log space.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{causal_matrix, CausalParams, MixtureParams};
use crate::scalar::{half_ln_2pi, lit, log_sum_exp, Scalar};

/// `ln Σ_c π_c N(x; μ_c, σ_c²)`
pub fn gmm_logpdf<F: Scalar>(x: F, weights: &[F], means: &[F], scales: &[F]) -> Result<F> {
    let c = weights.len();
    if c == 0 || means.len() != c || scales.len() != c {
        return Err(Error::Structure(format!(
            "mixture lengths disagree: {} weights, {} means, {} scales",
            c,
            means.len(),
            scales.len()
        )));
    }
    if let Some(s) = scales.iter().find(|&&s| !(s > F::zero())) {
        return Err(Error::Domain(format!("mixture scale {s} is not positive")));
    }
    if weights.iter().any(|&w| w < F::zero()) {
        return Err(Error::Domain("negative mixture weight".into()));
    }
    let mut terms = [F::zero(); 16];
    let mut heap;
    let terms: &mut [F] = if c <= 16 {
        &mut terms[..c]
    } else {
        heap = vec![F::zero(); c];
        &mut heap
    };
    for k in 0..c {
        let z = (x - means[k]) / scales[k];
        terms[k] = weights[k].ln() - scales[k].ln() - half_ln_2pi::<F>() - lit::<F>(0.5) * z * z;
    }
    Ok(log_sum_exp(terms))
}

/// Precomputed log-weights and log-scales of one mixture row.
#[derive(Debug, Clone)]
pub(crate) struct MixtureRow<F: Scalar> {
    pub log_weights: Vec<F>,
    pub means: Vec<F>,
    pub scales: Vec<F>,
    pub log_scales: Vec<F>,
}

impl<F: Scalar> MixtureRow<F> {
    pub fn from_params(p: &MixtureParams<F>, row: usize) -> Self {
        let weights = p.weights.row(row);
        let scales: Vec<F> = p.scales.row(row).to_vec();
        MixtureRow {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means: p.means.row(row).to_vec(),
            log_scales: scales.iter().map(|s| s.ln()).collect(),
            scales,
        }
    }

    /// Log-density at `x`; fills `resp` with component responsibilities.
    #[inline]
    pub fn eval(&self, x: F, resp: &mut [F]) -> F {
        let c = self.means.len();
        let mut max = F::neg_infinity();
        for k in 0..c {
            let z = (x - self.means[k]) / self.scales[k];
            let v = self.log_weights[k] - self.log_scales[k] - lit::<F>(0.5) * z * z;
            resp[k] = v;
            if v > max {
                max = v;
            }
        }
        let mut total = F::zero();
        for r in resp.iter_mut().take(c) {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in resp.iter_mut().take(c) {
            *r /= total;
        }
        max + total.ln() - half_ln_2pi::<F>()
    }
}

fn check_shapes<F: Scalar>(
    observed: ArrayView2<F>,
    latent: ArrayView2<F>,
    params: &CausalParams<F>,
) -> Result<()> {
    let (t, m) = observed.dim();
    let (tz, n) = latent.dim();
    if t != tz {
        return Err(Error::Structure(format!("observed has {t} rows, latent has {tz}")));
    }
    if params.observed() != m || params.latent() != n {
        return Err(Error::Structure(format!(
            "params are for m={}, n={}; data has m={m}, n={n}",
            params.observed(),
            params.latent()
        )));
    }
    Ok(())
}

/// One-step prediction residuals of the observed (`T × m`) and latent
/// (`T × n`) trajectories. Row 0 holds the raw initial values.
pub fn residuals<F: Scalar>(
    observed: ArrayView2<F>,
    latent: ArrayView2<F>,
    params: &CausalParams<F>,
) -> Result<(Array2<F>, Array2<F>)> {
    check_shapes(observed, latent, params)?;
    let (t_len, m) = observed.dim();
    let n = latent.ncols();
    let b = causal_matrix(params);
    let mut rx = observed.to_owned();
    let mut rz = latent.to_owned();
    for t in 1..t_len {
        for i in 0..m {
            let mut pred = F::zero();
            for j in 0..m {
                pred += b[[i, j]] * observed[[t - 1, j]];
            }
            for k in 0..n {
                pred += b[[i, m + k]] * latent[[t - 1, k]];
            }
            rx[[t, i]] -= pred;
        }
        for k in 0..n {
            rz[[t, k]] -= b[[m + k, m + k]] * latent[[t - 1, k]];
        }
    }
    Ok((rx, rz))
}

fn sum_logpdf<F: Scalar>(res: &Array2<F>, noise: &MixtureParams<F>) -> Result<F> {
    if noise.rows() != res.ncols() {
        return Err(Error::Structure(format!(
            "noise has {} rows for {} variables",
            noise.rows(),
            res.ncols()
        )));
    }
    noise.check()?;
    let rows: Vec<MixtureRow<F>> = (0..noise.rows()).map(|i| MixtureRow::from_params(noise, i)).collect();
    let mut resp = vec![F::zero(); noise.components()];
    let mut total = F::zero();
    for r in res.outer_iter() {
        for (i, &x) in r.iter().enumerate() {
            total += rows[i].eval(x, &mut resp);
        }
    }
    if !total.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok(total)
}

/// `ln p(X | A, W, Z)`, including the `t = 1` term.
pub fn obs_loglik<F: Scalar>(
    observed: ArrayView2<F>,
    latent: ArrayView2<F>,
    params: &CausalParams<F>,
    noise: &MixtureParams<F>,
) -> Result<F> {
    let (rx, _) = residuals(observed, latent, params)?;
    sum_logpdf(&rx, noise)
}

/// `ln p(Z | A, W)` under the diagonal latent dynamics, including `t = 1`.
pub fn latent_logprior<F: Scalar>(
    observed: ArrayView2<F>,
    latent: ArrayView2<F>,
    params: &CausalParams<F>,
    noise: &MixtureParams<F>,
) -> Result<F> {
    if latent.ncols() == 0 {
        check_shapes(observed, latent, params)?;
        return Ok(F::zero());
    }
    let (_, rz) = residuals(observed, latent, params)?;
    sum_logpdf(&rz, noise)
}

/// A prior hyperparameter given globally or per `(m+n)×(m+n)` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorValue {
    Global(f64),
    PerEntry(Vec<Vec<f64>>),
}

impl PriorValue {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            PriorValue::Global(v) => *v,
            PriorValue::PerEntry(m) => m[i][j],
        }
    }

    fn check(&self, k: usize, name: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
        match self {
            PriorValue::Global(v) => {
                if !ok(*v) {
                    return Err(Error::Domain(format!("{name} = {v} outside its domain")));
                }
            }
            PriorValue::PerEntry(m) => {
                if m.len() != k || m.iter().any(|r| r.len() != k) {
                    return Err(Error::Structure(format!("{name} must be {k}x{k}")));
                }
                if let Some(v) = m.iter().flatten().find(|&&v| !ok(v)) {
                    return Err(Error::Domain(format!("{name} entry {v} outside its domain")));
                }
            }
        }
        Ok(())
    }
}

/// Bernoulli prior on `A`, Gaussian prior on `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub edge_prob: PriorValue,
    pub weight_mean: PriorValue,
    pub weight_std: PriorValue,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            edge_prob: PriorValue::Global(0.5),
            weight_mean: PriorValue::Global(0.0),
            weight_std: PriorValue::Global(1.0),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        self.edge_prob
            .check(k, "edge_prob", |p| p > 0.0 && p < 1.0)?;
        self.weight_mean.check(k, "weight_mean", f64::is_finite)?;
        self.weight_std
            .check(k, "weight_std", |s| s > 0.0 && s.is_finite())
    }
}

/// Adjacency entries that are estimated: observed rows, every column.
pub fn free_adjacency_entries(observed: usize, latent: usize) -> impl Iterator<Item = (usize, usize)> {
    let k = observed + latent;
    (0..observed).flat_map(move |i| (0..k).map(move |j| (i, j)))
}

/// Weight entries that are estimated: the free adjacency entries plus the
/// latent diagonal.
pub fn free_weight_entries(observed: usize, latent: usize) -> impl Iterator<Item = (usize, usize)> {
    free_adjacency_entries(observed, latent).chain((observed..observed + latent).map(|i| (i, i)))
}

/// The two halves of the prior log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorTerms<F> {
    pub adjacency: F,
    pub weights: F,
}

impl<F: Scalar> PriorTerms<F> {
    pub fn total(&self) -> F {
        self.adjacency + self.weights
    }
}

/// `Σ [A ln ρ + (1−A) ln(1−ρ)] + Σ ln N(W; μʷ, σʷ²)` over free entries.
pub fn prior_logprob<F: Scalar>(params: &CausalParams<F>, prior: &PriorConfig) -> Result<PriorTerms<F>> {
    let (m, n) = (params.observed(), params.latent());
    prior.validate(m + n)?;
    let mut adjacency = 0.0f64;
    for (i, j) in free_adjacency_entries(m, n) {
        let rho = prior.edge_prob.at(i, j);
        adjacency += if params.adjacency[[i, j]] {
            rho.ln()
        } else {
            (-rho).ln_1p()
        };
    }
    let mut weights = 0.0f64;
    for (i, j) in free_weight_entries(m, n) {
        let mu = prior.weight_mean.at(i, j);
        let sd = prior.weight_std.at(i, j);
        let z = (params.weights[[i, j]].to_f64().unwrap_or(f64::NAN) - mu) / sd;
        weights += -0.5 * z * z - sd.ln() - half_ln_2pi::<f64>();
    }
    Ok(PriorTerms {
        adjacency: lit(adjacency),
        weights: lit(weights),
    })
}
