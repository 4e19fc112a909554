//! Scoring recovered graphs against ground truth.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeSeriesDataset;
use crate::scalar::{lit, Scalar};

/// Default threshold on edge probabilities.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Largest latent count handled by the exhaustive permutation search.
pub const MAX_MATCH_LATENTS: usize = 8;

/// Thresholds `(m+n)×(m+n)` edge probabilities: an edge exists iff `ρ̂ > τ`.
/// Latent rows are reset to the fixed diagonal self-loop.
pub fn extract_adjacency<F: Scalar>(probs: ArrayView2<F>, observed: usize, tau: F) -> Result<Array2<bool>> {
    let (r, c) = probs.dim();
    if r != c || observed > r {
        return Err(Error::Structure(format!(
            "edge probabilities are {r}x{c} with {observed} observed variables"
        )));
    }
    let mut out = probs.mapv(|p| p > tau);
    for i in observed..r {
        for j in 0..c {
            out[[i, j]] = i == j;
        }
    }
    Ok(out)
}

/// Observed-observed block `A^XX` of a `(m+n)×(m+n)` matrix.
pub fn observed_block<T: Clone>(a: ArrayView2<T>, observed: usize) -> Array2<T> {
    a.slice(s![..observed, ..observed]).to_owned()
}

/// Precision, recall and F1 of a predicted edge set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl MetricsReport {
    /// Builds the report from edge counts.
    pub fn from_counts(true_positives: usize, predicted: usize, actual: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            true_positives as f64 / predicted as f64
        };
        let recall = if actual == 0 {
            if predicted == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            true_positives as f64 / actual as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            actual,
        }
    }
}

/// Scores `predicted` against `truth`; both are the `m × m` block `A^XX`.
/// Self-loops count as edges.
pub fn prf1(predicted: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<MetricsReport> {
    if predicted.dim() != truth.dim() {
        return Err(Error::Structure(format!(
            "predicted is {:?}, truth is {:?}",
            predicted.dim(),
            truth.dim()
        )));
    }
    let mut tp = 0;
    let mut pred = 0;
    let mut actual = 0;
    for (&p, &t) in predicted.iter().zip(truth.iter()) {
        pred += p as usize;
        actual += t as usize;
        tp += (p && t) as usize;
    }
    Ok(MetricsReport::from_counts(tp, pred, actual))
}

/// Mean and sample standard deviation (`n − 1`) of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Structure("cannot aggregate an empty list".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(MeanSd { mean, sd })
    }
}

/// Metrics across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub count: usize,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
    pub per_seed: Vec<MetricsReport>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    let pick = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(AggregateReport {
        count: reports.len(),
        precision: MeanSd::of(&pick(|r| r.precision))?,
        recall: MeanSd::of(&pick(|r| r.recall))?,
        f1: MeanSd::of(&pick(|r| r.f1))?,
        per_seed: reports.to_vec(),
    })
}

/// Best alignment of estimated latent columns to the true ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMatch {
    /// `permutation[j]` is the estimated column matched to true column `j`.
    pub permutation: Vec<usize>,
    /// Least-squares scale applied to each matched estimated column.
    pub scales: Vec<f64>,
    /// Frobenius distance after permuting and scaling.
    pub distance: f64,
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&p);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Aligns the `m × n` latent-effect matrices up to column permutation and
/// per-column scaling, by exhaustive search over permutations.
pub fn match_latents<F: Scalar>(estimated: ArrayView2<F>, truth: ArrayView2<F>) -> Result<LatentMatch> {
    if estimated.dim() != truth.dim() {
        return Err(Error::Structure(format!(
            "estimated is {:?}, truth is {:?}",
            estimated.dim(),
            truth.dim()
        )));
    }
    let n = truth.ncols();
    if n > MAX_MATCH_LATENTS {
        return Err(Error::Domain(format!(
            "{n} latents exceed the exhaustive matching limit of {MAX_MATCH_LATENTS}; skip latent evaluation"
        )));
    }
    let est = estimated.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let tru = truth.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    // cost[e][t]: squared residual and scale of fitting true column t with estimated column e
    let mut cost = vec![vec![(0.0, 0.0); n]; n];
    for e in 0..n {
        let ec = est.column(e);
        let ee = ec.dot(&ec);
        for t in 0..n {
            let tc = tru.column(t);
            let tt = tc.dot(&tc);
            let et = ec.dot(&tc);
            let scale = if ee > 0.0 { et / ee } else { 0.0 };
            let resid: f64 = ec.iter().zip(tc.iter()).map(|(a, b)| (scale * a - b).powi(2)).sum();
            let resid = if resid.is_finite() { resid } else { tt };
            cost[e][t] = (resid, scale);
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(n, |p| {
        let total: f64 = (0..n).map(|t| cost[p[t]][t].0).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, p.to_vec()));
        }
    });
    let (total, permutation) = best.unwrap_or((0.0, Vec::new()));
    let scales = (0..n).map(|t| cost[permutation[t]][t].1).collect();
    Ok(LatentMatch {
        permutation,
        scales,
        distance: total.max(0.0).sqrt(),
    })
}

/// Latent-blind ridge least-squares VAR(1) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct VarOlsFit<F: Scalar> {
    /// `B` in `X(t) ≈ B X(t−1) + c`, `m × m`.
    pub weights: Array2<F>,
    pub intercept: Vec<F>,
    /// `|B_ij| > τw`.
    pub adjacency: Array2<bool>,
}

/// Ridge least-squares coefficients `(B, c)` of `X(t) ≈ B X(t−1) + c`.
pub(crate) fn var_ols_coefficients(x: ArrayView2<f64>, ridge: f64) -> Result<(Array2<f64>, Vec<f64>)> {
    let (t, m) = x.dim();
    let p = m + 1;
    // design rows [X(t−1), 1], targets X(t)
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross = DMatrix::<f64>::zeros(p, m);
    let mut phi = vec![0.0; p];
    for s in 1..t {
        for j in 0..m {
            phi[j] = x[[s - 1, j]];
        }
        phi[m] = 1.0;
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] += phi[a] * phi[b];
            }
            for i in 0..m {
                cross[(a, i)] += phi[a] * x[[s, i]];
            }
        }
    }
    for j in 0..m {
        gram[(j, j)] += ridge;
    }
    let singular = || Error::Numerical("normal equations are singular; use a ridge penalty > 0".into());
    let beta = gram.lu().solve(&cross).ok_or_else(singular)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let b = Array2::from_shape_fn((m, m), |(i, j)| beta[(j, i)]);
    let c = (0..m).map(|i| beta[(m, i)]).collect();
    Ok((b, c))
}

/// Ridge-regularized one-step least squares `X(t) ≈ B X(t−1) + c` with an
/// unpenalized intercept; edges are `|B_ij| > τw`.
pub fn baseline_var_ols<F: Scalar>(dataset: &TimeSeriesDataset<F>, ridge: f64, tau_w: f64) -> Result<VarOlsFit<F>> {
    let (t, m) = dataset.data.dim();
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge {ridge} must be non-negative")));
    }
    if !(tau_w > 0.0) {
        return Err(Error::Domain(format!("threshold {tau_w} must be positive")));
    }
    if t < m + 2 {
        return Err(Error::Structure(format!("need at least {} timesteps, got {t}", m + 2)));
    }
    let x = dataset.data.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let (b, c) = var_ols_coefficients(x.view(), ridge)?;
    let weights = b.mapv(lit::<F>);
    let intercept = c.into_iter().map(lit::<F>).collect();
    let adjacency = b.mapv(|v| v.abs() > tau_w);
    Ok(VarOlsFit {
        weights,
        intercept,
        adjacency,
    })
}
