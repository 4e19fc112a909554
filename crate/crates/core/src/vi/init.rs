//! Data-driven starting values for the latent trajectory.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::var_ols_coefficients;
use crate::scalar::{lit, Scalar};

/// How the means of `q(Z)` start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    /// All zero.
    Zero,
    /// Leading principal components of latent-blind VAR residuals.
    #[default]
    ResidualPca,
}

/// Unit-variance scores of the `n` leading principal components of the
/// one-step residuals of a ridge VAR fit, shifted so that row `t` holds the
/// component that drives `X(t+1)`. The last row is zero.
pub fn residual_pca_latents<F: Scalar>(data: ArrayView2<F>, n: usize) -> Result<Array2<F>> {
    let (t, m) = data.dim();
    let mut out = Array2::zeros((t, n));
    if n == 0 || t < 3 {
        return Ok(out);
    }
    let x = data.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let (b, c) = var_ols_coefficients(x.view(), 1e-6 * t as f64)?;
    let rows = t - 1;
    let mut resid = DMatrix::<f64>::zeros(rows, m);
    for s in 1..t {
        for i in 0..m {
            let pred: f64 = (0..m).map(|j| b[[i, j]] * x[[s - 1, j]]).sum::<f64>() + c[i];
            resid[(s - 1, i)] = x[[s, i]] - pred;
        }
    }
    let cov = resid.transpose() * &resid / rows as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (k, &comp) in order.iter().take(n).enumerate() {
        let mut v = eig.eigenvectors.column(comp).into_owned();
        // fix the sign so the result does not depend on the eigensolver
        let (pivot, _) = v.iter().enumerate().fold((0, 0.0f64), |a, (i, &e)| if e.abs() > a.1 { (i, e.abs()) } else { a });
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        let scores = &resid * &v;
        let sd = (scores.iter().map(|s| s * s).sum::<f64>() / rows as f64).sqrt();
        if !(sd > 0.0) {
            continue;
        }
        for s in 0..rows {
            out[[s, k]] = lit(scores[s] / sd);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn recovers_a_shared_driver() {
        // X_i(t) = 0.3 X_i(t−1) + v_i z(t−1) + small noise
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = 2000;
        let v = [1.0, -0.8, 0.5];
        let z: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = Array2::<f64>::zeros((t, 3));
        for s in 1..t {
            for i in 0..3 {
                let e: f64 = rng.sample(StandardNormal);
                x[[s, i]] = 0.3 * x[[s - 1, i]] + v[i] * z[s - 1] + 0.1 * e;
            }
        }
        let est = residual_pca_latents(x.view(), 1).unwrap();
        let corr: f64 = (0..t - 1).map(|s| est[[s, 0]] * z[s]).sum::<f64>() / (t - 1) as f64;
        assert!(corr.abs() > 0.95, "{corr}");
        assert_eq!(est[[t - 1, 0]], 0.0);
    }

    #[test]
    fn no_latents_gives_empty() {
        let x = Array2::<f64>::zeros((10, 2));
        assert_eq!(residual_pca_latents(x.view(), 0).unwrap().dim(), (10, 0));
    }
}
