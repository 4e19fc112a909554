//! Domain types of the lag-1 latent-variable structural VAR and the
//! elementary matrix operations on them.
//!
//! Index layout: the first `m` rows/columns of every `(m+n)×(m+n)` matrix are
//! observed variables, the last `n` are latent.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::scalar::{lit, Scalar};

/// Sizes of a model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Observed variable count `m`.
    pub observed: usize,
    /// Latent variable count `n`.
    pub latent: usize,
    /// Number of timesteps `T`.
    pub timesteps: usize,
    /// Mixture components per noise density `C`.
    pub components: usize,
}

impl ModelDims {
    pub fn new(observed: usize, latent: usize, timesteps: usize, components: usize) -> Result<Self> {
        let dims = ModelDims {
            observed,
            latent,
            timesteps,
            components,
        };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if self.observed == 0 {
            return Err(Error::Structure("need at least one observed variable".into()));
        }
        if self.timesteps < 2 {
            return Err(Error::Structure(format!(
                "need at least 2 timesteps, got {}",
                self.timesteps
            )));
        }
        if self.components == 0 {
            return Err(Error::Structure("need at least one mixture component".into()));
        }
        Ok(())
    }

    /// `m + n`
    #[inline]
    pub fn total(&self) -> usize {
        self.observed + self.latent
    }
}

/// Binary adjacency `A` and real strengths `W`; the effective lag-1 matrix is `A ⊙ W`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalParams<F: Scalar> {
    pub adjacency: Array2<bool>,
    pub weights: Array2<F>,
    observed: usize,
}

impl<F: Scalar> CausalParams<F> {
    /// Checks shapes only; block constraints are checked by [`validate_block_structure`].
    pub fn new(adjacency: Array2<bool>, weights: Array2<F>, observed: usize) -> Result<Self> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(Error::Structure(format!("adjacency is {r}x{c}, not square")));
        }
        if weights.dim() != (r, c) {
            return Err(Error::Structure(format!(
                "weights are {:?}, adjacency is {:?}",
                weights.dim(),
                adjacency.dim()
            )));
        }
        if observed == 0 || observed > r {
            return Err(Error::Structure(format!(
                "observed count {observed} incompatible with {r}x{r} matrices"
            )));
        }
        Ok(CausalParams {
            adjacency,
            weights,
            observed,
        })
    }

    /// Model with no edges except unit latent self-loops carrying `latent_ar`.
    pub fn empty(observed: usize, latent_ar: &[F]) -> Self {
        let k = observed + latent_ar.len();
        let mut adjacency = Array2::from_elem((k, k), false);
        let mut weights = Array2::zeros((k, k));
        for (i, &w) in latent_ar.iter().enumerate() {
            adjacency[[observed + i, observed + i]] = true;
            weights[[observed + i, observed + i]] = w;
        }
        CausalParams {
            adjacency,
            weights,
            observed,
        }
    }

    #[inline]
    pub fn observed(&self) -> usize {
        self.observed
    }

    #[inline]
    pub fn latent(&self) -> usize {
        self.adjacency.nrows() - self.observed
    }

    /// Observed-observed block of `A`.
    pub fn observed_adjacency(&self) -> Array2<bool> {
        let m = self.observed;
        self.adjacency.slice(ndarray::s![..m, ..m]).to_owned()
    }

    /// `A^XZ ⊙ W^XZ`, the `m×n` latent-to-observed effects.
    pub fn latent_effects(&self) -> Array2<F> {
        let m = self.observed;
        let c = causal_matrix(self);
        c.slice(ndarray::s![..m, m..]).to_owned()
    }

    /// Diagonal of `A^ZZ ⊙ W^ZZ`.
    pub fn latent_ar(&self) -> Vec<F> {
        let m = self.observed;
        (m..self.adjacency.nrows())
            .map(|i| {
                if self.adjacency[[i, i]] {
                    self.weights[[i, i]]
                } else {
                    F::zero()
                }
            })
            .collect()
    }
}

/// Checks every block constraint, collecting all violations.
pub fn validate_block_structure<F: Scalar>(params: &CausalParams<F>, dims: &ModelDims) -> Result<()> {
    let k = dims.total();
    if params.adjacency.dim() != (k, k) || params.weights.dim() != (k, k) {
        return Err(Error::Structure(format!(
            "expected {k}x{k} matrices, got {:?} and {:?}",
            params.adjacency.dim(),
            params.weights.dim()
        )));
    }
    if params.observed != dims.observed {
        return Err(Error::Structure(format!(
            "params have {} observed variables, dims say {}",
            params.observed, dims.observed
        )));
    }
    let m = dims.observed;
    let mut violations = Vec::new();
    for ((row, col), &w) in params.weights.indexed_iter() {
        if !w.is_finite() {
            violations.push(Violation::NonFinite { row, col });
        }
    }
    for row in m..k {
        for col in 0..m {
            if params.adjacency[[row, col]] {
                violations.push(Violation::ExogeneityA { row, col });
            }
            if params.weights[[row, col]] != F::zero() {
                violations.push(Violation::ExogeneityW { row, col });
            }
        }
        for col in m..k {
            if col != row && params.adjacency[[row, col]] {
                violations.push(Violation::LatentOffDiagonal { row, col });
            }
        }
        if !params.adjacency[[row, row]] || params.weights[[row, row]] == F::zero() {
            violations.push(Violation::LatentSelfLoopMissing { index: row });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

/// Effective lag-1 matrix `A ⊙ W`.
pub fn causal_matrix<F: Scalar>(params: &CausalParams<F>) -> Array2<F> {
    let mut out = Array2::zeros(params.weights.dim());
    Zip::from(&mut out)
        .and(&params.adjacency)
        .and(&params.weights)
        .for_each(|o, &a, &w| {
            if a {
                *o = w;
            }
        });
    out
}

const SPECTRAL_MAX_SQUARINGS: usize = 200;

/// Largest eigenvalue magnitude of a square matrix.
///
/// Uses the Gelfand limit `ρ(M) = lim ‖M^k‖^{1/k}` along `k = 2^j` by repeated
/// normalized squaring, which converges for complex and defective dominant
/// eigenvalues where plain power iteration oscillates. Stops once successive
/// estimates agree within `tol` relative.
pub fn spectral_radius<F: Scalar>(matrix: ArrayView2<F>, tol: F) -> Result<F> {
    let (r, c) = matrix.dim();
    if r != c {
        return Err(Error::Structure(format!("spectral radius of {r}x{c} matrix")));
    }
    if tol <= F::zero() {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    if r == 0 {
        return Ok(F::zero());
    }
    // Work in f64 regardless of F: squaring many times amplifies rounding.
    let mut power = matrix.mapv(|v| v.to_f64().unwrap_or(0.0));
    let mut log_scale = 0.0f64;
    let mut exponent = 1.0f64;
    let mut last = f64::NAN;
    let tol = tol.to_f64().unwrap_or(1e-12).max(1e-15);
    for _ in 0..SPECTRAL_MAX_SQUARINGS {
        let norm = frobenius(&power);
        if norm == 0.0 {
            return Ok(F::zero());
        }
        let estimate = ((norm.ln() + log_scale) / exponent).exp();
        if last.is_finite() && (estimate - last).abs() <= tol * estimate {
            return Ok(lit(estimate));
        }
        last = estimate;
        power.mapv_inplace(|v| v / norm);
        log_scale = 2.0 * (log_scale + norm.ln());
        power = power.dot(&power);
        exponent *= 2.0;
        // Once the normalized power underflows to zero the matrix is nilpotent
        // to working precision.
        if exponent > 2f64.powi(60) {
            return Ok(lit(estimate));
        }
    }
    Err(Error::NoConvergence {
        iterations: SPECTRAL_MAX_SQUARINGS,
        last_estimate: last,
    })
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-variable Gaussian mixture parameters: `rows × C` weights, means, scales.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<F: Scalar> {
    pub weights: Array2<F>,
    pub means: Array2<F>,
    pub scales: Array2<F>,
}

impl<F: Scalar> MixtureParams<F> {
    pub fn new(weights: Array2<F>, means: Array2<F>, scales: Array2<F>) -> Result<Self> {
        let p = MixtureParams {
            weights,
            means,
            scales,
        };
        p.check()?;
        Ok(p)
    }

    /// One-component mixture `rows × 1` with the given mean and scale.
    pub fn single(rows: usize, mean: F, scale: F) -> Self {
        MixtureParams {
            weights: Array2::from_elem((rows, 1), F::one()),
            means: Array2::from_elem((rows, 1), mean),
            scales: Array2::from_elem((rows, 1), scale),
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.weights.dim();
        if self.means.dim() != d || self.scales.dim() != d {
            return Err(Error::Structure(format!(
                "mixture arrays disagree: {:?}, {:?}, {:?}",
                d,
                self.means.dim(),
                self.scales.dim()
            )));
        }
        if d.1 == 0 && d.0 > 0 {
            return Err(Error::Structure("mixture with zero components".into()));
        }
        let tol: F = lit(1e-9);
        for (i, row) in self.weights.outer_iter().enumerate() {
            if row.iter().any(|&w| w < F::zero() || !w.is_finite()) {
                return Err(Error::Domain(format!("mixture row {i} has invalid weights")));
            }
            let s: F = row.iter().copied().sum();
            if (s - F::one()).abs() > tol {
                return Err(Error::Domain(format!("mixture row {i} weights sum to {s}")));
            }
        }
        if self.scales.iter().any(|&s| !(s > F::zero()) || !s.is_finite()) {
            return Err(Error::Domain("mixture scales must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mixture means must be finite".into()));
        }
        Ok(())
    }
}

/// Mixture noise for observed and latent variables, kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmNoiseParams<F: Scalar> {
    pub observed: MixtureParams<F>,
    pub latent: MixtureParams<F>,
}

/// Generating noise law of a ground-truth model.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel<F: Scalar> {
    Gmm(GmmNoiseParams<F>),
    Uniform { low: F, high: F },
    ChiSquare { df: F },
}

/// Parameters and latent trajectory that produced a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<F: Scalar> {
    pub params: CausalParams<F>,
    /// `T × n`
    pub latent_path: Array2<F>,
    pub noise: NoiseModel<F>,
    pub dims: ModelDims,
}

impl<F: Scalar> GroundTruth<F> {
    pub fn check(&self) -> Result<()> {
        self.dims.check()?;
        validate_block_structure(&self.params, &self.dims)?;
        let expect = (self.dims.timesteps, self.dims.latent);
        if self.latent_path.dim() != expect {
            return Err(Error::Structure(format!(
                "latent path is {:?}, expected {:?}",
                self.latent_path.dim(),
                expect
            )));
        }
        if let NoiseModel::Gmm(g) = &self.noise {
            g.observed.check()?;
            g.latent.check()?;
            if g.observed.rows() != self.dims.observed || g.latent.rows() != self.dims.latent {
                return Err(Error::Structure("noise rows do not match dims".into()));
            }
        }
        Ok(())
    }
}

/// Observed `T × m` series with variable names and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset<F: Scalar> {
    pub data: Array2<F>,
    pub names: Vec<String>,
    pub truth: Option<GroundTruth<F>>,
}

impl<F: Scalar> TimeSeriesDataset<F> {
    pub fn new(data: Array2<F>, names: Vec<String>) -> Result<Self> {
        let ds = TimeSeriesDataset {
            data,
            names,
            truth: None,
        };
        ds.check()?;
        Ok(ds)
    }

    /// Names `x1..xm`.
    pub fn default_names(m: usize) -> Vec<String> {
        (1..=m).map(|i| format!("x{i}")).collect()
    }

    pub fn timesteps(&self) -> usize {
        self.data.nrows()
    }

    pub fn observed(&self) -> usize {
        self.data.ncols()
    }

    pub fn check(&self) -> Result<()> {
        if self.data.nrows() == 0 {
            return Err(Error::Structure("dataset is empty".into()));
        }
        if self.names.len() != self.data.ncols() {
            return Err(Error::Structure(format!(
                "{} names for {} columns",
                self.names.len(),
                self.data.ncols()
            )));
        }
        if let Some(((t, j), _)) = self.data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite observation at row {t}, column {j}")));
        }
        if let Some(truth) = &self.truth {
            if truth.latent_path.nrows() != self.data.nrows() {
                return Err(Error::Structure("truth latent path length differs from data".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn dims(m: usize, n: usize) -> ModelDims {
        ModelDims::new(m, n, 10, 1).unwrap()
    }

    #[test]
    fn dims_invariants() {
        assert!(ModelDims::new(0, 0, 10, 1).is_err());
        assert!(ModelDims::new(1, 0, 1, 1).is_err());
        assert!(ModelDims::new(1, 0, 2, 0).is_err());
        assert!(ModelDims::new(1, 0, 2, 1).is_ok());
    }

    #[test]
    fn zero_model_without_latents_is_valid() {
        let p = CausalParams::<f64>::new(Array2::from_elem((3, 3), false), Array2::zeros((3, 3)), 3)
            .unwrap();
        validate_block_structure(&p, &dims(3, 0)).unwrap();
    }

    #[test]
    fn missing_latent_self_loop_reported() {
        let mut p = CausalParams::<f64>::empty(2, &[0.5]);
        p.adjacency[[2, 2]] = false;
        match validate_block_structure(&p, &dims(2, 1)) {
            Err(Error::Validation(v)) => {
                assert_eq!(v, vec![Violation::LatentSelfLoopMissing { index: 2 }]);
                assert!(Error::Validation(v).to_string().contains("latent self-loop missing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lower_left_block_violation_reported() {
        let mut p = CausalParams::<f64>::empty(2, &[0.5, 0.6]);
        p.adjacency[[3, 1]] = true;
        match validate_block_structure(&p, &dims(2, 2)) {
            Err(Error::Validation(v)) => assert_eq!(v, vec![Violation::ExogeneityA { row: 3, col: 1 }]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let p = CausalParams::<f64>::empty(2, &[0.5]);
        assert!(matches!(validate_block_structure(&p, &dims(2, 2)), Err(Error::Structure(_))));
        assert!(CausalParams::<f64>::new(Array2::from_elem((2, 3), false), Array2::zeros((2, 3)), 2).is_err());
    }

    #[test]
    fn causal_matrix_examples() {
        let zero = CausalParams::new(Array2::from_elem((2, 2), false), array![[0.7, 0.3], [0.0, 0.9]], 2).unwrap();
        assert_eq!(causal_matrix(&zero), Array2::<f64>::zeros((2, 2)));

        let a = array![[true, false], [false, true]];
        let w = array![[0.7, 0.3], [0.0, 0.9]];
        let p = CausalParams::new(a.clone(), w.clone(), 2).unwrap();
        let got = causal_matrix(&p);
        // elementwise loop oracle
        for i in 0..2 {
            for j in 0..2 {
                let expect = if a[[i, j]] { w[[i, j]] } else { 0.0 };
                assert_eq!(got[[i, j]], expect);
            }
        }
        assert_eq!(got, array![[0.7, 0.0], [0.0, 0.9]]);

        let full = CausalParams::new(Array2::from_elem((2, 2), true), w.clone(), 2).unwrap();
        assert_eq!(causal_matrix(&full), w);
    }

    #[test]
    fn spectral_radius_examples() {
        let eye = Array2::<f64>::eye(4);
        assert!((spectral_radius(eye.view(), 1e-12).unwrap() - 1.0).abs() < 1e-10);
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(spectral_radius(z.view(), 1e-12).unwrap(), 0.0);
        let d: Array2<f64> = array![[0.3, 0.0], [0.0, 0.9]];
        assert!((spectral_radius(d.view(), 1e-12).unwrap() - 0.9).abs() < 1e-10);
    }

    #[test]
    fn spectral_radius_rotation_and_jordan() {
        // eigenvalues 0.6 ± 0.8i: magnitude 1, plain power iteration would oscillate
        let rot: Array2<f64> = array![[0.6, -0.8], [0.8, 0.6]];
        assert!((spectral_radius(rot.view(), 1e-12).unwrap() - 1.0).abs() < 1e-9);
        let jordan: Array2<f64> = array![[0.5, 1.0], [0.0, 0.5]];
        assert!((spectral_radius(jordan.view(), 1e-12).unwrap() - 0.5).abs() < 1e-6);
        let nil = array![[0.0, 1.0], [0.0, 0.0]];
        assert_eq!(spectral_radius(nil.view(), 1e-12).unwrap(), 0.0);
        let f32m = array![[0.3f32, 0.0], [0.0, 0.9]];
        assert!((spectral_radius(f32m.view(), 1e-6).unwrap() - 0.9).abs() < 1e-5);
    }

    #[test]
    fn spectral_radius_rejects_bad_input() {
        let r = Array2::<f64>::zeros((2, 3));
        assert!(spectral_radius(r.view(), 1e-9).is_err());
        let e = Array2::<f64>::eye(2);
        assert!(spectral_radius(e.view(), 0.0).is_err());
    }

    #[test]
    fn mixture_check() {
        let ok = MixtureParams::new(array![[0.3, 0.7]], array![[0.0, 1.0]], array![[1.0, 2.0]]);
        assert!(ok.is_ok());
        let bad_sum = MixtureParams::new(array![[0.3, 0.6]], array![[0.0, 1.0]], array![[1.0, 2.0]]);
        assert!(bad_sum.is_err());
        let bad_scale = MixtureParams::new(array![[0.3, 0.7]], array![[0.0, 1.0]], array![[1.0, 0.0]]);
        assert!(bad_scale.is_err());
    }

    #[test]
    fn dataset_rejects_non_finite() {
        let d = array![[1.0, f64::NAN]];
        assert!(TimeSeriesDataset::new(d, vec!["a".into(), "b".into()]).is_err());
    }

    fn random_params(m: usize, n: usize, seed: u64) -> CausalParams<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = m + n;
        let mut p = CausalParams::empty(m, &vec![0.5; n]);
        for i in 0..m {
            for j in 0..k {
                p.adjacency[[i, j]] = rng.random_bool(0.5);
                p.weights[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        for i in m..k {
            p.weights[[i, i]] = rng.random_range(0.1..0.9);
        }
        p
    }

    proptest! {
        #[test]
        fn causal_matrix_linear_in_weights(seed in 0u64..1000, m in 1usize..5, n in 0usize..3) {
            let p1 = random_params(m, n, seed);
            let mut p2 = random_params(m, n, seed + 7);
            p2.adjacency = p1.adjacency.clone();
            let mut sum = p1.clone();
            sum.weights = &p1.weights + &p2.weights;
            let lhs = causal_matrix(&sum);
            let rhs = causal_matrix(&p1) + causal_matrix(&p2);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn single_corruption_detected(seed in 0u64..1000, m in 1usize..5, n in 1usize..4, pick in 0usize..1000) {
            let p = random_params(m, n, seed);
            let d = ModelDims::new(m, n, 10, 1).unwrap();
            prop_assert!(validate_block_structure(&p, &d).is_ok());
            let k = m + n;
            let mut bad = p.clone();
            match pick % 4 {
                0 => { let (r, c) = (m + pick % n, pick % m); bad.adjacency[[r, c]] = true; }
                1 => { let (r, c) = (m + pick % n, pick % m); bad.weights[[r, c]] = 0.25; }
                2 => {
                    if n < 2 { return Ok(()); }
                    let r = m + pick % n;
                    let c = m + (pick / n + 1 + (r - m)) % n;
                    if r == c { return Ok(()); }
                    bad.adjacency[[r, c]] = true;
                }
                _ => { let i = m + pick % n; bad.weights[[i, i]] = 0.0; }
            }
            let _ = k;
            prop_assert!(matches!(validate_block_structure(&bad, &d), Err(Error::Validation(_))));
        }

        #[test]
        fn spectral_radius_homogeneous(seed in 0u64..500, c in -3.0f64..3.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = 1 + (seed as usize % 6);
            let m = Array2::from_shape_fn((k, k), |_| rng.random_range(-1.0..1.0));
            let base = spectral_radius(m.view(), 1e-12).unwrap();
            let scaled = spectral_radius((&m * c).view(), 1e-12).unwrap();
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-6 * (c.abs() * base).max(1e-12));
        }
    }
}
