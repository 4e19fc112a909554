//! Reparameterized Monte-Carlo objective and its pathwise gradient.
//!
//! For fixed noise draws `(u, g, h)` the objective is a deterministic function
//! of the unconstrained parameters; the gradient below is its exact
//! derivative, derived by hand through the residual recursions.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use super::config::{ObjectiveMode, ObjectiveSettings};
use super::sampling::{clamp_prob, concrete_logit};
use super::state::VariationalState;
use crate::error::{Error, Result};
use crate::likelihood::{free_adjacency_entries, MixtureRow};
use crate::model::ModelDims;
use crate::scalar::{half_ln_2pi, lit, logit, sigmoid, softplus, Scalar};

/// Parameter-free noise behind one joint sample of `(A, W, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws<F: Scalar> {
    /// `U(0,1)` per estimated edge, `m × (m+n)`.
    pub edge_uniform: Array2<F>,
    /// `N(0,1)` per estimated weight, `m × (m+n)`.
    pub weight_normal: Array2<F>,
    pub ar_normal: Array1<F>,
    /// `N(0,1)` per latent value, `T × n`.
    pub latent_normal: Array2<F>,
}

impl<F: Scalar> NoiseDraws<F> {
    pub fn sample<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let (m, n, t) = (dims.observed, dims.latent, dims.timesteps);
        let k = m + n;
        let mut normal = || lit::<F>(rng.sample::<f64, _>(StandardNormal));
        let weight_normal = Array2::from_shape_simple_fn((m, k), &mut normal);
        let ar_normal = Array1::from_shape_simple_fn(n, &mut normal);
        let latent_normal = Array2::from_shape_simple_fn((t, n), &mut normal);
        let edge_uniform = Array2::from_shape_simple_fn((m, k), || lit::<F>(rng.sample::<f64, _>(Open01)));
        NoiseDraws {
            edge_uniform,
            weight_normal,
            ar_normal,
            latent_normal,
        }
    }

    /// Draws with every uniform at `u` and every normal at `g`.
    pub fn constant(dims: &ModelDims, u: F, g: F) -> Self {
        let (m, n, t) = (dims.observed, dims.latent, dims.timesteps);
        let k = m + n;
        NoiseDraws {
            edge_uniform: Array2::from_elem((m, k), u),
            weight_normal: Array2::from_elem((m, k), g),
            ar_normal: Array1::from_elem(n, g),
            latent_normal: Array2::from_elem((t, n), g),
        }
    }
}

/// Values of one joint sample from `q(A) q(W) q(Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledQuantities<F: Scalar> {
    /// Relaxed adjacency, `m × (m+n)`.
    pub relaxed_adjacency: Array2<F>,
    pub weights: Array2<F>,
    pub latent_ar: Array1<F>,
    pub latent: Array2<F>,
}

/// Monte-Carlo estimate of the training objective and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue<F: Scalar> {
    /// `−L_ell + penalty (+ KL in full-ELBO mode)`
    pub value: F,
    /// Sample mean of `ln p(X|A,W,Z) + ln p(Z|A,W)`.
    pub expected_loglik: F,
    pub obs_loglik: F,
    pub latent_logprior: F,
    /// `λ ·` sample mean of `Σ` relaxed `A`.
    pub penalty: F,
    /// KL and entropy terms; zero in paper mode.
    pub kl: F,
    pub samples: Vec<SampledQuantities<F>>,
}

struct SampleTerms<F> {
    obs_loglik: F,
    latent_logprior: F,
    edge_sum: F,
}

fn check_inputs<F: Scalar>(data: ArrayView2<F>, state: &VariationalState<F>) -> Result<()> {
    let d = state.dims;
    if data.dim() != (d.timesteps, d.observed) {
        return Err(Error::Structure(format!(
            "data is {:?}, state expects {}x{}",
            data.dim(),
            d.timesteps,
            d.observed
        )));
    }
    Ok(())
}

fn check_draws<F: Scalar>(dims: &ModelDims, draws: &NoiseDraws<F>) -> Result<()> {
    let (m, n, t) = (dims.observed, dims.latent, dims.timesteps);
    let k = m + n;
    if draws.edge_uniform.dim() != (m, k)
        || draws.weight_normal.dim() != (m, k)
        || draws.ar_normal.len() != n
        || draws.latent_normal.dim() != (t, n)
    {
        return Err(Error::Structure("noise draws do not match model dimensions".into()));
    }
    Ok(())
}

/// Accumulates `−d ln p / d(θ)` of a mixture row for a residual `x`.
struct MixtureGrad<F: Scalar> {
    logits: Array2<F>,
    means: Array2<F>,
    /// With respect to the constrained scale.
    scales: Array2<F>,
}

impl<F: Scalar> MixtureGrad<F> {
    fn zeros(rows: usize, c: usize) -> Self {
        MixtureGrad {
            logits: Array2::zeros((rows, c)),
            means: Array2::zeros((rows, c)),
            scales: Array2::zeros((rows, c)),
        }
    }
}

/// Sums the log-density of each residual column under its mixture row and,
/// when `grad` is set, writes `−d/dx` into `g_res` and the parameter terms
/// into `grad`.
fn mixture_loglik<F: Scalar>(
    res: &Array2<F>,
    rows: &[MixtureRow<F>],
    weights: &Array2<F>,
    mut g_res: Option<&mut Array2<F>>,
    mut grad: Option<&mut MixtureGrad<F>>,
) -> F {
    let c = weights.ncols();
    let mut resp = vec![F::zero(); c];
    let mut total = F::zero();
    for ((t, i), &x) in res.indexed_iter() {
        let row = &rows[i];
        total += row.eval(x, &mut resp);
        if g_res.is_none() && grad.is_none() {
            continue;
        }
        let mut dx = F::zero();
        for q in 0..c {
            let s = row.scales[q];
            let diff = x - row.means[q];
            let inv_var = F::one() / (s * s);
            let r = resp[q];
            dx += r * diff * inv_var;
            if let Some(g) = grad.as_deref_mut() {
                g.means[[i, q]] -= r * diff * inv_var;
                g.scales[[i, q]] -= r * (diff * diff * inv_var - F::one()) / s;
                g.logits[[i, q]] -= r - weights[[i, q]];
            }
        }
        if let Some(g) = g_res.as_deref_mut() {
            g[[t, i]] = dx;
        }
    }
    total
}

/// Forward pass for one sample; adds `scale ·` gradient into `grad` if given.
fn evaluate_sample<F: Scalar>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    draws: &NoiseDraws<F>,
    settings: &ObjectiveSettings<'_>,
    grad: Option<(&mut VariationalState<F>, F)>,
) -> Result<(SampleTerms<F>, SampledQuantities<F>)> {
    let dims = state.dims;
    let (t_len, m, n) = (dims.timesteps, dims.observed, dims.latent);
    let k = m + n;
    let temp: F = lit(settings.temperature);
    if !(temp > F::zero()) {
        return Err(Error::Domain("temperature must be positive".into()));
    }
    let lambda: F = lit(settings.lambda);
    let want_grad = grad.is_some();

    // q(A), q(W)
    let mut a = Array2::zeros((m, k));
    let mut da_dlogit = Array2::zeros((m, k));
    let mut w = Array2::zeros((m, k));
    let mut b = Array2::zeros((m, k));
    for i in 0..m {
        for j in 0..k {
            let rho = sigmoid(state.edge_logits[[i, j]]);
            let clamped = clamp_prob(rho);
            let dlogrho = if clamped == rho { F::one() - rho } else { F::zero() };
            let av = sigmoid(concrete_logit(clamped, temp, draws.edge_uniform[[i, j]]));
            a[[i, j]] = av;
            da_dlogit[[i, j]] = av * (F::one() - av) / temp * dlogrho;
            let wv = state.weight_mean[[i, j]] + softplus(state.weight_scale_raw[[i, j]]) * draws.weight_normal[[i, j]];
            w[[i, j]] = wv;
            b[[i, j]] = av * wv;
        }
    }
    let ar: Array1<F> = Array1::from_shape_fn(n, |q| {
        state.latent_ar_mean[q] + softplus(state.latent_ar_scale_raw[q]) * draws.ar_normal[q]
    });
    // q(Z)
    let mut z = Array2::zeros((t_len, n));
    for t in 0..t_len {
        for q in 0..n {
            z[[t, q]] = state.latent_mean[[t, q]] + softplus(state.latent_scale_raw[[t, q]]) * draws.latent_normal[[t, q]];
        }
    }

    // residuals
    let mut rx = data.to_owned();
    let mut rz = z.clone();
    for t in 1..t_len {
        for i in 0..m {
            let mut pred = F::zero();
            for j in 0..m {
                pred += b[[i, j]] * data[[t - 1, j]];
            }
            for q in 0..n {
                pred += b[[i, m + q]] * z[[t - 1, q]];
            }
            rx[[t, i]] -= pred;
        }
        for q in 0..n {
            rz[[t, q]] -= ar[q] * z[[t - 1, q]];
        }
    }

    let obs_mix = state.obs_noise.constrained();
    let lat_mix = state.latent_noise.constrained();
    let obs_rows: Vec<MixtureRow<F>> = (0..m).map(|i| MixtureRow::from_params(&obs_mix, i)).collect();
    let lat_rows: Vec<MixtureRow<F>> = (0..n).map(|i| MixtureRow::from_params(&lat_mix, i)).collect();

    let c = dims.components;
    let mut g_rx = Array2::zeros((t_len, m));
    let mut g_rz = Array2::zeros((t_len, n));
    let mut g_obs = MixtureGrad::zeros(m, c);
    let mut g_lat = MixtureGrad::zeros(n, c);
    let obs_ll = mixture_loglik(
        &rx,
        &obs_rows,
        &obs_mix.weights,
        want_grad.then_some(&mut g_rx),
        want_grad.then_some(&mut g_obs),
    );
    let lat_ll = mixture_loglik(
        &rz,
        &lat_rows,
        &lat_mix.weights,
        want_grad.then_some(&mut g_rz),
        want_grad.then_some(&mut g_lat),
    );
    let edge_sum: F = a.iter().copied().sum();

    let sample = SampledQuantities {
        relaxed_adjacency: a.clone(),
        weights: w.clone(),
        latent_ar: ar.clone(),
        latent: z.clone(),
    };
    let terms = SampleTerms {
        obs_loglik: obs_ll,
        latent_logprior: lat_ll,
        edge_sum,
    };

    let Some((grad, scale)) = grad else {
        return Ok((terms, sample));
    };

    // backward through the residual recursions
    let mut g_b = Array2::<F>::zeros((m, k));
    let mut g_z = Array2::<F>::zeros((t_len, n));
    let mut g_ar = Array1::<F>::zeros(n);
    for t in 1..t_len {
        for i in 0..m {
            let gr = g_rx[[t, i]];
            if gr == F::zero() {
                continue;
            }
            for j in 0..m {
                g_b[[i, j]] -= gr * data[[t - 1, j]];
            }
            for q in 0..n {
                g_b[[i, m + q]] -= gr * z[[t - 1, q]];
                g_z[[t - 1, q]] -= gr * b[[i, m + q]];
            }
        }
        for q in 0..n {
            let gr = g_rz[[t, q]];
            g_ar[q] -= gr * z[[t - 1, q]];
            g_z[[t - 1, q]] -= gr * ar[q];
        }
    }
    g_z += &g_rz;

    for i in 0..m {
        for j in 0..k {
            let ga = g_b[[i, j]] * w[[i, j]] + lambda;
            let gw = g_b[[i, j]] * a[[i, j]];
            grad.edge_logits[[i, j]] += scale * ga * da_dlogit[[i, j]];
            grad.weight_mean[[i, j]] += scale * gw;
            grad.weight_scale_raw[[i, j]] +=
                scale * gw * draws.weight_normal[[i, j]] * sigmoid(state.weight_scale_raw[[i, j]]);
        }
    }
    for q in 0..n {
        grad.latent_ar_mean[q] += scale * g_ar[q];
        grad.latent_ar_scale_raw[q] += scale * g_ar[q] * draws.ar_normal[q] * sigmoid(state.latent_ar_scale_raw[q]);
    }
    for t in 0..t_len {
        for q in 0..n {
            let gz = g_z[[t, q]];
            grad.latent_mean[[t, q]] += scale * gz;
            grad.latent_scale_raw[[t, q]] +=
                scale * gz * draws.latent_normal[[t, q]] * sigmoid(state.latent_scale_raw[[t, q]]);
        }
    }
    add_mixture_grad(&mut grad.obs_noise, &state.obs_noise, &g_obs, scale);
    add_mixture_grad(&mut grad.latent_noise, &state.latent_noise, &g_lat, scale);
    Ok((terms, sample))
}

fn add_mixture_grad<F: Scalar>(
    out: &mut super::state::RawMixture<F>,
    raw: &super::state::RawMixture<F>,
    g: &MixtureGrad<F>,
    scale: F,
) {
    for ((idx, o), &gl) in out.logits.indexed_iter_mut().zip(g.logits.iter()) {
        *o += scale * gl;
        out.means[idx] += scale * g.means[idx];
        out.scale_raw[idx] += scale * g.scales[idx] * sigmoid(raw.scale_raw[idx]);
    }
}

/// KL terms of the full ELBO: `KL(q(A)‖p(A)) + KL(q(W)‖p(W)) + E_q[ln q(Z)]`.
fn kl_terms<F: Scalar>(
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    grad: Option<&mut VariationalState<F>>,
) -> Result<F> {
    let dims = state.dims;
    let (m, n) = (dims.observed, dims.latent);
    settings.prior.validate(m + n)?;
    let prior = settings.prior;
    let mut total = F::zero();
    let mut grad = grad;

    for (i, j) in free_adjacency_entries(m, n) {
        let l = state.edge_logits[[i, j]];
        let rho = sigmoid(l);
        let log_rho = -softplus(-l);
        let log_not = -softplus(l);
        let p: F = lit(prior.edge_prob.at(i, j));
        total += rho * (log_rho - p.ln()) + (F::one() - rho) * (log_not - (-p).ln_1p());
        if let Some(g) = grad.as_deref_mut() {
            g.edge_logits[[i, j]] += rho * (F::one() - rho) * (l - logit(p));
        }
    }

    let gauss_kl = |mu: F, raw: F, i: usize, j: usize| -> (F, F, F) {
        let s = softplus(raw);
        let pm: F = lit(prior.weight_mean.at(i, j));
        let ps: F = lit(prior.weight_std.at(i, j));
        let d = mu - pm;
        let v = (ps / s).ln() + (s * s + d * d) / (lit::<F>(2.0) * ps * ps) - lit(0.5);
        let g_mu = d / (ps * ps);
        let g_s = -F::one() / s + s / (ps * ps);
        (v, g_mu, g_s * sigmoid(raw))
    };
    for (i, j) in free_adjacency_entries(m, n) {
        let (v, gm, gr) = gauss_kl(state.weight_mean[[i, j]], state.weight_scale_raw[[i, j]], i, j);
        total += v;
        if let Some(g) = grad.as_deref_mut() {
            g.weight_mean[[i, j]] += gm;
            g.weight_scale_raw[[i, j]] += gr;
        }
    }
    for q in 0..n {
        let (v, gm, gr) = gauss_kl(state.latent_ar_mean[q], state.latent_ar_scale_raw[q], m + q, m + q);
        total += v;
        if let Some(g) = grad.as_deref_mut() {
            g.latent_ar_mean[q] += gm;
            g.latent_ar_scale_raw[q] += gr;
        }
    }

    // E_q[ln q(Z)] = −Σ (½ ln 2π + ½ + ln σ)
    let half: F = lit(0.5);
    for (idx, &raw) in state.latent_scale_raw.indexed_iter() {
        let s = softplus(raw);
        total -= half_ln_2pi::<F>() + half + s.ln();
        if let Some(g) = grad.as_deref_mut() {
            g.latent_scale_raw[idx] -= sigmoid(raw) / s;
        }
    }
    Ok(total)
}

fn run<F: Scalar>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    draws: &[NoiseDraws<F>],
    mut grad: Option<&mut VariationalState<F>>,
) -> Result<ObjectiveValue<F>> {
    check_inputs(data, state)?;
    if draws.is_empty() {
        return Err(Error::Structure("need at least one Monte-Carlo sample".into()));
    }
    let s_inv = F::one() / lit::<F>(draws.len() as f64);
    let mut obs = F::zero();
    let mut lat = F::zero();
    let mut edges = F::zero();
    let mut samples = Vec::with_capacity(draws.len());
    for d in draws {
        check_draws(&state.dims, d)?;
        let g = grad.as_deref_mut().map(|g| (g, s_inv));
        let (terms, sample) = evaluate_sample(data, state, d, settings, g)?;
        obs += terms.obs_loglik;
        lat += terms.latent_logprior;
        edges += terms.edge_sum;
        samples.push(sample);
    }
    obs *= s_inv;
    lat *= s_inv;
    let penalty = lit::<F>(settings.lambda) * edges * s_inv;
    let kl = match settings.mode {
        ObjectiveMode::Paper => F::zero(),
        ObjectiveMode::FullElbo => kl_terms(state, settings, grad.as_deref_mut())?,
    };
    for (name, v) in [
        ("observed log-likelihood", obs),
        ("latent log-prior", lat),
        ("sparsity penalty", penalty),
        ("KL terms", kl),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{name} is not finite")));
        }
    }
    let expected_loglik = obs + lat;
    Ok(ObjectiveValue {
        value: -expected_loglik + penalty + kl,
        expected_loglik,
        obs_loglik: obs,
        latent_logprior: lat,
        penalty,
        kl,
        samples,
    })
}

/// Objective estimate from `settings.mc_samples` fresh draws.
pub fn mc_objective<F: Scalar, R: Rng + ?Sized>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    rng: &mut R,
) -> Result<ObjectiveValue<F>> {
    let draws: Vec<_> = (0..settings.mc_samples.max(1))
        .map(|_| NoiseDraws::sample(&state.dims, rng))
        .collect();
    mc_objective_with(data, state, settings, &draws)
}

/// Objective estimate averaged over the given draws.
pub fn mc_objective_with<F: Scalar>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    draws: &[NoiseDraws<F>],
) -> Result<ObjectiveValue<F>> {
    run(data, state, settings, draws, None)
}

/// Objective and its gradient with respect to every unconstrained parameter.
pub fn objective_grad<F: Scalar, R: Rng + ?Sized>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    rng: &mut R,
) -> Result<(ObjectiveValue<F>, VariationalState<F>)> {
    let draws: Vec<_> = (0..settings.mc_samples.max(1))
        .map(|_| NoiseDraws::sample(&state.dims, rng))
        .collect();
    objective_grad_with(data, state, settings, &draws)
}

/// Gradient with the noise draws held fixed.
pub fn objective_grad_with<F: Scalar>(
    data: ArrayView2<F>,
    state: &VariationalState<F>,
    settings: &ObjectiveSettings<'_>,
    draws: &[NoiseDraws<F>],
) -> Result<(ObjectiveValue<F>, VariationalState<F>)> {
    let mut grad = VariationalState::zeros(state.dims);
    let v = run(data, state, settings, draws, Some(&mut grad))?;
    Ok((v, grad))
}

/// Largest violation of `|g − fd| ≤ max(abs_tol, rel_tol·max(|g|, |fd|))`
/// over central finite differences, per block: `(block, index, analytic, numeric)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub block: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient with central differences on `coords`
/// (all coordinates when `None`). Returns every coordinate out of tolerance.
pub fn check_gradient(
    data: ArrayView2<f64>,
    state: &VariationalState<f64>,
    settings: &ObjectiveSettings<'_>,
    draws: &[NoiseDraws<f64>],
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
    coords: Option<&[usize]>,
) -> Result<Vec<GradMismatch>> {
    let (_, grad) = objective_grad_with(data, state, settings, draws)?;
    let g = grad.to_flat();
    let base = state.to_flat();
    let layout = state.layout();
    let all: Vec<usize> = (0..base.len()).collect();
    let coords = coords.unwrap_or(&all);
    let mut probe = state.clone();
    let mut bad = Vec::new();
    let mut x = base.clone();
    for &c in coords {
        x[c] = base[c] + step;
        probe.set_flat(&x)?;
        let up = mc_objective_with(data, &probe, settings, draws)?.value;
        x[c] = base[c] - step;
        probe.set_flat(&x)?;
        let down = mc_objective_with(data, &probe, settings, draws)?.value;
        x[c] = base[c];
        let fd = (up - down) / (2.0 * step);
        let tol = abs_tol.max(rel_tol * g[c].abs().max(fd.abs()));
        if (g[c] - fd).abs() > tol {
            let (block, start, _) = layout
                .iter()
                .find(|(_, s, l)| c >= *s && c < s + l)
                .copied()
                .unwrap_or(("?", 0, 0));
            bad.push(GradMismatch {
                block,
                index: c - start,
                analytic: g[c],
                numeric: fd,
            });
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::PriorConfig;
    use crate::vi::sampling::sample_concrete;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn settings(prior: &PriorConfig, lambda: f64, temperature: f64, mode: ObjectiveMode) -> ObjectiveSettings<'_> {
        ObjectiveSettings {
            lambda,
            temperature,
            mc_samples: 1,
            mode,
            prior,
        }
    }

    fn random_instance(m: usize, n: usize, t: usize, c: usize, seed: u64) -> (Array2<f64>, VariationalState<f64>) {
        let dims = ModelDims::new(m, n, t, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = VariationalState::initial(dims, &mut rng).unwrap();
        // move away from the symmetric start so every block matters
        let mut flat = state.to_flat();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        state.set_flat(&flat).unwrap();
        let data = Array2::from_shape_fn((t, m), |_| rng.random_range(-2.0..2.0));
        (data, state)
    }

    #[test]
    fn penalty_closed_form_at_midpoint() {
        let prior = PriorConfig::default();
        let dims = ModelDims::new(2, 1, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = VariationalState::initial(dims, &mut rng).unwrap();
        // ρ̂ → 1 (clamped), u = 0.5 gives relaxed A ≈ 0.5 on every edge
        state.edge_logits.fill(40.0);
        let data = Array2::zeros((4, 2));
        let draws = vec![NoiseDraws::constant(&dims, 0.5, 0.0)];
        let lambda = 3.0;
        let v = mc_objective_with(data.view(), &state, &settings(&prior, lambda, 1.0, ObjectiveMode::Paper), &draws).unwrap();
        let k = 2 * 3;
        assert!((v.penalty - lambda * 0.5 * k as f64).abs() < 1e-4);
        let v0 = mc_objective_with(data.view(), &state, &settings(&prior, 0.0, 1.0, ObjectiveMode::Paper), &draws).unwrap();
        assert_eq!(v0.penalty, 0.0);
    }

    #[test]
    fn tiny_instance_matches_hand_chain() {
        // m = 1, n = 0, T = 3, C = 1
        let prior = PriorConfig::default();
        let dims = ModelDims::new(1, 0, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = VariationalState::initial(dims, &mut rng).unwrap();
        state.edge_logits[[0, 0]] = 0.8;
        state.weight_mean[[0, 0]] = 0.6;
        state.obs_noise.means[[0, 0]] = 0.2;
        state.obs_noise.scale_raw[[0, 0]] = 0.3;
        let data = ndarray::array![[1.0], [0.4], [-0.7]];
        let draws = vec![NoiseDraws::sample(&dims, &mut rng)];
        let v = mc_objective_with(data.view(), &state, &settings(&prior, 0.0, 0.5, ObjectiveMode::Paper), &draws).unwrap();

        let rho = 1.0 / (1.0 + (-0.8f64).exp());
        let a = sample_concrete(rho, 0.5, draws[0].edge_uniform[[0, 0]]).unwrap();
        let sw = (0.1f64.exp_m1().ln()).exp().ln_1p(); // softplus(softplus_inv(0.1))
        let w = 0.6 + sw * draws[0].weight_normal[[0, 0]];
        let mu = 0.2;
        let sd = 0.3f64.exp().ln_1p();
        let logn = |x: f64| -0.5 * ((x - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let expect = logn(1.0) + logn(0.4 - a * w * 1.0) + logn(-0.7 - a * w * 0.4);
        assert!((v.expected_loglik - expect).abs() < 1e-12, "{} vs {}", v.expected_loglik, expect);
        assert!((v.value + expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(2, 1, 6, 2, 3);
        let s = settings(&prior, 1.0, 0.5, ObjectiveMode::Paper);
        let a = mc_objective(data.view(), &state, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mc_objective(data.view(), &state, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences_paper_mode() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(2, 1, 5, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = vec![NoiseDraws::sample(&state.dims, &mut rng)];
        let s = settings(&prior, 0.7, 1.0, ObjectiveMode::Paper);
        let bad = check_gradient(data.view(), &state, &s, &draws, 1e-5, 1e-4, 1e-6, None).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn gradient_matches_finite_differences_full_elbo() {
        let prior = PriorConfig {
            edge_prob: crate::likelihood::PriorValue::Global(0.3),
            weight_mean: crate::likelihood::PriorValue::Global(0.2),
            weight_std: crate::likelihood::PriorValue::Global(0.8),
        };
        let (data, state) = random_instance(3, 2, 6, 3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<_> = (0..2).map(|_| NoiseDraws::sample(&state.dims, &mut rng)).collect();
        let mut s = settings(&prior, 0.4, 0.8, ObjectiveMode::FullElbo);
        s.mc_samples = 2;
        let bad = check_gradient(data.view(), &state, &s, &draws, 1e-5, 1e-4, 1e-6, None).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn penalty_gradient_matches_symbolic_derivative() {
        // d/dℓ λ·sigmoid((ln σ(ℓ) + logit u)/λ0) at u = 0.5, λ0 = 1:
        // λ · A(1−A) · (1 − σ(ℓ)) with A = σ(ln σ(ℓ))
        let prior = PriorConfig::default();
        let dims = ModelDims::new(1, 0, 2, 1).unwrap();
        let mut state = VariationalState::<f64>::zeros(dims);
        state.obs_noise.scale_raw.fill(0.5);
        let l = 0.3;
        state.edge_logits[[0, 0]] = l;
        let data = Array2::zeros((2, 1));
        let draws = vec![NoiseDraws::constant(&dims, 0.5, 0.0)];
        let lambda = 2.5;
        let (_, g) = objective_grad_with(data.view(), &state, &settings(&prior, lambda, 1.0, ObjectiveMode::Paper), &draws).unwrap();
        let rho = 1.0 / (1.0 + (-l as f64).exp());
        let a = 1.0 / (1.0 + (-rho.ln()).exp());
        let expect = lambda * a * (1.0 - a) * (1.0 - rho);
        assert!((g.edge_logits[[0, 0]] - expect).abs() < 1e-14);
    }

    #[test]
    fn unused_latent_parameters_have_zero_gradient() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(2, 0, 5, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, g) = objective_grad(data.view(), &state, &settings(&prior, 1.0, 0.5, ObjectiveMode::Paper), &mut rng).unwrap();
        assert!(g.latent_mean.is_empty() && g.latent_scale_raw.is_empty());
        assert!(g.latent_noise.means.is_empty());
    }

    #[test]
    fn many_sample_estimate_is_mean_of_single_samples() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(3, 2, 8, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<_> = (0..64).map(|_| NoiseDraws::sample(&state.dims, &mut rng)).collect();
        let mut s = settings(&prior, 0.5, 0.7, ObjectiveMode::Paper);
        s.mc_samples = 64;
        let joint = mc_objective_with(data.view(), &state, &s, &draws).unwrap().value;
        let singles: f64 = draws
            .iter()
            .map(|d| mc_objective_with(data.view(), &state, &s, std::slice::from_ref(d)).unwrap().value)
            .sum::<f64>()
            / 64.0;
        assert!((joint - singles).abs() < 1e-10 * joint.abs().max(1.0));
    }

    #[test]
    fn factors_sample_independently() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(3, 2, 6, 2, 5);
        let draws = vec![NoiseDraws::sample(&state.dims, &mut ChaCha8Rng::seed_from_u64(1))];
        let s = settings(&prior, 0.5, 0.7, ObjectiveMode::Paper);
        let base = mc_objective_with(data.view(), &state, &s, &draws).unwrap().samples.remove(0);

        let mut w_changed = state.clone();
        w_changed.weight_mean.mapv_inplace(|v| v + 1.0);
        let w = mc_objective_with(data.view(), &w_changed, &s, &draws).unwrap().samples.remove(0);
        assert_ne!(w.weights, base.weights);
        assert_eq!(w.relaxed_adjacency, base.relaxed_adjacency);
        assert_eq!(w.latent, base.latent);

        let mut a_changed = state.clone();
        a_changed.edge_logits.mapv_inplace(|v| v - 1.0);
        let a = mc_objective_with(data.view(), &a_changed, &s, &draws).unwrap().samples.remove(0);
        assert_ne!(a.relaxed_adjacency, base.relaxed_adjacency);
        assert_eq!(a.weights, base.weights);
        assert_eq!(a.latent, base.latent);

        let mut z_changed = state.clone();
        z_changed.latent_mean.mapv_inplace(|v| v + 1.0);
        let z = mc_objective_with(data.view(), &z_changed, &s, &draws).unwrap().samples.remove(0);
        assert_ne!(z.latent, base.latent);
        assert_eq!(z.relaxed_adjacency, base.relaxed_adjacency);
        assert_eq!(z.weights, base.weights);
        assert_eq!(z.latent_ar, base.latent_ar);
    }

    #[test]
    fn expected_penalty_monotone_in_lambda() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(3, 1, 5, 2, 6);
        let draws: Vec<_> = (0..8).map(|_| NoiseDraws::sample(&state.dims, &mut ChaCha8Rng::seed_from_u64(3))).collect();
        let mut last = -1.0;
        for lambda in [0.0, 0.1, 1.0, 10.0] {
            let mut s = settings(&prior, lambda, 0.5, ObjectiveMode::Paper);
            s.mc_samples = 8;
            let p = mc_objective_with(data.view(), &state, &s, &draws).unwrap().penalty;
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn shape_errors() {
        let prior = PriorConfig::default();
        let (data, state) = random_instance(2, 1, 5, 2, 1);
        let s = settings(&prior, 1.0, 0.5, ObjectiveMode::Paper);
        let wrong = Array2::zeros((4, 2));
        assert!(mc_objective(wrong.view(), &state, &s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let other = ModelDims::new(2, 1, 6, 2).unwrap();
        let draws = vec![NoiseDraws::constant(&other, 0.5, 0.0)];
        assert!(mc_objective_with(data.view(), &state, &s, &draws).is_err());
    }
}
