//! Per-series stochastic volatility.
//!
//! Each orthogonalized residual u_{t,n} carries variance s_{t,n} whose log
//! follows an AR(1): ln s_t = μ + ψ(ln s_{t-1} − μ) + σ η_t, with stationary
//! initial state. Sampling follows the auxiliary-mixture route: ln u² is a
//! log-χ² observation approximated by a 10-component Gaussian mixture, the
//! log-volatility path is drawn by forward-filter backward-sampling, and the
//! parameters (μ, ψ, σ) are updated in the centered parameterization followed
//! by one non-centered interweaving redraw of (μ, σ).
//!
//! Priors: μ ~ N(0, 100), (1+ψ)/2 ~ Beta(5, 1.5), σ² ~ Gamma(1/2, 1/2)
//! (equivalently σ ~ N(0, 1) up to sign).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gig::sample_gig;

/// Offset inside ln(u² + offset). Guards only the measure-zero event of an
/// exactly vanishing residual; any larger value would censor the smallest
/// log-volatility states.
pub const SV_OFFSET: f64 = 1e-300;

/// Beta(5, 1.5) prior on (1+ψ)/2.
pub const PSI_PRIOR: (f64, f64) = (5.0, 1.5);

/// Prior variance of μ.
pub const MU_PRIOR_VAR: f64 = 100.0;

/// 10-component Gaussian mixture approximation of the ln χ²₁ distribution
/// (Omori–Chib–Shephard–Nakajima constants): probabilities, means, variances.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384,
    -14.65000,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// AR(1) law of one series' log variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    pub mu: f64,
    /// Persistence, |ψ| < 1.
    pub psi: f64,
    /// Innovation standard deviation, σ > 0.
    pub sigma: f64,
}

impl SvParams {
    /// Stationary variance σ²/(1−ψ²) of the initial log-state.
    pub fn stationary_var(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.psi * self.psi)
    }
}

/// Log-volatility path of one series: latent initial state plus one state per
/// observation.
#[derive(Debug, Clone)]
pub struct SvSeries {
    pub params: SvParams,
    pub h0: f64,
    pub h: Vec<f64>,
}

impl SvSeries {
    pub fn variance_at(&self, t: usize) -> f64 {
        self.h[t].exp()
    }

    pub fn last_log_var(&self) -> f64 {
        *self.h.last().unwrap_or(&self.h0)
    }
}

/// All series' volatility states.
#[derive(Debug, Clone)]
pub struct VolatilityState {
    pub series: Vec<SvSeries>,
}

impl VolatilityState {
    /// Calm deterministic start: μ=0, ψ=0.9, σ=0.2, flat path.
    pub fn init_default(n: usize, t: usize) -> Self {
        let series = (0..n)
            .map(|_| SvSeries {
                params: SvParams {
                    mu: 0.0,
                    psi: 0.9,
                    sigma: 0.2,
                },
                h0: 0.0,
                h: vec![0.0; t],
            })
            .collect();
        Self { series }
    }

    /// Draw parameters and paths from the prior (Geweke simulators).
    pub fn init_prior(n: usize, t: usize, rng: &mut impl Rng) -> Self {
        let series = (0..n)
            .map(|_| {
                let params = sample_params_prior(rng);
                let (h0, h) = simulate_path(&params, t, rng);
                SvSeries { params, h0, h }
            })
            .collect();
        Self { series }
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// T×N matrix of variances s_{t,n}.
    pub fn variance_matrix(&self) -> DMatrix<f64> {
        let n = self.series.len();
        let t = self.series[0].h.len();
        DMatrix::from_fn(t, n, |tt, nn| self.series[nn].h[tt].exp())
    }
}

/// Prior draw of (μ, ψ, σ).
pub fn sample_params_prior(rng: &mut impl Rng) -> SvParams {
    let z: f64 = StandardNormal.sample(rng);
    let mu = MU_PRIOR_VAR.sqrt() * z;
    let beta = rand_distr::Beta::new(PSI_PRIOR.0, PSI_PRIOR.1).unwrap();
    let psi = 2.0 * beta.sample(rng) - 1.0;
    let zs: f64 = StandardNormal.sample(rng);
    let sigma = zs.abs();
    SvParams { mu, psi, sigma }
}

/// Simulate a path (h0, h_1..h_T) from the AR(1) law.
pub fn simulate_path(params: &SvParams, t: usize, rng: &mut impl Rng) -> (f64, Vec<f64>) {
    let z0: f64 = StandardNormal.sample(rng);
    let h0 = params.mu + params.stationary_var().sqrt() * z0;
    let mut h = Vec::with_capacity(t);
    let mut prev = h0;
    for _ in 0..t {
        let z: f64 = StandardNormal.sample(rng);
        let next = params.mu + params.psi * (prev - params.mu) + params.sigma * z;
        h.push(next);
        prev = next;
    }
    (h0, h)
}

/// Sample mixture indicators given the log-squared observations and the
/// current path.
fn sample_indicators(obs: &[f64], h: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(obs.len());
    let mut weights = [0.0f64; 10];
    for (t, &o) in obs.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for k in 0..10 {
            let resid = o - h[t] - MIX_MEAN[k];
            let lw = MIX_PROB[k].ln() - 0.5 * MIX_VAR[k].ln() - resid * resid / (2.0 * MIX_VAR[k]);
            weights[k] = lw;
            max = max.max(lw);
        }
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        let mut u = rng.random::<f64>() * total;
        let mut idx = 9;
        for (k, w) in weights.iter().enumerate() {
            if u <= *w {
                idx = k;
                break;
            }
            u -= w;
        }
        out.push(idx);
    }
    out
}

/// Forward-filter backward-sample the log-volatility path given mixture
/// indicators. `obs` holds ln(u² + offset); the effective observation of h_t
/// is obs_t − m_{k_t} with variance v²_{k_t}.
pub fn ffbs_log_vol(
    obs: &[f64],
    indicators: &[usize],
    params: &SvParams,
    rng: &mut impl Rng,
) -> (f64, Vec<f64>) {
    let t_len = obs.len();
    let (mu, psi, sig2) = (params.mu, params.psi, params.sigma * params.sigma);
    // Filtered means/variances for h_0..h_T; index 0 is the initial state.
    let mut fm = vec![0.0; t_len + 1];
    let mut fv = vec![0.0; t_len + 1];
    fm[0] = mu;
    fv[0] = params.stationary_var();
    let mut pred_mean = vec![0.0; t_len + 1];
    let mut pred_var = vec![0.0; t_len + 1];
    for t in 1..=t_len {
        let a = mu + psi * (fm[t - 1] - mu);
        let r = psi * psi * fv[t - 1] + sig2;
        pred_mean[t] = a;
        pred_var[t] = r;
        let k = indicators[t - 1];
        let v = MIX_VAR[k];
        let o = obs[t - 1] - MIX_MEAN[k];
        let gain = r / (r + v);
        fm[t] = a + gain * (o - a);
        fv[t] = (1.0 - gain) * r;
    }
    // Backward sampling.
    let mut h = vec![0.0; t_len + 1];
    let zt: f64 = StandardNormal.sample(rng);
    h[t_len] = fm[t_len] + fv[t_len].max(0.0).sqrt() * zt;
    for t in (0..t_len).rev() {
        let r_next = pred_var[t + 1];
        let a_next = pred_mean[t + 1];
        let gain = psi * fv[t] / r_next;
        let mean = fm[t] + gain * (h[t + 1] - a_next);
        let var = fv[t] - gain * psi * fv[t];
        let z: f64 = StandardNormal.sample(rng);
        h[t] = mean + var.max(0.0).sqrt() * z;
    }
    (h[0], h[1..].to_vec())
}

/// Centered-parameterization updates of (σ², ψ, μ) given the path.
fn update_params_centered(
    params: &mut SvParams,
    h0: f64,
    h: &[f64],
    rng: &mut impl Rng,
) -> Result<()> {
    let t_len = h.len() as f64;
    // σ² | h, μ, ψ ~ GIG(−T/2, SSE, 1) under the Gamma(1/2, 1/2) prior.
    let (mu, psi) = (params.mu, params.psi);
    let mut sse = (1.0 - psi * psi) * (h0 - mu).powi(2);
    let mut prev = h0;
    for &ht in h {
        let e = ht - mu - psi * (prev - mu);
        sse += e * e;
        prev = ht;
    }
    let sig2 = sample_gig(-t_len / 2.0, sse.max(1e-300), 1.0, rng)?;
    params.sigma = sig2.sqrt();

    // ψ: Gaussian proposal from the AR regression part, which cancels in the
    // MH ratio and leaves the Beta prior times the stationary initial term.
    let sig2 = params.sigma * params.sigma;
    let lagged: Vec<f64> = std::iter::once(h0)
        .chain(h[..h.len() - 1].iter().copied())
        .collect();
    let sxx: f64 = lagged.iter().map(|x| (x - mu).powi(2)).sum();
    let sxy: f64 = lagged.iter().zip(h).map(|(x, y)| (x - mu) * (y - mu)).sum();
    if sxx > 0.0 {
        let psi_hat = sxy / sxx;
        let prop_sd = (sig2 / sxx).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        let proposal = psi_hat + prop_sd * z;
        if proposal.abs() < 1.0 {
            let log_extra = |p: f64| {
                (PSI_PRIOR.0 - 1.0) * (1.0 + p).ln() + (PSI_PRIOR.1 - 1.0) * (1.0 - p).ln()
                    + 0.5 * (1.0 - p * p).ln()
                    - (1.0 - p * p) * (h0 - mu).powi(2) / (2.0 * sig2)
            };
            let log_alpha = log_extra(proposal) - log_extra(params.psi);
            if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
                params.psi = proposal;
            }
        }
    }

    // μ | h, ψ, σ²: Gaussian conjugate with N(0, 100) prior.
    let psi = params.psi;
    let sig2 = params.sigma * params.sigma;
    let mut quad = (1.0 - psi * psi) + t_len * (1.0 - psi) * (1.0 - psi);
    let mut lin = (1.0 - psi * psi) * h0;
    prev = h0;
    for &ht in h {
        lin += (1.0 - psi) * (ht - psi * prev);
        prev = ht;
    }
    quad /= sig2;
    lin /= sig2;
    let precision = quad + 1.0 / MU_PRIOR_VAR;
    let mean = lin / precision;
    let z: f64 = StandardNormal.sample(rng);
    params.mu = mean + z / precision.sqrt();
    Ok(())
}

/// One non-centered interweaving redraw of (μ, σ): with h̃ = (h − μ)/σ held
/// fixed, the mixture observations regress linearly on (1, h̃) with N(0,100)
/// and N(0,1) priors; σ keeps its magnitude, a negative draw flips h̃.
fn interweave_mu_sigma(
    params: &mut SvParams,
    h0: &mut f64,
    h: &mut [f64],
    obs: &[f64],
    indicators: &[usize],
    rng: &mut impl Rng,
) -> Result<()> {
    let (mu, sigma) = (params.mu, params.sigma);
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be positive"));
    }
    let tilde0 = (*h0 - mu) / sigma;
    let tilde: Vec<f64> = h.iter().map(|&x| (x - mu) / sigma).collect();
    let mut a11 = 1.0 / MU_PRIOR_VAR;
    let mut a12 = 0.0;
    let mut a22 = 1.0; // N(0,1) prior on signed σ
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (t, &o) in obs.iter().enumerate() {
        let k = indicators[t];
        let w = 1.0 / MIX_VAR[k];
        let o_adj = o - MIX_MEAN[k];
        a11 += w;
        a12 += w * tilde[t];
        a22 += w * tilde[t] * tilde[t];
        b1 += w * o_adj;
        b2 += w * o_adj * tilde[t];
    }
    // 2×2 precision solve plus correlated Gaussian draw.
    let det = a11 * a22 - a12 * a12;
    if det <= 0.0 {
        return Err(Error::invalid("singular interweaving precision"));
    }
    let mean_mu = (a22 * b1 - a12 * b2) / det;
    let mean_sg = (a11 * b2 - a12 * b1) / det;
    // Cholesky of the precision [[a11, a12], [a12, a22]].
    let l11 = a11.sqrt();
    let l21 = a12 / l11;
    let l22 = (a22 - l21 * l21).sqrt();
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    // Solve Lᵀ e = z.
    let e2 = z2 / l22;
    let e1 = (z1 - l21 * e2) / l11;
    let mu_new = mean_mu + e1;
    let sg_new = mean_sg + e2;
    let (sigma_new, flip) = if sg_new < 0.0 { (-sg_new, -1.0) } else { (sg_new, 1.0) };
    if sigma_new == 0.0 {
        return Ok(());
    }
    params.mu = mu_new;
    params.sigma = sigma_new;
    *h0 = mu_new + sigma_new * flip * tilde0;
    for (ht, &td) in h.iter_mut().zip(&tilde) {
        *ht = mu_new + sigma_new * flip * td;
    }
    Ok(())
}

/// Expose the centered parameter kernel for diagnostics and tests.
#[doc(hidden)]
pub fn centered_updates_for_test(
    params: &mut SvParams,
    h0: f64,
    h: &[f64],
    rng: &mut impl Rng,
) {
    update_params_centered(params, h0, h, rng).unwrap();
}

/// Expose the non-centered interweaving kernel for diagnostics and tests.
#[doc(hidden)]
pub fn interweave_for_test(
    params: &mut SvParams,
    h0: &mut f64,
    h: &mut [f64],
    obs: &[f64],
    indicators: &[usize],
    rng: &mut impl Rng,
) {
    interweave_mu_sigma(params, h0, h, obs, indicators, rng).unwrap();
}

/// Expose FFBS indicator sampling for diagnostics and tests.
#[doc(hidden)]
pub fn indicators_for_test(obs: &[f64], h: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    sample_indicators(obs, h, rng)
}

/// Full volatility sweep for every series given the orthogonalized residual
/// matrix (T×N): mixture indicators, FFBS path, centered parameter updates,
/// non-centered interweave, with |ψ| < 1 kept by rejection.
pub fn draw_sv(
    residuals: &DMatrix<f64>,
    vol: &mut VolatilityState,
    rng: &mut impl Rng,
) -> Result<()> {
    let (t_len, n) = residuals.shape();
    if n != vol.series.len() || vol.series.iter().any(|s| s.h.len() != t_len) {
        return Err(Error::invalid("residual/volatility shape mismatch"));
    }
    for (idx, series) in vol.series.iter_mut().enumerate() {
        let obs: Vec<f64> = (0..t_len)
            .map(|t| (residuals[(t, idx)].powi(2) + SV_OFFSET).ln())
            .collect();
        let indicators = sample_indicators(&obs, &series.h, rng);
        let (h0, h) = ffbs_log_vol(&obs, &indicators, &series.params, rng);
        series.h0 = h0;
        series.h = h;
        update_params_centered(&mut series.params, series.h0, &series.h, rng)?;
        interweave_mu_sigma(
            &mut series.params,
            &mut series.h0,
            &mut series.h,
            &obs,
            &indicators,
            rng,
        )?;
    }
    Ok(())
}

/// Simulate volatility paths forward `horizon` steps from the last state
/// (used by the predictive machinery).
pub fn simulate_forward(
    params: &SvParams,
    last_log_var: f64,
    horizon: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon);
    let mut prev = last_log_var;
    for _ in 0..horizon {
        let z: f64 = StandardNormal.sample(rng);
        let next = params.mu + params.psi * (prev - params.mu) + params.sigma * z;
        out.push(next);
        prev = next;
    }
    out
}
