//! One full MCMC sweep of the tensor VAR.
//!
//! A sweep draws the three factor blocks from their Gaussian full
//! conditionals, runs the three interweaving moves that rescale factor pairs
//! through GIG draws of squared first-row margins, then updates the own-lag
//! matrix, the triangular error matrix, the stochastic volatilities and all
//! prior hyperparameters. Chains are independent units; a sweep owns its
//! state and RNG stream.
//!
//! The blocked representations treat, in turn,
//!   vec(B1)  with design f_t' ⊗ I_N,
//!   vec(B2') with design entries B1[i1,r]·u_t[i2,r], u_t = X_t B3,
//!   vec(B3)  with design entries B1[i1,r]·v_t[p,r],  v_t = X_t' B2,
//! all whitened by H and the time-varying variances. The Gram matrices are
//! accumulated from these low-rank structures instead of materialized
//! Kronecker designs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
pub use crate::gig::sample_gig;
use crate::linalg::sample_gaussian_precision;
use crate::mgp::MgpState;
use crate::shrinkage::{MdgdpState, NormalGammaState};
use crate::sv::{draw_sv, VolatilityState};
use crate::tensor::CpTensor3;

/// Margin prior attached to the tensor factors.
#[derive(Debug, Clone)]
pub enum MarginPrior {
    Mgp(MgpState),
    Mdgdp(MdgdpState),
    /// Independent N(0,1) margins, the plain benchmark setting.
    StdNormal { n: usize, p: usize },
}

impl MarginPrior {
    /// Prior sd of the margin in stacked row `row`, column `r`.
    #[inline]
    pub fn sd_at_row(&self, row: usize, r: usize) -> f64 {
        match self {
            MarginPrior::Mgp(s) => s.prior_sd_at_row(row, r),
            MarginPrior::Mdgdp(s) => s.prior_sd_at_row(row, r),
            MarginPrior::StdNormal { .. } => 1.0,
        }
    }

    /// Hyperparameter sweep given the stacked tensor matrix.
    pub fn update_hyper(&mut self, b: &DMatrix<f64>, rng: &mut impl Rng) -> Result<()> {
        match self {
            MarginPrior::Mgp(s) => {
                s.update_phi(b, rng);
                s.update_delta(b, rng);
                s.update_a1_a2(rng);
                Ok(())
            }
            MarginPrior::Mdgdp(s) => s.mdgdp_update(b, rng),
            MarginPrior::StdNormal { .. } => Ok(()),
        }
    }

    pub fn supports_rank_adaptation(&self) -> bool {
        matches!(self, MarginPrior::Mgp(_))
    }
}

/// Own-lag coefficients d_{i,p} with their normal-gamma shrinkage state.
#[derive(Debug, Clone)]
pub struct OwnLagMatrix {
    /// N×P values; row i holds variable i's own-lag coefficients.
    pub values: DMatrix<f64>,
    pub prior: NormalGammaState,
}

impl OwnLagMatrix {
    pub fn zeros(n: usize, p: usize, rng: &mut impl Rng) -> Self {
        Self {
            values: DMatrix::zeros(n, p),
            prior: NormalGammaState::init_prior(n * p, rng),
        }
    }

    /// Row-major flattening (i, p) matching the prior's ψ layout.
    pub fn flat(&self) -> Vec<f64> {
        let (n, p) = self.values.shape();
        let mut out = Vec::with_capacity(n * p);
        for i in 0..n {
            for pp in 0..p {
                out.push(self.values[(i, pp)]);
            }
        }
        out
    }

    #[inline]
    fn psi_index(&self, i: usize, p: usize) -> usize {
        i * self.values.ncols() + p
    }

    pub fn prior_variance(&self, i: usize, p: usize) -> f64 {
        self.prior.variance(self.psi_index(i, p))
    }
}

/// Triangular error factorization plus stochastic volatility.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    /// Unit-lower-triangular H.
    pub h: DMatrix<f64>,
    /// Normal-gamma state over the strict lower triangle, row-major.
    pub h_prior: NormalGammaState,
    pub vol: VolatilityState,
}

impl ErrorModel {
    pub fn identity(n: usize, t_eff: usize, rng: &mut impl Rng) -> Self {
        Self {
            h: DMatrix::identity(n, n),
            h_prior: NormalGammaState::init_prior(n * (n - 1) / 2, rng),
            vol: VolatilityState::init_default(n, t_eff),
        }
    }

    /// Strict lower triangle flattened row-major: (1,0), (2,0), (2,1), …
    pub fn h_lower_flat(&self) -> Vec<f64> {
        let n = self.h.nrows();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 1..n {
            for j in 0..i {
                out.push(self.h[(i, j)]);
            }
        }
        out
    }

    #[inline]
    fn h_psi_index(i: usize, j: usize) -> usize {
        i * (i - 1) / 2 + j
    }
}

/// Full sampler state of one chain.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub cp: CpTensor3,
    pub margin_prior: MarginPrior,
    pub own_lag: Option<OwnLagMatrix>,
    pub error: ErrorModel,
}

/// Which pieces a sweep updates. Production runs enable everything; the
/// interweave toggle also drives the mixing comparison.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    pub interweave: bool,
    pub update_margin_hyper: bool,
    pub update_error_hyper: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            interweave: true,
            update_margin_hyper: true,
            update_error_hyper: true,
        }
    }
}

/// Per-sweep bookkeeping.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepInfo {
    /// Interweaving columns skipped because a first-row margin was zero.
    pub interweave_skipped: usize,
}

/// Lagged VAR data: effective responses and their stacked regressors.
#[derive(Debug, Clone)]
pub struct VarData {
    /// T_eff × N responses (first P panel rows consumed as initial lags).
    pub y: DMatrix<f64>,
    /// T_eff × (N·P) regressors, x_t = (y'_{t-1}, …, y'_{t-P}).
    pub x: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
}

impl VarData {
    pub fn from_panel(panel: &DMatrix<f64>, p: usize) -> Result<Self> {
        let (t_total, n) = panel.shape();
        if p == 0 || t_total < p {
            return Err(Error::invalid(format!(
                "panel with {t_total} rows cannot host lag order {p}"
            )));
        }
        let t_eff = t_total - p;
        let mut y = DMatrix::zeros(t_eff, n);
        let mut x = DMatrix::zeros(t_eff, n * p);
        for t in 0..t_eff {
            for i in 0..n {
                y[(t, i)] = panel[(t + p, i)];
            }
            for lag in 1..=p {
                for i in 0..n {
                    x[(t, (lag - 1) * n + i)] = panel[(t + p - lag, i)];
                }
            }
        }
        Ok(Self { y, x, n, p })
    }

    pub fn t_eff(&self) -> usize {
        self.y.nrows()
    }

    /// N×P lag matrix X_t = (y_{t-1}, …, y_{t-P}).
    pub fn lag_matrix_at(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, pp| self.x[(t, pp * self.n + i)])
    }

    /// Own-lag regressor y^{(j)}_t = (y_{t-1,j}, …, y_{t-P,j}).
    #[inline]
    pub fn own_lags_at(&self, t: usize, j: usize) -> DVector<f64> {
        DVector::from_fn(self.p, |pp, _| self.x[(t, pp * self.n + j)])
    }
}

/// (D x_t)_i for every t, i: zero when the model carries no own-lag matrix.
fn own_lag_fit(state: &ModelState, data: &VarData) -> DMatrix<f64> {
    let t_eff = data.t_eff();
    let mut out = DMatrix::zeros(t_eff, data.n);
    if let Some(own) = &state.own_lag {
        for t in 0..t_eff {
            for i in 0..data.n {
                let mut acc = 0.0;
                for pp in 0..data.p {
                    acc += own.values[(i, pp)] * data.x[(t, pp * data.n + i)];
                }
                out[(t, i)] = acc;
            }
        }
    }
    out
}

/// Tensor-part fit B1·f_t for every t, along with the factor paths.
pub fn tensor_fit(cp: &CpTensor3, data: &VarData) -> (DMatrix<f64>, DMatrix<f64>) {
    let t_eff = data.t_eff();
    let (n, p, r) = (data.n, data.p, cp.rank());
    let mut fit = DMatrix::zeros(t_eff, n);
    let mut factors = DMatrix::zeros(t_eff, r);
    for t in 0..t_eff {
        let mut f: DVector<f64> = DVector::zeros(r);
        for rr in 0..r {
            let mut acc = 0.0;
            for pp in 0..p {
                let b3 = cp.b3[(pp, rr)];
                if b3 == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for i2 in 0..n {
                    inner += cp.b2[(i2, rr)] * data.x[(t, pp * n + i2)];
                }
                acc += b3 * inner;
            }
            f[rr] = acc;
        }
        let yhat = &cp.b1 * &f;
        for i in 0..n {
            fit[(t, i)] = yhat[i];
        }
        for rr in 0..r {
            factors[(t, rr)] = f[rr];
        }
    }
    (fit, factors)
}

/// Residuals e_t = y_t − A_(1)x_t − D x_t.
pub fn residuals(state: &ModelState, data: &VarData) -> DMatrix<f64> {
    let (fit, _) = tensor_fit(&state.cp, data);
    let own = own_lag_fit(state, data);
    &data.y - fit - own
}

/// H'·diag(1/s_t)·H for one time index.
fn whitening_at(h: &DMatrix<f64>, s_mat: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let n = h.nrows();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let inv_s = 1.0 / s_mat[(t, i)];
        // Row i of H is zero beyond column i.
        for a in 0..=i {
            let ha = h[(i, a)] * inv_s;
            if ha == 0.0 {
                continue;
            }
            for b in 0..=a {
                w[(a, b)] += ha * h[(i, b)];
            }
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            w[(a, b)] = w[(b, a)];
        }
    }
    w
}

/// Gaussian full-conditional moments (mean, precision) of one factor block:
/// j = 1 targets vec(B1), j = 2 targets vec(B2'), j = 3 targets vec(B3).
pub fn b_block_moments(
    j: usize,
    state: &ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    sweep: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = (data.n, data.p);
    let r = state.cp.rank();
    let t_eff = data.t_eff();
    let h = &state.error.h;
    let own = own_lag_fit(state, data);
    let target = &data.y - own; // y − D x

    let dim = match j {
        1 | 2 => n * r,
        3 => p * r,
        _ => return Err(Error::invalid(format!("factor block {j} outside 1..=3"))),
    };
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    match j {
        1 => {
            for t in 0..t_eff {
                let w = whitening_at(h, s_mat, t);
                let xt = data.lag_matrix_at(t);
                let u = &xt * &state.cp.b3; // N×R
                let mut f: DVector<f64> = DVector::zeros(r);
                for rr in 0..r {
                    let mut acc = 0.0;
                    for i2 in 0..n {
                        acc += state.cp.b2[(i2, rr)] * u[(i2, rr)];
                    }
                    f[rr] = acc;
                }
                let e_t = target.row(t).transpose();
                let we = &w * &e_t;
                for r1 in 0..r {
                    for r2 in 0..=r1 {
                        let c = f[r1] * f[r2];
                        if c == 0.0 {
                            continue;
                        }
                        for a in 0..n {
                            for b in 0..n {
                                gram[(r1 * n + a, r2 * n + b)] += c * w[(a, b)];
                            }
                        }
                    }
                    for a in 0..n {
                        rhs[r1 * n + a] += f[r1] * we[a];
                    }
                }
            }
            symmetrize_blocks(&mut gram, r, n);
        }
        2 => {
            let c_mat = h * &state.cp.b1; // N×R
            for t in 0..t_eff {
                let xt = data.lag_matrix_at(t);
                let u = &xt * &state.cp.b3; // N×R, coefficient of B2[i2,r] is B1⊗u
                // M = C' S^{-1} C and g = C' S^{-1} H e.
                let mut m: DMatrix<f64> = DMatrix::zeros(r, r);
                let e_t = target.row(t).transpose();
                let he = h * &e_t;
                let mut g: DVector<f64> = DVector::zeros(r);
                for i in 0..n {
                    let inv_s = 1.0 / s_mat[(t, i)];
                    for r1 in 0..r {
                        let ci = c_mat[(i, r1)] * inv_s;
                        g[r1] += ci * he[i];
                        for r2 in 0..=r1 {
                            m[(r1, r2)] += ci * c_mat[(i, r2)];
                        }
                    }
                }
                for r1 in 0..r {
                    for r2 in 0..r1 {
                        m[(r2, r1)] = m[(r1, r2)];
                    }
                }
                for i2 in 0..n {
                    for r1 in 0..r {
                        let idx1 = i2 * r + r1;
                        let u1 = u[(i2, r1)];
                        if u1 == 0.0 {
                            continue;
                        }
                        rhs[idx1] += u1 * g[r1];
                        for i2b in 0..=i2 {
                            let r2_max = if i2b == i2 { r1 + 1 } else { r };
                            for r2 in 0..r2_max {
                                gram[(idx1, i2b * r + r2)] += u1 * m[(r1, r2)] * u[(i2b, r2)];
                            }
                        }
                    }
                }
            }
            mirror_lower(&mut gram);
        }
        3 => {
            let c_mat = h * &state.cp.b1;
            for t in 0..t_eff {
                let xt = data.lag_matrix_at(t);
                let v = xt.transpose() * &state.cp.b2; // P×R
                let mut m: DMatrix<f64> = DMatrix::zeros(r, r);
                let e_t = target.row(t).transpose();
                let he = h * &e_t;
                let mut g: DVector<f64> = DVector::zeros(r);
                for i in 0..n {
                    let inv_s = 1.0 / s_mat[(t, i)];
                    for r1 in 0..r {
                        let ci = c_mat[(i, r1)] * inv_s;
                        g[r1] += ci * he[i];
                        for r2 in 0..=r1 {
                            m[(r1, r2)] += ci * c_mat[(i, r2)];
                        }
                    }
                }
                for r1 in 0..r {
                    for r2 in 0..r1 {
                        m[(r2, r1)] = m[(r1, r2)];
                    }
                }
                for r1 in 0..r {
                    for pp in 0..p {
                        let idx1 = r1 * p + pp;
                        let v1 = v[(pp, r1)];
                        if v1 == 0.0 {
                            continue;
                        }
                        rhs[idx1] += v1 * g[r1];
                        for r2 in 0..=r1 {
                            let p_max = if r2 == r1 { pp + 1 } else { p };
                            for pb in 0..p_max {
                                gram[(idx1, r2 * p + pb)] += v1 * m[(r1, r2)] * v[(pb, r2)];
                            }
                        }
                    }
                }
            }
            mirror_lower(&mut gram);
        }
        _ => unreachable!(),
    }

    // Prior precision on the diagonal.
    let prior = &state.margin_prior;
    for idx in 0..dim {
        let (row, col) = stacked_address(j, idx, n, p, r);
        let sd = prior.sd_at_row(row, col);
        gram[(idx, idx)] += 1.0 / (sd * sd);
    }
    let chol = crate::linalg::cholesky(&gram, sweep)?;
    let mean = chol.solve(&rhs);
    Ok((mean, gram))
}

/// Map a flat target index to the stacked tensor-matrix (row, column).
fn stacked_address(j: usize, idx: usize, n: usize, p: usize, r: usize) -> (usize, usize) {
    match j {
        1 => (idx % n, idx / n),             // vec(B1): (r·N + i1)
        2 => (n + idx / r, idx % r),         // vec(B2'): (i2·R + r)
        3 => (2 * n + idx % p, idx / p),     // vec(B3): (r·P + p)
        _ => unreachable!(),
    }
}

/// Draw one factor block from its full conditional and write it into the
/// state.
pub fn draw_b_block(
    j: usize,
    state: &mut ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    sweep: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let (mean, precision) = b_block_moments(j, state, data, s_mat, sweep)?;
    let draw = sample_gaussian_precision(&mean, &precision, sweep, rng)?;
    let (n, p) = (data.n, data.p);
    let r = state.cp.rank();
    match j {
        1 => {
            for rr in 0..r {
                for i in 0..n {
                    state.cp.b1[(i, rr)] = draw[rr * n + i];
                }
            }
        }
        2 => {
            for i in 0..n {
                for rr in 0..r {
                    state.cp.b2[(i, rr)] = draw[i * r + rr];
                }
            }
        }
        3 => {
            for rr in 0..r {
                for pp in 0..p {
                    state.cp.b3[(pp, rr)] = draw[rr * p + pp];
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

/// One interweaving move over a factor pair. `first` is the block providing
/// the first-row scaling, `second` its partner; `gig_order` is the GIG order
/// of the squared first-row margin. Returns the number of skipped columns.
fn interweave_pair(
    first: &mut DMatrix<f64>,
    second: &mut DMatrix<f64>,
    first_sd: impl Fn(usize, usize) -> f64,
    second_sd: impl Fn(usize, usize) -> f64,
    gig_order: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    let r = first.ncols();
    let rows_first = first.nrows();
    let rows_second = second.nrows();
    let mut skipped = 0;
    for rr in 0..r {
        let d_old = first[(0, rr)];
        if d_old == 0.0 || !d_old.is_finite() {
            skipped += 1;
            continue;
        }
        // Rescaled pair: first† = first/d, second† = second·d.
        // χ sums the partner block, ψ the first block minus its pinned row.
        let mut chi = 0.0;
        for i in 0..rows_second {
            let v = second[(i, rr)] * d_old / second_sd(i, rr);
            chi += v * v;
        }
        let mut psi = 1.0 / first_sd(0, rr).powi(2);
        for i in 1..rows_first {
            let v = first[(i, rr)] / d_old / first_sd(i, rr);
            psi += v * v;
        }
        if !(chi.is_finite() && psi.is_finite()) || chi <= 0.0 {
            skipped += 1;
            continue;
        }
        let d_new_sq = sample_gig(gig_order, chi, psi, rng)?;
        // Signs of first-row entries survive the move.
        let d_new = d_old.signum() * d_new_sq.sqrt();
        let ratio = d_new / d_old;
        for i in 0..rows_first {
            first[(i, rr)] *= ratio;
        }
        for i in 0..rows_second {
            second[(i, rr)] /= ratio;
        }
    }
    Ok(skipped)
}

/// All three interweaving moves: (B1,B2) with order 0, (B2,B3) with order
/// (N−P)/2, (B3,B1) with order (P−N)/2.
pub fn interweave_sweep(
    cp: &mut CpTensor3,
    prior: &MarginPrior,
    rng: &mut impl Rng,
) -> Result<SweepInfo> {
    let n = cp.n_series();
    let p = cp.lag_order();
    let mut skipped = 0;
    {
        let (b1, b2) = (&mut cp.b1, &mut cp.b2);
        skipped += interweave_pair(
            b1,
            b2,
            |i, r| prior.sd_at_row(i, r),
            |i, r| prior.sd_at_row(n + i, r),
            0.0,
            rng,
        )?;
    }
    {
        let (b2, b3) = (&mut cp.b2, &mut cp.b3);
        skipped += interweave_pair(
            b2,
            b3,
            |i, r| prior.sd_at_row(n + i, r),
            |i, r| prior.sd_at_row(2 * n + i, r),
            (n as f64 - p as f64) / 2.0,
            rng,
        )?;
    }
    {
        let (b3, b1) = (&mut cp.b3, &mut cp.b1);
        skipped += interweave_pair(
            b3,
            b1,
            |i, r| prior.sd_at_row(2 * n + i, r),
            |i, r| prior.sd_at_row(i, r),
            (p as f64 - n as f64) / 2.0,
            rng,
        )?;
    }
    Ok(SweepInfo {
        interweave_skipped: skipped,
    })
}

fn interweave_pair_12(cp: &mut CpTensor3, prior: &MarginPrior, rng: &mut impl Rng) -> Result<usize> {
    let n = cp.n_series();
    interweave_pair(
        &mut cp.b1,
        &mut cp.b2,
        |i, r| prior.sd_at_row(i, r),
        |i, r| prior.sd_at_row(n + i, r),
        0.0,
        rng,
    )
}

fn interweave_pair_23(cp: &mut CpTensor3, prior: &MarginPrior, rng: &mut impl Rng) -> Result<usize> {
    let n = cp.n_series();
    let p = cp.lag_order();
    interweave_pair(
        &mut cp.b2,
        &mut cp.b3,
        |i, r| prior.sd_at_row(n + i, r),
        |i, r| prior.sd_at_row(2 * n + i, r),
        (n as f64 - p as f64) / 2.0,
        rng,
    )
}

fn interweave_pair_31(cp: &mut CpTensor3, prior: &MarginPrior, rng: &mut impl Rng) -> Result<usize> {
    let n = cp.n_series();
    let p = cp.lag_order();
    interweave_pair(
        &mut cp.b3,
        &mut cp.b1,
        |i, r| prior.sd_at_row(2 * n + i, r),
        |i, r| prior.sd_at_row(i, r),
        (p as f64 - n as f64) / 2.0,
        rng,
    )
}

/// Full-conditional moments of equation j's own-lag coefficients: the
/// likelihood stacks every row i ≥ j of the triangularized system, scaled by
/// h_{i,j} and the volatilities (the efficient accumulation of that
/// vectorized stacking).
pub fn own_lag_moments(
    state: &ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    j: usize,
    sweep: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = (data.n, data.p);
    let t_eff = data.t_eff();
    let (fit, _) = tensor_fit(&state.cp, data);
    let y_star = &data.y - fit; // y − A_(1) x
    let h = &state.error.h;
    let Some(own) = state.own_lag.as_ref() else {
        return Err(Error::invalid("model carries no own-lag matrix"));
    };
    let mut precision = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for t in 0..t_eff {
        let yj = data.own_lags_at(t, j);
        for i in j..n {
            let hij = h[(i, j)];
            if hij == 0.0 {
                continue;
            }
            // r̃_{t,i} = Σ_{i'≤i} h_{i,i'} (y*_{t,i'} − [i'≠j] y^{(i')'} d_{i'})
            let mut resid = 0.0;
            for ip in 0..=i {
                let mut v = y_star[(t, ip)];
                if ip != j {
                    for pp in 0..p {
                        v -= own.values[(ip, pp)] * data.x[(t, pp * n + ip)];
                    }
                }
                resid += h[(i, ip)] * v;
            }
            let w = 1.0 / s_mat[(t, i)];
            let hw = hij * w;
            for a in 0..p {
                rhs[a] += hw * resid * yj[a];
                for b in 0..=a {
                    precision[(a, b)] += hij * hw * yj[a] * yj[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            precision[(a, b)] = precision[(b, a)];
        }
        precision[(a, a)] += 1.0 / own.prior_variance(j, a);
    }
    for a in 0..p {
        for b in (a + 1)..p {
            precision[(b, a)] = precision[(a, b)];
        }
    }
    let chol = crate::linalg::cholesky(&precision, sweep)?;
    let mean = chol.solve(&rhs);
    Ok((mean, precision))
}

/// Own-lag draw: equations updated sequentially so each conditions on the
/// freshest d_{-j}.
pub fn draw_own_lag(
    state: &mut ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    sweep: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = data.n;
    let p = data.p;
    for j in 0..n {
        let (mean, precision) = own_lag_moments(state, data, s_mat, j, sweep)?;
        let draw = sample_gaussian_precision(&mean, &precision, sweep, rng)?;
        let own = state.own_lag.as_mut().expect("own-lag model");
        for pp in 0..p {
            own.values[(j, pp)] = draw[pp];
        }
    }
    Ok(())
}

/// Triangular error matrix: row i regresses e_{t,i}/√s_{t,i} on
/// −e_{t,1..i−1}/√s_{t,i} under the normal-gamma prior.
pub fn draw_triangular(
    state: &mut ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    sweep: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = data.n;
    if n == 1 {
        return Ok(());
    }
    let e = residuals(state, data);
    let t_eff = data.t_eff();
    for i in 1..n {
        let k = i; // regressor count
        let mut precision = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for t in 0..t_eff {
            let w = 1.0 / s_mat[(t, i)];
            for a in 0..k {
                let ga = -e[(t, a)];
                rhs[a] += w * ga * e[(t, i)];
                for b in 0..=a {
                    precision[(a, b)] += w * ga * e[(t, b)] * -1.0;
                }
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                precision[(a, b)] = precision[(b, a)];
            }
            let idx = ErrorModel::h_psi_index(i, a);
            precision[(a, a)] += 1.0 / state.error.h_prior.variance(idx);
        }
        for a in 0..k {
            for b in (a + 1)..k {
                precision[(b, a)] = precision[(a, b)];
            }
        }
        let chol = crate::linalg::cholesky(&precision, sweep)?;
        let mean = chol.solve(&rhs);
        let draw = sample_gaussian_precision(&mean, &precision, sweep, rng)?;
        for a in 0..k {
            state.error.h[(i, a)] = draw[a];
        }
    }
    Ok(())
}

fn symmetrize_blocks(gram: &mut DMatrix<f64>, r: usize, n: usize) {
    for r1 in 0..r {
        for r2 in 0..r1 {
            for a in 0..n {
                for b in 0..n {
                    gram[(r2 * n + a, r1 * n + b)] = gram[(r1 * n + b, r2 * n + a)];
                }
            }
        }
    }
}

fn mirror_lower(gram: &mut DMatrix<f64>) {
    let dim = gram.nrows();
    for a in 0..dim {
        for b in (a + 1)..dim {
            gram[(a, b)] = gram[(b, a)];
        }
    }
}

/// One full sweep (steps (a)–(g)): factor blocks with interweaving moves
/// between them, then own-lag, triangular, volatility and hyperparameter
/// updates, refreshing residuals after the own-lag and triangular draws.
pub fn tensor_sweep(
    state: &mut ModelState,
    data: &VarData,
    cfg: &SweepConfig,
    sweep: usize,
    rng: &mut impl Rng,
) -> Result<SweepInfo> {
    let s_mat = state.error.vol.variance_matrix();
    let mut info = SweepInfo::default();

    draw_b_block(1, state, data, &s_mat, sweep, rng)?;
    if cfg.interweave {
        info.interweave_skipped += interweave_pair_12(&mut state.cp, &state.margin_prior, rng)?;
    }
    draw_b_block(2, state, data, &s_mat, sweep, rng)?;
    if cfg.interweave {
        info.interweave_skipped += interweave_pair_23(&mut state.cp, &state.margin_prior, rng)?;
    }
    draw_b_block(3, state, data, &s_mat, sweep, rng)?;
    if cfg.interweave {
        info.interweave_skipped += interweave_pair_31(&mut state.cp, &state.margin_prior, rng)?;
    }

    if state.own_lag.is_some() {
        draw_own_lag(state, data, &s_mat, sweep, rng)?;
    }
    draw_triangular(state, data, &s_mat, sweep, rng)?;

    // Orthogonalized residuals feed the volatility update.
    let e = residuals(state, data);
    let ortho = &e * state.error.h.transpose();
    draw_sv(&ortho, &mut state.error.vol, rng)?;

    if cfg.update_margin_hyper {
        let b = state.cp.stacked();
        state.margin_prior.update_hyper(&b, rng)?;
    }
    if cfg.update_error_hyper {
        let h_flat = state.error.h_lower_flat();
        if !h_flat.is_empty() {
            state.error.h_prior.ng_update(&h_flat, rng)?;
        }
        if let Some(own) = state.own_lag.as_mut() {
            let d_flat = own.flat();
            own.prior.ng_update(&d_flat, rng)?;
        }
    }
    Ok(info)
}

impl ModelState {
    /// Cold start: small random margins, identity H, calm volatility, prior
    /// hyperparameters.
    pub fn init(
        n: usize,
        p: usize,
        rank: usize,
        kind: MarginPriorKind,
        own_lag: bool,
        t_eff: usize,
        nu: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let margin_prior = match kind {
            MarginPriorKind::Mgp => MarginPrior::Mgp(MgpState::init_prior(n, p, rank, nu, rng)),
            MarginPriorKind::Mdgdp => {
                MarginPrior::Mdgdp(MdgdpState::init_prior(n, p, rank, rng))
            }
            MarginPriorKind::StdNormal => MarginPrior::StdNormal { n, p },
        };
        let scale = 0.1;
        let cp = CpTensor3::new(
            DMatrix::from_fn(n, rank, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }),
            DMatrix::from_fn(n, rank, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }),
            DMatrix::from_fn(p, rank, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }),
        )
        .expect("valid init factors");
        Self {
            cp,
            margin_prior,
            own_lag: own_lag.then(|| OwnLagMatrix::zeros(n, p, rng)),
            error: ErrorModel::identity(n, t_eff, rng),
        }
    }

    /// Exact joint prior draw (Geweke simulators).
    pub fn init_from_prior(
        n: usize,
        p: usize,
        rank: usize,
        kind: MarginPriorKind,
        own_lag: bool,
        t_eff: usize,
        nu: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut state = Self::init(n, p, rank, kind, own_lag, t_eff, nu, rng);
        let b = match &state.margin_prior {
            MarginPrior::Mgp(s) => s.draw_margins_from_prior(rng),
            MarginPrior::Mdgdp(s) => s.draw_margins_from_prior(rng),
            MarginPrior::StdNormal { n, p } => {
                DMatrix::from_fn(2 * n + p, rank, |_, _| StandardNormal.sample(rng))
            }
        };
        state.cp = CpTensor3::from_stacked(&b, n, p).expect("prior margins");
        for i in 1..n {
            for jcol in 0..i {
                let idx = ErrorModel::h_psi_index(i, jcol);
                let sd = state.error.h_prior.variance(idx).sqrt();
                let z: f64 = StandardNormal.sample(rng);
                state.error.h[(i, jcol)] = sd * z;
            }
        }
        if let Some(own) = state.own_lag.as_mut() {
            for i in 0..n {
                for pp in 0..p {
                    let idx = i * p + pp;
                    let sd = own.prior.variance(idx).sqrt();
                    let z: f64 = StandardNormal.sample(rng);
                    own.values[(i, pp)] = sd * z;
                }
            }
        }
        state.error.vol = VolatilityState::init_prior(n, t_eff, rng);
        state
    }

    /// Generate responses from the model given the regressor rows of `data`
    /// (used by the Geweke simulators; lag feedback is not applied).
    pub fn simulate_responses_into(&self, data: &mut VarData, rng: &mut impl Rng) {
        let n = data.n;
        let t_eff = data.t_eff();
        let (fit, _) = tensor_fit(&self.cp, data);
        let own = own_lag_fit(self, data);
        let h_inv = self
            .error
            .h
            .clone()
            .try_inverse()
            .expect("unit lower triangular");
        for t in 0..t_eff {
            let u = DVector::from_fn(n, |i, _| {
                let sd = (self.error.vol.series[i].h[t] / 2.0).exp();
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            });
            let eps = &h_inv * u;
            for i in 0..n {
                data.y[(t, i)] = fit[(t, i)] + own[(t, i)] + eps[i];
            }
        }
    }
}

/// Margin prior selector for state construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginPriorKind {
    Mgp,
    Mdgdp,
    StdNormal,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::tensor::{cp_compose, mode1_matricize};
    use approx::assert_abs_diff_eq;

    fn small_state(
        n: usize,
        p: usize,
        rank: usize,
        own_lag: bool,
        t_eff: usize,
        seed: u64,
    ) -> (ModelState, VarData) {
        let mut rng = crate::rng_from_seed(seed);
        let panel = DMatrix::from_fn(t_eff + p, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let data = VarData::from_panel(&panel, p).unwrap();
        let mut state =
            ModelState::init_from_prior(n, p, rank, MarginPriorKind::Mgp, own_lag, t_eff, 3.0, &mut rng);
        // Mildly non-trivial H and volatility paths.
        for i in 1..n {
            for j in 0..i {
                state.error.h[(i, j)] = 0.3 * ((i + 2 * j) as f64).sin();
            }
        }
        for s in state.error.vol.series.iter_mut() {
            for (t, h) in s.h.iter_mut().enumerate() {
                *h = 0.2 * (t as f64 * 0.7).sin() - 0.1;
            }
        }
        (state, data)
    }

    #[test]
    fn b_block_moments_match_naive_design_oracle() {
        for own_lag in [false, true] {
            let (state, data) = small_state(4, 3, 2, own_lag, 25, 201);
            let s_mat = state.error.vol.variance_matrix();
            for j in 1..=3 {
                let (mean, precision) = b_block_moments(j, &state, &data, &s_mat, 0).unwrap();
                let (mean_naive, precision_naive) =
                    oracle::naive_b_block_moments(j, &state, &data, &s_mat);
                assert!(
                    (&precision - &precision_naive).amax() < 1e-8,
                    "precision mismatch for block {j} (own_lag={own_lag})"
                );
                assert!(
                    (&mean - &mean_naive).amax() < 1e-8,
                    "mean mismatch for block {j} (own_lag={own_lag})"
                );
            }
        }
    }

    #[test]
    fn b_block_with_no_observations_returns_prior() {
        let (state, _) = small_state(3, 2, 2, false, 10, 203);
        let panel = DMatrix::zeros(2, 3); // exactly P rows → zero effective obs
        let data = VarData::from_panel(&panel, 2).unwrap();
        let s_mat = DMatrix::zeros(0, 3);
        let (mean, precision) = b_block_moments(1, &state, &data, &s_mat, 0).unwrap();
        assert!(mean.amax() == 0.0);
        for idx in 0..mean.len() {
            let sd = state.margin_prior.sd_at_row(idx % 3, idx / 3);
            assert_abs_diff_eq!(precision[(idx, idx)], 1.0 / (sd * sd), epsilon = 1e-12);
            for b in 0..idx {
                assert_eq!(precision[(idx, b)], 0.0);
            }
        }
    }

    #[test]
    fn b_block_scalar_case_matches_conjugate_regression() {
        // N=P=R=1, B2=B3=1, H=1, constant s: textbook Bayesian regression.
        let mut rng = crate::rng_from_seed(207);
        let t_eff = 40;
        let panel = DMatrix::from_fn(t_eff + 1, 1, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let data = VarData::from_panel(&panel, 1).unwrap();
        let mut state =
            ModelState::init(1, 1, 1, MarginPriorKind::StdNormal, false, t_eff, 3.0, &mut rng);
        state.cp.b1[(0, 0)] = 0.0;
        state.cp.b2[(0, 0)] = 1.0;
        state.cp.b3[(0, 0)] = 1.0;
        let sigma2 = 0.64;
        for (t, h) in state.error.vol.series[0].h.iter_mut().enumerate() {
            let _ = t;
            *h = sigma2_ln(sigma2);
        }
        let s_mat = state.error.vol.variance_matrix();
        let (mean, precision) = b_block_moments(1, &state, &data, &s_mat, 0).unwrap();
        let sx2: f64 = (0..t_eff).map(|t| data.x[(t, 0)].powi(2)).sum();
        let sxy: f64 = (0..t_eff).map(|t| data.x[(t, 0)] * data.y[(t, 0)]).sum();
        let expect_prec = 1.0 + sx2 / sigma2;
        assert_abs_diff_eq!(precision[(0, 0)], expect_prec, epsilon = 1e-10);
        assert_abs_diff_eq!(mean[0], (sxy / sigma2) / expect_prec, epsilon = 1e-10);
    }

    fn sigma2_ln(s: f64) -> f64 {
        s.ln()
    }

    #[test]
    fn interweave_preserves_composed_tensor() {
        let (mut state, _) = small_state(4, 3, 3, false, 10, 211);
        let mut rng = crate::rng_from_seed(213);
        let before = cp_compose(&state.cp);
        for _ in 0..200 {
            interweave_sweep(&mut state.cp, &state.margin_prior, &mut rng).unwrap();
            let after = cp_compose(&state.cp);
            assert!(before.max_abs_diff(&after) <= 1e-10);
        }
    }

    #[test]
    fn interweave_rescaled_first_row_is_ones() {
        // Dividing by the first-row scaling must pin that row at exactly 1.
        let (state, _) = small_state(3, 2, 2, false, 10, 217);
        let d: Vec<f64> = (0..2).map(|r| state.cp.b1[(0, r)]).collect();
        let scaled = DMatrix::from_fn(3, 2, |i, r| state.cp.b1[(i, r)] / d[r]);
        for r in 0..2 {
            assert_abs_diff_eq!(scaled[(0, r)], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn interweave_zero_first_row_skips_column() {
        let (mut state, _) = small_state(3, 2, 2, false, 10, 219);
        let mut rng = crate::rng_from_seed(223);
        state.cp.b1[(0, 1)] = 0.0;
        let before = state.cp.clone();
        let skipped = interweave_pair_12(&mut state.cp, &state.margin_prior, &mut rng).unwrap();
        assert_eq!(skipped, 1);
        // Column 1 untouched, column 0 rescaled.
        for i in 0..3 {
            assert_eq!(state.cp.b1[(i, 1)], before.b1[(i, 1)]);
            assert_eq!(state.cp.b2[(i, 1)], before.b2[(i, 1)]);
        }
        assert!(state.cp.b1[(0, 0)] != before.b1[(0, 0)]);
    }

    #[test]
    fn interweave_gig_matches_quadrature_on_fixed_scaled_pair() {
        // One column, fixed rescaled blocks: the squared first-row margin is
        // an exact GIG draw; its moments must match quadrature within 2%.
        let n = 4;
        let mut rng = crate::rng_from_seed(227);
        let b1_star: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.4 + 0.1 * i as f64 }).collect();
        let b2_star: Vec<f64> = (0..n).map(|i| 0.7 - 0.1 * i as f64).collect();
        let sd1: Vec<f64> = (0..n).map(|i| 0.8 + 0.05 * i as f64).collect();
        let sd2: Vec<f64> = (0..n).map(|i| 1.1 - 0.07 * i as f64).collect();
        let chi: f64 = (0..n).map(|i| (b2_star[i] / sd2[i]).powi(2)).sum();
        let psi: f64 = (1..n).map(|i| (b1_star[i] / sd1[i]).powi(2)).sum::<f64>()
            + 1.0 / sd1[0].powi(2);
        let reps = 300_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..reps {
            let d2 = sample_gig(0.0, chi, psi, &mut rng).unwrap();
            sum += d2;
            sum2 += d2 * d2;
        }
        let mean = sum / reps as f64;
        let var = sum2 / reps as f64 - mean * mean;
        let m1 = oracle::gig_moment_quadrature(0.0, chi, psi, 1);
        let m2 = oracle::gig_moment_quadrature(0.0, chi, psi, 2);
        assert!((mean - m1).abs() / m1 < 0.02, "mean {mean} vs {m1}");
        assert!((var - (m2 - m1 * m1)).abs() / (m2 - m1 * m1) < 0.05);
    }

    #[test]
    fn own_lag_ridge_reduction_under_identity_error() {
        // H = I, S = I: each d_j is an independent Bayesian ridge regression.
        let (mut state, data) = small_state(3, 2, 2, true, 60, 229);
        state.error.h = DMatrix::identity(3, 3);
        for s in state.error.vol.series.iter_mut() {
            s.h.iter_mut().for_each(|h| *h = 0.0);
        }
        let s_mat = state.error.vol.variance_matrix();
        let (fit, _) = tensor_fit(&state.cp, &data);
        let y_star = &data.y - fit;
        let own = state.own_lag.as_ref().unwrap();
        for j in 0..3 {
            let mut prec: DMatrix<f64> = DMatrix::zeros(2, 2);
            let mut rhs: DVector<f64> = DVector::zeros(2);
            for t in 0..data.t_eff() {
                let yj = data.own_lags_at(t, j);
                // With H = I only row i = j contributes, a plain regression
                // of y*_{t,j} on the own lags.
                for a in 0..2 {
                    rhs[a] += y_star[(t, j)] * yj[a];
                    for b in 0..2 {
                        prec[(a, b)] += yj[a] * yj[b];
                    }
                }
            }
            for a in 0..2 {
                prec[(a, a)] += 1.0 / own.prior_variance(j, a);
            }
            let mean = prec.clone().try_inverse().unwrap() * rhs;
            let (mean_impl, prec_impl) = own_lag_moments(&state, &data, &s_mat, j, 0).unwrap();
            assert!((mean - &mean_impl).amax() < 1e-8);
            assert!((prec - &prec_impl).amax() < 1e-8);
        }
    }

    #[test]
    fn own_lag_with_no_observations_returns_prior() {
        let mut rng = crate::rng_from_seed(231);
        let panel = DMatrix::zeros(2, 3);
        let data = VarData::from_panel(&panel, 2).unwrap();
        let state = ModelState::init(3, 2, 2, MarginPriorKind::Mgp, true, 0, 3.0, &mut rng);
        let s_mat = DMatrix::zeros(0, 3);
        let (mean, precision) = own_lag_moments(&state, &data, &s_mat, 1, 0).unwrap();
        let own = state.own_lag.as_ref().unwrap();
        assert!(mean.amax() == 0.0);
        for a in 0..2 {
            assert_abs_diff_eq!(
                precision[(a, a)],
                1.0 / own.prior_variance(1, a),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn own_lag_matches_both_oracle_routes_with_triangular_coupling() {
        let (state, data) = small_state(2, 3, 2, true, 50, 233);
        let s_mat = state.error.vol.variance_matrix();
        for j in 0..2 {
            let (mean_prod, prec_prod) = own_lag_moments(&state, &data, &s_mat, j, 0).unwrap();
            let (mean_o, prec_o) = oracle::own_lag_equation_moments(&state, &data, &s_mat, j);
            let (mean_v, prec_v) =
                oracle::own_lag_equation_moments_vectorized(&state, &data, &s_mat, j);
            assert!((&mean_prod - &mean_o).amax() < 1e-10, "equation {j} mean vs loop");
            assert!((&prec_prod - &prec_o).amax() < 1e-10, "equation {j} prec vs loop");
            assert!((&mean_prod - &mean_v).amax() < 1e-10, "equation {j} mean vs stacked");
            assert!((&prec_prod - &prec_v).amax() < 1e-10, "equation {j} prec vs stacked");
        }
    }

    #[test]
    fn triangular_draw_shapes_and_unit_diagonal() {
        let (mut state, data) = small_state(4, 2, 2, false, 40, 239);
        let mut rng = crate::rng_from_seed(241);
        let s_mat = state.error.vol.variance_matrix();
        draw_triangular(&mut state, &data, &s_mat, 0, &mut rng).unwrap();
        for i in 0..4 {
            assert_eq!(state.error.h[(i, i)], 1.0);
            for j in (i + 1)..4 {
                assert_eq!(state.error.h[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn triangular_single_series_is_noop() {
        let (mut state, data) = small_state(1, 2, 1, false, 30, 251);
        let mut rng = crate::rng_from_seed(251);
        let s_mat = state.error.vol.variance_matrix();
        let before = state.error.h.clone();
        draw_triangular(&mut state, &data, &s_mat, 0, &mut rng).unwrap();
        assert_eq!(state.error.h, before);
    }

    #[test]
    fn triangular_diagonal_truth_keeps_entries_near_zero() {
        // Data with diagonal covariance: posterior mass of lower entries
        // concentrates near zero.
        let n = 3;
        let t_eff = 2_000;
        let mut rng = crate::rng_from_seed(257);
        let panel = DMatrix::from_fn(t_eff + 1, n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let data = VarData::from_panel(&panel, 1).unwrap();
        let mut state =
            ModelState::init(n, 1, 1, MarginPriorKind::StdNormal, false, t_eff, 3.0, &mut rng);
        state.cp.b1.fill(0.0); // pure noise model
        for s in state.error.vol.series.iter_mut() {
            s.h.iter_mut().for_each(|h| *h = 0.0);
        }
        let s_mat = state.error.vol.variance_matrix();
        let mut sums = vec![0.0; 3];
        let reps = 300;
        for _ in 0..reps {
            draw_triangular(&mut state, &data, &s_mat, 0, &mut rng).unwrap();
            sums[0] += state.error.h[(1, 0)];
            sums[1] += state.error.h[(2, 0)];
            sums[2] += state.error.h[(2, 1)];
        }
        let sd = (1.0 / t_eff as f64).sqrt();
        for s in sums {
            assert!((s / reps as f64).abs() < 3.0 * sd, "mean {}", s / reps as f64);
        }
    }

    #[test]
    fn full_sweep_invariants_hold() {
        let (mut state, data) = small_state(3, 2, 2, true, 30, 263);
        let mut rng = crate::rng_from_seed(269);
        let cfg = SweepConfig::default();
        for sweep in 0..30 {
            tensor_sweep(&mut state, &data, &cfg, sweep, &mut rng).unwrap();
            for i in 0..3 {
                assert_eq!(state.error.h[(i, i)], 1.0);
                for j in (i + 1)..3 {
                    assert_eq!(state.error.h[(i, j)], 0.0);
                }
            }
            for s in &state.error.vol.series {
                assert!(s.params.psi.abs() < 1.0);
                assert!(s.params.sigma > 0.0);
                assert!(s.h.iter().all(|h| h.is_finite()));
            }
            let a = mode1_matricize(&cp_compose(&state.cp));
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }
}
