//! Test-support oracles.
//!
//! Independent reference implementations used only by the test suites to
//! cross-check the production samplers: literal Kronecker design matrices
//! for the factor blocks, stacked-regression moments for the own-lag
//! equations, and quadrature moments for the GIG family. Nothing here is
//! called from production code paths.

use nalgebra::{DMatrix, DVector};

use crate::sampler::{ModelState, VarData};

/// Mode-1 matricization of the R×R×R superdiagonal unit tensor.
pub fn superdiag_mode1(r: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(r, r * r);
    for i in 0..r {
        out[(i, i * r + i)] = 1.0;
    }
    out
}

/// Literal design matrix of block j at time t, built from the blocked
/// Kronecker representations with the superdiagonal tensor materialized.
pub fn naive_design(j: usize, state: &ModelState, data: &VarData, t: usize) -> DMatrix<f64> {
    let (n, _) = (data.n, data.p);
    let r = state.cp.rank();
    let i1_mat = superdiag_mode1(r);
    let xt = data.lag_matrix_at(t);
    let x_vec = data.x.row(t).transpose();
    match j {
        1 => {
            let kron = state.cp.b3.kronecker(&state.cp.b2); // (P·N)×R²
            let a = (x_vec.transpose() * kron) * i1_mat.transpose(); // 1×R
            a.kronecker(&DMatrix::identity(n, n))
        }
        2 => {
            let inner = (state.cp.b3.transpose() * xt.transpose())
                .kronecker(&DMatrix::identity(r, r));
            &state.cp.b1 * i1_mat * inner
        }
        3 => {
            let inner = DMatrix::identity(r, r)
                .kronecker(&(state.cp.b2.transpose() * xt));
            &state.cp.b1 * i1_mat * inner
        }
        _ => panic!("block index {j}"),
    }
}

/// Full-conditional moments of block j assembled from the literal designs.
pub fn naive_b_block_moments(
    j: usize,
    state: &ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (data.n, data.p);
    let r = state.cp.rank();
    let t_eff = data.t_eff();
    let dim = match j {
        1 | 2 => n * r,
        3 => p * r,
        _ => panic!("block index {j}"),
    };
    let h = &state.error.h;
    // y − D x.
    let mut target = data.y.clone();
    if let Some(own) = &state.own_lag {
        for t in 0..t_eff {
            for i in 0..n {
                for pp in 0..p {
                    target[(t, i)] -= own.values[(i, pp)] * data.x[(t, pp * n + i)];
                }
            }
        }
    }
    let mut precision = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for t in 0..t_eff {
        let z = naive_design(j, state, data, t);
        let s_inv = DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                1.0 / s_mat[(t, a)]
            } else {
                0.0
            }
        });
        let w = h.transpose() * &s_inv * h;
        precision += z.transpose() * &w * &z;
        let e_t = target.row(t).transpose();
        rhs += z.transpose() * &w * e_t;
    }
    for idx in 0..dim {
        let (row, col) = match j {
            1 => (idx % n, idx / n),
            2 => (n + idx / r, idx % r),
            3 => (2 * n + idx % p, idx / p),
            _ => unreachable!(),
        };
        let sd = state.margin_prior.sd_at_row(row, col);
        precision[(idx, idx)] += 1.0 / (sd * sd);
    }
    let mean = precision
        .clone()
        .try_inverse()
        .expect("oracle precision invertible")
        * rhs;
    (mean, precision)
}

/// Own-lag equation moments built scalar-by-scalar from the triangularized
/// system (the unvectorized loop form).
pub fn own_lag_equation_moments(
    state: &ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    j: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (data.n, data.p);
    let t_eff = data.t_eff();
    let h = &state.error.h;
    let own = state.own_lag.as_ref().expect("own-lag model");
    // y* = y − tensor fit.
    let (fit, _) = crate::sampler::tensor_fit(&state.cp, data);
    let y_star = &data.y - fit;
    let mut precision = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in j..n {
        let hij = h[(i, j)];
        for t in 0..t_eff {
            let yj = data.own_lags_at(t, j);
            let mut z = 0.0;
            for ip in 0..=i {
                let mut v = y_star[(t, ip)];
                if ip != j {
                    for pp in 0..p {
                        v -= own.values[(ip, pp)] * data.x[(t, pp * n + ip)];
                    }
                }
                z += h[(i, ip)] * v;
            }
            let w = 1.0 / s_mat[(t, i)];
            for a in 0..p {
                rhs[a] += hij * w * z * yj[a];
                for b in 0..p {
                    precision[(a, b)] += hij * hij * w * yj[a] * yj[b];
                }
            }
        }
    }
    for a in 0..p {
        precision[(a, a)] += 1.0 / own.prior_variance(j, a);
    }
    let mean = precision
        .clone()
        .try_inverse()
        .expect("oracle precision invertible")
        * rhs;
    (mean, precision)
}

/// Own-lag equation moments through the vectorized stacking: X̃ = (H_{j:N,j}
/// ⊗ Y^{(j)}) and Ỹ = vec((Y* − X D'_{[j=0]}) H'_{j:N,·}), both standardized
/// by the volatilities, then plain (X̃'X̃, X̃'Ỹ).
pub fn own_lag_equation_moments_vectorized(
    state: &ModelState,
    data: &VarData,
    s_mat: &DMatrix<f64>,
    j: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (data.n, data.p);
    let t_eff = data.t_eff();
    let h = &state.error.h;
    let own = state.own_lag.as_ref().expect("own-lag model");
    let (fit, _) = crate::sampler::tensor_fit(&state.cp, data);
    let y_star = &data.y - fit;
    // Y** − X (D^{[j=0]})' : T×N with every equation's own-lag fit removed
    // except equation j's.
    let mut m = y_star.clone();
    for t in 0..t_eff {
        for i in 0..n {
            if i == j {
                continue;
            }
            for pp in 0..p {
                m[(t, i)] -= own.values[(i, pp)] * data.x[(t, pp * n + i)];
            }
        }
    }
    let rows = (n - j) * t_eff;
    let mut x_tilde = DMatrix::zeros(rows, p);
    let mut y_tilde = DVector::zeros(rows);
    for (blk, i) in (j..n).enumerate() {
        for t in 0..t_eff {
            let sd = s_mat[(t, i)].sqrt();
            let row = blk * t_eff + t;
            let yj = data.own_lags_at(t, j);
            for a in 0..p {
                x_tilde[(row, a)] = h[(i, j)] * yj[a] / sd;
            }
            let mut z = 0.0;
            for ip in 0..=i {
                z += h[(i, ip)] * m[(t, ip)];
            }
            y_tilde[row] = z / sd;
        }
    }
    let mut precision = x_tilde.transpose() * &x_tilde;
    for a in 0..p {
        precision[(a, a)] += 1.0 / own.prior_variance(j, a);
    }
    let rhs = x_tilde.transpose() * y_tilde;
    let mean = precision
        .clone()
        .try_inverse()
        .expect("oracle precision invertible")
        * rhs;
    (mean, precision)
}

/// Quadrature oracle: E[x^k] of GIG(lam, chi, psi) via Simpson's rule on the
/// log scale, independent of any sampling path.
pub fn gig_moment_quadrature(lam: f64, chi: f64, psi: f64, k: i32) -> f64 {
    let omega = (chi * psi).sqrt();
    let scale = (chi / psi).sqrt();
    let integral = |beta: f64| {
        let ell = |z: f64| beta * z - omega * z.cosh();
        let z_mode = (beta / omega).asinh();
        let peak = ell(z_mode);
        let mut lo = z_mode;
        while ell(lo) - peak > -80.0 {
            lo -= 0.5;
        }
        let mut hi = z_mode;
        while ell(hi) - peak > -80.0 {
            hi += 0.5;
        }
        let n = 40_000usize;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (ell(z) - peak).exp();
        }
        acc * h / 3.0 * peak.exp()
    };
    scale.powi(k) * integral(lam + k as f64) / integral(lam)
}
