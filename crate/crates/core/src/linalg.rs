//! Small dense linear-algebra helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Gaussian draw parameterized by mean and precision: x = μ + L⁻ᵀ z with
/// precision = L Lᵀ.
pub fn sample_gaussian_precision(
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    sweep: usize,
    rng: &mut impl Rng,
) -> Result<DVector<f64>> {
    let chol = cholesky(precision, sweep)?;
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    let upper = chol.l().transpose();
    let x = upper
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical(sweep, "singular Cholesky factor"))?;
    Ok(mean + x)
}

/// Posterior moments of a Gaussian regression: precision = prior_precision +
/// Xᵀ X, mean = precision⁻¹ (Xᵀ y + prior_precision·prior_mean), with the
/// prior mean fixed at zero throughout this crate.
pub fn gaussian_posterior(
    prior_precision_diag: &DVector<f64>,
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    sweep: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = xty.len();
    let mut precision = xtx.clone();
    for i in 0..k {
        precision[(i, i)] += prior_precision_diag[i];
    }
    let chol = cholesky(&precision, sweep)?;
    let mean = chol.solve(xty);
    Ok((mean, precision))
}

pub fn cholesky(m: &DMatrix<f64>, sweep: usize) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical(sweep, "precision matrix not positive definite"))
}

/// Spectral radius via complex eigenvalues of a (small) square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Companion matrix of an N×(N·P) VAR coefficient matrix.
pub fn companion_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let np = a.ncols();
    let p = np / n;
    assert_eq!(n * p, np, "coefficient matrix must be N×(N·P)");
    let mut c = DMatrix::zeros(np, np);
    c.rows_mut(0, n).copy_from(a);
    for i in 0..(np - n) {
        c[(n + i, i)] = 1.0;
    }
    c
}

/// Log density of Gamma(shape, rate) at x > 0, up to full normalization.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Lanczos approximation of ln Γ(x) for x > 0 (|error| < 1e-13 on this range).
pub fn ln_gamma(x: f64) -> f64 {
    // g = 7, n = 9 Lanczos coefficients.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// One random-walk Metropolis step on the log scale for a positive scalar.
/// Returns the new value and whether the proposal was accepted; a proposal
/// equal to the current point is always accepted.
pub fn log_scale_rw_mh(
    current: f64,
    step: f64,
    log_target: impl Fn(f64) -> f64,
    rng: &mut impl Rng,
) -> (f64, bool) {
    let z: f64 = StandardNormal.sample(rng);
    let proposal = (current.ln() + step * z).exp();
    // Log-normal proposal leaves a proposal/current Jacobian in the ratio.
    let log_alpha = log_target(proposal) - log_target(current) + proposal.ln() - current.ln();
    if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Mean and variance of a slice.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample Kolmogorov–Smirnov distance against a reference CDF.
pub fn ks_distance_to_cdf(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_distance_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_gamma_matches_reference() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(5.0), (24.0f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            ln_gamma(10.3),
            statrs::function::gamma::ln_gamma(10.3),
            epsilon = 1e-11
        );
    }

    #[test]
    fn gaussian_precision_moments() {
        let mut rng = crate::rng_from_seed(5);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let precision = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let cov = precision.clone().try_inverse().unwrap();
        let n = 200_000;
        let mut sums = [0.0f64; 2];
        let mut sums2 = [0.0f64; 2];
        for _ in 0..n {
            let x = sample_gaussian_precision(&mean, &precision, 0, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += x[i];
                sums2[i] += x[i] * x[i];
            }
        }
        for i in 0..2 {
            let m = sums[i] / n as f64;
            let v = sums2[i] / n as f64 - m * m;
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((m - mean[i]).abs() < 4.0 * se);
            assert!((v - cov[(i, i)]).abs() / cov[(i, i)] < 0.03);
        }
    }

    #[test]
    fn companion_spectral_radius_ar2() {
        // N=1, P=2, coefficients (0.5, 0.3): roots of z^2 - 0.5 z - 0.3.
        let a = DMatrix::from_row_slice(1, 2, &[0.5, 0.3]);
        let c = companion_matrix(&a);
        let disc = (0.25f64 + 4.0 * 0.3).sqrt();
        let root = (0.5 + disc) / 2.0;
        assert_abs_diff_eq!(spectral_radius(&c), root, epsilon = 1e-10);
    }
}
