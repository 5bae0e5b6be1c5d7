//! Multiplicative gamma prior over the tensor matrix.
//!
//! Every margin gets variance φ⁻¹τ_r⁻¹ where the local precisions φ are
//! Gamma(ν/2, ν/2) and the column precisions τ_r = Π_{l≤r} δ_l grow with the
//! column index once a2 exceeds one, which is what shrinks trailing CP
//! columns toward zero. δ_1 ~ Gamma(a1, 1), δ_l ~ Gamma(a2, 1) for l > 1,
//! and a1, a2 carry Gamma(5, 1) hyperpriors updated by random-walk MH on the
//! log scale.
//!
//! Gamma distributions are shape–rate throughout, matching
//! E(τ_r) = a1·a2^{r-1}.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{gamma_ln_pdf, ln_gamma};

/// Shape and rate of the hyperpriors on a1 and a2.
pub const A_PRIOR_SHAPE: f64 = 5.0;
pub const A_PRIOR_RATE: f64 = 1.0;

/// Log-scale random-walk step for the a1/a2 Metropolis updates.
pub const A_MH_STEP: f64 = 0.2;

/// Row of the stacked (2N+P)×R tensor matrix addressed by axis j ∈ {1,2,3}
/// and the 0-based row index within that block.
pub fn margin_row(j: usize, i: usize, n: usize, p: usize) -> Result<usize> {
    let (offset, len) = match j {
        1 => (0, n),
        2 => (n, n),
        3 => (2 * n, p),
        _ => return Err(Error::invalid(format!("axis index {j} outside 1..=3"))),
    };
    if i >= len {
        return Err(Error::invalid(format!(
            "row index {i} out of range for axis {j} (len {len})"
        )));
    }
    Ok(offset + i)
}

/// MGP hyperparameter state for an N-series, P-lag, rank-R tensor matrix.
#[derive(Debug, Clone)]
pub struct MgpState {
    /// Local precisions, laid out like the stacked tensor matrix.
    pub phi: DMatrix<f64>,
    /// Column multipliers δ_l.
    pub delta: Vec<f64>,
    /// Column precisions τ_r = Π_{l≤r} δ_l, rebuilt after every δ change.
    pub tau: Vec<f64>,
    pub a1: f64,
    pub a2: f64,
    /// Fixed hyperparameter ν of the φ prior.
    pub nu: f64,
    pub n: usize,
    pub p: usize,
    /// MH acceptance counters for (a1, a2).
    pub accepts: [usize; 2],
    pub proposals: [usize; 2],
}

impl MgpState {
    /// Draw a fresh state from the prior.
    pub fn init_prior(n: usize, p: usize, rank: usize, nu: f64, rng: &mut impl Rng) -> Self {
        let a_prior = Gamma::new(A_PRIOR_SHAPE, 1.0 / A_PRIOR_RATE).unwrap();
        let a1 = a_prior.sample(rng);
        let a2 = a_prior.sample(rng);
        Self::init_prior_with_a(n, p, rank, nu, a1, a2, rng)
    }

    /// Prior draw with fixed a1, a2 (used by simulators and tests).
    pub fn init_prior_with_a(
        n: usize,
        p: usize,
        rank: usize,
        nu: f64,
        a1: f64,
        a2: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let phi_prior = Gamma::new(nu / 2.0, 2.0 / nu).unwrap();
        let phi = DMatrix::from_fn(2 * n + p, rank, |_, _| phi_prior.sample(rng));
        let d1 = Gamma::new(a1, 1.0).unwrap();
        let d2 = Gamma::new(a2, 1.0).unwrap();
        let delta: Vec<f64> = (0..rank)
            .map(|l| if l == 0 { d1.sample(rng) } else { d2.sample(rng) })
            .collect();
        let mut state = Self {
            phi,
            delta,
            tau: vec![0.0; rank],
            a1,
            a2,
            nu,
            n,
            p,
            accepts: [0, 0],
            proposals: [0, 0],
        };
        state.rebuild_tau();
        state
    }

    pub fn rank(&self) -> usize {
        self.delta.len()
    }

    pub fn rebuild_tau(&mut self) {
        self.tau.resize(self.delta.len(), 0.0);
        let mut prod = 1.0;
        for (t, d) in self.tau.iter_mut().zip(&self.delta) {
            prod *= d;
            *t = prod;
        }
    }

    /// Prior standard deviation sqrt(φ⁻¹ τ_r⁻¹) of the margin at (j, i, r).
    pub fn prior_sd(&self, j: usize, i: usize, r: usize) -> Result<f64> {
        if r >= self.rank() {
            return Err(Error::invalid(format!("column {r} out of range")));
        }
        let row = margin_row(j, i, self.n, self.p)?;
        Ok((self.phi[(row, r)] * self.tau[r]).recip().sqrt())
    }

    /// Unchecked variant for hot loops; callers guarantee the index range.
    #[inline]
    pub fn prior_sd_at_row(&self, row: usize, r: usize) -> f64 {
        (self.phi[(row, r)] * self.tau[r]).recip().sqrt()
    }

    /// φ full conditional: Gamma((ν+1)/2, (ν + τ_r β²)/2) independently per
    /// margin of the stacked tensor matrix `b`.
    pub fn update_phi(&mut self, b: &DMatrix<f64>, rng: &mut impl Rng) {
        assert_eq!(b.shape(), self.phi.shape(), "tensor matrix shape mismatch");
        let shape = (self.nu + 1.0) / 2.0;
        for r in 0..self.rank() {
            let tau_r = self.tau[r];
            for row in 0..b.nrows() {
                let rate = (self.nu + tau_r * b[(row, r)].powi(2)) / 2.0;
                let g = Gamma::new(shape, 1.0 / rate).unwrap();
                self.phi[(row, r)] = g.sample(rng);
            }
        }
    }

    /// Shape and rate of the δ_r full conditional given per-column weighted
    /// squared margins q_l = Σ_{j,i} φ_{(l,j,i)} β²_{(l,j,i)}.
    ///
    /// τ_l^{(r)} = Π_{i≤l, i≠r} δ_i uses the current δ vector, so the caller
    /// must evaluate this fresh before each sequential draw.
    pub fn delta_full_conditional(&self, q: &[f64], r: usize) -> (f64, f64) {
        let rank = self.rank();
        let m = (2 * self.n + self.p) as f64;
        let shape = if r == 0 {
            self.a1 + m * rank as f64 / 2.0
        } else {
            self.a2 + m * (rank - r) as f64 / 2.0
        };
        let mut rate = 1.0;
        let mut tau_partial = 1.0;
        for l in 0..rank {
            if l != r {
                tau_partial *= self.delta[l];
            }
            if l >= r {
                rate += 0.5 * tau_partial * q[l];
            }
        }
        (shape, rate)
    }

    /// Sequential Gibbs scan over δ_1..δ_R in ascending order, with τ rebuilt
    /// as cumulative products afterwards.
    pub fn update_delta(&mut self, b: &DMatrix<f64>, rng: &mut impl Rng) {
        assert_eq!(b.shape(), self.phi.shape(), "tensor matrix shape mismatch");
        let q: Vec<f64> = (0..self.rank())
            .map(|l| {
                (0..b.nrows())
                    .map(|row| self.phi[(row, l)] * b[(row, l)].powi(2))
                    .sum()
            })
            .collect();
        for r in 0..self.rank() {
            let (shape, rate) = self.delta_full_conditional(&q, r);
            let g = Gamma::new(shape, 1.0 / rate).unwrap();
            self.delta[r] = g.sample(rng);
        }
        self.rebuild_tau();
    }

    /// One log-scale random-walk MH update each for a1 (targeting its prior
    /// times the Gamma(a1, 1) likelihood of δ_1) and a2 (likelihood over
    /// δ_2..δ_R; an empty product leaves the prior as the target).
    pub fn update_a1_a2(&mut self, rng: &mut impl Rng) {
        let delta1 = self.delta[0];
        let log_target_a1 = |a: f64| {
            gamma_ln_pdf(a, A_PRIOR_SHAPE, A_PRIOR_RATE) + (a - 1.0) * delta1.ln() - delta1
                - ln_gamma(a)
        };
        self.a1 = self.mh_log_walk(self.a1, log_target_a1, 0, rng);

        let tail: Vec<f64> = self.delta[1..].to_vec();
        let log_target_a2 = move |a: f64| {
            let mut acc = gamma_ln_pdf(a, A_PRIOR_SHAPE, A_PRIOR_RATE);
            for &d in &tail {
                acc += (a - 1.0) * d.ln() - d - ln_gamma(a);
            }
            acc
        };
        self.a2 = self.mh_log_walk(self.a2, log_target_a2, 1, rng);
    }

    fn mh_log_walk(
        &mut self,
        current: f64,
        log_target: impl Fn(f64) -> f64,
        which: usize,
        rng: &mut impl Rng,
    ) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let proposal = (current.ln() + A_MH_STEP * z).exp();
        // The log-normal proposal contributes a proposal/current Jacobian.
        let log_alpha =
            log_target(proposal) - log_target(current) + proposal.ln() - current.ln();
        self.proposals[which] += 1;
        if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
            self.accepts[which] += 1;
            proposal
        } else {
            current
        }
    }

    /// Remove the given CP columns (rank adaptation); surviving δ keep their
    /// values and τ is recomputed.
    pub fn remove_columns(&mut self, cols: &[usize]) {
        let keep: Vec<usize> = (0..self.rank()).filter(|c| !cols.contains(c)).collect();
        assert!(!keep.is_empty(), "cannot remove every MGP column");
        self.phi = self.phi.select_columns(&keep);
        self.delta = keep.iter().map(|&c| self.delta[c]).collect();
        self.rebuild_tau();
    }

    /// Append one column: δ_{R+1} ~ Gamma(a2, 1), fresh φ column from the
    /// Gamma(ν/2, ν/2) prior, τ extended.
    pub fn append_column(&mut self, rng: &mut impl Rng) {
        let d = Gamma::new(self.a2, 1.0).unwrap().sample(rng);
        self.delta.push(d);
        let phi_prior = Gamma::new(self.nu / 2.0, 2.0 / self.nu).unwrap();
        let rows = self.phi.nrows();
        let old = self.phi.clone();
        let r = old.ncols();
        self.phi = DMatrix::from_fn(rows, r + 1, |i, c| {
            if c < r {
                old[(i, c)]
            } else {
                phi_prior.sample(rng)
            }
        });
        self.rebuild_tau();
    }

    /// Prior draw of a full stacked tensor matrix given the current
    /// hyperparameters.
    pub fn draw_margins_from_prior(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(2 * self.n + self.p, self.rank(), |row, r| {
            let sd = self.prior_sd_at_row(row, r);
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
    }
}
