//! Adaptive rank inference during burn-in.
//!
//! Between iterations m̃ and the end of burn-in, the chain tosses a coin with
//! probability p(m) = exp(α₀ + α₁·m) (α₀ ≤ 0, α₁ < 0, so adaptation dies out)
//! and, on success, removes every inactive CP column or, when none is
//! inactive, appends a fresh one drawn from the prior. A column counts as
//! inactive when the share of small-magnitude entries in its rank-one
//! component exceeds a threshold.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sampler::{MarginPrior, ModelState};
use crate::tensor::{cp_components, CpTensor3, DenseTensor3};

/// Adaptation schedule and activity thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdaptConfig {
    /// Initial rank R*; `initial_rank` gives the ⌈5·ln N⌉ default.
    pub r_init: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Adaptation starts after this iteration.
    pub m_tilde: usize,
    /// Last burn-in iteration; adaptation never runs past it.
    pub m_burn: usize,
    /// Entry-magnitude cutoff for "small".
    pub mag_threshold: f64,
    /// Inactive when the small-entry share exceeds this.
    pub prop_threshold: f64,
}

impl AdaptConfig {
    /// ⌈5·ln N⌉.
    pub fn initial_rank(n: usize) -> usize {
        (5.0 * (n as f64).ln()).ceil() as usize
    }

    /// Simulation-study thresholds (1e-3, 0.9).
    pub fn simulation(n: usize, m_burn: usize) -> Self {
        Self {
            r_init: Self::initial_rank(n),
            alpha0: -1.0,
            alpha1: -5e-4,
            m_tilde: 200,
            m_burn,
            mag_threshold: 1e-3,
            prop_threshold: 0.9,
        }
    }

    /// Real-data thresholds (5e-4, 0.95).
    pub fn real_data(n: usize, m_burn: usize) -> Self {
        Self {
            mag_threshold: 5e-4,
            prop_threshold: 0.95,
            ..Self::simulation(n, m_burn)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_tilde >= self.m_burn {
            return Err(Error::Config(format!(
                "m_tilde {} must precede m_burn {}",
                self.m_tilde, self.m_burn
            )));
        }
        if self.alpha0 > 0.0 || self.alpha1 >= 0.0 {
            return Err(Error::Config(
                "diminishing adaptation needs alpha0 <= 0 and alpha1 < 0".into(),
            ));
        }
        if !(0.0 < self.prop_threshold && self.prop_threshold < 1.0) {
            return Err(Error::Config("prop_threshold must lie in (0,1)".into()));
        }
        if self.mag_threshold <= 0.0 {
            return Err(Error::Config("mag_threshold must be positive".into()));
        }
        if self.r_init == 0 {
            return Err(Error::Config("initial rank must be positive".into()));
        }
        Ok(())
    }

    /// Trigger probability p(m) = exp(α₀ + α₁·m).
    pub fn trigger_probability(&self, m: usize) -> f64 {
        (self.alpha0 + self.alpha1 * m as f64).exp()
    }

    /// Whether iteration m lies in the adaptation window (m̃, m_burn].
    pub fn in_window(&self, m: usize) -> bool {
        m > self.m_tilde && m <= self.m_burn
    }
}

/// Indices of inactive columns: share of entries of A^(r) below the
/// magnitude cutoff exceeds the proportion threshold.
pub fn inactive_columns(components: &[DenseTensor3], cfg: &AdaptConfig) -> Vec<usize> {
    components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.small_magnitude_fraction(cfg.mag_threshold) > cfg.prop_threshold)
        .map(|(r, _)| r)
        .collect()
}

/// What an adaptation step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdaptOutcome {
    NoOp,
    Removed(Vec<usize>),
    Added,
}

/// One adaptation step at iteration m. Requires the MGP margin prior; other
/// priors run at fixed rank.
pub fn adapt_step(
    state: &mut ModelState,
    m: usize,
    cfg: &AdaptConfig,
    rng: &mut impl Rng,
) -> Result<AdaptOutcome> {
    let MarginPrior::Mgp(_) = state.margin_prior else {
        return Err(Error::invalid("rank adaptation requires the MGP margin prior"));
    };
    if !cfg.in_window(m) {
        return Ok(AdaptOutcome::NoOp);
    }
    let u: f64 = rng.random();
    if cfg.trigger_probability(m) < u {
        return Ok(AdaptOutcome::NoOp);
    }
    let components = cp_components(&state.cp);
    let mut inactive = inactive_columns(&components, cfg);
    if !inactive.is_empty() {
        if inactive.len() == state.cp.rank() {
            // Never drop the last column: retain the most active one.
            let keep = components
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let fa = a.small_magnitude_fraction(cfg.mag_threshold);
                    let fb = b.small_magnitude_fraction(cfg.mag_threshold);
                    fa.partial_cmp(&fb).unwrap()
                })
                .map(|(r, _)| r)
                .unwrap();
            inactive.retain(|&r| r != keep);
            if inactive.is_empty() {
                return Ok(AdaptOutcome::NoOp);
            }
        }
        state.cp = state.cp.drop_columns(&inactive)?;
        if let MarginPrior::Mgp(mgp) = &mut state.margin_prior {
            mgp.remove_columns(&inactive);
        }
        Ok(AdaptOutcome::Removed(inactive))
    } else {
        let MarginPrior::Mgp(mgp) = &mut state.margin_prior else {
            unreachable!()
        };
        mgp.append_column(rng);
        let new_r = mgp.rank() - 1;
        let (n, p) = (state.cp.n_series(), state.cp.lag_order());
        let grow = |block: &nalgebra::DMatrix<f64>,
                    offset: usize,
                    rng: &mut dyn rand::RngCore|
         -> nalgebra::DMatrix<f64> {
            let rows = block.nrows();
            nalgebra::DMatrix::from_fn(rows, block.ncols() + 1, |i, c| {
                if c < block.ncols() {
                    block[(i, c)]
                } else {
                    let sd = mgp.prior_sd_at_row(offset + i, new_r);
                    let z: f64 = StandardNormal.sample(rng);
                    sd * z
                }
            })
        };
        let b1 = grow(&state.cp.b1, 0, rng);
        let b2 = grow(&state.cp.b2, n, rng);
        let b3 = grow(&state.cp.b3, 2 * n, rng);
        state.cp = CpTensor3::new(b1, b2, b3)?;
        Ok(AdaptOutcome::Added)
    }
}
