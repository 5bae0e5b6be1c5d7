//! Third-order tensors and their rank-R CP factorization.
//!
//! The VAR(P) coefficient matrix A = (A_1, …, A_P) is stored as an N×N×P
//! tensor whose (i1, i2, p) entry is the (i1, i2) entry of A_p. The CP form
//! keeps three factor blocks: B1 (response loading, N×R), B2 (predictor
//! loading, N×R) and B3 (temporal loading, P×R); column r of the three blocks
//! generates the rank-one component A^(r) and the tensor is the sum over r.
//! The superdiagonal core tensor is implicit in the composition rule and is
//! never materialized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rank-R CP factor triple for an N×N×P coefficient tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor3 {
    /// Response loading, N×R.
    pub b1: DMatrix<f64>,
    /// Predictor loading, N×R.
    pub b2: DMatrix<f64>,
    /// Temporal loading, P×R.
    pub b3: DMatrix<f64>,
}

impl CpTensor3 {
    pub fn new(b1: DMatrix<f64>, b2: DMatrix<f64>, b3: DMatrix<f64>) -> Result<Self> {
        if b1.ncols() == 0 {
            return Err(Error::invalid("CP rank must be at least 1"));
        }
        if b1.ncols() != b2.ncols() || b2.ncols() != b3.ncols() {
            return Err(Error::invalid(format!(
                "factor blocks disagree on rank: {} / {} / {}",
                b1.ncols(),
                b2.ncols(),
                b3.ncols()
            )));
        }
        if b1.nrows() != b2.nrows() {
            return Err(Error::invalid(format!(
                "B1 and B2 must share the series count, got {} and {}",
                b1.nrows(),
                b2.nrows()
            )));
        }
        let all_finite = b1
            .iter()
            .chain(b2.iter())
            .chain(b3.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("non-finite margin"));
        }
        Ok(Self { b1, b2, b3 })
    }

    pub fn n_series(&self) -> usize {
        self.b1.nrows()
    }

    pub fn lag_order(&self) -> usize {
        self.b3.nrows()
    }

    pub fn rank(&self) -> usize {
        self.b1.ncols()
    }

    /// Row-stack (B1; B2; B3) into the (2N+P)×R tensor matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, p, r) = (self.n_series(), self.lag_order(), self.rank());
        let mut out = DMatrix::zeros(2 * n + p, r);
        out.rows_mut(0, n).copy_from(&self.b1);
        out.rows_mut(n, n).copy_from(&self.b2);
        out.rows_mut(2 * n, p).copy_from(&self.b3);
        out
    }

    /// Inverse of [`CpTensor3::stacked`].
    pub fn from_stacked(stacked: &DMatrix<f64>, n: usize, p: usize) -> Result<Self> {
        if stacked.nrows() != 2 * n + p {
            return Err(Error::invalid(format!(
                "stacked tensor matrix has {} rows, expected {}",
                stacked.nrows(),
                2 * n + p
            )));
        }
        Self::new(
            stacked.rows(0, n).into_owned(),
            stacked.rows(n, n).into_owned(),
            stacked.rows(2 * n, p).into_owned(),
        )
    }

    /// Drop the listed factor columns (ascending, deduplicated internally),
    /// keeping at least the surviving ones' order.
    pub fn drop_columns(&self, cols: &[usize]) -> Result<Self> {
        let r = self.rank();
        let keep: Vec<usize> = (0..r).filter(|c| !cols.contains(c)).collect();
        if keep.is_empty() {
            return Err(Error::invalid("cannot drop every CP column"));
        }
        Ok(Self {
            b1: self.b1.select_columns(&keep),
            b2: self.b2.select_columns(&keep),
            b3: self.b3.select_columns(&keep),
        })
    }
}

/// Dense N×N×P tensor with (i1, i2, p) layout, i1 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(n1: usize, n2: usize, n3: usize) -> Self {
        Self {
            n1,
            n2,
            n3,
            data: vec![0.0; n1 * n2 * n3],
        }
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, p: usize) -> f64 {
        self.data[i1 + self.n1 * (i2 + self.n2 * p)]
    }

    #[inline]
    pub fn get_mut(&mut self, i1: usize, i2: usize, p: usize) -> &mut f64 {
        &mut self.data[i1 + self.n1 * (i2 + self.n2 * p)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Fraction of entries with |entry| < threshold.
    pub fn small_magnitude_fraction(&self, threshold: f64) -> f64 {
        let small = self.data.iter().filter(|v| v.abs() < threshold).count();
        small as f64 / self.data.len() as f64
    }
}

/// Three-way outer product b1 ∘ b2 ∘ b3.
pub fn outer3(b1: &DVector<f64>, b2: &DVector<f64>, b3: &DVector<f64>) -> Result<DenseTensor3> {
    for v in b1.iter().chain(b2.iter()).chain(b3.iter()) {
        if !v.is_finite() {
            return Err(Error::invalid("non-finite entry in outer product factor"));
        }
    }
    let (n1, n2, n3) = (b1.len(), b2.len(), b3.len());
    if n1 == 0 || n2 == 0 || n3 == 0 {
        return Err(Error::invalid("outer product factors must be non-empty"));
    }
    let mut out = DenseTensor3::zeros(n1, n2, n3);
    for p in 0..n3 {
        for i2 in 0..n2 {
            let scale = b2[i2] * b3[p];
            for i1 in 0..n1 {
                *out.get_mut(i1, i2, p) = b1[i1] * scale;
            }
        }
    }
    Ok(out)
}

/// Compose the dense tensor Σ_r B1[:,r] ∘ B2[:,r] ∘ B3[:,r].
pub fn cp_compose(cp: &CpTensor3) -> DenseTensor3 {
    let (n, p) = (cp.n_series(), cp.lag_order());
    let mut out = DenseTensor3::zeros(n, n, p);
    for r in 0..cp.rank() {
        accumulate_component(cp, r, &mut out);
    }
    out
}

/// Per-column rank-one components A^(r); their sum is [`cp_compose`].
pub fn cp_components(cp: &CpTensor3) -> Vec<DenseTensor3> {
    (0..cp.rank())
        .map(|r| {
            let mut t = DenseTensor3::zeros(cp.n_series(), cp.n_series(), cp.lag_order());
            accumulate_component(cp, r, &mut t);
            t
        })
        .collect()
}

fn accumulate_component(cp: &CpTensor3, r: usize, out: &mut DenseTensor3) {
    let (n, p_ord) = (cp.n_series(), cp.lag_order());
    for p in 0..p_ord {
        for i2 in 0..n {
            let scale = cp.b2[(i2, r)] * cp.b3[(p, r)];
            if scale == 0.0 {
                continue;
            }
            for i1 in 0..n {
                *out.get_mut(i1, i2, p) += cp.b1[(i1, r)] * scale;
            }
        }
    }
}

/// Mode-1 matricization: N×(N·P) matrix whose column (p·N + i2) holds the
/// (·, i2, p) fiber, matching the lag-stacked regressor x_t = (y'_{t-1}, …,
/// y'_{t-P})'.
pub fn mode1_matricize(t: &DenseTensor3) -> DMatrix<f64> {
    let (n1, n2, n3) = (t.n1, t.n2, t.n3);
    let mut out = DMatrix::zeros(n1, n2 * n3);
    for p in 0..n3 {
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                out[(i1, p * n2 + i2)] = t.get(i1, i2, p);
            }
        }
    }
    out
}

/// Predict through the factor form: factors[r] = Σ_{i2,p} B2[i2,r] B3[p,r]
/// X[i2,p] and yhat = B1 · factors. X columns are (y_{t-1}, …, y_{t-P}).
pub fn factor_form_predict(
    cp: &CpTensor3,
    x: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, p, r) = (cp.n_series(), cp.lag_order(), cp.rank());
    if x.nrows() != n || x.ncols() != p {
        return Err(Error::invalid(format!(
            "lag matrix is {}×{}, expected {}×{}",
            x.nrows(),
            x.ncols(),
            n,
            p
        )));
    }
    let mut factors = DVector::zeros(r);
    for rr in 0..r {
        let mut acc = 0.0;
        for pp in 0..p {
            let b3 = cp.b3[(pp, rr)];
            if b3 == 0.0 {
                continue;
            }
            let mut col_acc = 0.0;
            for i2 in 0..n {
                col_acc += cp.b2[(i2, rr)] * x[(i2, pp)];
            }
            acc += b3 * col_acc;
        }
        factors[rr] = acc;
    }
    let yhat = &cp.b1 * &factors;
    Ok((yhat, factors))
}

/// Factor vector alone (the R-dimensional f_t of the factor-model reading).
pub fn factors_at(cp: &CpTensor3, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    factor_form_predict(cp, x).map(|(_, f)| f)
}
