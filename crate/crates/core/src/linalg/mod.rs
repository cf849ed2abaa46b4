//! Dense kernels used by the solvers.
//!
//! Matrices are `ndarray::Array2<f64>` in standard (row-major) layout; see
//! [`matrix_io`] for the on-disk representation.

pub mod matrix_io;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Result, ThError};
use crate::penalty::Mask;

/// Relative pivot threshold of the Cholesky factorisation.
pub const PIVOT_RTOL: f64 = 1e-12;
/// Relative singular-value threshold for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

/// Split of `0..n` into the free block `i1` (mask set) and the penalised
/// block `i2` (mask clear). Indices are zero-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    pub i1: Vec<usize>,
    pub i2: Vec<usize>,
}

impl IndexPartition {
    pub fn from_mask(omega: &Mask) -> Self {
        let (i1, i2): (Vec<usize>, Vec<usize>) = (0..omega.len()).partition(|&i| omega.get(i));
        Self { i1, i2 }
    }

    pub fn len(&self) -> usize {
        self.i1.len() + self.i2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Columns of `a` at `idx`, in the given order.
pub fn submatrix_cols(a: &Array2<f64>, idx: &[usize]) -> Result<Array2<f64>> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= a.ncols()) {
        return Err(ThError::IndexOutOfRange {
            index: bad,
            len: a.ncols(),
        });
    }
    Ok(a.select(Axis(1), idx))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors `m`, rejecting asymmetric input and pivots below
    /// `PIVOT_RTOL * max diagonal`.
    pub fn factor(m: &Array2<f64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(ThError::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if n == 0 {
            return Ok(Self {
                l: Array2::zeros((0, 0)),
            });
        }
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(ThError::InvalidParameter(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let max_diag = (0..n).map(|i| m[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
        let threshold = PIVOT_RTOL * max_diag.max(0.0);
        let mut l = Array2::<f64>::zeros((n, n));
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let d = {
                let row = l.row(j);
                let s = row.slice(ndarray::s![..j]);
                m[(j, j)] - s.dot(&s)
            };
            if !(d > threshold) || max_diag <= 0.0 {
                let pivot = d;
                return Err(ThError::NearSingular {
                    pivot,
                    threshold,
                    condition: max_diag / pivot.abs().max(f64::MIN_POSITIVE),
                });
            }
            min_pivot = min_pivot.min(d);
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let s = {
                    let ri = l.row(i);
                    let rj = l.row(j);
                    ri.slice(ndarray::s![..j]).dot(&rj.slice(ndarray::s![..j]))
                };
                l[(i, j)] = (m[(i, j)] - s) / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor_l(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn solve(&self, rhs: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(rhs.len(), n, "rhs length does not match factor");
        let l = &self.l;
        let mut y = rhs.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// Solves for every column of `rhs`.
    pub fn solve_columns(&self, rhs: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(rhs.raw_dim());
        for (j, col) in rhs.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve(&col.to_owned()));
        }
        out
    }
}

/// Solves `m x = rhs` for symmetric positive-definite `m` with one step of
/// iterative refinement.
pub fn spd_solve(m: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    if rhs.len() != m.nrows() {
        return Err(ThError::DimensionMismatch(format!(
            "matrix is {}x{}, rhs has {} entries",
            m.nrows(),
            m.ncols(),
            rhs.len()
        )));
    }
    let chol = Cholesky::factor(m)?;
    let mut x = chol.solve(rhs);
    let r = rhs - &m.dot(&x);
    x += &chol.solve(&r);
    Ok(x)
}

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Smallest number of linearly dependent columns, by exhaustive search.
///
/// Returns `m + 1` when every subset of at most `m` columns is independent.
/// Limited to `n <= 20`; zero columns are rejected.
pub fn spark_bruteforce(a: &Array2<f64>) -> Result<usize> {
    let (m, n) = a.dim();
    if n > 20 {
        return Err(ThError::SizeGuard(format!(
            "exhaustive spark needs n <= 20, got {n}"
        )));
    }
    if let Some(j) = (0..n).find(|&j| a.column(j).iter().all(|v| *v == 0.0)) {
        return Err(ThError::InvalidParameter(format!("column {j} is zero")));
    }
    let full = to_nalgebra(a);
    for k in 2..=m.min(n) {
        for cols in (0..n).combinations(k) {
            let sub = full.select_columns(cols.iter());
            if numerical_rank(&sub) < k {
                return Ok(k);
            }
        }
    }
    Ok(m + 1)
}

/// Which surrogate the exhaustive oracle minimises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleModel {
    /// `min Q_mu(x, w)` subject to `Ax = b`.
    Constrained,
    /// `min (alpha / 2) ||Ax - b||^2 + Q_mu(x, w)`.
    Regularized { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: Array1<f64>,
    pub omega: Mask,
    pub objective: f64,
}

fn lstsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.solve(rhs, RANK_RTOL * smax.max(f64::MIN_POSITIVE))
        .expect("u and v_t were computed")
}

/// Global minimiser of the surrogate over every binary mask (`n <= 12`).
///
/// Each mask induces a convex quadratic subproblem in `x`, solved here by SVD
/// so that this path shares no code with the block-coordinate solver.
pub fn enumerate_oracle(
    a: &Array2<f64>,
    b: &Array1<f64>,
    mu: f64,
    model: OracleModel,
) -> Result<OracleSolution> {
    crate::penalty::check_mu(mu)?;
    let (m, n) = a.dim();
    if n > 12 {
        return Err(ThError::SizeGuard(format!(
            "exhaustive oracle needs n <= 12, got {n}"
        )));
    }
    if b.len() != m {
        return Err(ThError::DimensionMismatch(format!(
            "A has {m} rows, b has {} entries",
            b.len()
        )));
    }
    let a_na = to_nalgebra(a);
    let b_na = DVector::from_iterator(m, b.iter().cloned());
    let inv_mu2 = 1.0 / (mu * mu);

    let mut best: Option<OracleSolution> = None;
    let mut consider = |x: Array1<f64>, omega: Mask, objective: f64| {
        if best.as_ref().is_none_or(|s| objective < s.objective) {
            best = Some(OracleSolution {
                x,
                omega,
                objective,
            });
        }
    };

    match model {
        OracleModel::Constrained => {
            // Pad to square so the full right singular basis is available.
            let mut padded = DMatrix::<f64>::zeros(n.max(m), n);
            padded.view_mut((0, 0), (m, n)).copy_from(&a_na);
            let mut b_pad = DVector::<f64>::zeros(n.max(m));
            b_pad.rows_mut(0, m).copy_from(&b_na);
            let svd = padded.svd(true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
            let tol = RANK_RTOL * smax.max(f64::MIN_POSITIVE);
            let xp = svd.solve(&b_pad, tol).expect("u and v_t were computed");
            let resid = (&a_na * &xp - &b_na).norm();
            if resid > 1e-9 * (1.0 + b_na.norm()) {
                return Err(ThError::InvalidParameter(
                    "b is not in the range of A; constrained model infeasible".into(),
                ));
            }
            let v_t = svd.v_t.as_ref().expect("v_t computed");
            let null_rows: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] <= tol)
                .collect();
            let null = DMatrix::from_fn(n, null_rows.len(), |i, j| v_t[(null_rows[j], i)]);

            for bits in 0u32..(1u32 << n) {
                let omega = Mask::from_bools((0..n).map(|i| bits >> i & 1 == 1).collect());
                let part = IndexPartition::from_mask(&omega);
                let x = if part.i2.is_empty() || null.ncols() == 0 {
                    xp.clone()
                } else {
                    let n2 = null.select_rows(part.i2.iter());
                    let rhs =
                        -DVector::from_iterator(part.i2.len(), part.i2.iter().map(|&i| xp[i]));
                    let z = lstsq(&n2, &rhs);
                    &xp + &null * z
                };
                let x = Array1::from_iter(x.iter().cloned());
                let quad: f64 = part.i2.iter().map(|&i| x[i] * x[i]).sum();
                let objective = inv_mu2 * quad + part.i1.len() as f64;
                consider(x, omega, objective);
            }
        }
        OracleModel::Regularized { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ThError::InvalidParameter(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
            let gram = a_na.transpose() * &a_na * alpha;
            let atb = a_na.transpose() * &b_na * alpha;
            for bits in 0u32..(1u32 << n) {
                let omega = Mask::from_bools((0..n).map(|i| bits >> i & 1 == 1).collect());
                let mut h = gram.clone();
                for i in 0..n {
                    if !omega.get(i) {
                        h[(i, i)] += 2.0 * inv_mu2;
                    }
                }
                let x = lstsq(&h, &atb);
                let x = Array1::from_iter(x.iter().cloned());
                let objective =
                    crate::penalty::objective_surrogate_noisy(&x, &omega, a, b, alpha, mu)?;
                consider(x, omega, objective);
            }
        }
    }
    Ok(best.expect("at least one mask enumerated"))
}
