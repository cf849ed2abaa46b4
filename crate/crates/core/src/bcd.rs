//! Block coordinate descent for a fixed `mu`.
//!
//! Each sweep solves the convex subproblem in `x` for the current mask, then
//! resets the mask to `filter(x, mu)`. For the constrained model `Ax = b`
//! the `x`-step depends on the mask alone, so a repeated mask means a fixed
//! point.

use ndarray::{Array1, Array2};

use crate::error::{Result, ThError};
use crate::linalg::{submatrix_cols, Cholesky, IndexPartition};
use crate::penalty::{check_mu, filter, objective_surrogate_noisy, surrogate_q, Mask};

/// Which model the solver minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `min Phi_mu(x)` subject to `Ax = b`.
    Constrained,
    /// `min (alpha / 2) ||Ax - b||^2 + Phi_mu(x)`.
    Regularized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThConfig {
    pub mu: f64,
    /// Data-fit weight for [`Mode::Regularized`]; `None` means `100 / mu^2`.
    pub alpha: Option<f64>,
    /// Relative-change tolerance on `x`.
    pub tol: f64,
    /// Sweep cap; `None` means `5 n`.
    pub max_iter: Option<usize>,
    /// Reject starts with surrogate value `>= m + 1`.
    pub enforce_initial_bound: bool,
}

impl ThConfig {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            alpha: None,
            tol: 1e-8,
            max_iter: None,
            enforce_initial_bound: true,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(100.0 / (self.mu * self.mu))
    }

    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(5 * n).max(1)
    }

    fn validate(&self) -> Result<()> {
        check_mu(self.mu)?;
        if !(self.tol > 0.0) {
            return Err(ThError::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(ThError::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ThError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Converged,
    MaxIterReached,
}

/// Objective values around one sweep: before the `x`-step, between the two
/// blocks, and after the mask update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub objective_before: f64,
    pub objective_mid: f64,
    pub objective_after: f64,
    pub omega_changed: bool,
    pub rel_change: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Array1<f64>,
    pub omega: Mask,
    /// Multiplier (constrained) or scaled residual `alpha (Ax - b)` (regularized).
    pub y: Array1<f64>,
    pub partition: IndexPartition,
    pub objective: f64,
    pub iter: usize,
    pub status: Status,
    pub sweeps: Vec<SweepRecord>,
}

impl SolverState {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

fn check_dims(a: &Array2<f64>, b: &Array1<f64>, part: &IndexPartition) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(ThError::DimensionMismatch(format!(
            "A has {} rows, b has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    if part.len() != a.ncols() {
        return Err(ThError::DimensionMismatch(format!(
            "partition covers {} indices, A has {} columns",
            part.len(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Shared kernel of both `x`-updates. With `K` the SPD matrix built from the
/// penalised columns, returns `x1 = (A1' K^-1 A1)^-1 A1' K^-1 b` and
/// `z = K^-1 (A1 x1 - b)`.
fn reduced_solve(
    k: &Array2<f64>,
    a1: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let kc = Cholesky::factor(k)?;
    if a1.ncols() == 0 {
        let mut z = kc.solve(&(-b));
        let r = -b - k.dot(&z);
        z += &kc.solve(&r);
        return Ok((Array1::zeros(0), z));
    }
    let w = kc.solve_columns(a1);
    let s = a1.t().dot(&w);
    let sc = Cholesky::factor(&s)?;
    let mut x1 = sc.solve(&w.t().dot(b));
    let mut z = refined_z(&kc, k, &(a1.dot(&x1) - b));
    // Refine the reduced system where it matters: A1' z is exactly
    // S x1 - A1' K^-1 b, which large alpha leaves poorly resolved.
    x1 -= &sc.solve(&a1.t().dot(&z));
    z = refined_z(&kc, k, &(a1.dot(&x1) - b));
    Ok((x1, z))
}

fn refined_z(kc: &Cholesky, k: &Array2<f64>, r: &Array1<f64>) -> Array1<f64> {
    let mut z = kc.solve(r);
    let rr = r - &k.dot(&z);
    z += &kc.solve(&rr);
    z
}

fn scatter(n: usize, part: &IndexPartition, x1: &Array1<f64>, x2: &Array1<f64>) -> Array1<f64> {
    let mut x = Array1::zeros(n);
    for (&i, &v) in part.i1.iter().zip(x1.iter()) {
        x[i] = v;
    }
    for (&i, &v) in part.i2.iter().zip(x2.iter()) {
        x[i] = v;
    }
    x
}

/// `x`-step of the constrained model for a fixed partition.
///
/// Returns `(x, y)` with `Ax = b`, `x_{I2} = -(mu^2 / 2) A_{I2}' y` and
/// `A_{I1}' y = 0`. With `I1` empty this is the minimum-norm solution.
pub fn x_update_noisefree(
    a: &Array2<f64>,
    b: &Array1<f64>,
    part: &IndexPartition,
    mu: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_mu(mu)?;
    check_dims(a, b, part)?;
    let m = a.nrows();
    if part.i1.len() > m {
        return Err(ThError::CardinalityExceeded {
            card: part.i1.len(),
            m,
        });
    }
    let a1 = submatrix_cols(a, &part.i1)?;
    let a2 = submatrix_cols(a, &part.i2)?;
    let gram2 = a2.dot(&a2.t());
    let (x1, mut z) = reduced_solve(&gram2, &a1, b)?;
    // When the free block already interpolates b, the exact multiplier is
    // zero; what remains is rounding noise that 2 / mu^2 would amplify.
    let fit = norm(&(a1.dot(&x1) - b));
    let a1_norm = a1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fit <= 64.0 * f64::EPSILON * (norm(b) + a1_norm * norm(&x1)) {
        z.fill(0.0);
    }
    let x2 = -a2.t().dot(&z);
    let y = z * (2.0 / (mu * mu));
    Ok((scatter(a.ncols(), part, &x1, &x2), y))
}

/// `x`-step of the regularized model for a fixed partition, via the
/// `m x m` kernel `(1/alpha) I + (mu^2 / 2) A_{I2} A_{I2}'`.
///
/// Returns `(x, y)` with `y = alpha (Ax - b)`.
pub fn x_update_noisy(
    a: &Array2<f64>,
    b: &Array1<f64>,
    part: &IndexPartition,
    mu: f64,
    alpha: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_mu(mu)?;
    check_dims(a, b, part)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ThError::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let a1 = submatrix_cols(a, &part.i1)?;
    let a2 = submatrix_cols(a, &part.i2)?;
    let half_mu2 = 0.5 * mu * mu;
    let mut kernel = a2.dot(&a2.t()) * half_mu2;
    for i in 0..a.nrows() {
        kernel[(i, i)] += 1.0 / alpha;
    }
    let (x1, y) = reduced_solve(&kernel, &a1, b)?;
    let x2 = -a2.t().dot(&y) * half_mu2;
    Ok((scatter(a.ncols(), part, &x1, &x2), y))
}

/// Same minimiser as [`x_update_noisy`], from the `n x n` normal equations
/// `(A'A + 2/(alpha mu^2) diag(1 - w)) x = A'b`.
pub fn x_direct_noisy(
    a: &Array2<f64>,
    b: &Array1<f64>,
    omega: &Mask,
    mu: f64,
    alpha: f64,
) -> Result<Array1<f64>> {
    check_mu(mu)?;
    if omega.len() != a.ncols() || b.len() != a.nrows() {
        return Err(ThError::DimensionMismatch("A, b and mask disagree".into()));
    }
    let mut h = a.t().dot(a);
    let d = 2.0 / (alpha * mu * mu);
    for i in 0..a.ncols() {
        if !omega.get(i) {
            h[(i, i)] += d;
        }
    }
    crate::linalg::spd_solve(&h, &a.t().dot(b))
}

struct Problem<'a> {
    a: &'a Array2<f64>,
    b: &'a Array1<f64>,
    mu: f64,
    alpha: f64,
    mode: Mode,
}

impl Problem<'_> {
    fn objective(&self, x: &Array1<f64>, omega: &Mask) -> Result<f64> {
        match self.mode {
            Mode::Constrained => surrogate_q(x, omega, self.mu),
            Mode::Regularized => {
                objective_surrogate_noisy(x, omega, self.a, self.b, self.alpha, self.mu)
            }
        }
    }

    fn x_step(&self, part: &IndexPartition) -> Result<(Array1<f64>, Array1<f64>)> {
        match self.mode {
            Mode::Constrained => x_update_noisefree(self.a, self.b, part, self.mu),
            Mode::Regularized => x_update_noisy(self.a, self.b, part, self.mu, self.alpha),
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Alternates the `x`-step and the mask reset from `(x0, omega0)`.
///
/// Stops once the relative change of `x` drops below `tol` and the mask is
/// unchanged by the last sweep; otherwise after `max_iter` sweeps with
/// [`Status::MaxIterReached`].
pub fn bcd_run(
    a: &Array2<f64>,
    b: &Array1<f64>,
    config: &ThConfig,
    x0: &Array1<f64>,
    omega0: &Mask,
    mode: Mode,
) -> Result<SolverState> {
    config.validate()?;
    let (m, n) = a.dim();
    if b.len() != m || x0.len() != n || omega0.len() != n {
        return Err(ThError::DimensionMismatch(format!(
            "A is {m}x{n}, b has {}, x0 has {}, omega0 has {}",
            b.len(),
            x0.len(),
            omega0.len()
        )));
    }
    let prob = Problem {
        a,
        b,
        mu: config.mu,
        alpha: config.alpha(),
        mode,
    };
    let mut x = x0.clone();
    let mut omega = omega0.clone();
    let mut objective = prob.objective(&x, &omega)?;
    let bound = (m + 1) as f64;
    if config.enforce_initial_bound && !(objective < bound) {
        return Err(ThError::InitialBound {
            value: objective,
            bound,
        });
    }

    let mut sweeps = Vec::new();
    let mut y = Array1::zeros(m);
    let mut partition = IndexPartition::from_mask(&omega);
    let mut status = Status::MaxIterReached;
    for _ in 0..config.max_iter_for(n) {
        partition = IndexPartition::from_mask(&omega);
        let (x_new, y_new) = prob.x_step(&partition)?;
        let objective_mid = prob.objective(&x_new, &omega)?;
        let omega_new = filter(&x_new, config.mu);
        let objective_after = prob.objective(&x_new, &omega_new)?;
        let diff = norm(&(&x_new - &x));
        let base = norm(&x);
        let rel_change = if base > 0.0 { diff / base } else { diff };
        let omega_changed = omega_new != omega;
        sweeps.push(SweepRecord {
            objective_before: objective,
            objective_mid,
            objective_after,
            omega_changed,
            rel_change,
        });
        x = x_new;
        y = y_new;
        omega = omega_new;
        objective = objective_after;
        if !omega_changed && rel_change < config.tol {
            status = Status::Converged;
            break;
        }
    }
    partition = if sweeps.is_empty() {
        partition
    } else {
        IndexPartition::from_mask(&omega)
    };
    Ok(SolverState {
        iter: sweeps.len(),
        x,
        omega,
        y,
        partition,
        objective,
        status,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> (Array2<f64>, Array1<f64>) {
        (array![[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]], array![2.0, 1.0])
    }

    fn close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn partitions() {
        let p = IndexPartition::from_mask(&Mask::zeros(3));
        assert!(p.i1.is_empty());
        assert_eq!(p.i2, vec![0, 1, 2]);
        let p = IndexPartition::from_mask(&Mask::ones(3));
        assert_eq!(p.i1, vec![0, 1, 2]);
        assert!(p.i2.is_empty());
    }

    #[test]
    fn noisefree_small_instance() {
        let (a, b) = small();
        let part = IndexPartition::from_mask(&Mask::from_bools(vec![false, false, true]));
        let (x, y) = x_update_noisefree(&a, &b, &part, 0.1).unwrap();
        assert!(close(&x, &array![0.0, 0.0, 1.0], 1e-12));
        // x_{I2} = -(mu^2/2) A_{I2}' y
        let a2 = submatrix_cols(&a, &part.i2).unwrap();
        let x2 = -a2.t().dot(&y) * 0.005;
        assert!(close(&x2, &array![x[0], x[1]], 1e-12));
    }

    #[test]
    fn noisefree_exact_block_has_zero_multiplier() {
        let a = array![[1.0, 0.0, 0.5, 0.3], [0.0, 1.0, 0.2, -0.4]];
        let b = array![1.5, -2.0];
        let part = IndexPartition::from_mask(&Mask::from_bools(vec![true, true, false, false]));
        let (x, y) = x_update_noisefree(&a, &b, &part, 0.3).unwrap();
        assert!(close(&x, &array![1.5, -2.0, 0.0, 0.0], 1e-12));
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn noisefree_empty_free_block_is_min_norm() {
        let (a, b) = small();
        let part = IndexPartition::from_mask(&Mask::zeros(3));
        let (x, _) = x_update_noisefree(&a, &b, &part, 1.0).unwrap();
        let gram = a.dot(&a.t());
        let expect = a.t().dot(&crate::linalg::spd_solve(&gram, &b).unwrap());
        assert!(close(&x, &expect, 1e-12));
    }

    #[test]
    fn noisefree_rejects_oversized_free_block() {
        let (a, b) = small();
        let part = IndexPartition::from_mask(&Mask::ones(3));
        assert!(matches!(
            x_update_noisefree(&a, &b, &part, 1.0),
            Err(ThError::CardinalityExceeded { card: 3, m: 2 })
        ));
    }

    #[test]
    fn noisy_identity_closed_form() {
        let a = Array2::eye(2);
        let b = array![3.0, 0.2];
        let omega = Mask::from_bools(vec![true, false]);
        let part = IndexPartition::from_mask(&omega);
        let (x, y) = x_update_noisy(&a, &b, &part, 1.0, 2.0).unwrap();
        assert!(close(&x, &array![3.0, 0.1], 1e-14));
        assert!(close(&y, &(2.0 * (a.dot(&x) - &b)), 1e-14));
        assert!(close(
            &x_direct_noisy(&a, &b, &omega, 1.0, 2.0).unwrap(),
            &x,
            1e-14
        ));
    }

    #[test]
    fn noisy_zero_rhs() {
        let (a, _) = small();
        let part = IndexPartition::from_mask(&Mask::from_bools(vec![true, false, false]));
        let (x, y) = x_update_noisy(&a, &Array1::zeros(2), &part, 0.5, 3.0).unwrap();
        assert!(x.iter().chain(y.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn run_small_instance() {
        let (a, b) = small();
        // Basis-pursuit solution of this instance.
        let x0 = array![0.0, 0.0, 1.0];
        let cfg = ThConfig::new(0.1);
        let omega0 = filter(&x0, cfg.mu);
        let st = bcd_run(&a, &b, &cfg, &x0, &omega0, Mode::Constrained).unwrap();
        assert!(st.converged());
        assert!(st.iter <= 3);
        assert!(close(&st.x, &array![0.0, 0.0, 1.0], 1e-12));
        assert!((st.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn run_zero_rhs() {
        let (a, _) = small();
        let b = Array1::zeros(2);
        let st = bcd_run(
            &a,
            &b,
            &ThConfig::new(1.0),
            &Array1::zeros(3),
            &Mask::zeros(3),
            Mode::Constrained,
        )
        .unwrap();
        assert!(st.converged());
        assert_eq!(st.iter, 1);
        assert!(st.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn run_rejects_bad_start() {
        let (a, b) = small();
        let x0 = array![10.0, 10.0, 10.0];
        let err = bcd_run(
            &a,
            &b,
            &ThConfig::new(1.0),
            &x0,
            &Mask::zeros(3),
            Mode::Constrained,
        );
        assert!(matches!(err, Err(ThError::InitialBound { .. })));
    }

    #[test]
    fn config_defaults() {
        let c = ThConfig::new(0.5);
        assert_eq!(c.tol, 1e-8);
        assert_eq!(c.max_iter_for(40), 200);
        assert_eq!(c.alpha(), 400.0);
        assert!(ThConfig {
            tol: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(ThConfig {
            max_iter: Some(0),
            ..c
        }
        .validate()
        .is_err());
    }
}
