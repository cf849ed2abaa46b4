//! Truncated Huber penalty `phi_mu(x) = min(1, x^2 / mu^2)` and the
//! quantities built on it: the hard-threshold filter, the gradient away from
//! the breakpoints `|x| = mu`, the scalar proximal map and the bi-variate
//! surrogate `Q_mu(x, w) = ||(1 - w) o x||^2 / mu^2 + ||w||_0`.
//!
//! All functions are pure and allocate only their outputs.

use std::fmt;

use ndarray::{Array1, Array2};

use crate::error::{Result, ThError};

/// Binary vector marking entries treated as "large" (`true`) versus entries
/// penalised quadratically (`false`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn zeros(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    /// Builds a mask from real values, rejecting anything other than exact
    /// `0.0` or `1.0`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(position, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(ThError::NonBinaryMask { position, value: v })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Mask)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `||w||_0`.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn to_values(&self) -> Array1<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parameters of the scalar proximal subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThScalarParams {
    mu: f64,
    lambda: f64,
}

impl ThScalarParams {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        check_mu(mu)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ThError::InvalidParameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self { mu, lambda })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `sqrt(mu^2 + 2 lambda)`, the magnitude above which the prox keeps its
    /// argument unchanged.
    pub fn keep_threshold(&self) -> f64 {
        (self.mu * self.mu + 2.0 * self.lambda).sqrt()
    }

    /// Multiplier `mu^2 / (mu^2 + 2 lambda)` applied below the threshold.
    pub fn shrink_factor(&self) -> f64 {
        let mu2 = self.mu * self.mu;
        mu2 / (mu2 + 2.0 * self.lambda)
    }
}

/// Returned by [`gradient`] when some entry sits exactly on `|x_i| = mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotDifferentiable {
    pub index: usize,
}

impl fmt::Display for NotDifferentiable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "penalty not differentiable at entry {} (|x_i| = mu)",
            self.index
        )
    }
}

impl std::error::Error for NotDifferentiable {}

/// Value, filter and (where defined) gradient of the penalty at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEvaluation {
    pub value: f64,
    pub filter: Mask,
    pub gradient: Option<Array1<f64>>,
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(ThError::InvalidParameter(format!(
            "mu must be positive and finite, got {mu}"
        )))
    }
}

#[inline]
pub(crate) fn phi_unchecked(x: f64, mu: f64) -> f64 {
    if x.abs() <= mu {
        (x / mu) * (x / mu)
    } else {
        1.0
    }
}

/// Scalar penalty: `x^2 / mu^2` for `|x| <= mu`, `1` otherwise.
pub fn phi_scalar(x: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(phi_unchecked(x, mu))
}

/// `Phi_mu(x) = sum_i phi_mu(x_i)`; zero for an empty vector.
pub fn phi_vector(x: &Array1<f64>, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(x.iter().map(|&v| phi_unchecked(v, mu)).sum())
}

/// Hard-threshold filter `H_mu`: entry `i` is set iff `|x_i| > mu`.
pub fn filter(x: &Array1<f64>, mu: f64) -> Mask {
    Mask(x.iter().map(|v| v.abs() > mu).collect())
}

/// Gradient `(2 / mu^2) (1 - w) o x` with `w = H_mu(x)`.
///
/// Entries with `|x_i| == mu` are kinks of the penalty; the first such index
/// is reported instead of picking a one-sided derivative.
pub fn gradient(
    x: &Array1<f64>,
    mu: f64,
) -> Result<std::result::Result<Array1<f64>, NotDifferentiable>> {
    check_mu(mu)?;
    if let Some(index) = x.iter().position(|v| v.abs() == mu) {
        return Ok(Err(NotDifferentiable { index }));
    }
    let scale = 2.0 / (mu * mu);
    Ok(Ok(x.mapv(|v| if v.abs() > mu { 0.0 } else { scale * v })))
}

/// Value, filter and gradient in one pass.
pub fn evaluate(x: &Array1<f64>, mu: f64) -> Result<PenaltyEvaluation> {
    let value = phi_vector(x, mu)?;
    let gradient = gradient(x, mu)?.ok();
    Ok(PenaltyEvaluation {
        value,
        filter: filter(x, mu),
        gradient,
    })
}

/// Minimiser of `phi_mu(x) + (x - a)^2 / (2 lambda)`.
///
/// At the tie `|a| = sqrt(mu^2 + 2 lambda)` both candidates are optimal; the
/// shrunk one is returned.
pub fn prox(a: f64, params: ThScalarParams) -> f64 {
    if a.abs() > params.keep_threshold() {
        a
    } else {
        params.shrink_factor() * a
    }
}

/// `Q_mu(x, w) = ||(1 - w) o x||^2 / mu^2 + ||w||_0`.
pub fn surrogate_q(x: &Array1<f64>, omega: &Mask, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    if x.len() != omega.len() {
        return Err(ThError::DimensionMismatch(format!(
            "x has {} entries, mask has {}",
            x.len(),
            omega.len()
        )));
    }
    let quad: f64 = x
        .iter()
        .zip(omega.iter())
        .filter(|(_, w)| !w)
        .map(|(v, _)| v * v)
        .sum();
    Ok(quad / (mu * mu) + omega.count() as f64)
}

fn residual_sq(a: &Array2<f64>, x: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.ncols() != x.len() || a.nrows() != b.len() {
        return Err(ThError::DimensionMismatch(format!(
            "A is {}x{}, x has {} entries, b has {}",
            a.nrows(),
            a.ncols(),
            x.len(),
            b.len()
        )));
    }
    let r = a.dot(x) - b;
    Ok(r.dot(&r))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(ThError::InvalidParameter(format!(
            "alpha must be positive and finite, got {alpha}"
        )))
    }
}

/// `G_mu(x) = (alpha / 2) ||Ax - b||^2 + Phi_mu(x)`.
pub fn objective_noisy(
    x: &Array1<f64>,
    a: &Array2<f64>,
    b: &Array1<f64>,
    alpha: f64,
    mu: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let data = residual_sq(a, x, b)?;
    Ok(0.5 * alpha * data + phi_vector(x, mu)?)
}

/// `J_mu(x, w) = (alpha / 2) ||Ax - b||^2 + Q_mu(x, w)`.
pub fn objective_surrogate_noisy(
    x: &Array1<f64>,
    omega: &Mask,
    a: &Array2<f64>,
    b: &Array1<f64>,
    alpha: f64,
    mu: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let data = residual_sq(a, x, b)?;
    Ok(0.5 * alpha * data + surrogate_q(x, omega, mu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_values() {
        assert_eq!(phi_scalar(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(phi_scalar(0.7, 0.7).unwrap(), 1.0);
        assert_eq!(phi_scalar(0.5, 1.0).unwrap(), 0.25);
        assert_eq!(phi_scalar(-3.0, 1.0).unwrap(), 1.0);
        assert!(phi_scalar(1.0, 0.0).is_err());
        assert!(phi_scalar(1.0, -2.0).is_err());
    }

    #[test]
    fn vector_values_and_l0_limit() {
        assert_eq!(phi_vector(&array![0.5, 2.0], 1.0).unwrap(), 1.25);
        assert_eq!(phi_vector(&Array1::zeros(7), 1.0).unwrap(), 0.0);
        assert_eq!(phi_vector(&Array1::zeros(0), 1.0).unwrap(), 0.0);

        let x = array![3.0, -4.0, 0.1];
        let l0 = x.iter().filter(|v| **v != 0.0).count() as f64;
        let mut prev_gap = f64::INFINITY;
        for mu in [1e-2, 1e-4, 1e-6] {
            let gap = (phi_vector(&x, mu).unwrap() - l0).abs();
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-12);
    }

    #[test]
    fn filter_boundary_goes_to_zero() {
        assert_eq!(
            filter(&array![0.5, -2.0, 1.0], 1.0),
            Mask::from_bools(vec![false, true, false])
        );
        assert_eq!(filter(&Array1::zeros(4), 1.0), Mask::zeros(4));
        let mu = 0.3;
        let eps = 1e-9;
        assert_eq!(
            filter(&array![mu + eps, mu - eps], mu),
            Mask::from_bools(vec![true, false])
        );
    }

    #[test]
    fn gradient_formula_and_breakpoint() {
        let g = gradient(&array![0.5, 2.0], 1.0).unwrap().unwrap();
        assert_eq!(g, array![1.0, 0.0]);
        let g0 = gradient(&Array1::zeros(3), 1.0).unwrap().unwrap();
        assert_eq!(g0, Array1::<f64>::zeros(3));
        let kink = gradient(&array![0.1, -1.0, 3.0], 1.0).unwrap();
        assert_eq!(kink, Err(NotDifferentiable { index: 1 }));
        let ev = evaluate(&array![0.1, -1.0], 1.0).unwrap();
        assert!(ev.gradient.is_none());
        assert!((ev.value - 1.01).abs() < 1e-15);
    }

    #[test]
    fn prox_cases() {
        let p = ThScalarParams::new(1.0, 1.0).unwrap();
        assert_eq!(prox(3.0, p), 3.0);
        assert_eq!(prox(0.0, p), 0.0);
        assert!((prox(1.5, p) - 0.5).abs() < 1e-15);
        // tie at |a| = sqrt(3)
        let tie = p.keep_threshold();
        assert!((prox(tie, p) - tie / 3.0).abs() < 1e-15);
        assert!(ThScalarParams::new(1.0, 0.0).is_err());
        assert!(ThScalarParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn surrogate_values() {
        let w = Mask::from_values(&[0.0, 1.0]).unwrap();
        assert_eq!(surrogate_q(&array![0.5, 2.0], &w, 1.0).unwrap(), 1.25);
        assert_eq!(
            surrogate_q(&Array1::zeros(3), &Mask::zeros(3), 1.0).unwrap(),
            0.0
        );
        assert!(Mask::from_values(&[0.0, 0.5]).is_err());
        assert!(surrogate_q(&array![1.0], &Mask::zeros(2), 1.0).is_err());
    }

    #[test]
    fn noisy_objectives() {
        let a = Array2::<f64>::eye(2);
        let b = array![1.0, 0.0];
        let x = Array1::zeros(2);
        assert_eq!(objective_noisy(&x, &a, &b, 2.0, 1.0).unwrap(), 1.0);
        // zero residual reduces to the penalty
        let x = array![0.5, 3.0];
        let b = a.dot(&x);
        assert_eq!(
            objective_noisy(&x, &a, &b, 5.0, 1.0).unwrap(),
            phi_vector(&x, 1.0).unwrap()
        );
        let w = filter(&x, 1.0);
        assert_eq!(
            objective_surrogate_noisy(&x, &w, &a, &b, 5.0, 1.0).unwrap(),
            1.25
        );
        assert!(objective_noisy(&x, &a, &array![1.0], 1.0, 1.0).is_err());
        assert!(objective_noisy(&x, &a, &b, 0.0, 1.0).is_err());
    }
}
