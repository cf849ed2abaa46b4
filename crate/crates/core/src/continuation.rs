//! Decreasing-`mu` outer loop around [`bcd_run`].
//!
//! Large `mu` keeps every subproblem well conditioned; each epoch warm-starts
//! from the previous `(x, omega)` and `mu` shrinks by at least nothing and at
//! most a factor `rho`, guided by the energy of the entries still below the
//! threshold.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::bcd::{bcd_run, Mode, SolverState, ThConfig};
use crate::error::{Result, ThError};
use crate::penalty::{filter, phi_vector, surrogate_q};

/// How the first threshold is chosen from the initial point `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Mu0Rule {
    /// [`mu0_auto`]: `max |x0_i|`, so the first mask is empty.
    MaxAbs,
    /// Halve from `max |x0_i|` while `Phi_mu(x0)` stays below
    /// `fraction * m`; the first mask then keeps the dominant entries of
    /// `x0`.
    PhiBudget(f64),
    /// A fixed value.
    Value(f64),
}

impl Mu0Rule {
    pub fn resolve(&self, x0: &Array1<f64>, m: usize) -> Result<f64> {
        match *self {
            Mu0Rule::MaxAbs => mu0_auto(x0),
            Mu0Rule::Value(v) => {
                crate::penalty::check_mu(v)?;
                Ok(v)
            }
            Mu0Rule::PhiBudget(fraction) => {
                if !(fraction > 0.0 && fraction.is_finite()) {
                    return Err(ThError::InvalidParameter(format!(
                        "budget fraction must be positive, got {fraction}"
                    )));
                }
                let budget = fraction * m as f64;
                let mut mu = mu0_auto(x0)?;
                // Floor well above underflow; entries this small are noise.
                let floor = mu * 1e-12;
                while mu / 2.0 > floor && phi_vector(x0, mu / 2.0)? < budget {
                    mu /= 2.0;
                }
                Ok(mu)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub mu0: Mu0Rule,
    pub rho: f64,
    pub max_epochs: usize,
    /// Inner relative-change tolerance.
    pub tol: f64,
    /// Inner sweep cap; `None` means `5 n`.
    pub max_iter: Option<usize>,
    /// Data weight for [`Mode::Regularized`], fixed across epochs. `None`
    /// means `100 / mu0^2`.
    pub alpha: Option<f64>,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            mu0: Mu0Rule::PhiBudget(0.25),
            rho: 2.0,
            max_epochs: 20,
            tol: 1e-8,
            max_iter: None,
            alpha: None,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(ThError::InvalidParameter(format!(
                "rho must exceed 1, got {}",
                self.rho
            )));
        }
        if self.max_epochs == 0 {
            return Err(ThError::InvalidParameter(
                "max_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Largest magnitude of `x0`, so that `filter(x0, mu0)` is all zeros.
pub fn mu0_auto(x0: &Array1<f64>) -> Result<f64> {
    let mu = x0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if mu > 0.0 && mu.is_finite() {
        Ok(mu)
    } else {
        Err(ThError::ZeroVector(
            "initial point is zero; cannot choose mu0".into(),
        ))
    }
}

/// Next threshold: `min(max(c, e), mu_k)` with `c = mu_k / rho` and `e` the
/// root-mean energy of the entries at most `c`, normalised by
/// `m - n + card(K)`. Falls back to `c` when that count is not positive.
pub fn mu_next(mu_k: f64, x_k: &Array1<f64>, m: usize, n: usize, rho: f64) -> f64 {
    let c = mu_k / rho;
    let (count, energy) = x_k
        .iter()
        .filter(|v| v.abs() <= c)
        .fold((0usize, 0.0), |(k, e), v| (k + 1, e + v * v));
    let denom = m as i64 - n as i64 + count as i64;
    if denom <= 0 {
        return c;
    }
    let e = (energy / denom as f64).sqrt();
    c.max(e).min(mu_k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mu: f64,
    /// Surrogate objective at the end of the epoch.
    pub objective: f64,
    /// `Phi_mu(x)` (plus the data term in regularized mode).
    pub phi: f64,
    pub omega_card: usize,
    pub inner_iters: usize,
    pub converged: bool,
    pub restarts: usize,
    pub rre: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epochs: Vec<EpochRecord>,
    /// Per-epoch sweep objectives, kept for diagnostics.
    #[serde(skip)]
    pub sweeps: Vec<Vec<crate::bcd::SweepRecord>>,
}

impl EpochTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mu,objective,omega_card,inner_iters,rre\n");
        for e in &self.epochs {
            let rre = e.rre.map(|r| format!("{r:e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:e},{:e},{},{},{}\n",
                e.epoch, e.mu, e.objective, e.omega_card, e.inner_iters, rre
            ));
        }
        out
    }
}

fn rre(x: &Array1<f64>, truth: &Array1<f64>) -> f64 {
    let d = x - truth;
    (d.dot(&d) / truth.dot(truth)).sqrt()
}

const MAX_RESTARTS: usize = 3;

/// Runs epochs of [`bcd_run`] from `x0` with a shrinking `mu`.
///
/// Stops after `max_epochs`, or once `mu` has stayed put for two consecutive
/// converged epochs. A near-singular subproblem restarts the epoch with `mu`
/// doubled, at most three times per run.
pub fn continuation_run(
    a: &Array2<f64>,
    b: &Array1<f64>,
    truth: Option<&Array1<f64>>,
    x0: &Array1<f64>,
    cfg: &ContinuationConfig,
    mode: Mode,
) -> Result<(SolverState, EpochTrace)> {
    cfg.validate()?;
    let (m, n) = a.dim();
    if x0.len() != n || b.len() != m {
        return Err(ThError::DimensionMismatch(format!(
            "A is {m}x{n}, b has {}, x0 has {}",
            b.len(),
            x0.len()
        )));
    }
    if let Some(t) = truth {
        if t.len() != n || t.iter().all(|v| *v == 0.0) {
            return Err(ThError::InvalidParameter(
                "truth must be a nonzero n-vector".into(),
            ));
        }
    }
    let mut mu = cfg.mu0.resolve(x0, m)?;
    // The start must satisfy Q < m + 1; enlarge mu until it does.
    let bound = (m + 1) as f64;
    for _ in 0..64 {
        if surrogate_q(x0, &filter(x0, mu), mu)? < bound {
            break;
        }
        mu *= 2.0;
    }
    let alpha = cfg.alpha.unwrap_or(100.0 / (mu * mu));

    let mut x = x0.clone();
    let mut omega = filter(x0, mu);
    let mut trace = EpochTrace::default();
    let mut restarts = 0;
    let mut stable = 0;
    let mut last: Option<SolverState> = None;
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        let inner = ThConfig {
            mu,
            alpha: Some(alpha),
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            enforce_initial_bound: epoch == 0,
        };
        let state = match bcd_run(a, b, &inner, &x, &omega, mode) {
            Ok(s) => s,
            Err(ThError::NearSingular { .. } | ThError::CardinalityExceeded { .. })
                if restarts < MAX_RESTARTS =>
            {
                restarts += 1;
                mu *= 2.0;
                omega = filter(&x, mu);
                continue;
            }
            Err(e) => return Err(e),
        };
        let phi = match mode {
            Mode::Constrained => phi_vector(&state.x, mu)?,
            Mode::Regularized => crate::penalty::objective_noisy(&state.x, a, b, alpha, mu)?,
        };
        trace.epochs.push(EpochRecord {
            epoch,
            mu,
            objective: state.objective,
            phi,
            omega_card: state.omega.count(),
            inner_iters: state.iter,
            converged: state.converged(),
            restarts,
            rre: truth.map(|t| rre(&state.x, t)),
        });
        trace.sweeps.push(state.sweeps.clone());
        x = state.x.clone();
        omega = state.omega.clone();
        let converged = state.converged();
        last = Some(state);
        epoch += 1;

        let next = mu_next(mu, &x, m, n, cfg.rho);
        if (mu - next).abs() <= 1e-12 * mu && converged {
            stable += 1;
            if stable >= 2 {
                break;
            }
        } else {
            stable = 0;
        }
        mu = next;
    }
    let state = last.ok_or_else(|| ThError::InvalidParameter("no epoch completed".into()))?;
    Ok((state, trace))
}
