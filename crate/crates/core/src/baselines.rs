//! Reference solvers: basis pursuit (the initialiser for every method),
//! iterative hard thresholding and IRLS for the `l_p` quasi-norm.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ThError};
use crate::linalg::Cholesky;

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_system(a: &Array2<f64>, b: &Array1<f64>) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(ThError::DimensionMismatch(format!(
            "A has {} rows, b has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    Ok(())
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// ADMM settings for `min ||x||_1 s.t. Ax = b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub rho: f64,
    pub relaxation: f64,
    pub max_iter: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            relaxation: 1.6,
            max_iter: 10_000,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
        }
    }
}

/// Orthogonal projector onto `{x : Ax = b}` with a cached factor of `AA'`.
struct AffineProjector<'a> {
    a: &'a Array2<f64>,
    b: &'a Array1<f64>,
    gram: Array2<f64>,
    chol: Cholesky,
}

impl<'a> AffineProjector<'a> {
    fn new(a: &'a Array2<f64>, b: &'a Array1<f64>) -> Result<Self> {
        let gram = a.dot(&a.t());
        let chol = Cholesky::factor(&gram)?;
        Ok(Self { a, b, gram, chol })
    }

    fn project(&self, v: &Array1<f64>) -> Array1<f64> {
        let r = self.a.dot(v) - self.b;
        let mut w = self.chol.solve(&r);
        w += &self.chol.solve(&(&r - &self.gram.dot(&w)));
        v - &self.a.t().dot(&w)
    }
}

fn soft(v: f64, k: f64) -> f64 {
    v.signum() * (v.abs() - k).max(0.0)
}

/// Basis pursuit by over-relaxed ADMM on the split `x = z`.
///
/// Returns the feasible iterate `x`, so `Ax = b` holds to solve accuracy even
/// when the iteration cap is hit.
pub fn basis_pursuit(a: &Array2<f64>, b: &Array1<f64>, cfg: &BpConfig) -> Result<BaselineResult> {
    check_system(a, b)?;
    if !(cfg.rho > 0.0) || !(0.0 < cfg.relaxation && cfg.relaxation < 2.0) {
        return Err(ThError::InvalidParameter(
            "ADMM needs rho > 0 and relaxation in (0, 2)".into(),
        ));
    }
    let n = a.ncols();
    let proj = AffineProjector::new(a, b)?;
    let mut z = Array1::<f64>::zeros(n);
    let mut u = Array1::<f64>::zeros(n);
    let mut x = proj.project(&z);
    let sqrt_n = (n as f64).sqrt();
    let thresh = 1.0 / cfg.rho;
    for it in 1..=cfg.max_iter {
        x = proj.project(&(&z - &u));
        let x_hat = &x * cfg.relaxation + &z * (1.0 - cfg.relaxation);
        let z_old = std::mem::replace(&mut z, (&x_hat + &u).mapv(|v| soft(v, thresh)));
        u += &(&x_hat - &z);

        let r_norm = norm(&(&x - &z));
        let s_norm = cfg.rho * norm(&(&z - &z_old));
        let eps_pri = sqrt_n * cfg.abs_tol + cfg.rel_tol * norm(&x).max(norm(&z));
        let eps_dual = sqrt_n * cfg.abs_tol + cfg.rel_tol * cfg.rho * norm(&u);
        if r_norm < eps_pri && s_norm < eps_dual {
            return Ok(BaselineResult {
                x,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(BaselineResult {
        x,
        iterations: cfg.max_iter,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhtConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub power_iters: usize,
}

impl Default for IhtConfig {
    fn default() -> Self {
        Self {
            max_iter: 3000,
            tol: 1e-10,
            power_iters: 50,
        }
    }
}

/// `||A||_2^2` by power iteration on `A'A` from a fixed start vector.
pub fn spectral_norm_sq(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let w = a.t().dot(&a.dot(&v));
        lambda = norm(&w);
        if lambda == 0.0 {
            return 0.0;
        }
        v = w / lambda;
    }
    lambda
}

/// Keeps the `s` largest magnitudes; ties go to the lower index.
pub fn hard_threshold(v: &Array1<f64>, s: usize) -> Array1<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j)));
    let mut out = Array1::zeros(v.len());
    for &i in order.iter().take(s) {
        out[i] = v[i];
    }
    out
}

fn residual_sq(a: &Array2<f64>, x: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let r = a.dot(x) - b;
    r.dot(&r)
}

/// Iterative hard thresholding from `x = 0` with step `1 / ||A||^2`, halved
/// whenever a step would increase `||Ax - b||^2`.
pub fn iht(a: &Array2<f64>, b: &Array1<f64>, s: usize, cfg: &IhtConfig) -> Result<BaselineResult> {
    check_system(a, b)?;
    if s == 0 || s > a.nrows() {
        return Err(ThError::InvalidParameter(format!(
            "IHT sparsity must satisfy 1 <= s <= m, got {s}"
        )));
    }
    let l = spectral_norm_sq(a, cfg.power_iters);
    let mut x = Array1::<f64>::zeros(a.ncols());
    if l == 0.0 {
        return Ok(BaselineResult {
            x,
            iterations: 0,
            converged: true,
        });
    }
    let mut step = 1.0 / l;
    let mut obj = residual_sq(a, &x, b);
    for it in 1..=cfg.max_iter {
        let grad = a.t().dot(&(b - &a.dot(&x)));
        let mut accepted = None;
        for _ in 0..60 {
            let cand = hard_threshold(&(&x + &(&grad * step)), s);
            let cand_obj = residual_sq(a, &cand, b);
            if cand_obj <= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, obj_new)) = accepted else {
            return Ok(BaselineResult {
                x,
                iterations: it,
                converged: true,
            });
        };
        let change = norm(&(&x_new - &x));
        let base = norm(&x_new);
        x = x_new;
        obj = obj_new;
        if change <= cfg.tol * base.max(f64::MIN_POSITIVE) || obj == 0.0 {
            return Ok(BaselineResult {
                x,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(BaselineResult {
        x,
        iterations: cfg.max_iter,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    pub p: f64,
    pub eps0: f64,
    pub eps_min: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            eps0: 1.0,
            eps_min: 1e-8,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

/// `sum (x_i^2 + eps)^(p/2)`, the smoothed quasi-norm IRLS decreases.
pub fn smoothed_lp(x: &Array1<f64>, p: f64, eps: f64) -> f64 {
    x.iter().map(|v| (v * v + eps).powf(0.5 * p)).sum()
}

/// Iterate record of [`irls_lp_traced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsStep {
    pub eps: f64,
    pub objective: f64,
}

/// IRLS for `min sum |x_i|^p s.t. Ax = b`: each step solves the weighted
/// least-norm problem `x = D A' (A D A')^-1 b` with
/// `D = diag((x_i^2 + eps)^(1 - p/2))`. `eps` starts at `eps0` and drops by
/// ten whenever the relative change falls below `sqrt(eps) / 100`.
pub fn irls_lp(a: &Array2<f64>, b: &Array1<f64>, cfg: &IrlsConfig) -> Result<BaselineResult> {
    irls_lp_traced(a, b, cfg).map(|(r, _)| r)
}

pub fn irls_lp_traced(
    a: &Array2<f64>,
    b: &Array1<f64>,
    cfg: &IrlsConfig,
) -> Result<(BaselineResult, Vec<IrlsStep>)> {
    check_system(a, b)?;
    if !(cfg.p > 0.0 && cfg.p < 1.0) {
        return Err(ThError::InvalidParameter(format!(
            "p must lie in (0, 1), got {}",
            cfg.p
        )));
    }
    if !(cfg.eps0 >= cfg.eps_min && cfg.eps_min > 0.0) {
        return Err(ThError::InvalidParameter("need eps0 >= eps_min > 0".into()));
    }
    let n = a.ncols();
    let weighted_solve = |d: &Array1<f64>| -> Result<Array1<f64>> {
        let ad = a * d;
        let k = ad.dot(&a.t());
        let z = crate::linalg::spd_solve(&k, b)?;
        Ok(ad.t().dot(&z))
    };
    let mut x = weighted_solve(&Array1::ones(n))?;
    let mut eps = cfg.eps0;
    let mut trace = vec![IrlsStep {
        eps,
        objective: smoothed_lp(&x, cfg.p, eps),
    }];
    let expo = 1.0 - 0.5 * cfg.p;
    for it in 1..=cfg.max_iter {
        let d = x.mapv(|v| (v * v + eps).powf(expo));
        let x_new = weighted_solve(&d)?;
        let rel = norm(&(&x_new - &x)) / norm(&x_new).max(f64::MIN_POSITIVE);
        x = x_new;
        trace.push(IrlsStep {
            eps,
            objective: smoothed_lp(&x, cfg.p, eps),
        });
        if eps <= cfg.eps_min {
            if rel < cfg.tol {
                return Ok((
                    BaselineResult {
                        x,
                        iterations: it,
                        converged: true,
                    },
                    trace,
                ));
            }
        } else if rel < eps.sqrt() / 100.0 {
            eps = (eps / 10.0).max(cfg.eps_min);
        }
    }
    Ok((
        BaselineResult {
            x,
            iterations: cfg.max_iter,
            converged: false,
        },
        trace,
    ))
}

/// Method selector used by the benchmark harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineMethod {
    BpL1,
    Iht { s: usize },
    IrlsLp { p: f64 },
}

impl BaselineMethod {
    pub fn run(&self, a: &Array2<f64>, b: &Array1<f64>) -> Result<BaselineResult> {
        match *self {
            BaselineMethod::BpL1 => basis_pursuit(a, b, &BpConfig::default()),
            BaselineMethod::Iht { s } => iht(a, b, s, &IhtConfig::default()),
            BaselineMethod::IrlsLp { p } => irls_lp(
                a,
                b,
                &IrlsConfig {
                    p,
                    ..Default::default()
                },
            ),
        }
    }
}
