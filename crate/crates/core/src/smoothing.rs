//! Truncated Huber penalty on discrete gradients: piecewise-constant
//! denoising of 1D signals and edge-preserving smoothing of grayscale images.
//!
//! The model is
//!
//! ```text
//! (alpha / 2) ||x - b||^2 + (1 / mu^2) ||(1 - w) o grad x||^2 + ||w||_0
//! ```
//!
//! minimised by alternating an SPD solve in `x` with `w = H_mu(grad x)`.
//! Boundaries are Neumann (no difference leaves the grid), so a constant
//! signal is an exact fixed point.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bcd::Status;
use crate::error::{Result, ThError};
use crate::penalty::{check_mu, filter, Mask};
use crate::problem::{Purpose, Substream};

/// Largest image accepted by the sparse direct solver.
pub const MAX_PIXELS: usize = 512 * 512;

/// Residual bound for the `x`-step, relative to `1 + ||b||`.
const SOLVE_RTOL: f64 = 1e-10;

/// Forward differences on a line or a row-major grid.
///
/// For a grid the horizontal differences come first (row by row), followed
/// by the vertical ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum GradientOperator {
    Line { n: usize },
    Grid { rows: usize, cols: usize },
}

impl GradientOperator {
    /// Number of samples or pixels.
    pub fn len(&self) -> usize {
        match *self {
            GradientOperator::Line { n } => n,
            GradientOperator::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of difference entries.
    pub fn grad_len(&self) -> usize {
        match *self {
            GradientOperator::Line { n } => n.saturating_sub(1),
            GradientOperator::Grid { rows, cols } => {
                rows * cols.saturating_sub(1) + rows.saturating_sub(1) * cols
            }
        }
    }

    /// `(i, j)` for every difference `x_j - x_i`, in output order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        match *self {
            GradientOperator::Line { n } => (1..n).map(|j| (j - 1, j)).collect(),
            GradientOperator::Grid { rows, cols } => {
                let mut e = Vec::with_capacity(self.grad_len());
                for r in 0..rows {
                    for c in 1..cols {
                        e.push((r * cols + c - 1, r * cols + c));
                    }
                }
                for r in 1..rows {
                    for c in 0..cols {
                        e.push(((r - 1) * cols + c, r * cols + c));
                    }
                }
                e
            }
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.edges().iter().map(|&(i, j)| x[j] - x[i]).collect()
    }

    pub fn apply_transpose(&self, g: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.len());
        for (k, &(i, j)) in self.edges().iter().enumerate() {
            out[j] += g[k];
            out[i] -= g[k];
        }
        out
    }

    fn check(&self, x_len: usize, omega_len: usize) -> Result<()> {
        if x_len != self.len() || omega_len != self.grad_len() {
            return Err(ThError::DimensionMismatch(format!(
                "operator expects {} samples and {} differences, got {x_len} and {omega_len}",
                self.len(),
                self.grad_len()
            )));
        }
        Ok(())
    }
}

/// Data and weights for one smoothing problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingProblem {
    /// Samples, row-major for images.
    pub data: Array1<f64>,
    pub op: GradientOperator,
    pub alpha: f64,
    pub mu: f64,
}

impl SmoothingProblem {
    pub fn line(b: Array1<f64>, alpha: f64, mu: f64) -> Result<Self> {
        let op = GradientOperator::Line { n: b.len() };
        Self::new(b, op, alpha, mu)
    }

    pub fn image(img: &Array2<f64>, alpha: f64, mu: f64) -> Result<Self> {
        let (rows, cols) = img.dim();
        let data = img.iter().copied().collect();
        Self::new(data, GradientOperator::Grid { rows, cols }, alpha, mu)
    }

    pub fn new(data: Array1<f64>, op: GradientOperator, alpha: f64, mu: f64) -> Result<Self> {
        if op.is_empty() || data.len() != op.len() {
            return Err(ThError::DimensionMismatch(format!(
                "need a non-empty signal matching the operator ({} samples), got {}",
                op.len(),
                data.len()
            )));
        }
        if let GradientOperator::Grid { rows, cols } = op {
            if rows * cols > MAX_PIXELS {
                return Err(ThError::SizeGuard(format!(
                    "{rows}x{cols} image exceeds the {MAX_PIXELS}-pixel limit"
                )));
            }
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ThError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        check_mu(mu)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ThError::InvalidParameter(
                "signal has non-finite samples".into(),
            ));
        }
        Ok(Self {
            data,
            op,
            alpha,
            mu,
        })
    }

    /// `2 / (alpha mu^2)`.
    pub fn lambda(&self) -> f64 {
        lambda_for(self.alpha, self.mu)
    }

    pub fn objective(&self, x: &Array1<f64>, omega: &Mask) -> f64 {
        smooth_objective(x, &self.data, omega, self.alpha, self.mu, &self.op)
    }
}

pub fn lambda_for(alpha: f64, mu: f64) -> f64 {
    2.0 / (alpha * mu * mu)
}

/// `(alpha / 2) ||x - b||^2 + (1 / mu^2) ||(1 - w) o grad x||^2 + ||w||_0`.
pub fn smooth_objective(
    x: &Array1<f64>,
    b: &Array1<f64>,
    omega: &Mask,
    alpha: f64,
    mu: f64,
    op: &GradientOperator,
) -> f64 {
    let r = x - b;
    let g = op.apply(x);
    let smooth: f64 = g
        .iter()
        .zip(omega.iter())
        .filter(|(_, w)| !w)
        .map(|(v, _)| v * v)
        .sum();
    0.5 * alpha * r.dot(&r) + smooth / (mu * mu) + omega.count() as f64
}

/// `(I + lambda grad^T W grad) x` with `W = diag(1 - w)`.
pub fn apply_system(
    x: &Array1<f64>,
    omega: &Mask,
    lambda: f64,
    op: &GradientOperator,
) -> Array1<f64> {
    let mut out = x.clone();
    for (k, &(i, j)) in op.edges().iter().enumerate() {
        if !omega.get(k) {
            let d = lambda * (x[j] - x[i]);
            out[j] += d;
            out[i] -= d;
        }
    }
    out
}

/// Tridiagonal solve (Thomas) for the 1D system; the matrix is diagonally
/// dominant, so no pivoting is needed.
fn thomas(b: &Array1<f64>, omega: &Mask, lambda: f64) -> Array1<f64> {
    let n = b.len();
    // w[k] couples samples k and k + 1.
    let w: Vec<f64> = (0..n.saturating_sub(1))
        .map(|k| if omega.get(k) { 0.0 } else { lambda })
        .collect();
    let diag =
        |i: usize| 1.0 + if i > 0 { w[i - 1] } else { 0.0 } + if i + 1 < n { w[i] } else { 0.0 };
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag(0);
    if n > 1 {
        c[0] = -w[0] / denom;
    }
    d[0] = b[0] / denom;
    for i in 1..n {
        let lower = -w[i - 1];
        denom = diag(i) - lower * c[i - 1];
        if i + 1 < n {
            c[i] = -w[i] / denom;
        }
        d[i] = (b[i] - lower * d[i - 1]) / denom;
    }
    let mut x = Array1::zeros(n);
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Sparse Cholesky for grids. The pattern includes every neighbour pair
/// whatever the mask, so the symbolic analysis is done once.
pub struct GridSolver {
    op: GradientOperator,
    edges: Vec<(usize, usize)>,
    symbolic: SymbolicLlt<usize>,
}

impl GridSolver {
    pub fn new(op: GradientOperator) -> Result<Self> {
        let edges = op.edges();
        let omega = Mask::zeros(edges.len());
        let mat = Self::assemble(op.len(), &edges, &omega, 1.0)?;
        let symbolic = SymbolicLlt::try_new(mat.symbolic(), Side::Lower).map_err(|e| {
            ThError::InvalidParameter(format!("symbolic factorisation failed: {e:?}"))
        })?;
        Ok(Self {
            op,
            edges,
            symbolic,
        })
    }

    fn assemble(
        n: usize,
        edges: &[(usize, usize)],
        omega: &Mask,
        lambda: f64,
    ) -> Result<SparseColMat<usize, f64>> {
        let mut diag = vec![1.0; n];
        let mut trip = Vec::with_capacity(n + edges.len());
        for (k, &(i, j)) in edges.iter().enumerate() {
            let w = if omega.get(k) { 0.0 } else { lambda };
            diag[i] += w;
            diag[j] += w;
            // Lower triangle only; explicit zeros keep the pattern fixed.
            trip.push(Triplet::new(i.max(j), i.min(j), -w));
        }
        trip.extend(diag.iter().enumerate().map(|(i, &v)| Triplet::new(i, i, v)));
        SparseColMat::try_new_from_triplets(n, n, &trip)
            .map_err(|e| ThError::InvalidParameter(format!("sparse assembly failed: {e:?}")))
    }

    pub fn solve(&self, b: &Array1<f64>, omega: &Mask, lambda: f64) -> Result<Array1<f64>> {
        self.op.check(b.len(), omega.len())?;
        let mat = Self::assemble(self.op.len(), &self.edges, omega, lambda)?;
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), mat.as_ref(), Side::Lower)
            .map_err(|e| ThError::InvalidParameter(format!("sparse Cholesky failed: {e:?}")))?;
        let solve = |rhs: &Array1<f64>| -> Array1<f64> {
            let col = Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
            let sol = llt.solve(&col);
            Array1::from_shape_fn(rhs.len(), |i| sol[i])
        };
        let mut x = solve(b);
        let r = b - &apply_system(&x, omega, lambda, &self.op);
        if r.dot(&r).sqrt() > 0.0 {
            x += &solve(&r);
        }
        Ok(x)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(ThError::InvalidParameter(format!(
            "lambda must be non-negative, got {lambda}"
        )))
    }
}

/// Solves `(I + lambda grad^T diag(1 - w) grad) x = b`.
pub fn smooth_step_x(
    b: &Array1<f64>,
    omega: &Mask,
    lambda: f64,
    op: &GradientOperator,
) -> Result<Array1<f64>> {
    op.check(b.len(), omega.len())?;
    check_lambda(lambda)?;
    match op {
        GradientOperator::Line { .. } => {
            let mut x = thomas(b, omega, lambda);
            let r = b - &apply_system(&x, omega, lambda, op);
            if r.dot(&r).sqrt() > SOLVE_RTOL * (1.0 + b.dot(b).sqrt()) {
                x += &thomas(&r, omega, lambda);
            }
            Ok(x)
        }
        GradientOperator::Grid { .. } => GridSolver::new(*op)?.solve(b, omega, lambda),
    }
}

/// `H_mu(grad x)`.
pub fn smooth_step_omega(x: &Array1<f64>, mu: f64, op: &GradientOperator) -> Mask {
    filter(&op.apply(x), mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Tolerance on `||x_new - x|| / ||x||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSweep {
    pub objective: f64,
    pub rel_change: f64,
    pub omega_changed: bool,
}

#[derive(Debug, Clone)]
pub struct SmoothResult {
    pub x: Array1<f64>,
    pub omega: Mask,
    pub status: Status,
    pub sweeps: Vec<SmoothSweep>,
}

impl SmoothResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

enum Backend {
    Line,
    Grid(GridSolver),
}

impl Backend {
    fn new(op: &GradientOperator) -> Result<Self> {
        Ok(match op {
            GradientOperator::Line { .. } => Backend::Line,
            GradientOperator::Grid { .. } => Backend::Grid(GridSolver::new(*op)?),
        })
    }

    fn solve(
        &self,
        b: &Array1<f64>,
        omega: &Mask,
        lambda: f64,
        op: &GradientOperator,
    ) -> Result<Array1<f64>> {
        match self {
            Backend::Line => smooth_step_x(b, omega, lambda, op),
            Backend::Grid(g) => g.solve(b, omega, lambda),
        }
    }
}

fn run_with(
    problem: &SmoothingProblem,
    config: &SmoothConfig,
    omega0: Mask,
    backend: &Backend,
) -> Result<SmoothResult> {
    let op = &problem.op;
    let lambda = problem.lambda();
    let mut x = problem.data.clone();
    let mut omega = omega0;
    let mut sweeps = Vec::new();
    for _ in 0..config.max_iter {
        let x_new = backend.solve(&problem.data, &omega, lambda, op)?;
        let omega_new = smooth_step_omega(&x_new, problem.mu, op);
        let diff = &x_new - &x;
        let scale = x.dot(&x).sqrt().max(f64::MIN_POSITIVE);
        let rel_change = diff.dot(&diff).sqrt() / scale;
        let omega_changed = omega_new != omega;
        x = x_new;
        omega = omega_new;
        sweeps.push(SmoothSweep {
            objective: problem.objective(&x, &omega),
            rel_change,
            omega_changed,
        });
        if rel_change < config.tol && !omega_changed {
            return Ok(SmoothResult {
                x,
                omega,
                status: Status::Converged,
                sweeps,
            });
        }
    }
    Ok(SmoothResult {
        x,
        omega,
        status: Status::MaxIterReached,
        sweeps,
    })
}

/// Alternates the two steps at fixed `mu`, starting from `w = H_mu(grad b)`.
pub fn smooth_run(problem: &SmoothingProblem, config: &SmoothConfig) -> Result<SmoothResult> {
    let omega0 = smooth_step_omega(&problem.data, problem.mu, &problem.op);
    smooth_run_from(problem, config, omega0)
}

pub fn smooth_run_from(
    problem: &SmoothingProblem,
    config: &SmoothConfig,
    omega0: Mask,
) -> Result<SmoothResult> {
    if omega0.len() != problem.op.grad_len() {
        return Err(ThError::DimensionMismatch(format!(
            "mask has {} entries, operator has {} differences",
            omega0.len(),
            problem.op.grad_len()
        )));
    }
    if !(config.tol > 0.0) || config.max_iter == 0 {
        return Err(ThError::InvalidParameter(
            "tol and max_iter must be positive".into(),
        ));
    }
    run_with(problem, config, omega0, &Backend::new(&problem.op)?)
}

/// Geometric `mu` schedule ending at the problem's `mu`:
/// `mu_k = mu * rho^(epochs - 1 - k)`, with `alpha` held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSchedule {
    pub rho: f64,
    pub epochs: usize,
}

impl Default for SmoothSchedule {
    fn default() -> Self {
        Self {
            rho: 2.0,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothEpoch {
    pub mu: f64,
    pub sweeps: usize,
    pub edges: usize,
    pub objective: f64,
    pub converged: bool,
}

/// Runs [`smooth_run`] along the schedule, warm-starting each epoch's mask
/// from the previous one.
pub fn smooth_continuation(
    problem: &SmoothingProblem,
    config: &SmoothConfig,
    schedule: &SmoothSchedule,
) -> Result<(SmoothResult, Vec<SmoothEpoch>)> {
    if !(schedule.rho >= 1.0 && schedule.rho.is_finite()) || schedule.epochs == 0 {
        return Err(ThError::InvalidParameter(format!(
            "schedule needs rho >= 1 and at least one epoch, got rho={} epochs={}",
            schedule.rho, schedule.epochs
        )));
    }
    let backend = Backend::new(&problem.op)?;
    let mut epochs = Vec::with_capacity(schedule.epochs);
    let mut omega: Option<Mask> = None;
    let mut last = None;
    for k in 0..schedule.epochs {
        let mu = problem.mu * schedule.rho.powi((schedule.epochs - 1 - k) as i32);
        let p = SmoothingProblem {
            mu,
            ..problem.clone()
        };
        let start = omega
            .take()
            .unwrap_or_else(|| smooth_step_omega(&p.data, mu, &p.op));
        let res = run_with(&p, config, start, &backend)?;
        epochs.push(SmoothEpoch {
            mu,
            sweeps: res.sweeps.len(),
            edges: res.omega.count(),
            objective: res.sweeps.last().map_or(f64::NAN, |s| s.objective),
            converged: res.converged(),
        });
        omega = Some(res.omega.clone());
        last = Some(res);
    }
    Ok((last.expect("at least one epoch"), epochs))
}

/// Piecewise-constant test signal with eleven jumps of mixed height, after
/// the classic "Blocks" benchmark. On `t = i / n`, `i = 1..=n`, the level
/// switches when `t` passes each breakpoint.
pub fn blocks_signal(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| {
        let t = (i + 1) as f64 / n as f64;
        BLOCKS_LEVELS[BLOCKS_POS.iter().filter(|&&p| t > p).count()]
    })
}

const BLOCKS_POS: [f64; 11] = [
    0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81,
];
// Running sums of the jump heights 4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1,
// 2.1, -4.2, written out so flat pieces are exact.
const BLOCKS_LEVELS: [f64; 12] = [
    0.0, 4.0, -1.0, 2.0, -2.0, 3.0, -1.2, 0.9, 5.2, 2.1, 4.2, 0.0,
];

/// Blocks signal of length `n` plus white Gaussian noise of level `sigma`
/// drawn from the noise stream of `seed`. Returns `(clean, noisy)`.
pub fn noisy_blocks(n: usize, sigma: f64, seed: u64) -> Result<(Array1<f64>, Array1<f64>)> {
    if n < 2 {
        return Err(ThError::InvalidParameter(format!(
            "signal needs at least 2 samples, got {n}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ThError::InvalidParameter(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let clean = blocks_signal(n);
    let mut rng = Substream::new(seed).rng(Purpose::Noise);
    let noisy = clean.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    Ok((clean, noisy))
}

/// Difference indices `k` (between samples `k` and `k + 1`) where the
/// signal jumps.
pub fn jump_locations(x: &Array1<f64>) -> Vec<usize> {
    (1..x.len())
        .filter(|&j| x[j] != x[j - 1])
        .map(|j| j - 1)
        .collect()
}

/// Reads an 8-bit grayscale PGM (binary or ASCII) into `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let f = std::fs::File::open(path)?;
    read_pgm_from(BufReader::new(f))
}

pub fn read_pgm_from<R: BufRead>(r: R) -> Result<Array2<f64>> {
    let bad = |e: image::ImageError| ThError::Format(format!("PGM: {e}"));
    let dec = PnmDecoder::new(r).map_err(bad)?;
    if dec.color_type() != image::ColorType::L8 {
        return Err(ThError::Format(format!(
            "expected 8-bit grayscale, found {:?}",
            dec.color_type()
        )));
    }
    let (w, h) = dec.dimensions();
    let mut buf = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut buf).map_err(bad)?;
    Array2::from_shape_vec(
        (h as usize, w as usize),
        buf.iter().map(|&v| v as f64 / 255.0).collect(),
    )
    .map_err(|e| ThError::Format(e.to_string()))
}

/// Quantises `[0, 1]` to 8 bits, rounding halves to even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Writes a binary (P5) PGM.
pub fn write_pgm(path: &Path, img: &Array2<f64>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_pgm_to(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn write_pgm_to<W: Write>(w: W, img: &Array2<f64>) -> Result<()> {
    let (h, wd) = img.dim();
    let bytes: Vec<u8> = img.iter().map(|&v| quantize(v)).collect();
    PnmEncoder::new(w)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, wd as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| ThError::Format(format!("PGM: {e}")))
}

/// Pixel map of the mask: a pixel is 1 when the difference to its right or
/// lower neighbour is flagged.
pub fn edge_map(omega: &Mask, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let op = GradientOperator::Grid { rows, cols };
    op.check(rows * cols, omega.len())?;
    let mut out = Array2::zeros((rows, cols));
    for (k, &(i, _)) in op.edges().iter().enumerate() {
        if omega.get(k) {
            out[(i / cols, i % cols)] = 1.0;
        }
    }
    Ok(out)
}

/// One value per line; blank lines and `#` comments are skipped.
pub fn parse_signal_csv(text: &str) -> Result<Array1<f64>> {
    let m = crate::linalg::matrix_io::parse_csv(text)?;
    if m.ncols() != 1 {
        return Err(ThError::Format(format!(
            "expected one column, found {}",
            m.ncols()
        )));
    }
    Ok(m.column(0).to_owned())
}

pub fn signal_to_csv(x: &Array1<f64>) -> String {
    x.iter().map(|v| format!("{v:?}\n")).collect()
}
