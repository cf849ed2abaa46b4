//! Benchmark harness: recovery metrics, failure classification and seeded
//! sweeps over sparsity or noise level, written as versioned CSV.
//!
//! A sweep is a pure function of its [`SweepSpec`] apart from the timing
//! column, which is always last so it can be stripped before comparing runs.

use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::{basis_pursuit, iht, irls_lp, BpConfig, IhtConfig, IrlsConfig};
use crate::bcd::Mode;
use crate::continuation::{continuation_run, ContinuationConfig, EpochTrace, Mu0Rule};
use crate::error::{Result, ThError};
use crate::penalty::{objective_noisy, phi_vector};
use crate::problem::{
    generate_at_snr, generate_on, GenSpec, MatrixKind, Problem, Substream, TruthKind,
};

/// A trial succeeds when the relative error is below this.
pub const SUCCESS_RRE: f64 = 1e-3;
/// Penalty values closer than this are a tie.
pub const TIE_BAND: f64 = 1e-10;
pub const CSV_VERSION: &str = "v1";
pub const CSV_HEADER: &str = "point,s,snr_db,method,trials,successes,model_failures,algo_failures,unresolved,errors,success_rate,model_fail_rate,algo_fail_rate,unresolved_rate,error_rate,mean_rre,mean_seconds";

/// `||xhat - xbar|| / ||xbar||`.
pub fn rre(xhat: &Array1<f64>, xbar: &Array1<f64>) -> Result<f64> {
    if xhat.len() != xbar.len() {
        return Err(ThError::DimensionMismatch(format!(
            "estimate has {} entries, truth has {}",
            xhat.len(),
            xbar.len()
        )));
    }
    let nb = xbar.dot(xbar).sqrt();
    if nb == 0.0 {
        return Err(ThError::ZeroVector(
            "truth is zero; relative error undefined".into(),
        ));
    }
    let d = xhat - xbar;
    Ok(d.dot(&d).sqrt() / nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureClass {
    None,
    /// The truth scores worse than the estimate: the model prefers a wrong
    /// answer.
    Model,
    /// The truth scores better: the solver stopped short of it.
    Algorithm,
    /// Scores tie within [`TIE_BAND`].
    Unresolved,
}

/// Classifies a failed trial from the two penalty values.
pub fn classify_values(penalty_truth: f64, penalty_hat: f64) -> FailureClass {
    if penalty_truth > penalty_hat + TIE_BAND {
        FailureClass::Model
    } else if penalty_truth < penalty_hat - TIE_BAND {
        FailureClass::Algorithm
    } else {
        FailureClass::Unresolved
    }
}

pub fn classify_failure(
    xhat: &Array1<f64>,
    xbar: &Array1<f64>,
    penalty: impl Fn(&Array1<f64>) -> f64,
) -> FailureClass {
    classify_values(penalty(xbar), penalty(xhat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub method: String,
    pub rre: f64,
    pub success: bool,
    pub failure_class: FailureClass,
    pub iterations: usize,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Solver selection for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Truncated Huber with continuation, started from basis pursuit.
    Th,
    /// Basis pursuit.
    L1,
    /// Iterative hard thresholding told the true sparsity.
    Iht,
    /// IRLS for the `l_p` quasi-norm.
    Irls,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Th => "th",
            Method::L1 => "l1",
            Method::Iht => "iht",
            Method::Irls => "irls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "th" => Ok(Method::Th),
            "l1" | "bp" => Ok(Method::L1),
            "iht" | "l0" => Ok(Method::Iht),
            "irls" | "lp" => Ok(Method::Irls),
            other => Err(ThError::InvalidParameter(format!(
                "unknown method {other:?}"
            ))),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(Self::parse)
            .collect()
    }
}

/// Solver settings shared by every trial of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub continuation: ContinuationConfig,
    /// Noisy trials use `alpha = kappa / sigma^2`, one TH row per value.
    pub kappa: Vec<f64>,
    pub bp: BpConfig,
    pub iht: IhtConfig,
    pub irls: IrlsConfig,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            continuation: ContinuationConfig::default(),
            kappa: vec![3.0],
            bp: BpConfig::default(),
            iht: IhtConfig::default(),
            irls: IrlsConfig::default(),
        }
    }
}

/// Variant actually run for a method on one problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Noise-free TH uses the constrained model.
    Plain(Method),
    /// Regularized TH with `alpha = kappa / sigma^2`.
    ThNoisy { kappa: f64 },
    /// Regularized TH with a given `alpha`.
    ThAlpha { alpha: f64 },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Plain(m) => m.label().to_string(),
            Variant::ThNoisy { kappa } => format!("th(kappa={kappa:?})"),
            Variant::ThAlpha { alpha } => format!("th(alpha={alpha:?})"),
        }
    }
}

fn l1_norm(x: &Array1<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn residual_sq(a: &Array2<f64>, b: &Array1<f64>, x: &Array1<f64>) -> f64 {
    let r = a.dot(x) - b;
    r.dot(&r)
}

/// Result of running one variant, with the penalty its model minimises.
pub struct SolveOutput<'a> {
    pub x: Array1<f64>,
    pub iterations: usize,
    /// Continuation epochs; zero for single-loop methods.
    pub epochs: usize,
    pub converged: bool,
    pub trace: Option<EpochTrace>,
    /// Final `mu` and data weight for TH runs.
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub wall_seconds: f64,
    penalty: Box<dyn Fn(&Array1<f64>) -> f64 + 'a>,
}

impl SolveOutput<'_> {
    /// The method's own objective: `Phi_mu` (or `G` when regularized) for
    /// TH, `||x||_1`, `||Ax - b||^2` for IHT and `sum |x_i|^p` for IRLS.
    pub fn penalty(&self, x: &Array1<f64>) -> f64 {
        (self.penalty)(x)
    }
}

fn run_th<'a>(
    a: &'a Array2<f64>,
    b: &'a Array1<f64>,
    truth: Option<&Array1<f64>>,
    settings: &SolverSettings,
    alpha: Option<f64>,
) -> Result<SolveOutput<'a>> {
    let start = Instant::now();
    let x0 = basis_pursuit(a, b, &settings.bp)?.x;
    let (mode, cfg) = match alpha {
        None => (Mode::Constrained, settings.continuation.clone()),
        Some(alpha) => (
            Mode::Regularized,
            ContinuationConfig {
                alpha: Some(alpha),
                ..settings.continuation.clone()
            },
        ),
    };
    let (state, trace) = continuation_run(a, b, truth, &x0, &cfg, mode)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let mu = trace.epochs.last().map_or(f64::NAN, |e| e.mu);
    let penalty: Box<dyn Fn(&Array1<f64>) -> f64 + 'a> = match alpha {
        None => Box::new(move |x: &Array1<f64>| phi_vector(x, mu).unwrap_or(f64::NAN)),
        Some(al) => {
            Box::new(move |x: &Array1<f64>| objective_noisy(x, a, b, al, mu).unwrap_or(f64::NAN))
        }
    };
    Ok(SolveOutput {
        x: state.x.clone(),
        iterations: trace.epochs.iter().map(|e| e.inner_iters).sum(),
        epochs: trace.epochs.len(),
        converged: state.converged(),
        mu: Some(mu),
        alpha,
        trace: Some(trace),
        wall_seconds,
        penalty,
    })
}

/// Runs one variant on `(A, b)`. `s` is the sparsity handed to IHT and
/// `sigma` the noise level used by [`Variant::ThNoisy`].
pub fn solve_variant<'a>(
    a: &'a Array2<f64>,
    b: &'a Array1<f64>,
    truth: Option<&Array1<f64>>,
    variant: Variant,
    settings: &SolverSettings,
    s: usize,
    sigma: f64,
) -> Result<SolveOutput<'a>> {
    let single = |x: Array1<f64>,
                  iterations,
                  converged,
                  start: Instant,
                  penalty: Box<dyn Fn(&Array1<f64>) -> f64 + 'a>| SolveOutput {
        x,
        iterations,
        epochs: 0,
        converged,
        trace: None,
        mu: None,
        alpha: None,
        wall_seconds: start.elapsed().as_secs_f64(),
        penalty,
    };
    let start = Instant::now();
    match variant {
        Variant::Plain(Method::L1) => {
            let r = basis_pursuit(a, b, &settings.bp)?;
            Ok(single(
                r.x,
                r.iterations,
                r.converged,
                start,
                Box::new(l1_norm),
            ))
        }
        Variant::Plain(Method::Iht) => {
            let r = iht(a, b, s, &settings.iht)?;
            Ok(single(
                r.x,
                r.iterations,
                r.converged,
                start,
                Box::new(move |x: &Array1<f64>| residual_sq(a, b, x)),
            ))
        }
        Variant::Plain(Method::Irls) => {
            let r = irls_lp(a, b, &settings.irls)?;
            let p = settings.irls.p;
            Ok(single(
                r.x,
                r.iterations,
                r.converged,
                start,
                Box::new(move |x: &Array1<f64>| x.iter().map(|v| v.abs().powf(p)).sum()),
            ))
        }
        Variant::Plain(Method::Th) => run_th(a, b, truth, settings, None),
        Variant::ThNoisy { kappa } => {
            if !(sigma > 0.0) {
                return Err(ThError::InvalidParameter(
                    "kappa scaling needs a noise level sigma > 0".into(),
                ));
            }
            run_th(a, b, truth, settings, Some(kappa / (sigma * sigma)))
        }
        Variant::ThAlpha { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(ThError::InvalidParameter(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
            run_th(a, b, truth, settings, Some(alpha))
        }
    }
}

/// Scores a finished run against the truth.
pub fn score(
    out: &SolveOutput<'_>,
    truth: &Array1<f64>,
    method: String,
    seed: u64,
) -> Result<RecoveryReport> {
    let err = rre(&out.x, truth)?;
    let success = err < SUCCESS_RRE;
    let failure_class = if success {
        FailureClass::None
    } else {
        classify_failure(&out.x, truth, |x| out.penalty(x))
    };
    Ok(RecoveryReport {
        method,
        rre: err,
        success,
        failure_class,
        iterations: out.iterations,
        epochs: out.epochs,
        wall_seconds: out.wall_seconds,
        seed,
    })
}

/// Runs one variant and scores it against the problem's truth.
pub fn run_variant(
    problem: &Problem,
    variant: Variant,
    settings: &SolverSettings,
    s: usize,
    seed: u64,
) -> Result<RecoveryReport> {
    let truth = problem
        .truth
        .as_ref()
        .ok_or_else(|| ThError::InvalidParameter("problem has no ground truth".into()))?;
    let out = solve_variant(
        &problem.a,
        &problem.b,
        None,
        variant,
        settings,
        s,
        problem.sigma,
    )?;
    score(&out, truth, variant.label(), seed)
}

/// Grid and methods for a sweep. Without an SNR grid every trial is
/// noise-free; with one, each `(s, snr)` pair is a grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub family: MatrixKind,
    pub m: usize,
    pub n: usize,
    pub truth: TruthKind,
    pub s_grid: Vec<usize>,
    #[serde(default)]
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    #[serde(default)]
    pub settings: SolverSettings,
}

impl SweepSpec {
    pub fn new(family: MatrixKind, m: usize, n: usize, s_grid: Vec<usize>) -> Self {
        Self {
            family,
            m,
            n,
            truth: TruthKind::Sparse,
            s_grid,
            snr_grid: Vec::new(),
            trials: 50,
            methods: vec![Method::Th],
            seed: 0,
            settings: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_grid.is_empty() || self.methods.is_empty() {
            return Err(ThError::InvalidParameter(
                "sparsity grid and method list must be non-empty".into(),
            ));
        }
        if self.trials == 0 {
            return Err(ThError::InvalidParameter(
                "need at least one trial per point".into(),
            ));
        }
        if self.points().len() > u16::MAX as usize || self.trials > (1 << 24) {
            return Err(ThError::SizeGuard(
                "grid too large for the substream layout".into(),
            ));
        }
        if !self.snr_grid.is_empty() && self.settings.kappa.is_empty() {
            return Err(ThError::InvalidParameter(
                "noisy sweeps need at least one kappa".into(),
            ));
        }
        if self
            .settings
            .kappa
            .iter()
            .any(|k| !(*k > 0.0 && k.is_finite()))
        {
            return Err(ThError::InvalidParameter(
                "kappa values must be positive".into(),
            ));
        }
        for &s in &self.s_grid {
            self.gen_spec(s).validate()?;
        }
        self.settings.continuation.validate()
    }

    fn gen_spec(&self, s: usize) -> GenSpec {
        GenSpec {
            kind: self.family,
            m: self.m,
            n: self.n,
            s,
            truth: self.truth,
            sigma: 0.0,
            seed: self.seed,
        }
    }

    /// Grid points in output order.
    pub fn points(&self) -> Vec<(usize, Option<f64>)> {
        if self.snr_grid.is_empty() {
            self.s_grid.iter().map(|&s| (s, None)).collect()
        } else {
            self.s_grid
                .iter()
                .flat_map(|&s| self.snr_grid.iter().map(move |&snr| (s, Some(snr))))
                .collect()
        }
    }

    fn variants(&self, noisy: bool) -> Vec<Variant> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m == Method::Th && noisy {
                out.extend(
                    self.settings
                        .kappa
                        .iter()
                        .map(|&kappa| Variant::ThNoisy { kappa }),
                );
            } else {
                out.push(Variant::Plain(m));
            }
        }
        out
    }
}

/// Aggregated counts for one `(point, variant)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub s: usize,
    pub snr_db: Option<f64>,
    pub method: String,
    pub trials: usize,
    pub successes: usize,
    pub model_failures: usize,
    pub algo_failures: usize,
    pub unresolved: usize,
    pub errors: usize,
    pub sum_rre: f64,
    pub sum_seconds: f64,
    /// First error message seen, if any.
    pub first_error: Option<String>,
}

impl SweepRow {
    fn rate(&self, k: usize) -> f64 {
        k as f64 / self.trials as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(self.successes)
    }

    /// Mean over trials that returned; `NaN` if none did.
    pub fn mean_rre(&self) -> f64 {
        let ok = self.trials - self.errors;
        if ok == 0 {
            f64::NAN
        } else {
            self.sum_rre / ok as f64
        }
    }

    pub fn mean_seconds(&self) -> f64 {
        let ok = self.trials - self.errors;
        if ok == 0 {
            f64::NAN
        } else {
            self.sum_seconds / ok as f64
        }
    }

    fn csv_line(&self) -> String {
        let snr = self.snr_db.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.point,
            self.s,
            snr,
            self.method,
            self.trials,
            self.successes,
            self.model_failures,
            self.algo_failures,
            self.unresolved,
            self.errors,
            self.rate(self.successes),
            self.rate(self.model_failures),
            self.rate(self.algo_failures),
            self.rate(self.unresolved),
            self.rate(self.errors),
            self.mean_rre(),
            self.mean_seconds(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# th-recovery sweep {CSV_VERSION}\n");
        let json = serde_json::to_string(&self.spec).expect("spec serialises");
        out.push_str(&format!("# spec: {json}\n"));
        for r in &self.rows {
            if let Some(e) = &r.first_error {
                out.push_str(&format!(
                    "# error point={} method={}: {}\n",
                    r.point,
                    r.method,
                    e.replace('\n', " ")
                ));
            }
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn row(&self, s: usize, snr_db: Option<f64>, method: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.s == s && r.snr_db == snr_db && r.method == method)
    }
}

/// Drops the timing column (always last) from data rows, for byte
/// comparisons between runs.
pub fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            if l.starts_with('#') {
                l.to_string()
            } else {
                l.rsplit_once(',').map_or(l, |(head, _)| head).to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Generates the problem for trial `trial` of grid point `point`.
pub fn trial_problem(spec: &SweepSpec, point: usize, trial: usize) -> Result<Problem> {
    let (s, snr) = spec.points()[point];
    let stream = Substream::at(spec.seed, point as u16, trial as u32);
    let g = spec.gen_spec(s);
    match snr {
        None => generate_on(&g, stream),
        Some(db) => generate_at_snr(&g, db, stream),
    }
}

/// Runs every trial of every grid point. Trial failures are counted in the
/// `errors` column and never abort the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep_with(spec, |_, _, _| {})
}

/// [`run_sweep`] with a callback after each trial report, for progress output.
pub fn run_sweep_with(
    spec: &SweepSpec,
    mut on_report: impl FnMut(usize, usize, &std::result::Result<RecoveryReport, String>),
) -> Result<SweepResult> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (point, &(s, snr)) in spec.points().iter().enumerate() {
        let variants = spec.variants(snr.is_some());
        let mut point_rows: Vec<SweepRow> = variants
            .iter()
            .map(|v| SweepRow {
                point,
                s,
                snr_db: snr,
                method: v.label(),
                trials: spec.trials,
                successes: 0,
                model_failures: 0,
                algo_failures: 0,
                unresolved: 0,
                errors: 0,
                sum_rre: 0.0,
                sum_seconds: 0.0,
                first_error: None,
            })
            .collect();
        for trial in 0..spec.trials {
            let problem = trial_problem(spec, point, trial);
            for (v, row) in variants.iter().zip(point_rows.iter_mut()) {
                let report = match &problem {
                    Ok(p) => {
                        run_variant(p, *v, &spec.settings, s, spec.seed).map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.to_string()),
                };
                match &report {
                    Ok(r) => {
                        row.sum_rre += r.rre;
                        row.sum_seconds += r.wall_seconds;
                        match r.failure_class {
                            FailureClass::None => row.successes += 1,
                            FailureClass::Model => row.model_failures += 1,
                            FailureClass::Algorithm => row.algo_failures += 1,
                            FailureClass::Unresolved => row.unresolved += 1,
                        }
                    }
                    Err(e) => {
                        row.errors += 1;
                        row.first_error.get_or_insert_with(|| e.clone());
                    }
                }
                on_report(point, trial, &report);
            }
        }
        rows.extend(point_rows);
    }
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
    })
}

/// Parses `start:step:end` (inclusive) or a comma list.
pub fn parse_grid<T>(s: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + Copy + PartialOrd + std::ops::Add<Output = T> + Default,
{
    let bad = || ThError::InvalidParameter(format!("cannot parse grid {s:?}"));
    let parse = |t: &str| t.trim().parse::<T>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, step, end] => {
            let (start, step, end) = (parse(start)?, parse(step)?, parse(end)?);
            if !(step > T::default()) {
                return Err(bad());
            }
            let mut out = Vec::new();
            let mut v = start;
            while v <= end {
                out.push(v);
                v = v + step;
            }
            Ok(out)
        }
        [_] => s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(parse)
            .collect(),
        _ => Err(bad()),
    }
}

/// Default `mu0` rule for sweeps; see [`Mu0Rule::PhiBudget`].
pub fn default_mu0() -> Mu0Rule {
    ContinuationConfig::default().mu0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rre_examples() {
        let x = array![1.0, -2.0, 0.5];
        assert_eq!(rre(&x, &x).unwrap(), 0.0);
        assert!((rre(&(2.0 * &x), &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rre(&Array1::zeros(3), &x).unwrap(), 1.0);
        assert!(rre(&x, &Array1::zeros(3)).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_values(5.0, 3.0), FailureClass::Model);
        assert_eq!(classify_values(3.0, 5.0), FailureClass::Algorithm);
        assert_eq!(classify_values(3.0, 3.0), FailureClass::Unresolved);
        assert_eq!(classify_values(3.0, 3.0 + 5e-11), FailureClass::Unresolved);
        let truth = array![1.0, 0.0, 0.0];
        let dense = array![0.5, 0.5, 0.5];
        let count = |x: &Array1<f64>| x.iter().filter(|v| **v != 0.0).count() as f64;
        assert_eq!(
            classify_failure(&dense, &truth, count),
            FailureClass::Algorithm
        );
    }

    #[test]
    fn method_parsing() {
        assert_eq!(
            Method::parse_list("th,iht, irls").unwrap(),
            vec![Method::Th, Method::Iht, Method::Irls]
        );
        assert!(Method::parse("dca").is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid::<usize>("2:2:10").unwrap(), vec![2, 4, 6, 8, 10]);
        assert_eq!(parse_grid::<usize>("2:2:30").unwrap().len(), 15);
        assert_eq!(parse_grid::<f64>("60,30").unwrap(), vec![60.0, 30.0]);
        assert!(parse_grid::<usize>("2:0:4").is_err());
        assert!(parse_grid::<usize>("a").is_err());
    }

    #[test]
    fn small_sweep_counts_and_determinism() {
        let mut spec = SweepSpec::new(MatrixKind::Gaussian { r: 0.5 }, 16, 40, vec![2, 3]);
        spec.trials = 3;
        spec.methods = vec![Method::Th, Method::L1, Method::Iht];
        spec.seed = 5;
        let a = run_sweep(&spec).unwrap();
        assert_eq!(a.rows.len(), 6);
        for r in &a.rows {
            assert_eq!(
                r.successes + r.model_failures + r.algo_failures + r.unresolved + r.errors,
                r.trials
            );
        }
        let b = run_sweep(&spec).unwrap();
        assert_eq!(strip_timing(&a.to_csv()), strip_timing(&b.to_csv()));
        assert!(a.to_csv().starts_with("# th-recovery sweep v1\n# spec: {"));
    }

    #[test]
    fn trial_errors_are_recorded() {
        // s > m makes IHT refuse; the sweep carries on.
        let mut spec = SweepSpec::new(MatrixKind::Gaussian { r: 0.0 }, 4, 12, vec![6]);
        spec.trials = 2;
        spec.methods = vec![Method::Iht, Method::L1];
        let res = run_sweep(&spec).unwrap();
        assert_eq!(res.rows[0].errors, 2);
        assert!(res.rows[0].first_error.is_some());
        assert_eq!(res.rows[1].errors, 0);
        assert!(res.to_csv().contains("# error point=0 method=iht"));
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec::new(MatrixKind::Dct { f: 5.0 }, 8, 32, vec![]);
        assert!(spec.validate().is_err());
        spec.s_grid = vec![2];
        spec.trials = 0;
        assert!(spec.validate().is_err());
        spec.trials = 1;
        assert!(spec.validate().is_ok());
        spec.snr_grid = vec![30.0];
        spec.settings.kappa.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn strip_timing_drops_last_column() {
        assert_eq!(strip_timing("# a,b\nx,y,1.5\n"), "# a,b\nx,y");
    }
}
