use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Value};
use th_recovery::bench::{
    parse_grid, run_sweep_with, score, solve_variant, Method, SolverSettings, SweepSpec, Variant,
    CSV_HEADER, CSV_VERSION,
};
use th_recovery::continuation::Mu0Rule;
use th_recovery::problem::{
    generate, generate_at_snr, load_problem, save_problem, GenSpec, MatrixKind, Substream,
    TruthKind,
};
use th_recovery::smoothing::{
    edge_map, noisy_blocks, parse_signal_csv, read_pgm, smooth_continuation, write_pgm,
    SmoothConfig, SmoothSchedule, SmoothingProblem,
};

use crate::{BenchOpts, CliError, Denoise1dOpts, GenOpts, ReportOpts, Smooth2dOpts, SolveOpts};

/// Default kappa for regularized TH when only a noise level is known.
const DEFAULT_KAPPA: f64 = 3.0;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| usage(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn matrix_kind(
    family: Option<&str>,
    r: Option<f64>,
    f: Option<f64>,
) -> Result<MatrixKind, CliError> {
    match family.unwrap_or("a1").to_ascii_lowercase().as_str() {
        "a1" | "gaussian" => Ok(MatrixKind::Gaussian {
            r: r.unwrap_or(0.8),
        }),
        "a2" | "dct" => Ok(MatrixKind::Dct {
            f: f.unwrap_or(10.0),
        }),
        other => Err(usage(format!(
            "unknown matrix family {other:?} (expected a1 or a2)"
        ))),
    }
}

fn truth_kind(truth: Option<&str>) -> Result<TruthKind, CliError> {
    match truth.unwrap_or("sparse").to_ascii_lowercase().as_str() {
        "sparse" => Ok(TruthKind::Sparse),
        "decaying" => Ok(TruthKind::Decaying),
        other => Err(usage(format!(
            "unknown truth {other:?} (expected sparse or decaying)"
        ))),
    }
}

/// `max`, `budget:<fraction>` or a plain number.
pub fn parse_mu0(s: &str) -> Result<Mu0Rule, CliError> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("max") {
        return Ok(Mu0Rule::MaxAbs);
    }
    if let Some(f) = s.strip_prefix("budget:") {
        let f: f64 = f
            .parse()
            .map_err(|_| usage(format!("bad budget fraction in --mu0 {s:?}")))?;
        return Ok(Mu0Rule::PhiBudget(f));
    }
    s.parse()
        .map(Mu0Rule::Value)
        .map_err(|_| usage(format!("bad --mu0 {s:?}")))
}

pub fn gen(o: GenOpts) -> Result<(), CliError> {
    let out = required(o.out, "out")?;
    let kind = matrix_kind(o.family.as_deref(), o.r, o.f)?;
    let truth = truth_kind(o.truth.as_deref())?;
    let seed = o.seed.unwrap_or(0);
    let spec = GenSpec {
        kind,
        m: o.m.unwrap_or(64),
        n: o.n.unwrap_or(512),
        s: o.s.unwrap_or(6),
        truth,
        sigma: o.sigma.unwrap_or(0.0),
        seed,
    };
    let problem = match o.snr {
        Some(db) => generate_at_snr(&spec, db, Substream::new(seed))?,
        None => generate(&spec)?,
    };
    save_problem(&problem, &out)?;
    eprintln!(
        "wrote {}x{} problem to {} (sigma {:.3e})",
        problem.m(),
        problem.n(),
        out.display(),
        problem.sigma
    );
    Ok(())
}

fn continuation_settings(
    settings: &mut SolverSettings,
    mu0: Option<&str>,
    rho: Option<f64>,
    epochs: Option<usize>,
    tol: Option<f64>,
) -> Result<(), CliError> {
    let c = &mut settings.continuation;
    if let Some(s) = mu0 {
        c.mu0 = parse_mu0(s)?;
    }
    if let Some(r) = rho {
        c.rho = r;
    }
    if let Some(e) = epochs {
        c.max_epochs = e;
    }
    if let Some(t) = tol {
        c.tol = t;
    }
    Ok(())
}

fn solve_variant_for(o: &SolveOpts, method: Method, sigma: f64) -> Result<Variant, CliError> {
    if method != Method::Th {
        if o.alpha.is_some() || o.kappa.is_some() || o.mode.is_some() {
            return Err(usage(
                "--mode, --alpha and --kappa apply to the th method only",
            ));
        }
        return Ok(Variant::Plain(method));
    }
    let mode = o.mode.as_deref().map(str::to_ascii_lowercase);
    match mode.as_deref() {
        Some("constrained") => {
            if o.alpha.is_some() || o.kappa.is_some() {
                return Err(usage("constrained mode takes no --alpha or --kappa"));
            }
            Ok(Variant::Plain(Method::Th))
        }
        Some("regularized") | None => {
            if let Some(alpha) = o.alpha {
                Ok(Variant::ThAlpha { alpha })
            } else if let Some(kappa) = o.kappa {
                Ok(Variant::ThNoisy { kappa })
            } else if sigma > 0.0 {
                Ok(Variant::ThNoisy {
                    kappa: DEFAULT_KAPPA,
                })
            } else if mode.is_some() {
                Err(usage("regularized mode needs --alpha, or --kappa with a problem that records its noise level"))
            } else {
                Ok(Variant::Plain(Method::Th))
            }
        }
        Some(other) => Err(usage(format!(
            "unknown mode {other:?} (expected constrained or regularized)"
        ))),
    }
}

pub fn solve(o: SolveOpts) -> Result<(), CliError> {
    let path = required(o.problem.clone(), "problem")?;
    let problem = load_problem(&path)?;
    let method = Method::parse(o.method.as_deref().unwrap_or("th"))?;
    let variant = solve_variant_for(&o, method, problem.sigma)?;

    let mut settings = SolverSettings::default();
    continuation_settings(&mut settings, o.mu0.as_deref(), o.rho, o.epochs, o.tol)?;
    settings.continuation.max_iter = o.max_iter;
    if let Some(p) = o.p {
        settings.irls.p = p;
    }
    let support = problem
        .truth
        .as_ref()
        .map(|t| t.iter().filter(|v| **v != 0.0).count());
    let s = match (o.s, support) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) if method == Method::Iht => {
            return Err(usage("iht needs --s when the problem has no truth"))
        }
        (None, None) => 0,
    };

    let out = solve_variant(
        &problem.a,
        &problem.b,
        problem.truth.as_ref(),
        variant,
        &settings,
        s,
        problem.sigma,
    )?;
    let residual = {
        let r = problem.a.dot(&out.x) - &problem.b;
        r.dot(&r).sqrt()
    };
    let mut doc = json!({
        "problem": path.display().to_string(),
        "method": variant.label(),
        "m": problem.m(),
        "n": problem.n(),
        "sigma": problem.sigma,
        "converged": out.converged,
        "iterations": out.iterations,
        "epochs": out.epochs,
        "mu": out.mu,
        "alpha": out.alpha,
        "objective": out.penalty(&out.x),
        "residual": residual,
        "support": out.x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect::<Vec<_>>(),
        "wall_seconds": out.wall_seconds,
        "x": out.x.to_vec(),
    });
    if let Some(truth) = &problem.truth {
        let seed = problem.spec.map_or(0, |g| g.seed);
        let report = score(&out, truth, variant.label(), seed)?;
        doc["rre"] = json!(report.rre);
        doc["report"] = serde_json::to_value(&report).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(trace_path) = &o.trace {
        let csv = out
            .trace
            .as_ref()
            .map(|t| t.to_csv())
            .ok_or_else(|| usage("--trace applies to the th method only"))?;
        emit(Some(trace_path), &csv)?;
    }
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| usage(e.to_string()))?;
    text.push('\n');
    emit(o.out.as_deref(), &text)
}

pub fn bench(o: BenchOpts) -> Result<(), CliError> {
    let kind = matrix_kind(o.family.as_deref(), o.r, o.f)?;
    let s_grid = parse_grid::<usize>(o.s_grid.as_deref().unwrap_or("2:2:30"))?;
    let mut spec = SweepSpec::new(kind, o.m.unwrap_or(64), o.n.unwrap_or(512), s_grid);
    spec.truth = truth_kind(o.truth.as_deref())?;
    if let Some(g) = &o.snr_grid {
        spec.snr_grid = parse_grid::<f64>(g)?;
    }
    if let Some(t) = o.trials {
        spec.trials = t;
    }
    if let Some(m) = &o.methods {
        spec.methods = Method::parse_list(m)?;
    }
    spec.seed = o.seed.unwrap_or(0);
    if let Some(k) = &o.kappa {
        spec.settings.kappa = parse_grid::<f64>(k)?;
    }
    continuation_settings(&mut spec.settings, o.mu0.as_deref(), o.rho, o.epochs, o.tol)?;
    spec.validate()?;

    let points = spec.points();
    let per_point = spec.trials;
    let quiet = o.quiet;
    let result = run_sweep_with(&spec, |point, trial, report| {
        if quiet {
            return;
        }
        if let Err(e) = report {
            eprintln!("point {point} trial {trial}: {e}");
        }
        if trial + 1 == per_point {
            let (s, snr) = points[point];
            match snr {
                Some(db) => eprintln!("done s={s} snr={db} dB ({}/{})", point + 1, points.len()),
                None => eprintln!("done s={s} ({}/{})", point + 1, points.len()),
            }
        }
    })?;
    emit(o.out.as_deref(), &result.to_csv())
}

pub fn denoise1d(o: Denoise1dOpts) -> Result<(), CliError> {
    let (truth, b) = match (&o.input, o.blocks) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            (None, parse_signal_csv(&text)?)
        }
        (None, Some(n)) => {
            let (clean, noisy) = noisy_blocks(n, o.sigma.unwrap_or(0.5), o.seed.unwrap_or(0))?;
            (Some(clean), noisy)
        }
        _ => return Err(usage("give exactly one of --in or --blocks")),
    };
    let problem = SmoothingProblem::line(b.clone(), o.alpha.unwrap_or(4.0), o.mu.unwrap_or(0.4))?;
    let config = SmoothConfig {
        tol: o.tol.unwrap_or(SmoothConfig::default().tol),
        max_iter: o.max_iter.unwrap_or(SmoothConfig::default().max_iter),
    };
    let schedule = SmoothSchedule {
        rho: o.rho.unwrap_or(2.0),
        epochs: o.epochs.unwrap_or(8),
    };
    let (res, epochs) = smooth_continuation(&problem, &config, &schedule)?;

    let mut csv = String::from(if truth.is_some() {
        "x,omega,b,truth\n"
    } else {
        "x,omega,b\n"
    });
    for i in 0..res.x.len() {
        let flag = u8::from(i < res.omega.len() && res.omega.get(i));
        csv.push_str(&format!("{:?},{flag},{:?}", res.x[i], b[i]));
        if let Some(t) = &truth {
            csv.push_str(&format!(",{:?}", t[i]));
        }
        csv.push('\n');
    }
    let sweeps: usize = epochs.iter().map(|e| e.sweeps).sum();
    eprint!(
        "{} jumps, {} epochs, {sweeps} sweeps",
        res.omega.count(),
        epochs.len()
    );
    if let Some(t) = &truth {
        let d = &res.x - t;
        eprint!(", rmse {:.4}", (d.dot(&d) / d.len() as f64).sqrt());
    }
    eprintln!();
    emit(o.out.as_deref(), &csv)
}

fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    input.with_file_name(format!("{stem}.{suffix}.pgm"))
}

pub fn smooth2d(o: Smooth2dOpts) -> Result<(), CliError> {
    let input = required(o.input, "in")?;
    let img = read_pgm(&input)?;
    let (rows, cols) = img.dim();
    let problem = SmoothingProblem::image(&img, o.alpha.unwrap_or(200.0), o.mu.unwrap_or(0.05))?;
    let config = SmoothConfig {
        tol: o.tol.unwrap_or(SmoothConfig::default().tol),
        max_iter: o.max_iter.unwrap_or(SmoothConfig::default().max_iter),
    };
    let schedule = SmoothSchedule {
        rho: o.rho.unwrap_or(2.0),
        epochs: o.epochs.unwrap_or(1),
    };
    let (res, _) = smooth_continuation(&problem, &config, &schedule)?;

    let smoothed =
        Array2::from_shape_vec((rows, cols), res.x.to_vec()).map_err(|e| usage(e.to_string()))?;
    let out = o.out.unwrap_or_else(|| sibling(&input, "smooth"));
    let edges = o.edges.unwrap_or_else(|| sibling(&input, "edges"));
    write_pgm(&out, &smoothed)?;
    write_pgm(&edges, &edge_map(&res.omega, rows, cols)?)?;
    eprintln!(
        "{rows}x{cols}: {} flagged differences, {} sweeps; wrote {} and {}",
        res.omega.count(),
        res.sweeps.len(),
        out.display(),
        edges.display()
    );
    Ok(())
}

/// Parses a sweep CSV into its data rows, keyed by column name.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<Vec<(String, String)>>, CliError> {
    let mut lines = text.lines();
    let banner = format!("# th-recovery sweep {CSV_VERSION}");
    if lines.next() != Some(banner.as_str()) {
        return Err(usage(format!(
            "not a sweep CSV: first line must be {banner:?}"
        )));
    }
    let mut lines = lines.skip_while(|l| l.starts_with('#'));
    if lines.next() != Some(CSV_HEADER) {
        return Err(usage("sweep CSV header does not match this version"));
    }
    let names: Vec<&str> = CSV_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(usage(format!(
                "data row {} has {} cells, expected {}",
                k + 1,
                cells.len(),
                names.len()
            )));
        }
        rows.push(
            names
                .iter()
                .zip(cells)
                .map(|(n, c)| (n.to_string(), c.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}

pub fn report(o: ReportOpts) -> Result<(), CliError> {
    let input = required(o.input, "in")?;
    let text = std::fs::read_to_string(&input)
        .map_err(|e| usage(format!("cannot read {}: {e}", input.display())))?;
    let rows = parse_sweep_csv(&text)?;
    let get = |row: &[(String, String)], key: &str| {
        row.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    };
    if o.json {
        let doc: Vec<Value> = rows
            .iter()
            .map(|row| {
                Value::Object(
                    row.iter()
                        .map(|(k, v)| {
                            let val = match v.parse::<f64>() {
                                Ok(x) if x.is_finite() => json!(x),
                                _ if v.is_empty() => Value::Null,
                                _ => json!(v),
                            };
                            (k.clone(), val)
                        })
                        .collect(),
                )
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| usage(e.to_string()))?;
        s.push('\n');
        return emit(None, &s);
    }
    let mut out = format!(
        "{:>4} {:>8} {:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}\n",
        "s", "snr", "method", "success", "model", "algo", "tie", "error", "mean_rre"
    );
    for row in &rows {
        let snr = get(row, "snr_db");
        let rre: f64 = get(row, "mean_rre").parse().unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{:>4} {:>8} {:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10.3e}\n",
            get(row, "s"),
            if snr.is_empty() { "-".to_string() } else { snr },
            get(row, "method"),
            get(row, "success_rate"),
            get(row, "model_fail_rate"),
            get(row, "algo_fail_rate"),
            get(row, "unresolved_rate"),
            get(row, "error_rate"),
            rre
        ));
    }
    emit(None, &out)
}
