//! Solver outputs checked against independent brute-force references.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use th_recovery::baselines::{basis_pursuit, BpConfig};
use th_recovery::bcd::{bcd_run, Mode, ThConfig};
use th_recovery::bench::{run_sweep, SweepSpec};
use th_recovery::linalg::{enumerate_oracle, OracleModel};
use th_recovery::penalty::{filter, phi_scalar, prox, surrogate_q, ThScalarParams};
use th_recovery::problem::{gen_gaussian, generate, GenSpec, MatrixKind, TruthKind};

fn random_matrix(m: usize, n: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    Array2::from_shape_fn((m, n), |_| rng.sample(StandardNormal))
}

/// `min ||x||_1 s.t. Ax = b` by enumerating basic solutions: an optimum of
/// the LP sits on a vertex, i.e. a support of `rank(A)` independent columns.
fn l1_vertex_oracle(a: &Array2<f64>, b: &Array1<f64>) -> f64 {
    let (m, n) = a.dim();
    let mut best = f64::INFINITY;
    for cols in (0..n).combinations(m) {
        let sub = DMatrix::from_fn(m, m, |i, j| a[(i, cols[j])]);
        let Some(lu) = Some(sub.lu()).filter(|lu| lu.determinant().abs() > 1e-10) else {
            continue;
        };
        let x = lu
            .solve(&DVector::from_iterator(m, b.iter().cloned()))
            .unwrap();
        best = best.min(x.iter().map(|v| v.abs()).sum());
    }
    best
}

#[test]
fn basis_pursuit_matches_vertex_enumeration() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for trial in 0..30 {
        let m = 2 + trial % 3;
        let n = 6 + trial % 5;
        let a = random_matrix(m, n, &mut rng);
        let b = Array1::from_shape_fn(m, |_| rng.sample(StandardNormal));
        let r = basis_pursuit(&a, &b, &BpConfig::default()).unwrap();
        let got: f64 = r.x.iter().map(|v| v.abs()).sum();
        let want = l1_vertex_oracle(&a, &b);
        assert!(
            (got - want).abs() <= 1e-4 * (1.0 + want),
            "trial {trial}: {got} vs {want}"
        );
        let res = a.dot(&r.x) - &b;
        assert!(res.dot(&res).sqrt() <= 1e-6 * (1.0 + b.dot(&b).sqrt()));
    }
}

#[test]
fn prox_matches_grid_search() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a: f64 = rng.random_range(-4.0..4.0);
        let mu: f64 = rng.random_range(0.1..2.0);
        let lambda: f64 = rng.random_range(0.05..2.0);
        let psi = |x: f64| phi_scalar(x, mu).unwrap() + (x - a) * (x - a) / (2.0 * lambda);
        let (lo, hi) = (a.min(0.0) - 1.0, a.max(0.0) + 1.0);
        let steps = ((hi - lo) / 1e-4) as usize;
        let best = (0..=steps)
            .map(|k| lo + k as f64 * 1e-4)
            .min_by(|x, y| psi(*x).total_cmp(&psi(*y)))
            .unwrap();
        let z = prox(a, ThScalarParams::new(mu, lambda).unwrap());
        // Both minimisers are optimal at the tie, so compare values there.
        assert!(
            (z - best).abs() <= 2e-4 || (psi(z) - psi(best)).abs() <= 1e-6,
            "a={a} mu={mu} l={lambda}"
        );
    }
}

#[test]
fn bcd_never_beats_the_exhaustive_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let mut reached = 0;
    for trial in 0..25 {
        let (m, n) = (4, 10);
        let a = random_matrix(m, n, &mut rng);
        let mut truth = Array1::<f64>::zeros(n);
        truth[trial % n] = 2.0;
        truth[(trial * 3 + 1) % n] -= 1.5;
        let b = a.dot(&truth);
        let mu = 0.5;
        let noisy = trial % 2 == 1;
        let (mode, model) = if noisy {
            (Mode::Regularized, OracleModel::Regularized { alpha: 40.0 })
        } else {
            (Mode::Constrained, OracleModel::Constrained)
        };
        let oracle = enumerate_oracle(&a, &b, mu, model).unwrap();

        let x0 = basis_pursuit(&a, &b, &BpConfig::default()).unwrap().x;
        let cfg = ThConfig {
            alpha: Some(40.0),
            enforce_initial_bound: false,
            ..ThConfig::new(mu)
        };
        let st = bcd_run(&a, &b, &cfg, &x0, &filter(&x0, mu), mode).unwrap();
        assert!(
            st.objective >= oracle.objective - 1e-9,
            "trial {trial}: {} < {}",
            st.objective,
            oracle.objective
        );

        // Started on the oracle's mask, the solver stays at the global optimum.
        let st = bcd_run(&a, &b, &cfg, &oracle.x, &oracle.omega, mode).unwrap();
        assert!(
            (st.objective - oracle.objective).abs() <= 1e-8 * (1.0 + oracle.objective),
            "trial {trial}"
        );
        if (st.objective - surrogate_q(&truth, &filter(&truth, mu), mu).unwrap()).abs() < 1e-8
            && !noisy
        {
            reached += 1;
        }
    }
    assert!(reached > 0);
}

#[test]
fn gaussian_rows_have_requested_covariance() {
    let r = 0.8;
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let a = gen_gaussian(100_000, 4, r, &mut rng).unwrap();
    // Undo the column normalisation by comparing correlations.
    let cov = a.t().dot(&a);
    for i in 0..4 {
        for j in 0..4 {
            let c = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            let want = if i == j { 1.0 } else { r };
            assert!((c - want).abs() < 0.02, "({i},{j}) = {c}");
        }
    }
}

#[test]
fn generation_is_bit_identical() {
    let spec = GenSpec {
        kind: MatrixKind::Dct { f: 5.0 },
        m: 16,
        n: 240,
        s: 4,
        truth: TruthKind::Decaying,
        sigma: 0.01,
        seed: 42,
    };
    let (p, q) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    assert_eq!(p.a, q.a);
    assert_eq!(p.b, q.b);
    assert_eq!(p.truth, q.truth);
}

#[test]
fn sweep_rates_partition_trials() {
    let mut spec = SweepSpec::new(MatrixKind::Gaussian { r: 0.8 }, 16, 48, vec![2, 6, 12]);
    spec.trials = 4;
    spec.methods = th_recovery::bench::Method::parse_list("th,iht,irls").unwrap();
    spec.seed = 5;
    let res = run_sweep(&spec).unwrap();
    for row in &res.rows {
        let total =
            row.successes + row.model_failures + row.algo_failures + row.unresolved + row.errors;
        assert_eq!(total, row.trials, "{row:?}");
        if row.errors < row.trials {
            assert!(row.mean_seconds() > 0.0);
        }
    }
    let again = run_sweep(&spec).unwrap();
    assert_eq!(
        th_recovery::bench::strip_timing(&res.to_csv()),
        th_recovery::bench::strip_timing(&again.to_csv())
    );
}
