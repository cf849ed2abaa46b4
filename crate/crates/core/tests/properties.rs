use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use th_recovery::baselines::{iht, irls_lp_traced, IhtConfig, IrlsConfig};
use th_recovery::bcd::{bcd_run, x_direct_noisy, x_update_noisy, Mode, ThConfig};
use th_recovery::continuation::mu_next;
use th_recovery::linalg::{spark_bruteforce, spd_solve, IndexPartition};
use th_recovery::penalty::{
    filter, gradient, phi_scalar, phi_vector, prox, surrogate_q, Mask, ThScalarParams,
};
use th_recovery::problem::gen_gaussian;
use th_recovery::smoothing::{
    apply_system, smooth_run, smooth_step_omega, smooth_step_x, GradientOperator, SmoothConfig,
    SmoothingProblem,
};

fn vec_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn gaussian(m: usize, n: usize, seed: u64) -> Array2<f64> {
    gen_gaussian(m, n, 0.3, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn phi_bounded_and_monotone_in_mu(x in vec_strategy(1..20), mu in 0.05f64..4.0, k in 1.0f64..5.0) {
        let x = Array1::from(x);
        let p = phi_vector(&x, mu).unwrap();
        prop_assert!(p >= 0.0 && p <= x.len() as f64);
        prop_assert!(phi_vector(&x, mu * k).unwrap() <= p + 1e-12);
    }

    #[test]
    fn phi_continuous_at_threshold(mu in 0.1f64..10.0, t in 1e-9f64..1e-4) {
        let eps = t * mu;
        for v in [mu - eps, mu + eps, -(mu - eps), -(mu + eps)] {
            prop_assert!((phi_scalar(v, mu).unwrap() - 1.0).abs() <= 3.0 * eps / mu);
        }
    }

    #[test]
    fn surrogate_minimum_is_phi_at_filter(x in vec_strategy(1..9), mu in 0.1f64..3.0) {
        let x = Array1::from(x);
        let n = x.len();
        let phi = phi_vector(&x, mu).unwrap();
        let best = (0u32..1 << n)
            .map(|bits| {
                let w = Mask::from_bools((0..n).map(|i| bits >> i & 1 == 1).collect());
                surrogate_q(&x, &w, mu).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!((best - phi).abs() <= 1e-12 * (1.0 + phi));
        prop_assert!((surrogate_q(&x, &filter(&x, mu), mu).unwrap() - phi).abs() <= 1e-12 * (1.0 + phi));
    }

    #[test]
    fn prox_avoids_threshold_and_beats_neighbours(a in -10.0f64..10.0, mu in 0.05f64..3.0, lambda in 0.01f64..5.0) {
        let params = ThScalarParams::new(mu, lambda).unwrap();
        let z = prox(a, params);
        prop_assert!(z.abs() != mu);
        let psi = |x: f64| phi_scalar(x, mu).unwrap() + (x - a) * (x - a) / (2.0 * lambda);
        for dx in [-1e-3, 1e-3, -0.1, 0.1] {
            prop_assert!(psi(z) <= psi(z + dx) + 1e-12);
        }
        prop_assert!(psi(z) <= psi(0.0) + 1e-12 && psi(z) <= psi(a) + 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(x in vec_strategy(1..10), mu in 0.2f64..3.0) {
        let x = Array1::from(x);
        let h = 1e-6;
        // Only entries safely away from the kink are differentiable at scale h.
        prop_assume!(x.iter().all(|v| (v.abs() - mu).abs() > 1e-3));
        let g = gradient(&x, mu).unwrap().unwrap();
        for i in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (phi_vector(&up, mu).unwrap() - phi_vector(&dn, mu).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "i={} fd={} g={}", i, fd, g[i]);
        }
    }

    #[test]
    fn spd_solve_residual(seed in any::<u64>(), n in 1usize..12) {
        let b = gaussian(n + 3, n, seed);
        let mut m = b.t().dot(&b);
        for i in 0..n {
            m[(i, i)] += 0.1;
        }
        let rhs = Array1::from_shape_fn(n, |i| (i as f64).sin() + 1.0);
        let x = spd_solve(&m, &rhs).unwrap();
        let r = &rhs - &m.dot(&x);
        let scale: f64 = m.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(norm(&r) <= 1e-10 * scale * (1.0 + norm(&x)));
    }

    #[test]
    fn spark_never_exceeds_m_plus_one(seed in any::<u64>(), m in 1usize..4, extra in 1usize..4) {
        let a = gaussian(m, m + extra, seed);
        let s = spark_bruteforce(&a).unwrap();
        prop_assert!(s >= 2 && s <= m + 1);
    }

    #[test]
    fn mu_next_stays_between_c_and_mu(x in vec_strategy(8..30), mu in 0.01f64..5.0, rho in 1.1f64..8.0) {
        let x = Array1::from(x);
        let n = x.len();
        let m = n / 2;
        let next = mu_next(mu, &x, m, n, rho);
        prop_assert!(next <= mu);
        prop_assert!(next >= mu / rho * (1.0 - 1e-15));
    }

    #[test]
    fn partitioned_and_direct_noisy_updates_agree(
        seed in any::<u64>(), bits in any::<u32>(), mu in 0.05f64..2.0, alpha in 0.5f64..500.0
    ) {
        let (m, n) = (8, 32);
        let a = gaussian(m, n, seed);
        let b = Array1::from_shape_fn(m, |i| ((seed as usize + 3 * i) % 7) as f64 - 3.0 + 0.5);
        // At most m free entries keeps the partitioned kernel well posed.
        let omega = Mask::from_bools((0..n).map(|i| i < 8 && bits >> i & 1 == 1).collect());
        let part = IndexPartition::from_mask(&omega);
        let (x, _) = x_update_noisy(&a, &b, &part, mu, alpha).unwrap();
        let xd = x_direct_noisy(&a, &b, &omega, mu, alpha).unwrap();
        prop_assert!(norm(&(&x - &xd)) <= 1e-8 * norm(&xd).max(1e-300));
    }

    #[test]
    fn bcd_descent_chain_and_cardinality(seed in any::<u64>(), noisy in any::<bool>(), scale in 0.2f64..2.0) {
        let (m, n) = (6, 14);
        let a = gaussian(m, n, seed);
        let mut x0 = Array1::zeros(n);
        x0[(seed % n as u64) as usize] = 1.5;
        x0[((seed / 7) % n as u64) as usize] -= 0.8;
        let b = a.dot(&x0) + Array1::from_shape_fn(m, |i| 0.01 * i as f64);
        let start = a.t().dot(&spd_solve(&a.dot(&a.t()), &b).unwrap());
        let mut mu = start.iter().fold(0.0f64, |s, v| s.max(v.abs())) * scale;
        while surrogate_q(&start, &filter(&start, mu), mu).unwrap() >= (m + 1) as f64 {
            mu *= 2.0;
        }
        let mode = if noisy { Mode::Regularized } else { Mode::Constrained };
        let cfg = ThConfig { alpha: Some(50.0), ..ThConfig::new(mu) };
        let omega0 = filter(&start, mu);
        let q0 = surrogate_q(&start, &omega0, mu).unwrap();
        let st = bcd_run(&a, &b, &cfg, &start, &omega0, mode).unwrap();
        for s in &st.sweeps {
            let slack = 1e-10 * (1.0 + s.objective_before.abs());
            prop_assert!(s.objective_mid <= s.objective_before + slack);
            prop_assert!(s.objective_after <= s.objective_mid + slack);
        }
        if !noisy {
            prop_assert!(st.omega.count() as f64 <= q0 + 1e-10);
        }
        if st.converged() {
            prop_assert!(st.x.iter().all(|v| v.abs() != mu));
        }
    }

    #[test]
    fn iht_support_at_most_s(seed in any::<u64>(), s in 1usize..6) {
        let a = gaussian(12, 30, seed);
        let b = Array1::from_shape_fn(12, |i| (i as f64 * 0.7).cos());
        let r = iht(&a, &b, s, &IhtConfig::default()).unwrap();
        prop_assert!(r.x.iter().filter(|v| **v != 0.0).count() <= s);
    }

    #[test]
    fn irls_smoothed_objective_non_increasing(seed in any::<u64>(), p in 0.3f64..0.9) {
        let a = gaussian(10, 30, seed);
        let mut x = Array1::zeros(30);
        x[(seed % 30) as usize] = 2.0;
        x[((seed / 30) % 30) as usize] += -1.0;
        let b = a.dot(&x);
        prop_assume!(norm(&b) > 0.0);
        let cfg = IrlsConfig { p, ..IrlsConfig::default() };
        let (_, trace) = irls_lp_traced(&a, &b, &cfg).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn smooth_step_solves_its_system(b in vec_strategy(2..60), bits in any::<u64>(), lambda in 0.0f64..50.0) {
        let b = Array1::from(b);
        let op = GradientOperator::Line { n: b.len() };
        let omega = Mask::from_bools((0..op.grad_len()).map(|k| bits >> (k % 64) & 1 == 1).collect());
        let x = smooth_step_x(&b, &omega, lambda, &op).unwrap();
        let r = apply_system(&x, &omega, lambda, &op) - &b;
        prop_assert!(norm(&r) <= 1e-10 * (1.0 + norm(&b)));
    }

    #[test]
    fn grid_step_solves_its_system(rows in 2usize..7, cols in 2usize..7, seed in any::<u64>(), lambda in 0.0f64..20.0) {
        let op = GradientOperator::Grid { rows, cols };
        let b = Array1::from_shape_fn(rows * cols, |k| ((seed.wrapping_add(k as u64 * 2654435761)) % 97) as f64 / 97.0);
        let omega = Mask::from_bools((0..op.grad_len()).map(|k| (seed >> (k % 64)) & 1 == 1).collect());
        let x = smooth_step_x(&b, &omega, lambda, &op).unwrap();
        let r = apply_system(&x, &omega, lambda, &op) - &b;
        prop_assert!(norm(&r) <= 1e-10 * (1.0 + norm(&b)));
    }

    #[test]
    fn smoothing_objective_monotone_and_fixed_point(b in vec_strategy(4..80), alpha in 0.5f64..20.0, mu in 0.1f64..2.0) {
        let problem = SmoothingProblem::line(Array1::from(b), alpha, mu).unwrap();
        let res = smooth_run(&problem, &SmoothConfig::default()).unwrap();
        let objs: Vec<f64> = res.sweeps.iter().map(|s| s.objective).collect();
        for w in objs.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()));
        }
        if res.converged() {
            let again = smooth_step_x(&problem.data, &res.omega, problem.lambda(), &problem.op).unwrap();
            prop_assert!(res.x.iter().zip(again.iter()).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs())));
            prop_assert_eq!(smooth_step_omega(&again, mu, &problem.op), res.omega.clone());
        }
    }

    #[test]
    fn data_distance_grows_with_smoothing(b in vec_strategy(3..50)) {
        let b = Array1::from(b);
        let op = GradientOperator::Line { n: b.len() };
        let omega = Mask::zeros(op.grad_len());
        let mut last = 0.0;
        for lambda in [0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0] {
            let x = smooth_step_x(&b, &omega, lambda, &op).unwrap();
            let d = norm(&(&x - &b));
            prop_assert!(d + 1e-10 * (1.0 + norm(&b)) >= last);
            last = d;
        }
    }
}
