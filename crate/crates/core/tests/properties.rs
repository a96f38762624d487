use fgd_core::linalg::{self, Matrix};
use fgd_core::metrics::{aggregate, log_band, mse, mspe, Metric};
use fgd_core::optim::{OptimizerKind, Schedule, TrajectoryState};
use fgd_core::{CovariateSpec, ModelSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec_of(d: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-range..range, d)
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..8).prop_flat_map(|d| (vec_of(d, 5.0), vec_of(d, 2.0), vec_of(d, 3.0), -5.0..5.0f64))
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn fgd_direction_rescaling(
        (theta, x, xi, y) in case(),
        alpha in 1e-3..0.5f64,
        lambda in prop_oneof![-4.0..-0.25f64, 0.25..4.0f64],
    ) {
        let mut a = TrajectoryState::new(theta.clone());
        a.fgd_step(&x, y, alpha, &xi).unwrap();
        let scaled: Vec<f64> = xi.iter().map(|v| v / lambda).collect();
        let mut b = TrajectoryState::new(theta);
        b.fgd_step(&x, y, alpha * lambda * lambda, &scaled).unwrap();
        prop_assert!(rel_close(&a.theta, &b.theta, 1e-12));
    }

    #[test]
    fn updates_are_even_in_direction((theta, x, xi, y) in case(), alpha in 1e-3..0.5f64) {
        let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
        let mut a = TrajectoryState::new(theta.clone());
        let mut b = TrajectoryState::new(theta.clone());
        a.fgd_step(&x, y, alpha, &xi).unwrap();
        b.fgd_step(&x, y, alpha, &neg).unwrap();
        prop_assert_eq!(&a.theta, &b.theta);
        let mut a = TrajectoryState::new(theta.clone());
        let mut b = TrajectoryState::new(theta);
        a.afgd_step(&x, y, alpha, &xi).unwrap();
        b.afgd_step(&x, y, alpha, &neg).unwrap();
        prop_assert_eq!(&a.theta, &b.theta);
    }

    #[test]
    fn fixed_point_without_noise(
        (theta_star, _x, _xi, _y) in case(),
        seed in any::<u64>(),
        ell in 1usize..5,
    ) {
        let d = theta_star.len();
        let model = ModelSpec::new(CovariateSpec::full_cube(d).unwrap(), theta_star.clone())
            .unwrap()
            .with_noise_std(0.0)
            .unwrap();
        let sched = Schedule::theorem_form(2.0, 3.0 * d as f64 * 4.0, ell).unwrap();
        for opt in [OptimizerKind::Sgd, OptimizerKind::Fgd { ell }, OptimizerKind::Afgd { ell }] {
            let mut data = ChaCha8Rng::seed_from_u64(seed);
            let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let out = fgd_core::optim::run_trajectory(
                &model, opt, &sched, 20, &[20], theta_star.clone(), &mut data, &mut noise,
            ).unwrap();
            prop_assert_eq!(&out[0].theta, &theta_star);
        }
    }

    #[test]
    fn fgd1_outer_step_matches_single_update(
        (theta, x, _xi, y) in case(),
        seed in any::<u64>(),
    ) {
        let d = theta.len();
        let sched = Schedule::theorem_form(2.0, 50.0, 1).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        let mut a = TrajectoryState::new(theta.clone());
        a.run_outer_step(OptimizerKind::Fgd { ell: 1 }, &sched, &x, y, &mut r1).unwrap();
        let mut xi = vec![0.0; d];
        fgd_core::optim::fill_standard_normal(&mut r2, &mut xi);
        let mut b = TrajectoryState::new(theta);
        b.fgd_step(&x, y, sched.learning_rate(1), &xi).unwrap();
        prop_assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn mspe_between_extreme_eigenvalues(
        (theta, star, _xi, _y) in case(),
        seed in any::<u64>(),
    ) {
        let d = theta.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // random full-rank Sigma = A A^T + 0.1 I
        let a = Matrix::from_row_major(
            d,
            d,
            (0..d * d).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
        ).unwrap();
        let mut sigma = a.matmul(&a.transpose()).unwrap();
        sigma.add_scaled(0.1, &Matrix::identity(d));
        let eig = linalg::symmetric_eigen(&sigma).unwrap();
        let (lo, hi) = (eig.values[0], eig.values[d - 1]);
        let e = mse(&theta, &star).unwrap();
        let p = mspe(&theta, &star, &sigma).unwrap();
        let slack = 1e-9 * (1.0 + hi * e);
        prop_assert!(p >= lo * e - slack);
        prop_assert!(p <= hi * e + slack);
    }

    #[test]
    fn aggregate_ignores_repetition_order(
        values in proptest::collection::vec(proptest::collection::vec(0.0..10.0f64, 4), 1..8),
        shift in 0usize..8,
    ) {
        let reps: Vec<Vec<(usize, f64)>> = values
            .iter()
            .map(|r| r.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect())
            .collect();
        let mut rotated = reps.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        rotated.reverse();
        let a = aggregate(Metric::Mse, &reps).unwrap();
        let b = aggregate(Metric::Mse, &rotated).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert!((p.mean - q.mean).abs() <= 1e-12 * (1.0 + p.mean));
            prop_assert!((p.std - q.std).abs() <= 1e-12 * (1.0 + p.std));
        }
    }

    #[test]
    fn log_band_halfwidth_scale_invariant(
        values in proptest::collection::vec(0.01..10.0f64, 2..10),
        c in 1e-3..1e3f64,
    ) {
        let reps = |s: f64| -> Vec<Vec<(usize, f64)>> {
            values.iter().map(|&v| vec![(1, v * s)]).collect()
        };
        let a = aggregate(Metric::Mse, &reps(1.0)).unwrap().points[0];
        let b = aggregate(Metric::Mse, &reps(c)).unwrap().points[0];
        let ha = log_band(a.mean, a.std).unwrap().1;
        let hb = log_band(b.mean, b.std).unwrap().1;
        prop_assert!((ha - hb).abs() <= 1e-10 * (1.0 + ha));
    }

    #[test]
    fn theorem_form_rate_decreasing(c1 in 0.1..10.0f64, c2 in 0.1..100.0f64, ell in 1usize..50, i in 1usize..10_000) {
        let s = Schedule::theorem_form(c1, c2, ell).unwrap();
        prop_assert!(s.learning_rate(i) > 0.0);
        prop_assert!(s.learning_rate(i + 1) < s.learning_rate(i));
    }

    #[test]
    fn samples_respect_norm_bound(seed in any::<u64>(), d in 1usize..12) {
        let spec = CovariateSpec::full_cube(d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let x = spec.sample(&mut rng);
            prop_assert!(linalg::norm_sq(&x) <= spec.norm_sq_bound());
        }
    }
}

#[test]
fn forward_gradient_mean_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for v in [vec![1.0, -1.0], vec![0.5, 2.0, -3.0, 0.0, 1.5]] {
        let d = v.len();
        let out = fgd_core::theory::oracle_forward_gradient(&v, 1_000_000, &mut rng).unwrap();
        let tol = 4.0 * (d as f64 / 1e6).sqrt() * (linalg::norm(&v) + 1.0);
        assert!(out.max_abs_deviation() <= tol, "{} > {tol}", out.max_abs_deviation());
    }
}

#[test]
fn samples_respect_norm_bound_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let low = CovariateSpec::low_rank(
        fgd_core::EmbeddingPolicy::Gaussian.draw(6, 2, &mut rng).unwrap(),
    )
    .unwrap();
    for spec in [CovariateSpec::full_cube(4).unwrap(), low] {
        for _ in 0..100_000 {
            let x = spec.sample(&mut rng);
            assert!(linalg::norm_sq(&x) <= spec.norm_sq_bound());
        }
    }
}
