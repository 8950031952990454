//! Property tests for structural invariants: normalization round trips,
//! covariance validity, assignment optimality bounds, pinball geometry,
//! quantile monotonicity, and Euler exactness on constant fields.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use tsflow_core::data::{freq_zscore, mean_scale};
use tsflow_core::gp::{build_cov, kernel_eval, normalize_times, KernelKind, KernelSpec};
use tsflow_core::metrics::{pinball, quantiles_from_samples};
use tsflow_core::ot::{assign, cost_matrix, CostMatrix};
use tsflow_core::sampling::euler_span;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, len)
}

fn kernel_spec() -> impl Strategy<Value = KernelSpec> {
    (
        prop::sample::select(vec![
            KernelKind::Isotropic,
            KernelKind::SquaredExponential,
            KernelKind::OrnsteinUhlenbeck,
            KernelKind::Periodic,
        ]),
        0.2..3.0f64,
        1e-8..1e-2f64,
    )
        .prop_map(|(kind, length_scale, white_noise)| KernelSpec {
            kind,
            length_scale,
            white_noise,
        })
}

proptest! {
    #[test]
    fn mean_scale_round_trips(values in finite_vec(1..40), start in -100i64..100) {
        let (normed, stats) = mean_scale(&values, &values);
        let back = stats.denormalize_at(&normed, start);
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn freq_zscore_round_trips(
        values in finite_vec(24..60),
        period in 1usize..8,
        start in -50i64..50,
    ) {
        // Fit on the series as laid out from phase 0, then invert anywhere.
        let (normed, stats) = freq_zscore(&values, period).unwrap();
        let back = stats.denormalize_at(&normed, 0);
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
        // normalize/denormalize at an arbitrary phase is also an inverse pair.
        let round = stats.denormalize_at(&stats.normalize_at(&values, start), start);
        for (a, b) in values.iter().zip(&round) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn kernels_are_symmetric_bounded_and_factorable(
        spec in kernel_spec(),
        n in 2usize..12,
        period in 1usize..12,
    ) {
        let times = normalize_times(&(0..n as i64).collect::<Vec<_>>(), period);
        for i in 0..n {
            for j in 0..n {
                let d = times[i] - times[j];
                let k = kernel_eval(&spec, d);
                prop_assert!((k - kernel_eval(&spec, -d)).abs() < 1e-15);
                prop_assert!(k <= 1.0 + 1e-12 && k >= -1e-12, "k={k}");
            }
        }
        let cov = build_cov(&spec, &times).unwrap();
        // The stored factor reproduces the (jitter-inclusive) covariance.
        let re = &cov.chol * cov.chol.transpose();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((re[(i, j)] - cov.sigma[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn assignment_is_a_permutation_no_worse_than_identity(
        rows in prop::collection::vec(prop::collection::vec(0.0..10.0f64, 6), 6),
    ) {
        let n = rows.len();
        let costs = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let got = assign(&CostMatrix { costs: costs.clone() }).unwrap();
        let mut seen = vec![false; n];
        for &j in &got.perm {
            prop_assert!(!seen[j], "column {j} used twice");
            seen[j] = true;
        }
        let identity: f64 = (0..n).map(|i| costs[(i, i)]).sum();
        prop_assert!(got.total_cost <= identity + 1e-9);
        let recomputed: f64 = (0..n).map(|i| costs[(i, got.perm[i])]).sum();
        prop_assert!((recomputed - got.total_cost).abs() < 1e-9);
    }

    #[test]
    fn squared_cost_matches_row_distances(
        a in prop::collection::vec(-5.0..5.0f64, 12),
        b in prop::collection::vec(-5.0..5.0f64, 12),
    ) {
        let x0 = DMatrix::from_fn(3, 4, |i, j| a[4 * i + j]);
        let x1 = DMatrix::from_fn(3, 4, |i, j| b[4 * i + j]);
        let cm = cost_matrix(&x0, &x1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..4).map(|k| (x0[(i, k)] - x1[(j, k)]).powi(2)).sum();
                prop_assert!((cm.costs[(i, j)] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinball_is_nonnegative_and_zero_only_at_the_observation(
        q in -10.0..10.0f64,
        y in -10.0..10.0f64,
        kappa in 0.05..0.95f64,
    ) {
        let v = pinball(q, y, kappa);
        prop_assert!(v >= 0.0);
        prop_assert!((pinball(y, y, kappa)).abs() < 1e-15);
        if (q - y).abs() > 1e-12 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn sample_quantiles_are_monotone_in_level(
        flat in prop::collection::vec(-100.0..100.0f64, 30),
    ) {
        let samples: Vec<Vec<f64>> = flat.chunks(5).map(|c| c.to_vec()).collect();
        let qf = quantiles_from_samples(&samples).unwrap();
        for h in 0..5 {
            for k in 1..qf.levels.len() {
                prop_assert!(qf.quantiles[k][h] >= qf.quantiles[k - 1][h] - 1e-12);
            }
        }
    }

    #[test]
    fn euler_is_exact_for_constant_fields(
        c in -3.0..3.0f64,
        steps in 1usize..40,
        t0 in -1.0..1.0f64,
        span in 0.01..2.0f64,
    ) {
        let x0 = DVector::from_vec(vec![0.5, -1.5]);
        let field = |_t: f64, _x: &DVector<f64>| Ok(DVector::from_vec(vec![c, -c]));
        let x1 = euler_span(field, &x0, t0, t0 + span, steps).unwrap();
        prop_assert!((x1[0] - (x0[0] + span * c)).abs() < 1e-12);
        prop_assert!((x1[1] - (x0[1] - span * c)).abs() < 1e-12);
    }
}
