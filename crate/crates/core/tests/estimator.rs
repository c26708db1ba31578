use ddprior::correlation::CorrelationMode;
use ddprior::estimator::{
    build_b_mdd, estimate_node, mdd_weights, mp_independent, pooled_estimates, prop3_diagnostic,
    solve_weights, BMatrix, EstimateOptions, EstimationContext, NodePrior, Pool, SolveRow,
};
use ddprior::model::{CountTable, RowLayout};
use ddprior::prior::{mdd_covariance_model, mdd_to_dd, sample_prior, MddPrior, PiVector};
use ddprior::reproduce::EXAMPLE5_COUNTS;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

fn labels(d: usize) -> Vec<SolveRow> {
    (0..d - 1).map(SolveRow::Row).chain([SolveRow::PriorMean]).collect()
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d + 2, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(d, d) * 1e-3
}

/// Minimises `a'Ba` over `a = e_d + N w`, where the columns of `N` span
/// `{sum a = 0}`, by solving the reduced normal equations with LU.
fn null_space_oracle(b: &DMatrix<f64>) -> DVector<f64> {
    let d = b.nrows();
    let n = DMatrix::from_fn(d, d - 1, |i, j| {
        if i == j {
            1.0
        } else if i == d - 1 {
            -1.0
        } else {
            0.0
        }
    });
    let mut v = DVector::zeros(d);
    v[d - 1] = 1.0;
    let lhs = n.transpose() * b * &n;
    let rhs = -(n.transpose() * b * &v);
    let w = lhs.lu().solve(&rhs).unwrap();
    v + n * w
}

#[test]
fn weights_match_null_space_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let d = rng.random_range(2..=6);
        let m = random_psd(&mut rng, d);
        let sol = solve_weights(&BMatrix { matrix: m.clone(), labels: labels(d), scale: 1.0 }).unwrap();
        let want = null_space_oracle(&m);
        assert!(sol.unique);
        for i in 0..d {
            assert!((sol.weights[i] - want[i]).abs() < 1e-8, "{:?} vs {want}", sol.weights);
        }
        let mse = want.dot(&(&m * &want));
        assert!((sol.mse - mse).abs() < 1e-8 * mse.max(1.0));
    }
}

#[test]
fn solution_beats_random_feasible_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let d = rng.random_range(2..=6);
        let m = random_psd(&mut rng, d);
        let sol = solve_weights(&BMatrix { matrix: m.clone(), labels: labels(d), scale: 1.0 }).unwrap();
        for _ in 0..1000 {
            let mut a = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let shift = (1.0 - a.sum()) / d as f64;
            a.add_scalar_mut(shift);
            assert!(a.dot(&(&m * &a)) >= sol.mse - 1e-12);
        }
    }
}

#[test]
fn singular_b_falls_back_to_minimum_norm() {
    let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let sol = solve_weights(&BMatrix { matrix: m, labels: labels(3), scale: 1.0 }).unwrap();
    assert!(!sol.unique);
    assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!((sol.weights[0] - sol.weights[1]).abs() < 1e-9);
    assert!((sol.mse - 0.5).abs() < 1e-9);
}

#[test]
fn rejects_indefinite_matrices() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(solve_weights(&BMatrix { matrix: m, labels: labels(2), scale: 1.0 }).is_err());
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(solve_weights(&BMatrix { matrix: m, labels: labels(2), scale: 1.0 }).is_err());
}

fn random_pi(rng: &mut ChaCha8Rng, parents: usize) -> (f64, Vec<f64>, f64) {
    let w: Vec<f64> = (0..parents + 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = w.iter().sum();
    (w[0] / s, w[1..=parents].iter().map(|v| v / s).collect(), w[parents + 1] / s)
}

fn random_prior(rng: &mut ChaCha8Rng, parents: usize) -> MddPrior {
    let (pi0, pw, pi2) = random_pi(rng, parents);
    let m = rng.random_range(0.1..0.9);
    MddPrior::new("X", rng.random_range(0.5..10.0), vec![m, 1.0 - m], pi0, pw, pi2).unwrap()
}

#[test]
fn minimum_mse_never_increases_with_more_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layout = RowLayout::from_radices(&[2, 3]);
    for _ in 0..100 {
        let prior = random_prior(&mut rng, 2);
        let cov = mdd_covariance_model(&prior, &layout, CorrelationMode::Quadratic).unwrap();
        let mut totals: Vec<u64> = (0..6).map(|_| rng.random_range(0..6)).collect();
        totals[0] = totals[0].max(1);
        let before = mdd_weights(&cov, &totals, 0, false).unwrap().mse;
        totals[rng.random_range(0..6)] += 1;
        let after = mdd_weights(&cov, &totals, 0, false).unwrap().mse;
        assert!(after <= before + 1e-12 * before, "{after} > {before}");
    }
}

#[test]
fn target_row_of_b_is_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layout = RowLayout::from_radices(&[2, 2]);
    let prior = random_prior(&mut rng, 2);
    let cov = mdd_covariance_model(&prior, &layout, CorrelationMode::Quadratic).unwrap();
    let ctx = EstimationContext::from_totals(1, &[4, 7, 2, 9]);
    let b = build_b_mdd(&ctx, &cov, true).unwrap();
    let i = ctx.active.iter().position(|&g| g == 1).unwrap();
    for j in 0..b.d() {
        let want = if i == j { prior.alpha / 7.0 } else { 0.0 };
        assert!((b.matrix[(i, j)] - want).abs() < 1e-14);
    }
}

fn random_counts(rng: &mut ChaCha8Rng, layout: &RowLayout) -> CountTable {
    let rows: Vec<(u64, u64)> = (0..layout.n_rows())
        .map(|_| {
            let n = rng.random_range(0..15);
            (n, rng.random_range(0..=n))
        })
        .collect();
    CountTable::binary_from_totals("X", layout.clone(), &rows).unwrap()
}

fn assert_tables_close(a: &[f64], b: &[f64], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?}\n{b:?}");
    }
}

#[test]
fn extreme_pi_recovers_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = RowLayout::from_radices(&[2, 3]);
    let opts = EstimateOptions::default();
    for _ in 0..20 {
        let counts = random_counts(&mut rng, &layout);
        let alpha = rng.random_range(0.5..10.0);
        let m = rng.random_range(0.1..0.9);
        let mu = vec![m, 1.0 - m];
        let ol = |pi0: f64, pw: Vec<f64>, pi2: f64| {
            let prior = MddPrior::new("X", alpha, mu.clone(), pi0, pw, pi2).unwrap();
            estimate_node(&counts, &NodePrior::Mdd(prior), &opts).unwrap().theta
        };
        let mp = mp_independent(&counts, alpha, &mu).unwrap();
        assert_tables_close(&ol(0.0, vec![0.0, 0.0], 1.0), &mp.theta, 1e-10);
        let all = pooled_estimates(&counts, alpha, &mu, Pool::All).unwrap();
        assert_tables_close(&ol(1.0, vec![0.0, 0.0], 0.0), &all.theta, 1e-10);
        for w in 0..2 {
            let mut pw = vec![0.0, 0.0];
            pw[w] = 1.0;
            let pooled = pooled_estimates(&counts, alpha, &mu, Pool::Parent(w)).unwrap();
            assert_tables_close(&ol(0.0, pw, 0.0), &pooled.theta, 1e-10);
        }
    }
}

#[test]
fn marginal_pooling_on_example5() {
    let counts = CountTable::binary_from_totals("X", RowLayout::from_radices(&[2, 2, 2]), &EXAMPLE5_COUNTS)
        .unwrap();
    let all = pooled_estimates(&counts, 2.0, &[0.5, 0.5], Pool::All).unwrap();
    for f in 0..8 {
        assert!((all.theta(f, 1) - 0.675).abs() < 5e-4);
    }
}

#[test]
fn decay_of_off_target_weights() {
    let prior = MddPrior::symmetric("X", 2.0, vec![0.5, 0.5], PiVector::new(0.0, 1.0, 0.0).unwrap(), 2)
        .unwrap();
    let base = CountTable::binary_from_totals("X", RowLayout::from_radices(&[2, 2]), &[(10, 5), (0, 0), (10, 5), (10, 5)])
        .unwrap();
    let report = prop3_diagnostic(&prior, &base, 0, &[1.0, 10.0, 100.0], CorrelationMode::Exact).unwrap();
    assert_eq!(report.points.iter().map(|p| p.n_f).collect::<Vec<_>>(), [10, 100, 1000]);
    assert!(report.bounded, "{report:?}");
    let a: Vec<f64> = report.points.iter().map(|p| p.a_f).collect();
    assert!(a[0] < a[1] && a[1] < a[2] && a[2] < 1.0);

    let pooled = MddPrior::symmetric("X", 2.0, vec![0.5, 0.5], PiVector::new(1.0, 0.0, 0.0).unwrap(), 2)
        .unwrap();
    assert!(prop3_diagnostic(&pooled, &base, 0, &[1.0], CorrelationMode::Exact).is_err());
    assert!(prop3_diagnostic(&prior, &base, 1, &[1.0], CorrelationMode::Exact).is_err());
}

#[test]
fn estimates_approach_target_proportions() {
    let prior = MddPrior::symmetric("X", 2.0, vec![0.5, 0.5], PiVector::new(0.25, 0.5, 0.25).unwrap(), 2)
        .unwrap();
    let layout = RowLayout::from_radices(&[2, 2]);
    let mut gaps = Vec::new();
    for n in [10u64, 100, 1000, 10000] {
        let counts = CountTable::binary_from_totals("X", layout.clone(), &[(n, n / 5), (6, 5), (4, 3), (8, 6)]).unwrap();
        let est = estimate_node(&counts, &NodePrior::Mdd(prior.clone()), &EstimateOptions::default()).unwrap();
        gaps.push((est.theta(0, 1) - 0.2).abs());
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] < 1e-3);
}

#[test]
fn unadjusted_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layout = RowLayout::from_radices(&[3, 2]);
    for _ in 0..20 {
        let (pi0, pw, pi2) = random_pi(&mut rng, 2);
        let mu = {
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let prior = MddPrior::new("X", rng.random_range(0.5..10.0), mu, pi0, pw, pi2).unwrap();
        let counts = CountTable::from_counts(
            "X",
            vec!["a".into(), "b".into(), "c".into()],
            layout.clone(),
            (0..18).map(|_| rng.random_range(0..5)).collect(),
        )
        .unwrap();
        let est = estimate_node(&counts, &NodePrior::Mdd(prior), &EstimateOptions::default()).unwrap();
        for f in 0..6 {
            assert!((est.row(f).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let w = est.weights(f).unwrap();
            assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn dd_path_agrees_with_mdd_path() {
    let layout = RowLayout::from_radices(&[2, 2]);
    let prior = MddPrior::new("X", 3.0, vec![0.3, 0.7], 0.2, vec![0.3, 0.2], 0.3).unwrap();
    let counts = CountTable::binary_from_totals("X", layout.clone(), &[(6, 2), (0, 0), (9, 7), (3, 1)]).unwrap();
    let opts = EstimateOptions { mode: CorrelationMode::Exact, mc_seed: 8, ..Default::default() };
    let mdd = estimate_node(&counts, &NodePrior::Mdd(prior.clone()), &opts).unwrap();
    let dd = estimate_node(&counts, &NodePrior::Dd(mdd_to_dd(&prior, &layout).unwrap()), &opts).unwrap();
    assert_tables_close(&mdd.theta, &dd.theta, 0.01);
}

#[test]
fn optimal_linear_beats_independent_posterior_mean() {
    let layout = RowLayout::from_radices(&[2, 2]);
    let prior = MddPrior::new("X", 2.0, vec![0.3, 0.7], 0.2, vec![0.25, 0.25], 0.3).unwrap();
    let spec = mdd_to_dd(&prior, &layout).unwrap();
    let totals = [5u64, 0, 8, 3];
    let reps = 2000;
    let draws = sample_prior(&spec, 42, reps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let opts = EstimateOptions { mode: CorrelationMode::Exact, ..Default::default() };
    let mut diffs = Vec::with_capacity(reps);
    for draw in &draws {
        let rows: Vec<(u64, u64)> = totals
            .iter()
            .enumerate()
            .map(|(f, &n)| (n, Binomial::new(n, draw.theta[2 * f + 1]).unwrap().sample(&mut rng)))
            .collect();
        let counts = CountTable::binary_from_totals("X", layout.clone(), &rows).unwrap();
        let ol = estimate_node(&counts, &NodePrior::Mdd(prior.clone()), &opts).unwrap();
        let mp = mp_independent(&counts, prior.alpha, &prior.mu).unwrap();
        let sq = |t: &[f64]| t.iter().zip(&draw.theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        diffs.push(sq(&ol.theta) - sq(&mp.theta));
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let se = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(mean <= 2.0 * se, "OL - MP squared error {mean} (se {se})");
}

proptest! {
    #[test]
    fn weights_sum_to_one_for_any_counts(
        totals in proptest::collection::vec(0u64..40, 4),
        pi in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        alpha in 0.2f64..20.0,
    ) {
        let s = pi.0 + pi.1 + pi.2;
        prop_assume!(s > 1e-3);
        let prior = MddPrior::symmetric(
            "X", alpha, vec![0.5, 0.5],
            PiVector::new(pi.0 / s, pi.1 / s, 1.0 - (pi.0 + pi.1) / s).unwrap(), 2,
        ).unwrap();
        let cov = mdd_covariance_model(&prior, &RowLayout::from_radices(&[2, 2]), CorrelationMode::Quadratic).unwrap();
        for f in 0..4 {
            let sol = mdd_weights(&cov, &totals, f, true).unwrap();
            prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(sol.mse >= -1e-12);
        }
    }
}
