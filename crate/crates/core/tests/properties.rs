use ldlab::bounds::{bounded_ldt, tent_corollary_bound, unbounded_ldt};
use ldlab::montecarlo::{clopper_pearson, exact_deviation_profile};
use ldlab::operator::{solve_poisson, solve_poisson_direct, UlamOperator};
use ldlab::systems::{build_finite_chain, simulate_path, MarkovSystem, Observable};
use ldlab::truncation::{decompose, martingale_path, martingale_property_check};
use proptest::prelude::*;

fn stochastic_rows(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, dim), dim).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect()
    })
}

/// A positive stochastic matrix and half-integer observable values.
fn chain(max_dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2..=max_dim).prop_flat_map(|d| {
        (
            stochastic_rows(d),
            prop::collection::vec((-4i32..=4).prop_map(|k| k as f64 / 2.0), d),
        )
    })
}

fn centered_values(sys: &MarkovSystem, values: &[f64]) -> Vec<f64> {
    let w = sys.stationary_vector().unwrap();
    let mean: f64 = w.iter().zip(values).map(|(a, b)| a * b).sum();
    values.iter().map(|v| v - mean).collect()
}

/// `P(|S_n/n − mean| > eps)` by summing over all `dimⁿ` paths.
fn enumerate(rows: &[Vec<f64>], w: &[f64], values: &[f64], n: usize, eps: f64) -> f64 {
    let dim = rows.len();
    let mean: f64 = w.iter().zip(values).map(|(a, b)| a * b).sum();
    let mut total = 0.0;
    let mut path = vec![0usize; n];
    loop {
        let mut p = w[path[0]];
        let mut s = values[path[0]];
        for k in 1..n {
            p *= rows[path[k - 1]][path[k]];
            s += values[path[k]];
        }
        if (s / n as f64 - mean).abs() > eps {
            total += p;
        }
        let mut k = n;
        loop {
            if k == 0 {
                return total;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < dim {
                break;
            }
            path[k] = 0;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_parts_sum_to_observable(z in 0.05f64..0.95, m in 0.1f64..6.0, x in 1e-9f64..1.0) {
        let sys = ldlab::systems::build_tent_system();
        let obs = Observable::log_distance(z);
        prop_assume!(x != z);
        let pair = decompose(&obs, &sys, m).unwrap();
        let b = pair.bounded_part.eval_point(x);
        let t = pair.tail_part.eval_point(x);
        prop_assert_eq!(b + t, obs.eval_point(x));
        prop_assert!(b <= m);
        prop_assert!(t == 0.0 || t > m);
    }

    #[test]
    fn clopper_pearson_brackets_estimate(trials in 1usize..2000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let hits = ((trials as f64) * frac).round() as usize;
        let (lo, hi) = clopper_pearson(hits, trials, level);
        let p = hits as f64 / trials as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        let (lo2, hi2) = clopper_pearson(hits, trials, (level + 1.0) / 2.0);
        prop_assert!(lo2 <= lo + 1e-12 && hi2 >= hi - 1e-12);
    }

    #[test]
    fn exact_profile_matches_path_enumeration((rows, values) in chain(4), n_pick in 1usize..=12, eps in 0.05f64..1.5) {
        let n = n_pick.min(if rows.len() == 2 { 12 } else if rows.len() == 3 { 9 } else { 7 });
        let sys = build_finite_chain(&rows, None).unwrap();
        let obs = Observable::tabular(values.clone());
        let profile = exact_deviation_profile(&sys, &obs, n, &[eps]).unwrap();
        let w = sys.stationary_vector().unwrap();
        for k in 1..=n {
            let oracle = enumerate(&rows, w, &values, k, eps);
            prop_assert!((profile[k - 1][0].probability - oracle).abs() <= 1e-10,
                "n={} dp={} oracle={}", k, profile[k - 1][0].probability, oracle);
        }
    }

    #[test]
    fn telescoping_identity_on_random_paths((rows, values) in chain(5), n in 1usize..400, seed in any::<u64>()) {
        let sys = build_finite_chain(&rows, None).unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        let phi = centered_values(&sys, &values);
        let psi = solve_poisson_direct(&op, &phi).unwrap();
        let path = simulate_path(&sys, n, seed);
        let mp = martingale_path(&path, &psi, &op, &phi).unwrap();
        prop_assert_eq!(mp.increments.len(), n - 1);
        prop_assert!(mp.telescoping_residual() <= 1e-9);
        prop_assert!(martingale_property_check(&op, &psi).unwrap() <= 1e-12);
    }

    #[test]
    fn koopman_rows_sum_to_one_and_weights_are_invariant((rows, _) in chain(6)) {
        let sys = build_finite_chain(&rows, None).unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        for s in op.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        prop_assert!(op.stationarity_residual() <= 1e-10);
        // the time reversal is stochastic and has the same stationary weights
        let l = op.transfer();
        for s in l.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
        prop_assert!(l.stationarity_residual() <= 1e-9);
    }

    #[test]
    fn series_and_direct_poisson_solutions_agree((rows, values) in chain(4)) {
        let sys = build_finite_chain(&rows, None).unwrap();
        let op = UlamOperator::from_finite(&sys).unwrap();
        let phi = centered_values(&sys, &values);
        let direct = solve_poisson_direct(&op, &phi).unwrap();
        let series = solve_poisson(&op, &phi, 1e-12).unwrap();
        prop_assert!(direct.residual <= 1e-10);
        for (a, b) in direct.psi.iter().zip(&series.psi) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn bounded_ldt_decreases_in_n_and_eps(n in 1u64..1_000_000, dn in 1u64..1000, eps in 0.01f64..2.0, phi in 0.1f64..10.0, psi in 0.1f64..10.0) {
        let a = bounded_ldt(n, eps, phi, psi).unwrap();
        let b = bounded_ldt(n + dn, eps, phi, psi).unwrap();
        let c = bounded_ldt(n, eps * 1.5, phi, psi).unwrap();
        prop_assert!(b.raw_value <= a.raw_value);
        prop_assert!(c.raw_value <= a.raw_value);
        prop_assert!(a.value <= 1.0 && a.value == a.raw_value.min(1.0));
        prop_assert!(c.threshold <= a.threshold);
    }

    #[test]
    fn log_bounds_decrease_in_n(n in 1u64..10_000_000, dn in 1u64..10_000, eps in 0.01f64..1.0, alpha in 0.1f64..3.0) {
        let a = unbounded_ldt(n, eps, alpha, 1.0, 1.0).unwrap();
        let b = unbounded_ldt(n + dn, eps, alpha, 1.0, 1.0).unwrap();
        prop_assert!(b.raw_value <= a.raw_value);
        let t = tent_corollary_bound(n, eps).unwrap();
        let u = tent_corollary_bound(n + dn, eps).unwrap();
        prop_assert!(u.raw_value <= t.raw_value);
        prop_assert!(t.value <= 1.0);
    }
}
