use ldlab::montecarlo::{clopper_pearson, estimate_grid, exact_deviation_profile};
use ldlab::systems::{build_finite_chain, simulate_batch, Observable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn monte_carlo_estimates_agree_with_exact_probabilities() {
    let sys = build_finite_chain(&[vec![0.7, 0.3], vec![0.2, 0.8]], None).unwrap();
    let obs = Observable::tabular(vec![1.0, -1.0]);
    let ns = [5usize, 10, 20];
    let eps = [0.3, 0.6];
    let exact = exact_deviation_profile(&sys, &obs, 20, &eps).unwrap();
    let est = estimate_grid(&sys, &obs, &ns, &eps, 40_000, 11, 0.999).unwrap();
    for e in &est {
        let k = eps.iter().position(|x| *x == e.eps).unwrap();
        let p = exact[e.n as usize - 1][k].probability;
        assert!(
            e.ci.0 <= p && p <= e.ci.1,
            "n={} eps={} exact={} ci={:?}",
            e.n,
            e.eps,
            p,
            e.ci
        );
        assert!((e.p_hat - p).abs() < 0.02);
    }
}

#[test]
fn clopper_pearson_coverage_is_at_least_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 100;
    let reps = 10_000;
    for p in [0.02, 0.1, 0.5] {
        let covered = (0..reps)
            .filter(|_| {
                let hits = (0..trials).filter(|_| rng.gen::<f64>() < p).count();
                let (lo, hi) = clopper_pearson(hits, trials, 0.95);
                lo <= p && p <= hi
            })
            .count();
        let coverage = covered as f64 / reps as f64;
        let slack = 3.0 * (0.95f64 * 0.05 / reps as f64).sqrt();
        assert!(coverage >= 0.95 - slack, "p={p} coverage={coverage}");
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let sys = ldlab::systems::build_tent_system();
    let obs = Observable::log();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_batch(&sys, &obs, 300, 500, 99).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.birkhoff_sums.len(), 500);
    assert!(a
        .birkhoff_sums
        .iter()
        .zip(&b.birkhoff_sums)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}
