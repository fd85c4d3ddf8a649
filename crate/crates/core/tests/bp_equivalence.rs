use bp_mud::bp::naive::{bp_iterate_naive, init_messages_naive};
use bp_mud::bp::{bp_iterate, bp_iterate_with, extract_marginals, init_messages, run_bp, BpConfig, VarianceUpdate};
use bp_mud::spectral::mmse_solve;
use bp_mud::sysmodel::{generate_instance, SystemInstance};
use bp_mud::{opcount, SignatureDistribution};
use ndarray::Array1;
use proptest::prelude::*;

fn binary(k: usize, n: usize, sigma: f64, seed: u64) -> SystemInstance<f64> {
    generate_instance(k, n, SignatureDistribution::Binary, sigma, seed).unwrap()
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn converged_bp_matches_mmse_small_systems() {
    for (k, n, sigma) in [(5, 10, 0.3), (20, 40, 0.2), (30, 40, 0.5), (10, 40, 0.1)] {
        for seed in 0..3 {
            let inst = binary(k, n, sigma, seed);
            let oracle = mmse_solve(&inst).unwrap();
            let cfg = BpConfig::new(1e-13, 2000);
            let r = run_bp(&inst, &cfg, Some(&oracle.mean)).unwrap();
            assert!(r.converged, "K={k} N={n} seed={seed}");
            let gap = max_abs_diff(&r.estimate.x_hat(), &oracle.mean);
            assert!(gap < 1e-9, "K={k} N={n} σ={sigma} seed={seed}: gap {gap:e}");
        }
    }
}

#[test]
fn gaussian_signatures_also_reach_mmse() {
    let inst = generate_instance::<f64>(20, 60, SignatureDistribution::StandardGaussian, 0.3, 5).unwrap();
    let oracle = mmse_solve(&inst).unwrap();
    let r = run_bp(&inst, &BpConfig::new(1e-13, 2000), None).unwrap();
    assert!(r.converged);
    assert!(max_abs_diff(&r.estimate.x_hat(), &oracle.mean) < 1e-9);
}

#[test]
fn naive_and_optimized_updates_agree() {
    for seed in 0..3 {
        let inst = binary(7, 11, 0.25, seed);
        let mut fast = init_messages(&inst);
        let mut slow = init_messages_naive(&inst);
        assert!(fast.max_change(&slow) < 1e-14);
        for _ in 0..20 {
            fast = bp_iterate(&fast, &inst).unwrap();
            slow = bp_iterate_naive(&slow, &inst).unwrap();
        }
        assert!(fast.max_change(&slow) < 1e-12);
    }
}

#[test]
fn general_variance_path_matches_naive_on_gaussian() {
    let inst = generate_instance::<f64>(6, 9, SignatureDistribution::StandardGaussian, 0.4, 2).unwrap();
    let mut fast = init_messages(&inst);
    let mut slow = init_messages_naive(&inst);
    for _ in 0..15 {
        fast = bp_iterate_with(&fast, &inst, VarianceUpdate::General).unwrap();
        slow = bp_iterate_naive(&slow, &inst).unwrap();
    }
    assert!(fast.max_change(&slow) < 1e-12);
}

#[test]
fn iteration_cost_is_linear_in_edges() {
    let per_edge = |k: usize, n: usize| {
        let inst = binary(k, n, 0.3, 1);
        let m = init_messages(&inst);
        let (_, ops) = opcount::measure(|| bp_iterate(&m, &inst).unwrap());
        ops as f64 / (k * n) as f64
    };
    let small = per_edge(10, 20);
    let large = per_edge(80, 160);
    assert!((small - large).abs() < 1e-12, "{small} vs {large}");

    let inst = binary(40, 80, 0.3, 1);
    let m = init_messages(&inst);
    let (_, slow) = opcount::measure(|| bp_iterate_naive(&m, &inst).unwrap());
    let (_, fast) = opcount::measure(|| bp_iterate(&m, &inst).unwrap());
    // the direct form does roughly (N + K)/4 times the work here
    assert!(slow as f64 > 10.0 * fast as f64, "naive {slow}, fast {fast}");
}

#[test]
fn marginals_are_linear_in_received_signal() {
    let a = binary(8, 16, 0.3, 3);
    let b = generate_instance::<f64>(8, 16, SignatureDistribution::Binary, 0.3, 4).unwrap();
    let sig = a.signatures().clone();
    let (ca, cb) = (0.7, -1.9);
    let mix = SystemInstance::from_parts(
        sig.clone(),
        a.symbols() * ca + b.symbols() * cb,
        a.noise() * ca + b.noise() * cb,
        0.3,
        0,
    )
    .unwrap();
    let b_same = SystemInstance::from_parts(sig, b.symbols().clone(), b.noise().clone(), 0.3, 0).unwrap();
    let run = |inst: &SystemInstance<f64>| {
        let mut m = init_messages(inst);
        for _ in 0..12 {
            m = bp_iterate(&m, inst).unwrap();
        }
        extract_marginals(&m, inst).x_hat()
    };
    let lhs = run(&mix);
    let rhs = run(&a) * ca + run(&b_same) * cb;
    assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn messages_respect_lower_bounds(k in 1usize..8, n in 1usize..10, sigma in 0.05f64..2.0, seed in 0u64..1000) {
        let inst = binary(k, n, sigma, seed);
        let mut m = init_messages(&inst);
        for _ in 0..6 {
            m = bp_iterate(&m, &inst).unwrap();
            prop_assert!(m.lambda.iter().all(|&l| l >= 1.0));
            prop_assert!(m.lambda_hat.iter().all(|&l| l >= sigma * sigma));
        }
        let est = extract_marginals(&m, &inst);
        prop_assert!(est.l.iter().all(|&l| l >= 1.0));
    }

    #[test]
    fn naive_matches_fast_on_random_systems(k in 1usize..6, n in 1usize..8, sigma in 0.1f64..1.0, seed in 0u64..1000) {
        let inst = binary(k, n, sigma, seed);
        let mut fast = init_messages(&inst);
        let mut slow = init_messages_naive(&inst);
        for _ in 0..5 {
            fast = bp_iterate(&fast, &inst).unwrap();
            slow = bp_iterate_naive(&slow, &inst).unwrap();
        }
        let scale = 1.0 + fast.gamma.iter().chain(fast.gamma_hat.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(fast.max_change(&slow) <= 1e-12 * scale);
    }

    #[test]
    fn converged_bp_is_mmse(k in 1usize..12, extra in 0usize..20, sigma in 0.2f64..1.5, seed in 0u64..1000) {
        let n = k + extra;
        let inst = binary(k, n, sigma, seed);
        let oracle = mmse_solve(&inst).unwrap();
        // α = 1 draws can diverge at finite size; only converged runs are compared
        let r = run_bp(&inst, &BpConfig::new(1e-13, 5000), None);
        prop_assume!(matches!(&r, Ok(r) if r.converged));
        let r = r.unwrap();
        prop_assert!(max_abs_diff(&r.estimate.x_hat(), &oracle.mean) < 1e-8);
    }
}
