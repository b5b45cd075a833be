//! The library checked against the independent references in `support`.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::*;
use trendscope_core::crf::{energy, infer_exact, infer_map_icm, infer_marginals_lbp, CrfInstance};
use trendscope_core::svm::{
    chi2_block_kernel, combined_kernel, dual_objective, gram_matrix, platt_fit, train_smo, Gram, KernelSpec,
    SmoConfig,
};

#[test]
fn chi2_kernel_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let bins = rng.gen_range(1..40);
        let x = random_histogram(&mut rng, bins, 0.3);
        let y = random_histogram(&mut rng, bins, 0.3);
        let gamma = rng.gen_range(0.01..5.0);
        let k = chi2_block_kernel(&x, &y, gamma).unwrap();
        assert!((k - chi2_kernel(&x, &y, gamma)).abs() <= 1e-14, "{k}");
    }
}

#[test]
fn chi2_kernel_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    for _ in 0..100 {
        let bins = rng.gen_range(2..12);
        // keep every bin occupied so the kernel is smooth at x
        let x: Vec<f64> = (0..bins).map(|_| rng.gen_range(0.05..1.0)).collect();
        let y: Vec<f64> = (0..bins).map(|_| rng.gen_range(0.05..1.0)).collect();
        let gamma = rng.gen_range(0.1..2.0);
        let i = rng.gen_range(0..bins);
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += h;
        down[i] -= h;
        let fd = (chi2_block_kernel(&up, &y, gamma).unwrap() - chi2_block_kernel(&down, &y, gamma).unwrap()) / (2.0 * h);
        let analytic = chi2_kernel_grad(&x, &y, gamma, i);
        assert!((fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()), "fd {fd} vs {analytic}");
    }
}

#[test]
fn combined_gram_is_psd_by_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let feats: Vec<_> = (0..20).map(|_| random_features(&mut rng, 6)).collect();
        let refs: Vec<_> = feats.iter().collect();
        let mut w: Vec<f64> = (0..72).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let spec = KernelSpec::new(rng.gen_range(0.1..4.0), w).unwrap();
        let gram = gram_matrix(&refs, &spec).unwrap();
        assert!(min_eigenvalue(&gram) >= -1e-10);
        for (i, f) in feats.iter().enumerate() {
            assert_eq!(gram.get(i, i), combined_kernel(f, f, &spec).unwrap());
        }
    }
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Gram, Vec<f64>) {
    let n = rng.gen_range(2..=8);
    let bins = rng.gen_range(2..8);
    let gamma = rng.gen_range(0.2..4.0);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| random_histogram(rng, bins, 0.2)).collect();
    let gram = Gram::from_fn(n, |i, j| chi2_block_kernel(&xs[i], &xs[j], gamma).unwrap());
    let mut labels: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    labels[0] = 1.0;
    labels[1] = -1.0;
    (gram, labels)
}

#[test]
fn smo_reaches_the_active_set_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..40 {
        let (gram, labels) = random_problem(&mut rng);
        let config = SmoConfig {
            c: rng.gen_range(0.1..10.0),
            tol: 1e-7,
            balance_classes: case % 2 == 1,
            ..SmoConfig::default()
        };
        let sol = train_smo(&gram, &labels, &config).unwrap();
        assert!(sol.converged);
        let oracle = qp_oracle(&gram, &labels, &sol.upper_bounds);
        let smo = dual_objective(&gram, &labels, &sol.alpha);
        assert!(oracle.objective - smo <= 1e-6, "case {case}: oracle {} smo {smo}", oracle.objective);
        assert!(smo <= oracle.objective + 1e-9, "case {case}: smo exceeds the optimum");
        assert!(kkt_violation(&gram, &labels, &sol) <= 1e-5, "case {case}");
        let balance: f64 = sol.alpha.iter().zip(&labels).map(|(a, y)| a * y).sum();
        assert!(balance.abs() <= 1e-9);
    }
}

#[test]
fn platt_fit_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(10..60);
        let labels: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let margins: Vec<f64> = labels.iter().map(|y| y * rng.gen_range(-0.5..2.0) + rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = platt_fit(&margins, &labels).unwrap();
        let (_, _, grid) = platt_grid(&margins, &labels);
        assert!(platt_nll(&margins, &labels, a, b) <= grid + 1e-7);
    }
}

#[test]
fn crf_exact_inference_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..60 {
        let n = rng.gen_range(2..=9);
        let pots = random_potentials(&mut rng, n, &complete_edges(n), 1.0);
        let unary = random_unary(&mut rng, n, 2.0);
        let scale = rng.gen_range(0.0..2.0);
        let inst = CrfInstance::with_scale(&unary, &pots, scale).unwrap();
        let exact = infer_exact(&inst).unwrap();
        let oracle = crf_enumerate(&unary, &pots, scale);
        for (a, b) in exact.marginals.iter().zip(&oracle.marginals) {
            assert!((a - b).abs() <= 1e-12);
        }
        // ties resolve to the lexicographically smallest assignment
        assert_eq!(&exact.map_assignment, oracle.map_assignments.iter().min().unwrap());
        let e = energy(&inst, &exact.map_assignment).unwrap();
        assert!((e - oracle.min_energy).abs() <= 1e-12);
        assert!((e - crf_energy(&unary, &pots, scale, &exact.map_assignment)).abs() <= 1e-12);
    }
}

#[test]
fn icm_stops_at_a_single_flip_local_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..60 {
        let n = rng.gen_range(2..=12);
        let pots = random_potentials(&mut rng, n, &complete_edges(n), 1.0);
        let unary = random_unary(&mut rng, n, 1.0);
        let inst = CrfInstance::new(&unary, &pots).unwrap();
        let init: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let out = infer_map_icm(&inst, &init).unwrap();
        let e = crf_energy(&unary, &pots, 1.0, &out.map_assignment);
        assert!(e <= crf_energy(&unary, &pots, 1.0, &init) + 1e-12);
        for i in 0..n {
            let mut flipped = out.map_assignment.clone();
            flipped[i] = !flipped[i];
            assert!(crf_energy(&unary, &pots, 1.0, &flipped) >= e - 1e-12);
        }
    }
}

#[test]
fn lbp_is_exact_on_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let n = rng.gen_range(2..=12);
        let edges = tree_edges(&mut rng, n);
        let pots = random_potentials(&mut rng, n, &edges, 1.5);
        let unary = random_unary(&mut rng, n, 1.5);
        let inst = CrfInstance::new(&unary, &pots).unwrap();
        let lbp = infer_marginals_lbp(&inst, 2000, 0.5, 1e-12).unwrap();
        assert!(lbp.converged);
        let oracle = crf_enumerate(&unary, &pots, 1.0);
        for (a, b) in lbp.marginals.iter().zip(&oracle.marginals) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}
