//! Reference implementations the library is checked against. They share no
//! code with the library beyond its public data types: brute force where the
//! library is clever, dense linear algebra where it is iterative.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use trendscope_core::crf::{PairTable, PairwisePotentials};
use trendscope_core::features::{BodyFeatures, BLOCK_COUNT};
use trendscope_core::svm::{Gram, SmoSolution};

/// A normalized histogram with roughly `zero_frac` of its bins empty (at
/// least one bin stays occupied).
pub fn random_histogram(rng: &mut ChaCha8Rng, bins: usize, zero_frac: f64) -> Vec<f64> {
    let mut h: Vec<f64> = (0..bins)
        .map(|_| if rng.gen::<f64>() < zero_frac { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if h.iter().all(|&v| v == 0.0) {
        h[rng.gen_range(0..bins)] = 1.0;
    }
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// 72 random blocks of `bins` bins each.
pub fn random_features(rng: &mut ChaCha8Rng, bins: usize) -> BodyFeatures {
    let hists = (0..BLOCK_COUNT).map(|_| random_histogram(rng, bins, 0.3)).collect();
    BodyFeatures::from_histograms("oracle".into(), hists).unwrap()
}

pub fn to_matrix(gram: &Gram) -> DMatrix<f64> {
    DMatrix::from_fn(gram.n(), gram.n(), |i, j| gram.get(i, j))
}

/// Smallest eigenvalue of the symmetric part of the Gram matrix.
pub fn min_eigenvalue(gram: &Gram) -> f64 {
    let m = to_matrix(gram);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Textbook chi-square kernel, written out independently.
pub fn chi2_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d: f64 = x
        .iter()
        .zip(y)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum();
    (-gamma * d).exp()
}

/// Analytic `d k(x, y) / d x_i` for the chi-square kernel with `x_i + y_i > 0`.
pub fn chi2_kernel_grad(x: &[f64], y: &[f64], gamma: f64, i: usize) -> f64 {
    let (a, b) = (x[i], y[i]);
    -gamma * chi2_kernel(x, y, gamma) * (a - b) * (a + 3.0 * b) / ((a + b) * (a + b))
}

#[derive(Debug, Clone)]
pub struct QpOptimum {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

fn dual(q: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    alpha.sum() - 0.5 * alpha.dot(&(q * alpha))
}

/// Exact optimum of the SVM dual
/// `max sum(a) - 1/2 a'Qa  s.t.  0 <= a_i <= C_i, y'a = 0`, `Q_ij = y_i y_j K_ij`,
/// by enumerating every active set: each variable is pinned at 0, pinned at
/// `C_i`, or free. The free block solves the equality-constrained KKT system
/// (least-squares via SVD, so singular kernels are fine); the best feasible
/// stationary point over all 3^n faces is the global optimum because the
/// objective is concave.
pub fn qp_oracle(gram: &Gram, labels: &[f64], upper: &[f64]) -> QpOptimum {
    let n = gram.n();
    assert!(n <= 10, "3^n active sets");
    let q = DMatrix::from_fn(n, n, |i, j| labels[i] * labels[j] * gram.get(i, j));
    let mut best: Option<QpOptimum> = None;
    let faces = 3usize.pow(n as u32);
    for code in 0..faces {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha = DVector::from_fn(n, |i, _| if state[i] == 1 { upper[i] } else { 0.0 });
        let fixed_sum: f64 = (0..n).filter(|&i| state[i] == 1).map(|i| labels[i] * upper[i]).sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            // [Q_FF  y_F] [a_F]   [1 - Q_FB a_B]
            // [y_F'   0 ] [ nu] = [  -y_B' a_B  ]
            let mut lhs = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    lhs[(r, c)] = q[(i, j)];
                }
                lhs[(r, m)] = labels[i];
                lhs[(m, r)] = labels[i];
                let fixed: f64 = (0..n).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * upper[j]).sum();
                rhs[r] = 1.0 - fixed;
            }
            rhs[m] = -fixed_sum;
            let svd = lhs.clone().svd(true, true);
            let Ok(sol) = svd.solve(&rhs, 1e-12) else { continue };
            if (&lhs * &sol - &rhs).amax() > 1e-8 {
                continue; // inconsistent: no stationary point on this face
            }
            let mut feasible = true;
            for (r, &i) in free.iter().enumerate() {
                let v = sol[r];
                if v < -1e-12 || v > upper[i] + 1e-12 {
                    feasible = false;
                    break;
                }
                alpha[i] = v.clamp(0.0, upper[i]);
            }
            if !feasible {
                continue;
            }
        }
        let objective = dual(&q, &alpha);
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(QpOptimum {
                alpha: alpha.iter().copied().collect(),
                objective,
            });
        }
    }
    best.expect("a = 0 is always feasible")
}

/// Largest violation of the KKT conditions of a dual solution, measured on
/// `y_i f(x_i)` with the solution's bias:
/// `a_i = 0 => y f >= 1`, `a_i = C_i => y f <= 1`, otherwise `y f = 1`.
pub fn kkt_violation(gram: &Gram, labels: &[f64], sol: &SmoSolution) -> f64 {
    let n = gram.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| sol.alpha[j] * labels[j] * gram.get(i, j)).sum::<f64>() + sol.bias;
        let yf = labels[i] * f;
        let a = sol.alpha[i];
        let c = sol.upper_bounds[i];
        let v = if a <= 1e-12 {
            (1.0 - yf).max(0.0)
        } else if a >= c - 1e-12 {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Platt negative log-likelihood with the standard smoothed targets.
pub fn platt_nll(margins: &[f64], labels: &[f64], a: f64, b: f64) -> f64 {
    let pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            let t = if y > 0.0 { (pos + 1.0) / (pos + 2.0) } else { 1.0 / (neg + 2.0) };
            let p = 1.0 / (1.0 + (a * m + b).exp());
            -(t * p.max(1e-300).ln() + (1.0 - t) * (1.0 - p).max(1e-300).ln())
        })
        .sum()
}

/// Coarse-to-fine grid minimum of the Platt likelihood over `(a, b)`.
pub fn platt_grid(margins: &[f64], labels: &[f64]) -> (f64, f64, f64) {
    let (mut ca, mut cb, mut span) = (0.0, 0.0, 20.0);
    let mut best = (0.0, 0.0, platt_nll(margins, labels, 0.0, 0.0));
    for _ in 0..30 {
        for i in -20..=20 {
            for j in -20..=20 {
                let a = ca + span * f64::from(i) / 20.0;
                let b = cb + span * f64::from(j) / 20.0;
                let v = platt_nll(margins, labels, a, b);
                if v < best.2 {
                    best = (a, b, v);
                }
            }
        }
        ca = best.0;
        cb = best.1;
        span *= 0.3;
    }
    best
}

/// Energy of an assignment, written out from the definition.
pub fn crf_energy(unary: &[[f64; 2]], pots: &PairwisePotentials, scale: f64, x: &[bool]) -> f64 {
    let n = x.len();
    let mut e = 0.0;
    for i in 0..n {
        e -= unary[i][x[i] as usize];
        for j in i + 1..n {
            e -= scale * pots.table(i, j)[x[i] as usize][x[j] as usize];
        }
    }
    e
}

#[derive(Debug, Clone)]
pub struct Enumerated {
    pub marginals: Vec<f64>,
    pub min_energy: f64,
    pub map_assignments: Vec<Vec<bool>>,
}

/// Marginals and all minimum-energy assignments by enumeration.
pub fn crf_enumerate(unary: &[[f64; 2]], pots: &PairwisePotentials, scale: f64) -> Enumerated {
    let n = unary.len();
    let mut energies = Vec::with_capacity(1 << n);
    for code in 0..(1usize << n) {
        let x: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
        energies.push((crf_energy(unary, pots, scale, &x), x));
    }
    let min_energy = energies.iter().map(|(e, _)| *e).fold(f64::INFINITY, f64::min);
    let z: f64 = energies.iter().map(|(e, _)| (min_energy - e).exp()).sum();
    let mut marginals = vec![0.0; n];
    for (e, x) in &energies {
        let w = (min_energy - e).exp() / z;
        for i in 0..n {
            if x[i] {
                marginals[i] += w;
            }
        }
    }
    let map_assignments = energies
        .into_iter()
        .filter(|(e, _)| (e - min_energy).abs() <= 1e-12 * (1.0 + min_energy.abs()))
        .map(|(_, x)| x)
        .collect();
    Enumerated {
        marginals,
        min_energy,
        map_assignments,
    }
}

/// Potentials with independent uniform table entries in `[-max_abs, max_abs]`
/// on the listed edges and zeros elsewhere.
pub fn random_potentials(rng: &mut ChaCha8Rng, n: usize, edges: &[(usize, usize)], max_abs: f64) -> PairwisePotentials {
    let mut p = PairwisePotentials::zeros(n).unwrap();
    for &(i, j) in edges {
        let mut t: PairTable = [[0.0; 2]; 2];
        for row in t.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-max_abs..=max_abs);
            }
        }
        p.set_table(i, j, t).unwrap();
    }
    p
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// A random spanning tree: node `k` attaches to a random earlier node.
pub fn tree_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|k| (rng.gen_range(0..k), k)).collect()
}

pub fn random_unary(rng: &mut ChaCha8Rng, n: usize, max_abs: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen_range(-max_abs..=max_abs), rng.gen_range(-max_abs..=max_abs)])
        .collect()
}
