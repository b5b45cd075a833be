use crate::error::{Error, Result};

use super::{energy_unchecked, CrfInstance};

/// Largest instance [`infer_exact`] will enumerate.
pub const MAX_EXACT_NODES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub map_assignment: Vec<bool>,
    /// `P(x_i = 1)` for every node.
    pub marginals: Vec<f64>,
    /// `ln P(x_i = 1) - ln P(x_i = 0)`; thresholding at zero avoids the
    /// rounding of the probabilities.
    pub log_odds: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn check_assignment(inst: &CrfInstance<'_>, x: &[bool]) -> Result<()> {
    if x.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            expected: inst.n(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Exact marginals and MAP by enumerating all `2^n` assignments. Node 0 is the
/// most significant bit, so the first minimum found is the lexicographically
/// smallest MAP.
pub fn infer_exact(inst: &CrfInstance<'_>) -> Result<InferenceResult> {
    let n = inst.n();
    if n > MAX_EXACT_NODES {
        return Err(Error::TooManyNodes {
            n,
            max: MAX_EXACT_NODES,
        });
    }
    let decode = |k: usize| -> Vec<bool> { (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect() };
    let energies: Vec<f64> = (0..1usize << n).map(|k| energy_unchecked(inst, &decode(k))).collect();

    let mut best = 0;
    for (k, &e) in energies.iter().enumerate() {
        if e < energies[best] {
            best = k;
        }
    }
    let e_min = energies[best];

    // per node, log of the unnormalized mass with x_i = 0 and x_i = 1
    let mut mass = vec![[0.0f64; 2]; n];
    for (k, &e) in energies.iter().enumerate() {
        let w = (e_min - e).exp();
        for (i, m) in mass.iter_mut().enumerate() {
            m[(k >> (n - 1 - i)) & 1] += w;
        }
    }
    let log_odds: Vec<f64> = mass.iter().map(|m| m[1].ln() - m[0].ln()).collect();
    let marginals = mass.iter().map(|m| m[1] / (m[0] + m[1])).collect();
    Ok(InferenceResult {
        map_assignment: decode(best),
        marginals,
        log_odds,
        converged: true,
        iterations: 1,
    })
}

/// Iterated conditional modes: sweeps nodes in index order, setting each to
/// its strictly better state given the rest, until a sweep changes nothing.
/// `iterations` counts sweeps, including the final unchanged one.
pub fn infer_map_icm(inst: &CrfInstance<'_>, init: &[bool]) -> Result<InferenceResult> {
    check_assignment(inst, init)?;
    let n = inst.n();
    let mut x = init.to_vec();
    let mut passes = 0;
    loop {
        passes += 1;
        let mut changed = false;
        for i in 0..n {
            let cur = usize::from(x[i]);
            let here = inst.local_score(i, cur, &x);
            let there = inst.local_score(i, 1 - cur, &x);
            if there > here {
                x[i] = !x[i];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let log_odds: Vec<f64> = (0..n)
        .map(|i| inst.local_score(i, 1, &x) - inst.local_score(i, 0, &x))
        .collect();
    Ok(InferenceResult {
        map_assignment: x,
        marginals: log_odds.iter().map(|&r| sigmoid(r)).collect(),
        log_odds,
        converged: true,
        iterations: passes,
    })
}

/// Synchronous sum-product loopy belief propagation on the complete graph.
///
/// Each message is a normalized distribution over the receiver's two states,
/// stored as its log-odds. Updates are damped in probability space:
/// `m' = (1 - λ) m_new + λ m_old`. The run converges when no message
/// probability moves by `tol` or more in a round.
pub fn infer_marginals_lbp(
    inst: &CrfInstance<'_>,
    max_iters: usize,
    damping: f64,
    tol: f64,
) -> Result<InferenceResult> {
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::InvalidParameter(format!("damping must lie in [0, 1), got {damping}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    let n = inst.n();
    let field: Vec<f64> = inst.unary().iter().map(|u| u[1] - u[0]).collect();
    // msg[i * n + j]: message from i to j, as log-odds over x_j
    let mut msg = vec![0.0f64; n * n];
    let mut next = vec![0.0f64; n * n];
    let beliefs = |msg: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| field[j] + (0..n).filter(|&i| i != j).map(|i| msg[i * n + j]).sum::<f64>())
            .collect()
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let total = beliefs(&msg);
        let mut max_change = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let cavity = total[i] - msg[j * n + i];
                let to_one = log_sum_exp(inst.theta(i, j, 0, 1), cavity + inst.theta(i, j, 1, 1));
                let to_zero = log_sum_exp(inst.theta(i, j, 0, 0), cavity + inst.theta(i, j, 1, 0));
                let fresh = to_one - to_zero;
                let old = msg[i * n + j];
                let (p_new, p_old) = (sigmoid(fresh), sigmoid(old));
                let p = (1.0 - damping) * p_new + damping * p_old;
                max_change = max_change.max((p - p_old).abs());
                next[i * n + j] = if damping == 0.0 { fresh } else { logit(p) };
            }
        }
        std::mem::swap(&mut msg, &mut next);
        if max_change < tol {
            converged = true;
            break;
        }
    }

    let log_odds = beliefs(&msg);
    Ok(InferenceResult {
        map_assignment: log_odds.iter().map(|&r| r > 0.0).collect(),
        marginals: log_odds.iter().map(|&r| sigmoid(r)).collect(),
        log_odds,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{energy, PairwisePotentials};
    use super::*;

    #[test]
    fn single_node_softmax() {
        // a one-node CRF is a two-node CRF with a decoupled partner
        let p = PairwisePotentials::zeros(2).unwrap();
        let unary = [[0.0, 3f64.ln()], [0.0, 0.0]];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        let r = infer_exact(&inst).unwrap();
        assert!((r.marginals[0] - 0.75).abs() < 1e-15);
        assert!((r.marginals[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_potentials() {
        let p = PairwisePotentials::zeros(4).unwrap();
        let unary = [[0.3, 0.3]; 4];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        let r = infer_exact(&inst).unwrap();
        assert_eq!(r.map_assignment, vec![false; 4]);
        assert!(r.marginals.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn attractive_pair_by_hand() {
        let mut p = PairwisePotentials::zeros(2).unwrap();
        p.set_table(0, 1, [[0.0, 0.0], [-0.1, 1.0]]).unwrap();
        let unary = [[0.0, 0.2], [0.1, 0.0]];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        // exp(-E) for 00, 01, 10, 11
        let w = [
            (0.0f64 + 0.1 + 0.0).exp(),
            (0.0f64 + 0.0 + 0.0).exp(),
            (0.2f64 + 0.1 - 0.1).exp(),
            (0.2f64 + 0.0 + 1.0).exp(),
        ];
        let z: f64 = w.iter().sum();
        let r = infer_exact(&inst).unwrap();
        assert!((r.marginals[0] - (w[2] + w[3]) / z).abs() < 1e-14);
        assert!((r.marginals[1] - (w[1] + w[3]) / z).abs() < 1e-14);
        assert_eq!(r.map_assignment, vec![true, true]);

        let icm = infer_map_icm(&inst, &[false, false]).unwrap();
        assert_eq!(icm.map_assignment, r.map_assignment);
        assert!(infer_exact(&inst).unwrap().marginals.iter().all(|m| (0.0..=1.0).contains(m)));
    }

    #[test]
    fn too_many_nodes() {
        let p = PairwisePotentials::zeros(21).unwrap();
        let unary = [[0.0; 2]; 21];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        assert!(matches!(infer_exact(&inst), Err(Error::TooManyNodes { n: 21, .. })));
    }

    #[test]
    fn icm_local_minimum_unchanged() {
        let mut p = PairwisePotentials::zeros(3).unwrap();
        p.set_table(0, 2, [[0.0, -0.4], [0.2, 0.6]]).unwrap();
        let unary = [[0.0, 1.0], [1.0, 0.0], [0.0, 0.5]];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        let r = infer_map_icm(&inst, &[true, false, true]).unwrap();
        assert_eq!(r.map_assignment, vec![true, false, true]);
        assert_eq!(r.iterations, 1);
        assert!(infer_map_icm(&inst, &[true]).is_err());
        let from_zero = infer_map_icm(&inst, &[false; 3]).unwrap();
        assert!(energy(&inst, &from_zero.map_assignment).unwrap() <= energy(&inst, &[false; 3]).unwrap());
    }

    #[test]
    fn lbp_decoupled_equals_softmax() {
        let p = PairwisePotentials::zeros(6).unwrap();
        let unary: Vec<[f64; 2]> = (0..6).map(|i| [0.1 * i as f64, -0.37 * i as f64 + 0.2]).collect();
        let inst = CrfInstance::new(&unary, &p).unwrap();
        let r = infer_marginals_lbp(&inst, 200, 0.5, 1e-5).unwrap();
        assert!(r.converged);
        for (m, u) in r.marginals.iter().zip(&unary) {
            assert_eq!(*m, sigmoid(u[1] - u[0]));
        }
    }

    #[test]
    fn lbp_rejects_bad_parameters() {
        let p = PairwisePotentials::zeros(2).unwrap();
        let unary = [[0.0; 2]; 2];
        let inst = CrfInstance::new(&unary, &p).unwrap();
        assert!(infer_marginals_lbp(&inst, 10, 1.0, 1e-5).is_err());
        assert!(infer_marginals_lbp(&inst, 0, 0.5, 1e-5).is_err());
    }
}
