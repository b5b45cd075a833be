//! Sequential minimal optimization for the C-SVM dual
//!
//!   min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C_i,  y'a = 0,  Q_ij = y_i y_j K_ij
//!
//! using maximal-violating-pair working set selection.

use crate::error::{Error, Result};

use super::kernel::Gram;

const TAU: f64 = 1e-12;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoConfig {
    pub c: f64,
    /// Stop when the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Scale the bound of the larger class down by the class-size ratio, so
    /// the minority class keeps bound `c`.
    pub balance_classes: bool,
}

impl Default for SmoConfig {
    fn default() -> Self {
        SmoConfig {
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
            balance_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoSolution {
    /// `alpha_i * y_i`.
    pub fn dual_coefs(&self, labels: &[f64]) -> Vec<f64> {
        self.alpha.iter().zip(labels).map(|(a, y)| a * y).collect()
    }
}

fn validate_labels(labels: &[f64]) -> Result<(usize, usize)> {
    let mut pos = 0;
    let mut neg = 0;
    for &y in labels {
        if y == 1.0 {
            pos += 1;
        } else if y == -1.0 {
            neg += 1;
        } else {
            return Err(Error::InvalidParameter(format!("label {y} is not +1/-1")));
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Cheap necessary conditions for positive semi-definiteness: symmetry,
/// non-negative diagonal and non-negative 2x2 principal minors.
fn check_psd(gram: &Gram) -> Result<()> {
    let n = gram.n();
    for i in 0..n {
        let kii = gram.get(i, i);
        if !kii.is_finite() || kii < -PSD_TOL {
            return Err(Error::NotPsd(format!("diagonal entry {i} is {kii}")));
        }
        for j in (i + 1)..n {
            let kij = gram.get(i, j);
            let scale = 1.0 + kij.abs();
            if !kij.is_finite() || (kij - gram.get(j, i)).abs() > PSD_TOL * scale {
                return Err(Error::NotPsd(format!("entry ({i}, {j}) is not symmetric")));
            }
            if kij * kij > kii * gram.get(j, j) + PSD_TOL * scale {
                return Err(Error::NotPsd(format!("2x2 minor ({i}, {j}) is negative")));
            }
        }
    }
    Ok(())
}

/// Solves the dual. Labels must be +1/-1 with both classes present.
pub fn train_smo(gram: &Gram, labels: &[f64], config: &SmoConfig) -> Result<SmoSolution> {
    let n = gram.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if !(config.c > 0.0) || !(config.tol > 0.0) {
        return Err(Error::InvalidParameter("C and tol must be positive".into()));
    }
    let (pos, neg) = validate_labels(labels)?;
    check_psd(gram)?;

    let (c_pos, c_neg) = if config.balance_classes {
        let minority = pos.min(neg) as f64;
        (config.c * minority / pos as f64, config.c * minority / neg as f64)
    } else {
        (config.c, config.c)
    };
    let ub: Vec<f64> = labels
        .iter()
        .map(|&y| if y > 0.0 { c_pos } else { c_neg })
        .collect();
    let y = labels;
    let q = |i: usize, j: usize| y[i] * y[j] * gram.get(i, j);

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        // i maximizes -y_t G_t over I_up, j minimizes it over I_low
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let mut i_sel = usize::MAX;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < ub[t]) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] < 0.0 && alpha[t] < ub[t]) || (y[t] > 0.0 && alpha[t] > 0.0);
            if in_up && v > g_max {
                g_max = v;
                i_sel = t;
            }
            if in_low && v < g_min {
                g_min = v;
                j_sel = t;
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || g_max - g_min < config.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let (ci, cj) = (ub[i], ub[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        let (row_i, row_j) = (gram.row(i), gram.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * row_i[t] * dai + y[j] * row_j[t] * daj);
        }
    }

    let bias = -rho(&alpha, &ub, y, &grad);
    Ok(SmoSolution {
        alpha,
        upper_bounds: ub,
        bias,
        iterations,
        converged,
    })
}

fn rho(alpha: &[f64], ub: &[f64], y: &[f64], grad: &[f64]) -> f64 {
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= ub[t] {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        (upper + lower) / 2.0
    }
}

/// Dual objective `sum(a) - 1/2 a'Qa` (the quantity SMO maximizes).
pub fn dual_objective(gram: &Gram, labels: &[f64], alpha: &[f64]) -> f64 {
    let n = gram.n();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = gram.row(i);
        for j in 0..n {
            quad += alpha[i] * alpha[j] * labels[i] * labels[j] * row[j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Decision values `sum_j a_j y_j K_ij + b` on the training rows.
pub fn training_decisions(gram: &Gram, labels: &[f64], solution: &SmoSolution) -> Vec<f64> {
    (0..gram.n())
        .map(|i| {
            let row = gram.row(i);
            solution
                .alpha
                .iter()
                .zip(labels)
                .zip(row)
                .map(|((a, y), k)| a * y * k)
                .sum::<f64>()
                + solution.bias
        })
        .collect()
}
