//! Logistic calibration of SVM margins.
//!
//! Probabilities follow `P(y = 1 | m) = 1 / (1 + exp(A m + B))`, so a
//! well-aligned classifier has `A < 0` and the probability grows with the
//! margin. Fitting is Newton's method with backtracking on the negative
//! log-likelihood against smoothed targets `(N+ + 1) / (N+ + 2)` and
//! `1 / (N- + 2)`.

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;
const EPS: f64 = 1e-5;

/// `1 / (1 + exp(a m + b))`, evaluated without overflow.
pub fn platt_probability(margin: f64, a: f64, b: f64) -> f64 {
    let f = margin * a + b;
    if f >= 0.0 {
        let e = (-f).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f.exp())
    }
}

/// Smoothed targets used for fitting.
pub fn platt_targets(labels: &[f64]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    labels.iter().map(|&y| if y > 0.0 { hi } else { lo }).collect()
}

/// Negative log-likelihood of `(a, b)` against the given targets.
pub fn platt_nll(margins: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    margins
        .iter()
        .zip(targets)
        .map(|(&m, &t)| {
            let f = m * a + b;
            if f >= 0.0 {
                t * f + (1.0 + (-f).exp()).ln()
            } else {
                (t - 1.0) * f + (1.0 + f.exp()).ln()
            }
        })
        .sum()
}

/// The prior-only calibration `(0, ln((N- + 1) / (N+ + 1)))`, also Newton's
/// starting point.
pub fn platt_prior(labels: &[f64]) -> (f64, f64) {
    let pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    (0.0, ((neg + 1.0) / (pos + 1.0)).ln())
}

pub fn platt_fit(margins: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    if margins.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: margins.len(),
            found: labels.len(),
        });
    }
    if !labels.iter().any(|&y| y > 0.0) || !labels.iter().any(|&y| y <= 0.0) {
        return Err(Error::SingleClass);
    }
    let first = margins[0];
    if margins.iter().all(|&m| m == first) {
        return Err(Error::DegenerateMargins);
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidParameter("non-finite margin".into()));
    }

    let t = platt_targets(labels);
    let (mut a, mut b) = platt_prior(labels);
    let mut fval = platt_nll(margins, &t, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (SIGMA, SIGMA, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&m, &ti) in margins.iter().zip(&t) {
            let f = m * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = ti - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }

        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_nll(margins, &t, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    Ok((a, b))
}
