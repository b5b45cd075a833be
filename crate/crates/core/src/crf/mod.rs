//! Fully connected pairwise CRF over binary attribute variables.
//!
//! Pairwise log-potentials are smoothed pointwise mutual information tables
//! estimated from training labels. The energy of an assignment is
//! `E(x) = -sum_i u_i(x_i) - s * sum_{i<j} theta_ij(x_i, x_j)` with
//! `P(x) ∝ exp(-E(x))`, where `s` is the pairwise strength scale.

mod inference;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use inference::{infer_exact, infer_map_icm, infer_marginals_lbp, InferenceResult, MAX_EXACT_NODES};

pub const POTENTIALS_FORMAT: &str = "trendscope-crf";
const POTENTIALS_VERSION: u32 = 1;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-6;

/// A 2×2 table indexed `[a][b]` for the states of the lower- and
/// higher-indexed node of a pair.
pub type PairTable = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct PairwisePotentials {
    n: usize,
    alpha: f64,
    /// Tables for pairs `(i, j)`, `i < j`, in row-major order.
    tables: Vec<PairTable>,
    /// Smoothed `P(x_i = 1) = (c_1 + 2α) / (N + 4α)`, the marginal of the
    /// smoothed pair tables.
    node_probs: Vec<f64>,
}

fn pair_offset(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl PairwisePotentials {
    pub fn new(n: usize, alpha: f64, tables: Vec<PairTable>, node_probs: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("a CRF needs at least 2 nodes, got {n}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("smoothing alpha must be positive, got {alpha}")));
        }
        let pairs = n * (n - 1) / 2;
        if tables.len() != pairs {
            return Err(Error::DimensionMismatch {
                expected: pairs,
                found: tables.len(),
            });
        }
        if node_probs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: node_probs.len(),
            });
        }
        if tables.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pairwise potential".into()));
        }
        if node_probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::InvalidParameter("node probabilities must lie in (0, 1)".into()));
        }
        Ok(PairwisePotentials {
            n,
            alpha,
            tables,
            node_probs,
        })
    }

    /// All-zero potentials: the decoupled model.
    pub fn zeros(n: usize) -> Result<Self> {
        PairwisePotentials::new(n, 1.0, vec![[[0.0; 2]; 2]; n * n.saturating_sub(1) / 2], vec![0.5; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `theta_ij(a, b)` for any ordered pair `i != j`.
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        if i < j {
            self.tables[pair_offset(self.n, i, j)][a][b]
        } else {
            self.tables[pair_offset(self.n, j, i)][b][a]
        }
    }

    /// The stored table of an unordered pair, oriented as `[x_i][x_j]`.
    pub fn table(&self, i: usize, j: usize) -> PairTable {
        let mut t = [[0.0; 2]; 2];
        for (a, row) in t.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j, a, b);
            }
        }
        t
    }

    /// Sets a pair's table, oriented as `[x_i][x_j]`.
    pub fn set_table(&mut self, i: usize, j: usize, table: PairTable) -> Result<()> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::InvalidParameter(format!("no pair ({i}, {j}) among {} nodes", self.n)));
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite pairwise potential".into()));
        }
        let (lo, hi, t) = if i < j {
            (i, j, table)
        } else {
            (j, i, [[table[0][0], table[1][0]], [table[0][1], table[1][1]]])
        };
        let off = pair_offset(self.n, lo, hi);
        self.tables[off] = t;
        Ok(())
    }

    pub fn tables(&self) -> &[PairTable] {
        &self.tables
    }

    pub fn node_probs(&self) -> &[f64] {
        &self.node_probs
    }

    /// The smoothed joint distribution of `(x_i, x_j)` implied by the PMI
    /// table and node marginals, oriented as `[x_i][x_j]`.
    pub fn joint_table(&self, i: usize, j: usize) -> PairTable {
        let marg = |k: usize, s: usize| if s == 1 { self.node_probs[k] } else { 1.0 - self.node_probs[k] };
        let mut t = [[0.0; 2]; 2];
        let mut total = 0.0;
        for (a, row) in t.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j, a, b).exp() * marg(i, a) * marg(j, b);
                total += *v;
            }
        }
        for v in t.iter_mut().flatten() {
            *v /= total;
        }
        t
    }

    /// `P(x_i = a | x_j = b)` under [`Self::joint_table`].
    pub fn conditional(&self, i: usize, a: usize, j: usize, b: usize) -> f64 {
        let t = self.joint_table(i, j);
        t[a][b] / (t[0][b] + t[1][b])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PotentialsFile {
            format: POTENTIALS_FORMAT.into(),
            version: POTENTIALS_VERSION,
            n: self.n,
            alpha: self.alpha,
            node_probs: self.node_probs.clone(),
            tables: self.tables.clone(),
        })? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PotentialsFile = serde_json::from_str(text)?;
        if file.format != POTENTIALS_FORMAT || file.version != POTENTIALS_VERSION {
            return Err(Error::Format(format!("{} v{}", file.format, file.version)));
        }
        PairwisePotentials::new(file.n, file.alpha, file.tables, file.node_probs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PairwisePotentials::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialsFile {
    format: String,
    version: u32,
    n: usize,
    alpha: f64,
    node_probs: Vec<f64>,
    tables: Vec<PairTable>,
}

/// Fits smoothed PMI tables from a complete label matrix (images × nodes).
pub fn fit_pairwise(labels: &[Vec<bool>], alpha: f64) -> Result<PairwisePotentials> {
    let partial: Vec<Vec<Option<bool>>> = labels.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    fit_pairwise_partial(&partial, alpha)
}

/// Like [`fit_pairwise`], but each node and pair is counted only over the
/// images where its labels are present.
///
/// `theta_ij(a, b) = ln[(c_ab + α) / ((c_a + 2α)(c_b + 2α) / (N + 4α))]`
pub fn fit_pairwise_partial(labels: &[Vec<Option<bool>>], alpha: f64) -> Result<PairwisePotentials> {
    let n = labels.first().map(Vec::len).ok_or_else(|| Error::Empty("no labeled images".into()))?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("a CRF needs at least 2 nodes, got {n}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("smoothing alpha must be positive, got {alpha}")));
    }
    if let Some(row) = labels.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: row.len(),
        });
    }

    let node_probs = (0..n)
        .map(|i| {
            let (ones, total) = labels.iter().fold((0usize, 0usize), |(o, t), r| match r[i] {
                Some(v) => (o + usize::from(v), t + 1),
                None => (o, t),
            });
            (ones as f64 + 2.0 * alpha) / (total as f64 + 4.0 * alpha)
        })
        .collect();

    let mut tables = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let mut c = [[0usize; 2]; 2];
            for r in labels {
                if let (Some(a), Some(b)) = (r[i], r[j]) {
                    c[usize::from(a)][usize::from(b)] += 1;
                }
            }
            let total = (c[0][0] + c[0][1] + c[1][0] + c[1][1]) as f64;
            let ca = [(c[0][0] + c[0][1]) as f64, (c[1][0] + c[1][1]) as f64];
            let cb = [(c[0][0] + c[1][0]) as f64, (c[0][1] + c[1][1]) as f64];
            let mut t = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let expected = (ca[a] + 2.0 * alpha) * (cb[b] + 2.0 * alpha) / (total + 4.0 * alpha);
                    t[a][b] = ((c[a][b] as f64 + alpha) / expected).ln();
                }
            }
            tables.push(t);
        }
    }
    PairwisePotentials::new(n, alpha, tables, node_probs)
}

/// Unary log-potentials, the shared pairwise tables and the pairwise
/// strength scale.
#[derive(Debug, Clone, Copy)]
pub struct CrfInstance<'a> {
    unary: &'a [[f64; 2]],
    pairwise: &'a PairwisePotentials,
    scale: f64,
}

impl<'a> CrfInstance<'a> {
    pub fn new(unary: &'a [[f64; 2]], pairwise: &'a PairwisePotentials) -> Result<Self> {
        CrfInstance::with_scale(unary, pairwise, 1.0)
    }

    pub fn with_scale(unary: &'a [[f64; 2]], pairwise: &'a PairwisePotentials, scale: f64) -> Result<Self> {
        if unary.len() != pairwise.n() {
            return Err(Error::DimensionMismatch {
                expected: pairwise.n(),
                found: unary.len(),
            });
        }
        if unary.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite unary potential".into()));
        }
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("pairwise scale must be non-negative, got {scale}")));
        }
        Ok(CrfInstance { unary, pairwise, scale })
    }

    pub fn n(&self) -> usize {
        self.unary.len()
    }

    pub fn unary(&self) -> &[[f64; 2]] {
        self.unary
    }

    pub fn pairwise(&self) -> &PairwisePotentials {
        self.pairwise
    }

    /// Scaled `theta_ij(a, b)`.
    pub(crate) fn theta(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.scale * self.pairwise.get(i, j, a, b)
    }

    /// Log-potential of node `i` taking state `s`, given the other states.
    pub(crate) fn local_score(&self, i: usize, s: usize, x: &[bool]) -> f64 {
        let mut v = self.unary[i][s];
        for (j, &xj) in x.iter().enumerate() {
            if j != i {
                v += self.theta(i, j, s, usize::from(xj));
            }
        }
        v
    }
}

pub fn energy(inst: &CrfInstance<'_>, x: &[bool]) -> Result<f64> {
    if x.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            expected: inst.n(),
            found: x.len(),
        });
    }
    Ok(energy_unchecked(inst, x))
}

pub(crate) fn energy_unchecked(inst: &CrfInstance<'_>, x: &[bool]) -> f64 {
    let n = x.len();
    let mut e = 0.0;
    for (u, &xi) in inst.unary.iter().zip(x) {
        e -= u[usize::from(xi)];
    }
    for i in 0..n {
        for j in i + 1..n {
            e -= inst.theta(i, j, usize::from(x[i]), usize::from(x[j]));
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// ICM from the per-node argmax.
    Map,
    /// Loopy BP marginals thresholded at 0.5.
    MarginalThreshold,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(DecodeMode::Map),
            "marginal" | "marginal_threshold" => Ok(DecodeMode::MarginalThreshold),
            other => Err(Error::InvalidParameter(format!(
                "unknown decode mode `{other}` (expected map or marginal_threshold)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub scale: f64,
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: DecodeMode::Map,
            scale: 1.0,
            damping: 0.5,
            max_iters: 200,
            tol: 1e-5,
        }
    }
}

/// `(ln(1 - p), ln p)` after clamping `p`.
pub fn unary_from_prob(p: f64) -> [f64; 2] {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    [(1.0 - p).ln(), p.ln()]
}

/// Independent per-attribute decisions: `p > 0.5`.
pub fn threshold(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p > 0.5).collect()
}

/// Joint attribute decisions from calibrated per-attribute probabilities.
pub fn decode(probs: &[f64], pots: &PairwisePotentials, config: &DecodeConfig) -> Result<Vec<bool>> {
    if probs.len() != pots.n() {
        return Err(Error::DimensionMismatch {
            expected: pots.n(),
            found: probs.len(),
        });
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidParameter("probability is NaN".into()));
    }
    let unary: Vec<[f64; 2]> = probs.iter().map(|&p| unary_from_prob(p)).collect();
    let inst = CrfInstance::with_scale(&unary, pots, config.scale)?;
    Ok(match config.mode {
        DecodeMode::Map => {
            let init: Vec<bool> = unary.iter().map(|u| u[1] > u[0]).collect();
            infer_map_icm(&inst, &init)?.map_assignment
        }
        DecodeMode::MarginalThreshold => {
            let res = infer_marginals_lbp(&inst, config.max_iters, config.damping, config.tol)?;
            res.log_odds.iter().map(|&r| r > 0.0).collect()
        }
    })
}
