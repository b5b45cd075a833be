use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BodyFeatures, BLOCK_COUNT};

/// Bandwidth and per-block weights of the combined chi-square kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec")]
pub struct KernelSpec {
    gamma: f64,
    block_weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawKernelSpec {
    gamma: f64,
    block_weights: Vec<f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.gamma, raw.block_weights)
    }
}

impl KernelSpec {
    pub fn new(gamma: f64, block_weights: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        if block_weights.len() != BLOCK_COUNT {
            return Err(Error::DimensionMismatch {
                expected: BLOCK_COUNT,
                found: block_weights.len(),
            });
        }
        if block_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("block weights must be non-negative".into()));
        }
        let total: f64 = block_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "block weights must sum to 1, got {total}"
            )));
        }
        Ok(KernelSpec {
            gamma,
            block_weights,
        })
    }

    pub fn uniform(gamma: f64) -> Result<Self> {
        KernelSpec::new(gamma, vec![1.0 / BLOCK_COUNT as f64; BLOCK_COUNT])
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn block_weights(&self) -> &[f64] {
        &self.block_weights
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    for v in [x, y] {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    Ok(())
}

/// Chi-square distance; bins where both entries are zero contribute nothing.
pub(crate) fn chi2_distance_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let s = a + b;
            if s > 0.0 {
                (a - b) * (a - b) / s
            } else {
                0.0
            }
        })
        .sum()
}

pub fn chi2_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(chi2_distance_unchecked(x, y))
}

/// `exp(-gamma * chi2(x, y))`.
pub fn chi2_block_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    Ok((-gamma * chi2_distance(x, y)?).exp())
}

fn check_complete(f: &BodyFeatures) -> Result<()> {
    if f.blocks.len() != BLOCK_COUNT {
        return Err(Error::DimensionMismatch {
            expected: BLOCK_COUNT,
            found: f.blocks.len(),
        });
    }
    Ok(())
}

/// Convex combination of per-block chi-square kernels.
pub fn combined_kernel(a: &BodyFeatures, b: &BodyFeatures, spec: &KernelSpec) -> Result<f64> {
    check_complete(a)?;
    check_complete(b)?;
    for (x, y) in a.histograms().zip(b.histograms()) {
        check_pair(x, y)?;
    }
    Ok(weighted_kernel(&block_distances(a, b), spec))
}

/// Per-block chi-square distances between two complete feature sets.
pub(crate) fn block_distances(a: &BodyFeatures, b: &BodyFeatures) -> Vec<f64> {
    a.histograms()
        .zip(b.histograms())
        .map(|(x, y)| chi2_distance_unchecked(x, y))
        .collect()
}

/// Combined kernel value from per-block distances.
pub(crate) fn weighted_kernel(distances: &[f64], spec: &KernelSpec) -> f64 {
    let mut k = 0.0;
    for (&d, &w) in distances.iter().zip(&spec.block_weights) {
        if w == 0.0 {
            continue;
        }
        k += w * (-spec.gamma * d).exp();
    }
    k
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Gram { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Gram { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Principal submatrix on `idx`.
    pub fn subset(&self, idx: &[usize]) -> Gram {
        let m = idx.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in idx {
            let row = self.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Gram { n: m, data }
    }
}

/// `G[i][j] = combined_kernel(features[i], features[j])`.
pub fn gram_matrix(features: &[&BodyFeatures], spec: &KernelSpec) -> Result<Gram> {
    if features.is_empty() {
        return Err(Error::Empty("gram matrix of no feature sets".into()));
    }
    for f in features {
        check_complete(f)?;
    }
    let n = features.len();
    let mut err = None;
    let g = Gram::from_fn(n, |i, j| {
        combined_kernel(features[i], features[j], spec).unwrap_or_else(|e| {
            err.get_or_insert(e);
            f64::NAN
        })
    });
    match err {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

/// Per-block chi-square kernel matrices over one training set, so kernels for
/// any weight vector are a weighted sum and block-only SVMs need no
/// recomputation.
#[derive(Debug, Clone)]
pub struct BlockKernelCache {
    n: usize,
    gamma: f64,
    blocks: Vec<Gram>,
}

impl BlockKernelCache {
    pub fn new(features: &[&BodyFeatures], gamma: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("kernel cache of no feature sets".into()));
        }
        for f in features {
            check_complete(f)?;
        }
        // entries are validated non-negative on BodyFeatures construction
        let blocks = (0..BLOCK_COUNT)
            .into_par_iter()
            .map(|b| {
                Gram::from_fn(features.len(), |i, j| {
                    if i == j {
                        1.0
                    } else {
                        let d = chi2_distance_unchecked(
                            &features[i].blocks[b].histogram,
                            &features[j].blocks[b].histogram,
                        );
                        (-gamma * d).exp()
                    }
                })
            })
            .collect();
        Ok(BlockKernelCache {
            n: features.len(),
            gamma,
            blocks,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn block(&self, b: usize) -> &Gram {
        &self.blocks[b]
    }

    /// Restriction to a subset of the training examples.
    pub fn subset(&self, idx: &[usize]) -> BlockKernelCache {
        BlockKernelCache {
            n: idx.len(),
            gamma: self.gamma,
            blocks: self.blocks.iter().map(|g| g.subset(idx)).collect(),
        }
    }

    /// Gram matrix of the combined kernel for the given weights.
    pub fn combine(&self, weights: &[f64]) -> Gram {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for (g, &w) in self.blocks.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for (d, v) in data.iter_mut().zip(&g.data) {
                *d += w * v;
            }
        }
        Gram { n, data }
    }
}

/// `1 / mean chi-square distance` over `pairs` random distinct pairs and all
/// blocks. Falls back to 1.0 when every sampled distance is zero.
pub fn estimate_gamma(features: &[&BodyFeatures], pairs: usize, seed: u64) -> f64 {
    let n = features.len();
    if n < 2 || pairs == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        for (x, y) in features[i].histograms().zip(features[j].histograms()) {
            total += chi2_distance_unchecked(x, y);
            count += 1;
        }
    }
    let mean = total / count as f64;
    if mean > 0.0 {
        1.0 / mean
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{block_key, FeatureBlock};
    use proptest::prelude::*;

    fn features_from(hists: Vec<Vec<f64>>) -> BodyFeatures {
        let blocks = hists
            .into_iter()
            .enumerate()
            .map(|(i, histogram)| {
                let (part, channel, aggregation) = block_key(i);
                FeatureBlock {
                    part,
                    channel,
                    aggregation,
                    histogram,
                    empty: false,
                }
            })
            .collect();
        BodyFeatures::new("fp".into(), blocks).unwrap()
    }

    #[test]
    fn hand_evaluated_kernel() {
        // distance = 1 + 1 = 2, k = exp(-0.5 * 2) = e^-1
        let k = chi2_block_kernel(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(
            chi2_block_kernel(&[1.0], &[0.5, 0.5], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            chi2_block_kernel(&[1.0, -0.1], &[0.5, 0.5], 1.0),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert!(KernelSpec::new(0.0, vec![1.0 / 72.0; 72]).is_err());
        assert!(KernelSpec::new(1.0, vec![1.0 / 71.0; 71]).is_err());
        assert!(KernelSpec::new(1.0, vec![0.5; 72]).is_err());
    }

    #[test]
    fn uniform_weights_single_differing_block() {
        // blocks equal except block 5: (1,0) vs (0,1); gamma 0.5
        let mut a = vec![vec![0.5, 0.5]; 72];
        let mut b = a.clone();
        a[5] = vec![1.0, 0.0];
        b[5] = vec![0.0, 1.0];
        let spec = KernelSpec::uniform(0.5).unwrap();
        let k = combined_kernel(&features_from(a), &features_from(b), &spec).unwrap();
        let expected = 71.0 / 72.0 + (-1.0f64).exp() / 72.0;
        assert!((k - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_masks_block() {
        let mut weights = vec![1.0 / 71.0; 72];
        weights[10] = 0.0;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let spec = KernelSpec::new(1.3, weights).unwrap();
        let base = vec![vec![0.25, 0.75]; 72];
        let x = features_from(base.clone());
        let k0 = combined_kernel(&x, &features_from(base.clone()), &spec).unwrap();
        for v in [0.0, 0.3, 0.9] {
            let mut pert = base.clone();
            pert[10] = vec![v, 1.0 - v];
            let k = combined_kernel(&x, &features_from(pert), &spec).unwrap();
            assert_eq!(k, k0);
        }
    }

    #[test]
    fn gram_definition_and_cache_agree() {
        let fs: Vec<BodyFeatures> = (0..3)
            .map(|s| {
                features_from(
                    (0..72)
                        .map(|b| {
                            let a = ((s * 31 + b * 7) % 11) as f64 / 10.0;
                            vec![a, 1.0 - a, 0.0]
                        })
                        .collect(),
                )
            })
            .collect();
        let refs: Vec<&BodyFeatures> = fs.iter().collect();
        let spec = KernelSpec::uniform(0.8).unwrap();
        let g = gram_matrix(&refs, &spec).unwrap();
        let cached = BlockKernelCache::new(&refs, 0.8).unwrap().combine(spec.block_weights());
        for i in 0..3 {
            assert!((g.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..3 {
                let direct = combined_kernel(refs[i], refs[j], &spec).unwrap();
                assert!((g.get(i, j) - direct).abs() < 1e-12);
                assert!((cached.get(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    fn histogram(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, dim).prop_map(|mut v| {
            let s: f64 = v.iter().sum();
            if s > 0.0 {
                v.iter_mut().for_each(|x| *x /= s);
            }
            v
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_unit_self_similarity(x in histogram(8), y in histogram(8), gamma in 0.01f64..10.0) {
            prop_assert_eq!(chi2_block_kernel(&x, &x, gamma).unwrap(), 1.0);
            let k = chi2_block_kernel(&x, &y, gamma).unwrap();
            prop_assert_eq!(k, chi2_block_kernel(&y, &x, gamma).unwrap());
            prop_assert!(k > 0.0 && k <= 1.0);
        }
    }
}
