use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::sift::{Descriptor, DESCRIPTOR_DIM};

pub const CODEBOOK_FORMAT: &str = "trendscope-codebook";
const CODEBOOK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once the relative change in inertia falls below this.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

/// Visual-word vocabulary for the gradient channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<Descriptor>,
    trained_on: String,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookFile {
    format: String,
    version: u32,
    k: usize,
    dim: usize,
    fingerprint: String,
    trained_on: String,
    centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(centroids: Vec<Descriptor>, trained_on: String) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "codebook needs k >= 2, got {}",
                centroids.len()
            )));
        }
        for c in &centroids {
            if c.len() != DESCRIPTOR_DIM {
                return Err(Error::DimensionMismatch {
                    expected: DESCRIPTOR_DIM,
                    found: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite centroid".into()));
            }
        }
        let fingerprint = fingerprint(&centroids);
        Ok(Codebook {
            centroids,
            trained_on,
            fingerprint,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Descriptor] {
        &self.centroids
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, d: &[f64]) -> usize {
        nearest(&self.centroids, d).0
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CodebookFile {
            format: CODEBOOK_FORMAT.into(),
            version: CODEBOOK_VERSION,
            k: self.k(),
            dim: DESCRIPTOR_DIM,
            fingerprint: self.fingerprint.clone(),
            trained_on: self.trained_on.clone(),
            centroids: self.centroids.clone(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text)?;
        if file.format != CODEBOOK_FORMAT || file.version != CODEBOOK_VERSION {
            return Err(Error::Format(format!("{} v{}", file.format, file.version)));
        }
        if file.k != file.centroids.len() || file.dim != DESCRIPTOR_DIM {
            return Err(Error::Format("codebook header does not match its centroids".into()));
        }
        let cb = Codebook::new(file.centroids, file.trained_on)?;
        if cb.fingerprint != file.fingerprint {
            return Err(Error::Format("codebook fingerprint does not match its contents".into()));
        }
        Ok(cb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebook::from_json(&text)
    }
}

fn fingerprint(centroids: &[Descriptor]) -> String {
    let mut h = Sha256::new();
    h.update((centroids.len() as u64).to_le_bytes());
    for c in centroids {
        for v in c {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Descriptor], d: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let dist = sq_dist(c, d);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

fn count_distinct(points: &[Descriptor]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Lloyd's k-means with k-means++ seeding. Deterministic for a given seed.
pub fn kmeans(points: &[Descriptor], k: usize, seed: u64, options: KMeansOptions) -> Result<Vec<Descriptor>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(Error::TooFewDescriptors {
            needed: k,
            found: distinct,
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Descriptor> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        // fall back to the last positive-weight point if rounding runs past the end
        let mut chosen = d2.iter().rposition(|&w| w > 0.0).expect("distinct points remain");
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                chosen = i;
                break;
            }
            target -= w;
        }
        let c = points[chosen].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut prev_inertia = f64::INFINITY;
    for _ in 0..options.max_iter {
        let assignments: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(&centroids, p)).collect();
        let inertia: f64 = assignments.iter().map(|a| a.1).sum();

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // empty clusters keep their previous centroid
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }

        if inertia == 0.0 || (prev_inertia - inertia).abs() <= options.tol * prev_inertia {
            break;
        }
        prev_inertia = inertia;
    }
    Ok(centroids)
}

/// Clusters dense descriptors into a `k`-word codebook.
pub fn train_codebook(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
    options: KMeansOptions,
    trained_on: String,
) -> Result<Codebook> {
    if descriptors.is_empty() {
        return Err(Error::Empty("no descriptors to train a codebook on".into()));
    }
    Codebook::new(kmeans(descriptors, k, seed, options)?, trained_on)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lift(p: &[f64]) -> Descriptor {
        let mut d = vec![0.0; DESCRIPTOR_DIM];
        d[..p.len()].copy_from_slice(p);
        d
    }

    #[test]
    fn two_separated_clouds() {
        let a = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.05, 0.02]];
        let b = [[5.0, 5.0], [5.2, 5.0], [5.0, 5.3], [5.1, 5.1]];
        let points: Vec<Descriptor> = a.iter().chain(&b).map(|p| lift(p)).collect();
        let mean = |cloud: &[[f64; 2]]| {
            let n = cloud.len() as f64;
            [
                cloud.iter().map(|p| p[0]).sum::<f64>() / n,
                cloud.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let (ma, mb) = (mean(&a), mean(&b));
        for seed in 0..5 {
            let c = kmeans(&points, 2, seed, KMeansOptions::default()).unwrap();
            let (ca, cb) = if c[0][0] < c[1][0] { (&c[0], &c[1]) } else { (&c[1], &c[0]) };
            for i in 0..2 {
                assert!((ca[i] - ma[i]).abs() < 1e-6);
                assert!((cb[i] - mb[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn k_equal_to_distinct_count_has_zero_error() {
        let base: Vec<Descriptor> = (0..6).map(|i| lift(&[i as f64, (i * i) as f64])).collect();
        let mut points = base.clone();
        points.extend(base.iter().take(3).cloned());
        let cb = train_codebook(&points, 6, 11, KMeansOptions::default(), "t".into()).unwrap();
        for p in &points {
            let c = &cb.centroids()[cb.nearest(p)];
            assert_eq!(sq_dist(c, p), 0.0);
        }
    }

    #[test]
    fn too_few_distinct() {
        let points = vec![lift(&[1.0]), lift(&[1.0]), lift(&[2.0])];
        assert!(matches!(
            kmeans(&points, 3, 0, KMeansOptions::default()),
            Err(Error::TooFewDescriptors { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let points: Vec<Descriptor> = (0..200)
            .map(|i| {
                let t = i as f64;
                lift(&[(t * 0.37).sin(), (t * 0.11).cos(), (t * 0.05).sin() * 2.0])
            })
            .collect();
        let a = train_codebook(&points, 8, 42, KMeansOptions::default(), "c".into()).unwrap();
        let b = train_codebook(&points, 8, 42, KMeansOptions::default(), "c".into()).unwrap();
        assert_eq!(a, b);
        let back = Codebook::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.fingerprint(), a.fingerprint());
    }

    #[test]
    fn nearest_ties_go_low() {
        let cb = Codebook::new(vec![lift(&[1.0]), lift(&[-1.0]), lift(&[1.0])], "t".into()).unwrap();
        assert_eq!(cb.nearest(&lift(&[0.0])), 0);
        assert_eq!(cb.nearest(&lift(&[0.9])), 0);
    }
}
