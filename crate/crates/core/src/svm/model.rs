use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::BodyFeatures;
use crate::schema::AttributeSchema;

use super::kernel::{block_distances, estimate_gamma, weighted_kernel, BlockKernelCache, KernelSpec};
use super::platt::{platt_fit, platt_prior, platt_probability};
use super::smo::{train_smo, training_decisions, SmoConfig};
use super::weights::{block_weights_cached, check_fold_support, cross_validated_margins};

pub const MODEL_FORMAT: &str = "trendscope-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub c: f64,
    pub tol: f64,
    pub folds: usize,
    pub max_iter: usize,
    pub balance_classes: bool,
    /// Random pairs sampled to set the kernel bandwidth.
    pub gamma_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            tol: 1e-3,
            folds: 3,
            max_iter: 1_000_000,
            balance_classes: true,
            gamma_pairs: 200,
        }
    }
}

impl TrainConfig {
    pub fn smo(&self) -> SmoConfig {
        SmoConfig {
            c: self.c,
            tol: self.tol,
            max_iter: self.max_iter,
            balance_classes: self.balance_classes,
        }
    }
}

/// One binary attribute detector: a kernel expansion over support vectors
/// plus a logistic calibration of its margin.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeClassifier {
    pub attribute_id: String,
    pub codebook_fingerprint: String,
    pub kernel: KernelSpec,
    pub support_features: Vec<Arc<BodyFeatures>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    pub c_param: f64,
}

impl AttributeClassifier {
    fn check_fingerprint(&self, x: &BodyFeatures) -> Result<()> {
        if x.codebook_fingerprint != self.codebook_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.codebook_fingerprint.clone(),
                found: x.codebook_fingerprint.clone(),
            });
        }
        Ok(())
    }

    fn margin_from_distances(&self, distances: &[&[f64]]) -> f64 {
        self.dual_coefs
            .iter()
            .zip(distances)
            .map(|(c, d)| c * weighted_kernel(d, &self.kernel))
            .sum::<f64>()
            + self.bias
    }
}

/// `sum_i coef_i * K(s_i, x) + bias`.
pub fn predict_margin(clf: &AttributeClassifier, x: &BodyFeatures) -> Result<f64> {
    clf.check_fingerprint(x)?;
    let mut m = 0.0;
    for (coef, sv) in clf.dual_coefs.iter().zip(&clf.support_features) {
        m += coef * super::kernel::combined_kernel(sv, x, &clf.kernel)?;
    }
    Ok(m + clf.bias)
}

/// Calibrated probability that the attribute is present.
pub fn predict_prob(clf: &AttributeClassifier, x: &BodyFeatures) -> Result<f64> {
    Ok(platt_probability(predict_margin(clf, x)?, clf.platt_a, clf.platt_b))
}

/// Trains one attribute from a kernel cache over its labeled examples.
/// Labels are +1/-1 in cache order.
pub fn train_attribute(
    attribute_id: &str,
    features: &[Arc<BodyFeatures>],
    cache: &BlockKernelCache,
    labels: &[f64],
    config: &TrainConfig,
) -> Result<AttributeClassifier> {
    if features.len() != labels.len() || cache.n() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: cache.n(),
            found: labels.len(),
        });
    }
    let fingerprint = features
        .first()
        .map(|f| f.codebook_fingerprint.clone())
        .ok_or_else(|| Error::Empty(format!("no labeled examples for `{attribute_id}`")))?;
    let gamma = cache.gamma();
    let pos = labels.iter().filter(|&&y| y > 0.0).count();

    if pos == 0 || pos == labels.len() {
        // constant detector: the margin is the bias alone and the calibration
        // is the smoothed class prior
        let (platt_a, platt_b) = platt_prior(labels);
        return Ok(AttributeClassifier {
            attribute_id: attribute_id.into(),
            codebook_fingerprint: fingerprint,
            kernel: KernelSpec::uniform(gamma)?,
            support_features: Vec::new(),
            dual_coefs: Vec::new(),
            bias: if pos == 0 { -1.0 } else { 1.0 },
            platt_a,
            platt_b,
            c_param: config.c,
        });
    }

    let smo = config.smo();
    let cv_ok = check_fold_support(labels, config.folds).is_ok();
    let weights = if cv_ok {
        block_weights_cached(cache, labels, config.folds, &smo)?
    } else {
        vec![1.0 / crate::features::BLOCK_COUNT as f64; crate::features::BLOCK_COUNT]
    };
    let kernel = KernelSpec::new(gamma, weights)?;
    let gram = cache.combine(kernel.block_weights());
    let solution = train_smo(&gram, labels, &smo)?;

    let calibration_margins = if cv_ok {
        cross_validated_margins(&gram, labels, config.folds, &smo)?
    } else {
        training_decisions(&gram, labels, &solution)
    };
    let (platt_a, platt_b) = match platt_fit(&calibration_margins, labels) {
        Ok(ab) => ab,
        Err(Error::DegenerateMargins) => platt_prior(labels),
        Err(e) => return Err(e),
    };

    let mut support_features = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, (&a, &y)) in solution.alpha.iter().zip(labels).enumerate() {
        if a > 0.0 {
            support_features.push(Arc::clone(&features[i]));
            dual_coefs.push(a * y);
        }
    }

    Ok(AttributeClassifier {
        attribute_id: attribute_id.into(),
        codebook_fingerprint: fingerprint,
        kernel,
        support_features,
        dual_coefs,
        bias: solution.bias,
        platt_a,
        platt_b,
        c_param: config.c,
    })
}

/// One classifier per schema attribute, sharing one support-vector pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub schema_version: String,
    pub codebook_fingerprint: String,
    pub classifiers: Vec<AttributeClassifier>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierRecord {
    attribute_id: String,
    kernel: KernelSpec,
    support: Vec<usize>,
    dual_coefs: Vec<f64>,
    bias: f64,
    platt_a: f64,
    platt_b: f64,
    c_param: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    format: String,
    version: u32,
    schema_version: String,
    codebook: String,
    support_pool: Vec<BodyFeatures>,
    classifiers: Vec<ClassifierRecord>,
}

impl ModelBundle {
    pub fn new(
        schema: &AttributeSchema,
        codebook_fingerprint: String,
        classifiers: Vec<AttributeClassifier>,
    ) -> Result<Self> {
        if classifiers.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} classifiers for {} attributes",
                classifiers.len(),
                schema.len()
            )));
        }
        for (clf, attr) in classifiers.iter().zip(schema.attributes()) {
            if clf.attribute_id != attr.id {
                return Err(Error::SchemaMismatch(format!(
                    "classifier `{}` where `{}` was expected",
                    clf.attribute_id, attr.id
                )));
            }
            if clf.codebook_fingerprint != codebook_fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: codebook_fingerprint,
                    found: clf.codebook_fingerprint.clone(),
                });
            }
        }
        Ok(ModelBundle {
            schema_version: schema.version().to_string(),
            codebook_fingerprint,
            classifiers,
        })
    }

    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        let ids_match = self.classifiers.len() == schema.len()
            && self
                .classifiers
                .iter()
                .zip(schema.ids())
                .all(|(c, id)| c.attribute_id == id);
        if self.schema_version != schema.version() || !ids_match {
            return Err(Error::SchemaMismatch(format!(
                "model built for schema `{}`, active schema is `{}`",
                self.schema_version,
                schema.version()
            )));
        }
        Ok(())
    }

    /// Distinct support vectors in first-use order, and each classifier's
    /// indices into that list.
    fn pool(&self) -> (Vec<&Arc<BodyFeatures>>, Vec<Vec<usize>>) {
        let mut pool = Vec::new();
        let mut index: HashMap<*const BodyFeatures, usize> = HashMap::new();
        let refs = self
            .classifiers
            .iter()
            .map(|c| {
                c.support_features
                    .iter()
                    .map(|sv| {
                        *index.entry(Arc::as_ptr(sv)).or_insert_with(|| {
                            pool.push(sv);
                            pool.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        (pool, refs)
    }

    /// Margins of every classifier; per-block distances to each pooled support
    /// vector are computed once and shared across attributes.
    pub fn margins(&self, x: &BodyFeatures) -> Result<Vec<f64>> {
        if x.codebook_fingerprint != self.codebook_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.codebook_fingerprint.clone(),
                found: x.codebook_fingerprint.clone(),
            });
        }
        let (pool, refs) = self.pool();
        let distances: Vec<Vec<f64>> = pool.iter().map(|sv| block_distances(sv, x)).collect();
        Ok(self
            .classifiers
            .iter()
            .zip(&refs)
            .map(|(clf, idx)| {
                let d: Vec<&[f64]> = idx.iter().map(|&i| distances[i].as_slice()).collect();
                clf.margin_from_distances(&d)
            })
            .collect())
    }

    /// Calibrated probabilities of every attribute.
    pub fn probabilities(&self, x: &BodyFeatures) -> Result<Vec<f64>> {
        Ok(self
            .margins(x)?
            .into_iter()
            .zip(&self.classifiers)
            .map(|(m, c)| platt_probability(m, c.platt_a, c.platt_b))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let (pool, refs) = self.pool();
        let file = BundleFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            schema_version: self.schema_version.clone(),
            codebook: self.codebook_fingerprint.clone(),
            support_pool: pool.into_iter().map(|f| (**f).clone()).collect(),
            classifiers: self
                .classifiers
                .iter()
                .zip(refs)
                .map(|(c, support)| ClassifierRecord {
                    attribute_id: c.attribute_id.clone(),
                    kernel: c.kernel.clone(),
                    support,
                    dual_coefs: c.dual_coefs.clone(),
                    bias: c.bias,
                    platt_a: c.platt_a,
                    platt_b: c.platt_b,
                    c_param: c.c_param,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BundleFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format(format!("{} v{}", file.format, file.version)));
        }
        let mut pool = Vec::with_capacity(file.support_pool.len());
        for f in file.support_pool {
            if f.codebook_fingerprint != file.codebook {
                return Err(Error::Format("support vector from another codebook".into()));
            }
            pool.push(Arc::new(BodyFeatures::new(f.codebook_fingerprint, f.blocks)?));
        }
        let mut classifiers = Vec::with_capacity(file.classifiers.len());
        for rec in file.classifiers {
            if rec.support.len() != rec.dual_coefs.len() {
                return Err(Error::Format(format!(
                    "classifier `{}` has {} support vectors but {} coefficients",
                    rec.attribute_id,
                    rec.support.len(),
                    rec.dual_coefs.len()
                )));
            }
            let support_features = rec
                .support
                .iter()
                .map(|&i| {
                    pool.get(i)
                        .cloned()
                        .ok_or_else(|| Error::Format(format!("support index {i} out of range")))
                })
                .collect::<Result<Vec<_>>>()?;
            classifiers.push(AttributeClassifier {
                attribute_id: rec.attribute_id,
                codebook_fingerprint: file.codebook.clone(),
                kernel: rec.kernel,
                support_features,
                dual_coefs: rec.dual_coefs,
                bias: rec.bias,
                platt_a: rec.platt_a,
                platt_b: rec.platt_b,
                c_param: rec.c_param,
            });
        }
        Ok(ModelBundle {
            schema_version: file.schema_version,
            codebook_fingerprint: file.codebook,
            classifiers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelBundle::from_json(&text)
    }
}

/// Trains one classifier per schema attribute. `labels[i][a]` is the label of
/// example `i` for attribute `a`; unlabeled entries are skipped for that
/// attribute. The kernel bandwidth is estimated once from all examples.
pub fn train_bundle(
    schema: &AttributeSchema,
    features: &[Arc<BodyFeatures>],
    labels: &[Vec<Option<bool>>],
    config: &TrainConfig,
    seed: u64,
) -> Result<ModelBundle> {
    if features.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|l| l.len() != schema.len()) {
        return Err(Error::DimensionMismatch {
            expected: schema.len(),
            found: bad.len(),
        });
    }
    let fingerprint = features[0].codebook_fingerprint.clone();
    if let Some(f) = features.iter().find(|f| f.codebook_fingerprint != fingerprint) {
        return Err(Error::FingerprintMismatch {
            expected: fingerprint,
            found: f.codebook_fingerprint.clone(),
        });
    }

    let refs: Vec<&BodyFeatures> = features.iter().map(|f| f.as_ref()).collect();
    let gamma = estimate_gamma(&refs, config.gamma_pairs, seed);
    let cache = BlockKernelCache::new(&refs, gamma)?;

    let classifiers = schema
        .attributes()
        .par_iter()
        .enumerate()
        .map(|(a, attr)| {
            let idx: Vec<usize> = (0..features.len()).filter(|&i| labels[i][a].is_some()).collect();
            let ys: Vec<f64> = idx
                .iter()
                .map(|&i| if labels[i][a] == Some(true) { 1.0 } else { -1.0 })
                .collect();
            let feats: Vec<Arc<BodyFeatures>> = idx.iter().map(|&i| Arc::clone(&features[i])).collect();
            if idx.len() == features.len() {
                train_attribute(&attr.id, &feats, &cache, &ys, config)
            } else {
                train_attribute(&attr.id, &feats, &cache.subset(&idx), &ys, config)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    ModelBundle::new(schema, fingerprint, classifiers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Attribute, Category};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, signal: Option<bool>) -> BodyFeatures {
        let hists = (0..crate::features::BLOCK_COUNT)
            .map(|b| {
                let mut h: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
                if b == 0 {
                    if let Some(s) = signal {
                        h[usize::from(s)] += 3.0;
                    }
                }
                let t: f64 = h.iter().sum();
                h.iter().map(|v| v / t).collect()
            })
            .collect();
        BodyFeatures::from_histograms("abc".into(), hists).unwrap()
    }

    fn two_attribute_schema() -> AttributeSchema {
        AttributeSchema::new(
            "t",
            vec![
                Attribute {
                    id: "sig".into(),
                    display_name: "Signal".into(),
                    category: Category::Style,
                    classic: false,
                },
                Attribute {
                    id: "always".into(),
                    display_name: "Always".into(),
                    category: Category::Style,
                    classic: false,
                },
            ],
        )
        .unwrap()
    }

    fn trained() -> (ModelBundle, Vec<Arc<BodyFeatures>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ys: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let feats: Vec<Arc<BodyFeatures>> = ys.iter().map(|&y| Arc::new(random_features(&mut rng, Some(y)))).collect();
        let labels: Vec<Vec<Option<bool>>> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| vec![Some(y), if i == 7 { None } else { Some(true) }])
            .collect();
        let bundle = train_bundle(&two_attribute_schema(), &feats, &labels, &TrainConfig::default(), 1).unwrap();
        (bundle, feats, ys)
    }

    #[test]
    fn learns_planted_block_and_constant_attribute() {
        let (bundle, feats, ys) = trained();
        let sig = &bundle.classifiers[0];
        let w = sig.kernel.block_weights();
        assert!(w[1..].iter().all(|&v| v < w[0]), "{w:?}");
        assert!(sig.dual_coefs.iter().all(|c| c.abs() <= sig.c_param + 1e-12));
        for (f, &y) in feats.iter().zip(&ys) {
            assert_eq!(predict_margin(sig, f).unwrap() > 0.0, y);
        }
        let always = &bundle.classifiers[1];
        assert!(always.support_features.is_empty());
        assert!(predict_prob(always, &feats[0]).unwrap() > 0.9);
    }

    #[test]
    fn pooled_path_matches_single_classifier_path() {
        let (bundle, _, _) = trained();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let x = random_features(&mut rng, None);
            let pooled = bundle.margins(&x).unwrap();
            for (clf, m) in bundle.classifiers.iter().zip(&pooled) {
                assert_eq!(predict_margin(clf, &x).unwrap(), *m);
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (bundle, _, _) = trained();
        let text = bundle.to_json().unwrap();
        let back = ModelBundle::from_json(&text).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.to_json().unwrap(), text);
        back.check_schema(&two_attribute_schema()).unwrap();
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let (bundle, feats, _) = trained();
        let mut x = (*feats[0]).clone();
        x.codebook_fingerprint = "other".into();
        assert!(matches!(
            predict_margin(&bundle.classifiers[0], &x),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(matches!(bundle.margins(&x), Err(Error::FingerprintMismatch { .. })));
    }
}
