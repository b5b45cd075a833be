//! Per-attribute and overall accuracy of binary attribute decisions.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;
use crate::schema::AttributeSchema;

pub const EVAL_FORMAT: &str = "trendscope-eval";
const EVAL_VERSION: u32 = 1;

/// Fraction of labeled images placed in the training split by default.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub attribute_id: String,
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Attributes with at least one labeled image, in schema order.
    pub per_attribute: Vec<AttributeAccuracy>,
    /// Unweighted mean of the per-attribute accuracies; `None` when no
    /// attribute has support.
    pub overall: Option<f64>,
    /// Attributes without labeled support, in schema order.
    pub excluded: Vec<String>,
}

impl AccuracyReport {
    pub fn get(&self, attribute_id: &str) -> Option<&AttributeAccuracy> {
        self.per_attribute.iter().find(|a| a.attribute_id == attribute_id)
    }

    /// CSV with a format comment, one row per supported attribute and a
    /// trailing summary comment.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attribute", "support", "accuracy"])?;
        for a in &self.per_attribute {
            w.write_record([a.attribute_id.clone(), a.support.to_string(), a.accuracy.to_string()])?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        let mut out = format!("# {EVAL_FORMAT} v{EVAL_VERSION}\n").into_bytes();
        out.extend(body);
        writeln!(out, "# {}", self.summary_line()).expect("writing to a Vec cannot fail");
        Ok(String::from_utf8(out).expect("csv output is UTF-8"))
    }

    pub fn summary_line(&self) -> String {
        let overall = self.overall.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        let mut line = format!("overall_accuracy={overall} attributes={}", self.per_attribute.len());
        if !self.excluded.is_empty() {
            line.push_str(&format!(" excluded={}", self.excluded.join(";")));
        }
        line
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Scores per-image decision vectors (in schema order) against the corpus
/// labels. Image order does not matter.
pub fn evaluate(
    predictions: &[(String, Vec<bool>)],
    corpus: &Corpus,
    schema: &AttributeSchema,
) -> Result<AccuracyReport> {
    let n = schema.len();
    let mut support = vec![0usize; n];
    let mut correct = vec![0usize; n];
    let mut seen = HashSet::new();
    for (id, decisions) in predictions {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateImage(id.clone()));
        }
        if decisions.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: decisions.len(),
            });
        }
        let record = corpus.get(id).ok_or_else(|| Error::InvalidRecord {
            id: id.clone(),
            message: "prediction for an image that is not in the labeled corpus".into(),
        })?;
        let labels = record.label_vector(schema).ok_or_else(|| Error::InvalidRecord {
            id: id.clone(),
            message: "image has no labels".into(),
        })?;
        for (a, (label, &pred)) in labels.iter().zip(decisions).enumerate() {
            if let Some(truth) = label {
                support[a] += 1;
                correct[a] += usize::from(*truth == pred);
            }
        }
    }

    let mut per_attribute = Vec::new();
    let mut excluded = Vec::new();
    for (a, attr) in schema.attributes().iter().enumerate() {
        if support[a] == 0 {
            excluded.push(attr.id.clone());
        } else {
            per_attribute.push(AttributeAccuracy {
                attribute_id: attr.id.clone(),
                support: support[a],
                correct: correct[a],
                accuracy: correct[a] as f64 / support[a] as f64,
            });
        }
    }
    let overall = macro_mean(&per_attribute);
    Ok(AccuracyReport {
        per_attribute,
        overall,
        excluded,
    })
}

/// Mean accuracy, summed in attribute-id order so it does not depend on
/// schema ordering.
fn macro_mean(entries: &[AttributeAccuracy]) -> Option<f64> {
    if entries.is_empty() {
        return None;
    }
    let mut accs: Vec<(&str, f64)> = entries.iter().map(|e| (e.attribute_id.as_str(), e.accuracy)).collect();
    accs.sort_by(|a, b| a.0.cmp(b.0));
    Some(accs.iter().map(|(_, v)| v).sum::<f64>() / accs.len() as f64)
}

/// Seeded split of `0..n` into (train, test) index lists, each ascending.
/// The training side receives `round(n * train_fraction)` items.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n as f64 * train_fraction).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
