use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{BodyFeatures, BLOCK_COUNT};

use super::kernel::{BlockKernelCache, Gram};
use super::smo::{train_smo, SmoConfig};

/// Stratified fold assignment: the k-th example of each class goes to fold
/// `k % folds`, in input order.
pub fn stratified_folds(labels: &[f64], folds: usize) -> Vec<usize> {
    let mut next_pos = 0;
    let mut next_neg = 0;
    labels
        .iter()
        .map(|&y| {
            let counter = if y > 0.0 { &mut next_pos } else { &mut next_neg };
            let f = *counter % folds;
            *counter += 1;
            f
        })
        .collect()
}

/// Checks that both classes have at least `folds` examples.
pub fn check_fold_support(labels: &[f64], folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("folds must be >= 2, got {folds}")));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    let neg = labels.len() - pos;
    if pos < folds || neg < folds {
        return Err(Error::InsufficientExamples(format!(
            "{pos} positive / {neg} negative examples for {folds}-fold cross-validation"
        )));
    }
    Ok(())
}

/// Out-of-fold decision values for every example.
pub fn cross_validated_margins(
    gram: &Gram,
    labels: &[f64],
    folds: usize,
    config: &SmoConfig,
) -> Result<Vec<f64>> {
    check_fold_support(labels, folds)?;
    let assignment = stratified_folds(labels, folds);
    let mut margins = vec![0.0; labels.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == fold).collect();
        let sub = gram.subset(&train);
        let sub_labels: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        let sol = train_smo(&sub, &sub_labels, config)?;
        for &t in &test {
            let row = gram.row(t);
            margins[t] = train
                .iter()
                .zip(&sol.alpha)
                .zip(&sub_labels)
                .map(|((&j, a), y)| a * y * row[j])
                .sum::<f64>()
                + sol.bias;
        }
    }
    Ok(margins)
}

/// Mean of per-class recall. Chance level is 0.5 whatever the class ratio.
pub fn balanced_accuracy(margins: &[f64], labels: &[f64]) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&m, &y) in margins.iter().zip(labels) {
        if y > 0.0 {
            pos += 1;
            tp += usize::from(m > 0.0);
        } else {
            neg += 1;
            tn += usize::from(m <= 0.0);
        }
    }
    let recall = |hit: usize, total: usize| if total == 0 { 0.5 } else { hit as f64 / total as f64 };
    0.5 * (recall(tp, pos) + recall(tn, neg))
}

/// Turns per-block scores into weights: `max(score - 0.5, 0)`, L1-normalized,
/// with a uniform fallback when nothing beats chance.
pub fn weights_from_accuracies(accuracies: &[f64]) -> Vec<f64> {
    let above: Vec<f64> = accuracies.iter().map(|a| (a - 0.5).max(0.0)).collect();
    normalize_or_uniform(above)
}

/// L1-normalizes non-negative scores, or returns uniform weights if all are 0.
pub fn normalize_or_uniform(scores: Vec<f64>) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.into_iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Cross-validated balanced accuracy of a block-only SVM for every block.
pub fn block_accuracies(
    cache: &BlockKernelCache,
    labels: &[f64],
    folds: usize,
    config: &SmoConfig,
) -> Result<Vec<f64>> {
    if labels.len() != cache.n() {
        return Err(Error::DimensionMismatch {
            expected: cache.n(),
            found: labels.len(),
        });
    }
    check_fold_support(labels, folds)?;
    (0..BLOCK_COUNT)
        .into_par_iter()
        .map(|b| {
            let margins = cross_validated_margins(cache.block(b), labels, folds, config)?;
            Ok(balanced_accuracy(&margins, labels))
        })
        .collect()
}

/// Per-block importance weights for one attribute from a precomputed cache.
pub fn block_weights_cached(
    cache: &BlockKernelCache,
    labels: &[f64],
    folds: usize,
    config: &SmoConfig,
) -> Result<Vec<f64>> {
    Ok(weights_from_accuracies(&block_accuracies(cache, labels, folds, config)?))
}

/// Per-block importance weights for one attribute.
pub fn block_weights(
    features: &[&BodyFeatures],
    labels: &[f64],
    folds: usize,
    gamma: f64,
    config: &SmoConfig,
) -> Result<Vec<f64>> {
    check_fold_support(labels, folds)?;
    let cache = BlockKernelCache::new(features, gamma)?;
    block_weights_cached(&cache, labels, folds, config)
}
