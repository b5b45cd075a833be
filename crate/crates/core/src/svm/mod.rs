//! Weighted chi-square kernel SVMs, one per attribute.

pub mod kernel;
pub mod model;
pub mod platt;
pub mod smo;
pub mod weights;

pub use kernel::{
    chi2_block_kernel, chi2_distance, combined_kernel, estimate_gamma, gram_matrix, BlockKernelCache, Gram,
    KernelSpec,
};
pub use model::{
    predict_margin, predict_prob, train_attribute, train_bundle, AttributeClassifier, ModelBundle, TrainConfig,
    MODEL_FORMAT,
};
pub use platt::{platt_fit, platt_probability};
pub use smo::{dual_objective, train_smo, SmoConfig, SmoSolution};
pub use weights::{balanced_accuracy, block_weights, stratified_folds};
