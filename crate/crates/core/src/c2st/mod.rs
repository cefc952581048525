//! Classifier two-sample tests of model fit.
//!
//! Observed rows (label 1) and rows simulated from a fitted model (label 0)
//! are pooled, shuffled and split in half. A classifier trained on one half
//! is scored on the other; accuracy near 1/2 means the model reproduces the
//! data. The exact test checks `acc = 1/2`, the approximate test tolerates
//! `acc = 1/2 + delta`. A relative fit index contrasts the proposed model
//! with the independence baseline, and permutation importances point at
//! items the model reproduces poorly.

mod data;
mod knn;
mod neural;
mod run;
mod stats;

pub use data::{build_split, LabeledSet, Patterns};
pub use knn::{default_k, hamming, KnnConfig, KnnModel};
pub use neural::{epoch_cap, weight_decay_grid, NeuralConfig, NeuralModel};
pub use run::{
    fit_classifier, permutation_importance, run_c2st, run_on_patterns, C2stOutcome, C2stRun, ClassifierHandle,
    ClassifierKind, SyntheticSource,
};
pub use stats::{
    accuracy, approx_pvalue, count_parameters, exact_pvalue, normal_cdf, normal_sf, normal_upper_quantile, power,
    pvalue, rfi, RfiOutcome,
};
