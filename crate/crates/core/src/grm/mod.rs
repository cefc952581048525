//! Graded response model: probabilities, likelihoods, loading constraints,
//! hyperspherical correlation construction and synthetic-data sampling.

mod correlation;
mod item;
mod params;
mod responses;
mod sampling;
mod spec;

pub use correlation::{
    angle_gradient, angles_from_cholesky, build_correlation, cholesky_from_angles, cholesky_psd, CorrelationAngles,
    LowerTriangular,
};
pub use item::{
    intercepts_from_raw, log_category_prob, log_cond_likelihood, log_cond_likelihood_grad, pull_back_intercepts,
    raw_from_intercepts, softplus, CategoryTerm, ItemParams, LikelihoodGradient,
};
pub use params::{apply_constraints, Materialized, ParameterSet};
pub use responses::ResponseMatrix;
pub use sampling::{sample_baseline, sample_responses, zero_factor_mle, BaselineModel, GeneratingModel};
pub use spec::{CorrelationStructure, LoadingConstraint, LoadingPattern, ModelSpec};
