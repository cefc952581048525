//! Importance-weighted amortized variational estimation.

mod amsgrad;
mod fit;
mod init;
mod objective;

pub use amsgrad::{amsgrad_step, AmsGradConfig, AmsGradState};
pub use fit::{fit, observation_elbo, ConvergenceMonitor, FitConfig, FitResult};
pub use init::{init_params, loading_bound, UNIT_GAP_RAW};
pub use objective::{
    grad_omega, grad_psi_dreg, grad_psi_pathwise, iw_elbo_estimate, log_prior, log_sum_exp, log_weight,
    normalized_weights, Accumulators, Evaluator, ModelGradient, PsiEstimator, Sampling, Workspace,
};
