use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{build_split, LabeledSet, Patterns};
use super::knn::{default_k, KnnConfig, KnnModel};
use super::neural::{NeuralConfig, NeuralModel};
use super::stats::{accuracy, pvalue};
use crate::error::Result;
use crate::grm::{sample_baseline, sample_responses, BaselineModel, GeneratingModel, ResponseMatrix};
use crate::iwave::FitResult;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn(KnnConfig),
    Neural(NeuralConfig),
}

impl ClassifierKind {
    pub fn knn() -> Self {
        ClassifierKind::Knn(KnnConfig::default())
    }

    pub fn neural() -> Self {
        ClassifierKind::Neural(NeuralConfig::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::Knn(_) => "knn",
            ClassifierKind::Neural(_) => "nn",
        }
    }
}

/// A fitted real-versus-synthetic classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierHandle {
    Knn(KnnModel),
    Neural(NeuralModel),
}

impl ClassifierHandle {
    /// Estimated `Pr(real | row)` for every row.
    pub fn predict(&self, rows: &Patterns) -> Result<Vec<f64>> {
        match self {
            ClassifierHandle::Knn(m) => m.predict(rows),
            ClassifierHandle::Neural(m) => m.predict(rows),
        }
    }
}

pub fn fit_classifier(kind: &ClassifierKind, split: &LabeledSet, seed: u64) -> Result<ClassifierHandle> {
    match kind {
        ClassifierKind::Knn(cfg) => {
            let k = cfg.k.unwrap_or_else(|| default_k(split.n_test()));
            Ok(ClassifierHandle::Knn(KnnModel::fit(
                &split.train,
                &split.train_labels,
                k,
                cfg.subsample,
                seed,
            )?))
        }
        ClassifierKind::Neural(cfg) => Ok(ClassifierHandle::Neural(NeuralModel::fit(
            &split.train,
            &split.train_labels,
            split.n_test(),
            cfg,
            seed,
        )?)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2stOutcome {
    pub acc: f64,
    pub p_value: f64,
    pub delta: f64,
    pub n_test: usize,
    /// Per test row, the classifier's probability that the row is real.
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

impl C2stOutcome {
    pub fn from_predictions(probabilities: Vec<f64>, labels: Vec<u8>, delta: f64) -> Result<Self> {
        let acc = accuracy(&probabilities, &labels)?;
        let n_test = labels.len();
        Ok(Self {
            acc,
            p_value: pvalue(acc, n_test, delta)?,
            delta,
            n_test,
            probabilities,
            labels,
        })
    }

    /// The same accuracy tested against another tolerance.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Ok(Self {
            p_value: pvalue(self.acc, self.n_test, delta)?,
            delta,
            ..self.clone()
        })
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Outcome plus what is needed for follow-up diagnostics.
#[derive(Clone, Debug)]
pub struct C2stRun {
    pub outcome: C2stOutcome,
    pub classifier: ClassifierHandle,
    pub split: LabeledSet,
}

impl C2stRun {
    pub fn permutation_importance(&self, reps: usize, seed: u64) -> Result<Vec<f64>> {
        permutation_importance(&self.classifier, &self.split.test, &self.split.test_labels, reps, seed)
    }
}

/// Models that can generate synthetic response patterns.
pub trait SyntheticSource {
    fn sample_synthetic(&self, n: usize, seed: u64) -> Result<ResponseMatrix>;
}

impl SyntheticSource for GeneratingModel {
    fn sample_synthetic(&self, n: usize, seed: u64) -> Result<ResponseMatrix> {
        sample_responses(self, n, seed)
    }
}

impl SyntheticSource for BaselineModel {
    fn sample_synthetic(&self, n: usize, seed: u64) -> Result<ResponseMatrix> {
        sample_baseline(self, n, seed)
    }
}

impl SyntheticSource for FitResult {
    fn sample_synthetic(&self, n: usize, seed: u64) -> Result<ResponseMatrix> {
        sample_responses(&self.generating_model(), n, seed)
    }
}

/// Split, fit, predict and test for given real and synthetic rows.
pub fn run_on_patterns(
    real: &Patterns,
    synthetic: &Patterns,
    kind: &ClassifierKind,
    delta: f64,
    seed: u64,
) -> Result<C2stRun> {
    let split = build_split(real, synthetic, derive_seed(seed, &[1]))?;
    let classifier = fit_classifier(kind, &split, derive_seed(seed, &[2]))?;
    let probabilities = classifier.predict(&split.test)?;
    let outcome = C2stOutcome::from_predictions(probabilities, split.test_labels.clone(), delta)?;
    Ok(C2stRun {
        outcome,
        classifier,
        split,
    })
}

/// Draws as many synthetic rows as there are observed rows and runs the
/// test. `delta = 0` gives the exact test.
pub fn run_c2st(
    source: &dyn SyntheticSource,
    data: &ResponseMatrix,
    kind: &ClassifierKind,
    delta: f64,
    seed: u64,
) -> Result<C2stRun> {
    let synthetic = source.sample_synthetic(data.n_rows(), derive_seed(seed, &[0]))?;
    run_on_patterns(
        &Patterns::Categorical(data.clone()),
        &Patterns::Categorical(synthetic),
        kind,
        delta,
        seed,
    )
}

/// `IMP_j = acc - mean_t acc(column j shuffled, repetition t)`.
pub fn permutation_importance(
    classifier: &ClassifierHandle,
    test: &Patterns,
    labels: &[u8],
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(crate::error::IfaError::InvalidArgument(
            "at least one repetition is required".into(),
        ));
    }
    let base = accuracy(&classifier.predict(test)?, labels)?;
    let n = test.n_rows();
    let mut out = Vec::with_capacity(test.n_cols());
    for j in 0..test.n_cols() {
        let mut total = 0.0;
        for t in 0..reps {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seeded(derive_seed(seed, &[j as u64, t as u64])));
            let shuffled = test.permute_column(j, &perm)?;
            total += accuracy(&classifier.predict(&shuffled)?, labels)?;
        }
        out.push(base - total / reps as f64);
    }
    Ok(out)
}
