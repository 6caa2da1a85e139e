//! One binary learner per dichotomy, decoding, and cross-validated evaluation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{stratified_folds, LabeledDataset};
use crate::design::{design_from_data, AllocationPolicy, LengthChoice};
use crate::ecf::{factorize, make_policy, EcfOptions};
use crate::ecoc::{decode_hamming, decode_loss_weighted, weight_matrix, CodingMatrix, WeightMatrix};
use crate::error::{Error, Result};

/// A trained binary predictor: a real margin whose sign is the prediction.
pub trait Dichotomizer: Send + Sync + std::fmt::Debug {
    fn margin(&self, sample: &[f64]) -> f64;

    fn predict(&self, sample: &[f64]) -> i8 {
        if self.margin(sample) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Anything that can fit a [`Dichotomizer`] to `±1` labels.
pub trait BinaryLearner: Sync {
    fn fit(&self, features: &DMatrix<f64>, labels: &[i8]) -> Result<Box<dyn Dichotomizer>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    ReferenceLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryLearnerSpec {
    pub kind: LearnerKind,
    /// L2 penalty on the weights (the intercept is not penalized).
    pub lambda: f64,
    pub iterations: usize,
    pub standardize: bool,
}

impl Default for BinaryLearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::ReferenceLogistic,
            lambda: 1e-3,
            iterations: 500,
            standardize: true,
        }
    }
}

impl BinaryLearner for BinaryLearnerSpec {
    fn fit(&self, features: &DMatrix<f64>, labels: &[i8]) -> Result<Box<dyn Dichotomizer>> {
        Ok(Box::new(fit_binary(self, features, labels)?))
    }
}

/// Linear logistic model over (optionally) z-scored features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    weights: DVector<f64>,
    bias: f64,
    mean: DVector<f64>,
    scale: DVector<f64>,
    /// Set when training saw a single class; the model then always predicts it.
    pub constant: Option<i8>,
}

impl LogisticModel {
    /// Weights in the standardized feature space.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// The feature transform applied before the linear part.
    pub fn transform(&self, sample: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            sample.len(),
            sample.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]),
        )
    }
}

impl Dichotomizer for LogisticModel {
    fn margin(&self, sample: &[f64]) -> f64 {
        match self.constant {
            Some(c) => c as f64,
            None => self.weights.dot(&self.transform(sample)) + self.bias,
        }
    }
}

/// Numerically stable `log(1 + e^{−t})`.
fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `λ/2 ‖w‖²`, over already transformed features.
pub fn logistic_objective(z: &DMatrix<f64>, y: &[i8], w: &DVector<f64>, b: f64, lambda: f64) -> f64 {
    let n = z.nrows() as f64;
    let loss: f64 = (0..z.nrows())
        .map(|r| log1p_exp_neg(y[r] as f64 * (z.row(r).transpose().dot(w) + b)))
        .sum();
    loss / n + 0.5 * lambda * w.norm_squared()
}

fn logistic_gradient(z: &DMatrix<f64>, y: &[i8], w: &DVector<f64>, b: f64, lambda: f64) -> (DVector<f64>, f64) {
    let n = z.nrows() as f64;
    let margins = z * w;
    let coef = DVector::from_iterator(
        z.nrows(),
        (0..z.nrows()).map(|r| {
            let yr = y[r] as f64;
            -yr * sigmoid(-yr * (margins[r] + b)) / n
        }),
    );
    (z.transpose() * &coef + w * lambda, coef.sum())
}

/// L2-regularized logistic regression by full-batch gradient descent with step
/// `1/L`, `L = λ_max(Z̃ᵀZ̃/n)/4 + λ` where `Z̃` is the (standardized) design
/// matrix with an intercept column.
pub fn fit_binary(spec: &BinaryLearnerSpec, features: &DMatrix<f64>, labels: &[i8]) -> Result<LogisticModel> {
    let (n, d) = features.shape();
    if n == 0 {
        return Err(Error::arg("cannot fit a binary learner to no samples"));
    }
    if labels.len() != n {
        return Err(Error::dim(format!("{n} samples but {} labels", labels.len())));
    }
    if labels.iter().any(|v| *v != 1 && *v != -1) {
        return Err(Error::arg("binary labels must be 1 or -1"));
    }
    if spec.iterations == 0 || !(spec.lambda >= 0.0) {
        return Err(Error::arg("learner needs iterations ≥ 1 and lambda ≥ 0"));
    }

    let (mean, scale) = if spec.standardize {
        let mean = DVector::from_iterator(d, features.column_iter().map(|c| c.mean()));
        let scale = DVector::from_iterator(
            d,
            features.column_iter().zip(mean.iter()).map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            }),
        );
        (mean, scale)
    } else {
        (DVector::zeros(d), DVector::from_element(d, 1.0))
    };

    let first = labels[0];
    if labels.iter().all(|v| *v == first) {
        return Ok(LogisticModel {
            weights: DVector::zeros(d),
            bias: first as f64,
            mean,
            scale,
            constant: Some(first),
        });
    }

    let z = DMatrix::from_fn(n, d, |r, c| (features[(r, c)] - mean[c]) / scale[c]);
    let mut aug = DMatrix::from_element(n, d + 1, 1.0);
    aug.view_mut((0, 0), (n, d)).copy_from(&z);
    let gram = aug.transpose() * &aug / n as f64;
    let top = SymmetricEigen::new(gram).eigenvalues.max();
    let lipschitz = top / 4.0 + spec.lambda;
    let step = 1.0 / lipschitz;

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    for _ in 0..spec.iterations {
        let (gw, gb) = logistic_gradient(&z, labels, &w, b, spec.lambda);
        w -= gw * step;
        b -= gb * step;
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        mean,
        scale,
        constant: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Hamming,
    #[serde(rename = "lw")]
    LossWeighted,
}

#[derive(Debug)]
pub struct EnsembleModel {
    pub coding: CodingMatrix,
    pub dichotomizers: Vec<Box<dyn Dichotomizer>>,
    /// Row-normalized per-class training accuracy of each dichotomizer.
    pub weights: WeightMatrix,
    pub train_config: BinaryLearnerSpec,
    pub feature_dim: usize,
}

/// Relabels every sample by its class's entry in each column and fits one
/// learner per column (in parallel).
pub fn train_ensemble(x: &CodingMatrix, data: &LabeledDataset, spec: &BinaryLearnerSpec) -> Result<EnsembleModel> {
    train_ensemble_with(x, data, spec, *spec)
}

pub fn train_ensemble_with(
    x: &CodingMatrix,
    data: &LabeledDataset,
    learner: &dyn BinaryLearner,
    train_config: BinaryLearnerSpec,
) -> Result<EnsembleModel> {
    let k = x.classes();
    if data.classes() != k {
        return Err(Error::dim(format!(
            "coding has {k} classes, dataset has {}",
            data.classes()
        )));
    }
    let l = x.length();
    let dichotomizers = (0..l)
        .into_par_iter()
        .map(|j| {
            let y: Vec<i8> = data.labels().iter().map(|&c| x.get(c, j)).collect();
            learner.fit(data.features(), &y).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("column {j}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let counts = data.class_counts();
    let mut acc = DMatrix::zeros(k, l);
    for (r, &c) in data.labels().iter().enumerate() {
        let sample: Vec<f64> = data.features().row(r).iter().copied().collect();
        for (j, h) in dichotomizers.iter().enumerate() {
            if h.predict(&sample) == x.get(c, j) {
                acc[(c, j)] += 1.0;
            }
        }
    }
    for c in 0..k {
        for j in 0..l {
            acc[(c, j)] /= counts[c] as f64;
        }
    }
    let weights = weight_matrix(x, &acc)?;
    Ok(EnsembleModel {
        coding: x.clone(),
        dichotomizers,
        weights,
        train_config,
        feature_dim: data.dim(),
    })
}

/// The `±1` outputs of every dichotomizer on `sample`.
pub fn predict_codeword(model: &EnsembleModel, sample: &[f64]) -> Result<Vec<i8>> {
    if sample.len() != model.feature_dim {
        return Err(Error::dim(format!(
            "sample has {} features, model expects {}",
            sample.len(),
            model.feature_dim
        )));
    }
    Ok(model.dichotomizers.iter().map(|h| h.predict(sample)).collect())
}

pub fn predict(model: &EnsembleModel, sample: &[f64], decoding: Decoding) -> Result<usize> {
    let y = predict_codeword(model, sample)?;
    match decoding {
        Decoding::Hamming => decode_hamming(&model.coding, &y),
        Decoding::LossWeighted => decode_loss_weighted(&model.coding, &model.weights, &y),
    }
}

/// Where each fold's coding matrix comes from.
#[derive(Debug, Clone)]
pub enum CodingSource {
    /// The same matrix for every fold.
    Fixed { coding: CodingMatrix, name: String },
    /// Factorize a Mahalanobis design built from the training portion.
    Ecf {
        policy: AllocationPolicy,
        length: LengthChoice,
        min_distance: usize,
        seed: u64,
    },
}

impl CodingSource {
    pub fn descriptor(&self) -> String {
        match self {
            CodingSource::Fixed { name, .. } => name.clone(),
            CodingSource::Ecf {
                policy, min_distance, ..
            } => {
                let p = match policy {
                    AllocationPolicy::Hard => "ecf-h",
                    AllocationPolicy::Easy => "ecf-e",
                };
                format!("{p} c={min_distance}")
            }
        }
    }

    /// The coding matrix for a given training set.
    pub fn build(&self, train: &LabeledDataset) -> Result<CodingMatrix> {
        match self {
            CodingSource::Fixed { coding, .. } => Ok(coding.clone()),
            CodingSource::Ecf {
                policy,
                length,
                min_distance,
                seed,
            } => {
                let dd = design_from_data(train, *policy, *length)?;
                let p = make_policy(train.classes(), dd.l, *min_distance)?;
                let opts = EcfOptions {
                    seed: *seed,
                    ..EcfOptions::default()
                };
                Ok(factorize(&dd.design, &p, dd.l, &opts)?.coding)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPrediction {
    pub sample: usize,
    pub fold: usize,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub decoding: Decoding,
    pub coding: String,
    /// Dichotomies used in each fold.
    pub fold_dichotomies: Vec<usize>,
    pub mean_dichotomies: f64,
    #[serde(skip)]
    pub predictions: Vec<FoldPrediction>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified `folds`-fold cross-validation. Folds run in parallel; each
/// builds its coding matrix and learner statistics from its training part
/// only. `folds == n` is leave-one-out: every sample is its own fold.
pub fn cross_validate(
    data: &LabeledDataset,
    source: &CodingSource,
    spec: &BinaryLearnerSpec,
    decoding: Decoding,
    folds: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    let assignment = if folds == data.len() && folds >= 2 {
        (0..folds).collect()
    } else {
        stratified_folds(data.labels(), folds, seed)?
    };
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let test_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            let train = data.subset(&train_idx)?;
            let coding = source.build(&train)?;
            let model = train_ensemble(&coding, &train, spec)?;
            let mut preds = Vec::with_capacity(test_idx.len());
            for &i in &test_idx {
                let sample: Vec<f64> = data.features().row(i).iter().copied().collect();
                preds.push(FoldPrediction {
                    sample: i,
                    fold: f,
                    truth: data.labels()[i],
                    predicted: predict(&model, &sample, decoding)?,
                });
            }
            let correct = preds.iter().filter(|p| p.truth == p.predicted).count();
            Ok((correct as f64 / test_idx.len() as f64, coding.length(), preds))
        })
        .collect::<Result<Vec<_>>>()?;

    let fold_accuracies: Vec<f64> = per_fold.iter().map(|r| r.0).collect();
    let fold_dichotomies: Vec<usize> = per_fold.iter().map(|r| r.1).collect();
    let (mean, std) = mean_std(&fold_accuracies);
    let mean_dichotomies = fold_dichotomies.iter().sum::<usize>() as f64 / folds as f64;
    let mut predictions: Vec<FoldPrediction> = per_fold.into_iter().flat_map(|r| r.2).collect();
    predictions.sort_by_key(|p| p.sample);
    Ok(EvaluationReport {
        fold_accuracies,
        mean,
        std,
        decoding,
        coding: source.descriptor(),
        fold_dichotomies,
        mean_dichotomies,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecoc::ova_coding;

    fn line_data() -> (DMatrix<f64>, Vec<i8>) {
        let x = DMatrix::from_column_slice(6, 1, &[-1.2, -1.0, -0.8, 0.8, 1.0, 1.2]);
        (x, vec![-1, -1, -1, 1, 1, 1])
    }

    #[test]
    fn separable_line() {
        let (x, y) = line_data();
        let m = fit_binary(&BinaryLearnerSpec::default(), &x, &y).unwrap();
        for (r, &t) in y.iter().enumerate() {
            assert_eq!(m.predict(&[x[(r, 0)]]), t);
        }
    }

    #[test]
    fn single_sign_gives_a_flagged_constant() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let m = fit_binary(&BinaryLearnerSpec::default(), &x, &[1, 1, 1]).unwrap();
        assert_eq!(m.constant, Some(1));
        assert_eq!(m.predict(&[-50.0]), 1);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        let spec = BinaryLearnerSpec::default();
        assert!(fit_binary(&spec, &DMatrix::zeros(0, 2), &[]).is_err());
        assert!(fit_binary(&spec, &DMatrix::zeros(2, 1), &[1, 0]).is_err());
    }

    #[test]
    fn two_class_ensemble_is_plain_binary_classification() {
        let (x, y) = line_data();
        let labels: Vec<usize> = y.iter().map(|v| if *v > 0 { 1 } else { 0 }).collect();
        let data = LabeledDataset::new(x.clone(), labels, 2).unwrap();
        let coding = CodingMatrix::from_rows(&[vec![-1], vec![1]]).unwrap();
        let spec = BinaryLearnerSpec::default();
        let model = train_ensemble(&coding, &data, &spec).unwrap();
        let direct = fit_binary(&spec, &x, &y).unwrap();
        for r in 0..6 {
            let s = [x[(r, 0)]];
            assert_eq!(model.dichotomizers[0].margin(&s), direct.margin(&s));
        }
    }

    #[test]
    fn ova_weights_are_row_stochastic() {
        let x = DMatrix::from_fn(9, 2, |r, c| (r / 3) as f64 * 4.0 + 0.1 * (r % 3) as f64 + c as f64);
        let labels: Vec<usize> = (0..9).map(|r| r / 3).collect();
        let data = LabeledDataset::new(x, labels, 3).unwrap();
        let model = train_ensemble(&ova_coding(3).unwrap(), &data, &BinaryLearnerSpec::default()).unwrap();
        for i in 0..3 {
            assert!((model.weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(predict(&model, &[0.0, 1.0, 2.0], Decoding::Hamming).is_err());
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[0.5, 1.0]);
        assert_eq!(m, 0.75);
        assert_eq!(s, 0.25);
    }
}
