//! Datasets, queries, utility metrics, a ridge learner and the repeated-trial
//! experiment runner.
//!
//! Every trial `t` draws its noise from stream `t` of the experiment seed,
//! so runs are bit-reproducible and cells of a direction study are paired.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{
    precision_budget, equimodal_budget, sensitivity_catalog, CatalogQuery, PrecisionMode,
    PrivacyParams, QuerySpec, Structure, Theorem,
};
use crate::error::{MvgError, Result};
use crate::matcore::{svd, symmetric_eigen, Matrix, SpdMatrix};
use crate::mechanism::{
    add_gaussian_noise, add_laplace_noise, gaussian_scale, max_pnr_allocation, private_directions,
    MvgMechanism, NoiseDirections, PrecisionAllocation,
};
use crate::sampler::RandomSeed;

/// Regularization of the regression learner.
pub const RIDGE_LAMBDA: f64 = 1e-3;
/// Samples held out for testing in the regression task.
pub const DEFAULT_HOLDOUT: usize = 97;
/// Share of the budget spent on private direction estimation.
pub const DEFAULT_DIRECTION_FRAC: f64 = 0.2;
/// Values of `tau` tried when a binary allocation leaves it unset.
pub const TAU_GRID: [f64; 5] = [0.55, 0.65, 0.75, 0.85, 0.95];

const LABEL_SPLIT: u64 = 1;
const LABEL_DIRECTIONS: u64 = 2;

/// Feature matrix with records as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    feature_names: Vec<String>,
    value_range: (f64, f64),
}

impl Dataset {
    pub fn new(features: Matrix, feature_names: Vec<String>, value_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = value_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(MvgError::param(format!("invalid value range ({lo}, {hi})")));
        }
        if feature_names.len() != features.rows() {
            return Err(MvgError::param(format!(
                "{} feature names for {} features",
                feature_names.len(),
                features.rows()
            )));
        }
        if features.cols() < 2 {
            return Err(MvgError::param("a dataset needs at least two samples"));
        }
        if let Some(v) = features.column_major().iter().find(|v| **v < lo || **v > hi) {
            return Err(MvgError::param(format!("value {v} outside the declared range ({lo}, {hi})")));
        }
        Ok(Dataset {
            features,
            feature_names,
            value_range,
        })
    }

    /// Reads a CSV with a header of feature names and one row per sample.
    pub fn from_csv_reader<R: Read>(reader: R, value_range: (f64, f64)) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut n = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(MvgError::Parse(format!(
                    "sample {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    names.len()
                )));
            }
            for field in rec.iter() {
                data.push(field.parse::<f64>().map_err(|e| {
                    MvgError::Parse(format!("sample {}: {field:?}: {e}", line + 1))
                })?);
            }
            n += 1;
        }
        if n == 0 || names.is_empty() {
            return Err(MvgError::Parse("empty dataset".into()));
        }
        // rows of the file are samples, i.e. columns of the feature matrix
        let samples = Matrix::new(n, names.len(), data)?;
        Self::new(samples.transpose(), names, value_range)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, value_range: (f64, f64)) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, value_range)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.feature_names)?;
        for j in 0..self.n() {
            w.write_record(self.features.column(j).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    /// Largest absolute value any entry may take.
    pub fn value_bound(&self) -> f64 {
        self.value_range.0.abs().max(self.value_range.1.abs())
    }

    pub fn m(&self) -> usize {
        self.features.rows()
    }

    pub fn n(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn select_samples(&self, samples: &[usize]) -> Result<Dataset> {
        let src = self.features.as_dmatrix();
        if let Some(bad) = samples.iter().find(|&&j| j >= self.n()) {
            return Err(MvgError::param(format!("sample index {bad} out of range")));
        }
        let cols: Vec<_> = samples.iter().map(|&j| src.column(j).into_owned()).collect();
        if cols.is_empty() {
            return Err(MvgError::param("empty sample selection"));
        }
        Dataset::new(
            Matrix::from_dmatrix(DMatrix::from_columns(&cols))?,
            self.feature_names.clone(),
            self.value_range,
        )
    }
}

/// Shape-matched stand-ins for the three benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// 6 x 345 in [-1, 1]; the last feature is the regression target.
    Liver,
    /// 4 x 10176 in [-100, 100].
    Movement,
    /// 21 x 2126 in [0, 1].
    Ctg,
}

const LIVER_NAMES: [&str; 6] = ["mcv", "alkphos", "sgpt", "sgot", "gammagt", "drinks"];
const CTG_NAMES: [&str; 21] = [
    "LB", "AC", "FM", "UC", "DL", "DS", "DP", "ASTV", "MSTV", "ALTV", "MLTV", "Width", "Min",
    "Max", "Nmax", "Nzeros", "Mode", "Mean", "Median", "Variance", "Tendency",
];

impl SyntheticKind {
    /// Indices of the features that carry most of the signal.
    pub fn informative(&self) -> Vec<usize> {
        match self {
            SyntheticKind::Liver => vec![2, 5],
            SyntheticKind::Movement => vec![0, 3],
            SyntheticKind::Ctg => vec![0, 7, 9],
        }
    }

    pub fn target(&self) -> Option<&'static str> {
        match self {
            SyntheticKind::Liver => Some("drinks"),
            _ => None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            SyntheticKind::Liver => (6, 345),
            SyntheticKind::Movement => (4, 10176),
            SyntheticKind::Ctg => (21, 2126),
        }
    }
}

/// Generates a synthetic dataset whose informative features have the larger
/// variance and dominate the top principal components.
pub fn synthetic_dataset(kind: SyntheticKind, seed: u64) -> Dataset {
    let (m, n) = kind.shape();
    let mut rng = RandomSeed::new(seed, 0).rng();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let (names, range, mut x): (Vec<String>, (f64, f64), DMatrix<f64>) = match kind {
        SyntheticKind::Liver => {
            let scales = [0.1, 0.1, 0.35, 0.12, 0.2];
            let mut x = DMatrix::zeros(m, n);
            for j in 0..n {
                for (i, s) in scales.iter().enumerate() {
                    x[(i, j)] = s * normal();
                }
                x[(5, j)] = 0.7 * x[(2, j)] + 0.3 * x[(4, j)] + 0.05 * normal();
            }
            (LIVER_NAMES.iter().map(|s| s.to_string()).collect(), (-1.0, 1.0), x)
        }
        SyntheticKind::Movement => {
            let mut x = DMatrix::zeros(m, n);
            for j in 0..n {
                let t = normal();
                x[(0, j)] = 35.0 * t + 8.0 * normal();
                x[(1, j)] = 10.0 * normal();
                x[(2, j)] = 10.0 * normal();
                x[(3, j)] = 30.0 * t + 8.0 * normal();
            }
            ((0..m).map(|i| format!("ANC{i}")).collect(), (-100.0, 100.0), x)
        }
        SyntheticKind::Ctg => {
            let informative = kind.informative();
            let mut x = DMatrix::zeros(m, n);
            for j in 0..n {
                let t = normal();
                for i in 0..m {
                    x[(i, j)] = if informative.contains(&i) {
                        0.5 + 0.15 * t + 0.08 * normal()
                    } else {
                        0.5 + 0.04 * normal()
                    };
                }
            }
            (CTG_NAMES.iter().map(|s| s.to_string()).collect(), (0.0, 1.0), x)
        }
    };
    if kind != SyntheticKind::Ctg {
        for mut row in x.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
    }
    x.apply(|v| *v = v.clamp(range.0, range.1));
    Dataset::new(Matrix::from_dmatrix(x).expect("finite"), names, range).expect("generated within range")
}

/// `f(X) = X`.
pub fn query_identity(d: &Dataset) -> Matrix {
    d.features.clone()
}

/// `f(X) = X X^T / n`.
pub fn query_covariance(d: &Dataset) -> Matrix {
    second_moment(&d.features)
}

/// `X X^T / n` for any feature matrix, symmetrized exactly.
pub fn second_moment(x: &Matrix) -> Matrix {
    let a = x.as_dmatrix();
    let s = (a * a.transpose()) / a.ncols() as f64;
    Matrix::from_dmatrix((&s + s.transpose()) * 0.5).expect("finite product")
}

pub fn metric_rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(MvgError::param(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / targets.len() as f64).sqrt())
}

fn quadratic_form(v: &[f64], s: &Matrix) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(s.as_dmatrix() * &v))
}

/// `lambda_1(s_bar) - v^T s_bar v`, clamped at zero.
pub fn metric_delta_rho(v: &[f64], s_bar: &SpdMatrix) -> Result<f64> {
    if v.len() != s_bar.dim() {
        return Err(MvgError::param("vector and covariance dimensions differ"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(MvgError::param(format!("principal component has norm {norm}, expected 1")));
    }
    Ok((s_bar.eigenvalues()[0] - quadratic_form(v, s_bar.matrix())).max(0.0))
}

/// Sum over components of the squared deficit between the `i`-th
/// eigenvalue of `s_bar` and the variance of `s_bar` captured by the `i`-th
/// eigenvector of `s_tilde`.
pub fn metric_rss(s_tilde: &SpdMatrix, s_bar: &SpdMatrix) -> Result<f64> {
    rss_from_vectors(s_tilde.eigenvectors(), s_bar)
}

fn rss_from_vectors(vectors: &Matrix, s_bar: &SpdMatrix) -> Result<f64> {
    if vectors.rows() != s_bar.dim() {
        return Err(MvgError::param("covariance dimensions differ"));
    }
    Ok(s_bar
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let d = l - quadratic_form(&vectors.column(i), s_bar.matrix());
            d * d
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pnr {
    pub pnr: f64,
    pub log_pnr: f64,
    /// `log(pnr) / 2`, the mutual information of a Gaussian channel.
    pub mutual_information: f64,
}

/// `|k_f + noise_cov| / |noise_cov|`, evaluated through log-determinants.
pub fn metric_pnr(k_f: &SpdMatrix, noise_cov: &SpdMatrix) -> Result<Pnr> {
    if k_f.dim() != noise_cov.dim() {
        return Err(MvgError::param("signal and noise covariances differ in size"));
    }
    if noise_cov.eigenvalues().iter().any(|l| !(*l > 0.0)) {
        return Err(MvgError::structure("noise covariance must be positive definite"));
    }
    let total = SpdMatrix::new(k_f.matrix().add(noise_cov.matrix())?)?;
    let log_pnr = total.log_det() - noise_cov.log_det();
    Ok(Pnr {
        pnr: log_pnr.exp(),
        log_pnr,
        mutual_information: 0.5 * log_pnr,
    })
}

/// Solves `(F^T F + lambda I) w = F^T y`, with `F` the sample-major
/// transpose of `features` (features x samples).
pub fn ridge_fit(features: &Matrix, targets: &[f64], lambda_reg: f64) -> Result<Vec<f64>> {
    if targets.len() != features.cols() {
        return Err(MvgError::param(format!(
            "{} targets for {} samples",
            targets.len(),
            features.cols()
        )));
    }
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(MvgError::param("ridge regularization must be positive"));
    }
    let x = features.as_dmatrix();
    let m = x.nrows();
    let a = x * x.transpose() + DMatrix::<f64>::identity(m, m) * lambda_reg;
    let b = x * DVector::from_column_slice(targets);
    let chol = a
        .cholesky()
        .ok_or_else(|| MvgError::Numerical("ridge normal equations are not positive definite".into()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Ridge regression on standardized features with a centered target.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    weights: Vec<f64>,
}

impl RidgeModel {
    pub fn fit(features: &Matrix, targets: &[f64], lambda_reg: f64) -> Result<Self> {
        let x = features.as_dmatrix();
        let n = x.ncols() as f64;
        let mean: Vec<f64> = x.row_iter().map(|r| r.sum() / n).collect();
        let scale: Vec<f64> = x
            .row_iter()
            .zip(&mean)
            .map(|(r, mu)| {
                let sd = (r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let y_mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
        let z = Self::standardize(x, &mean, &scale);
        let yc: Vec<f64> = targets.iter().map(|y| y - y_mean).collect();
        let weights = ridge_fit(&Matrix::from_dmatrix(z)?, &yc, lambda_reg)?;
        Ok(RidgeModel {
            mean,
            scale,
            y_mean,
            weights,
        })
    }

    fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[i]) / scale[i])
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<f64>> {
        if features.rows() != self.weights.len() {
            return Err(MvgError::param("feature count differs from the fitted model"));
        }
        let z = Self::standardize(features.as_dmatrix(), &self.mean, &self.scale);
        let w = DVector::from_column_slice(&self.weights);
        Ok((z.transpose() * w).iter().map(|p| p + self.y_mean).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    /// Identity query with the target treated as one more feature.
    Regression {
        target: String,
        #[serde(default = "default_holdout")]
        holdout: usize,
    },
    /// Covariance query; metric is the captured-variance deficit of the
    /// top principal component.
    FirstPc,
    /// Identity query; metric is the RSS of the covariance estimated from
    /// the perturbed data.
    CovarianceEstimation,
}

fn default_holdout() -> usize {
    DEFAULT_HOLDOUT
}

fn default_frac() -> f64 {
    DEFAULT_DIRECTION_FRAC
}

impl Task {
    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::Regression { .. } => "rmse",
            Task::FirstPc => "delta-rho",
            Task::CovarianceEstimation => "rss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismChoice {
    MvgUnimodal,
    MvgEquimodal { theorem: Theorem },
    Gaussian,
    /// `s1` defaults to the L1-sensitivity of the task's query.
    Laplace {
        #[serde(default)]
        s1: Option<f64>,
    },
    NonPrivate,
}

impl MechanismChoice {
    pub fn label(&self) -> String {
        match self {
            MechanismChoice::MvgUnimodal => "mvg-unimodal".into(),
            MechanismChoice::MvgEquimodal { theorem: Theorem::General } => "mvg-equimodal-general".into(),
            MechanismChoice::MvgEquimodal { theorem: Theorem::Psd } => "mvg-equimodal-psd".into(),
            MechanismChoice::Gaussian => "gaussian".into(),
            MechanismChoice::Laplace { .. } => "laplace".into(),
            MechanismChoice::NonPrivate => "non-private".into(),
        }
    }

    fn is_mvg(&self) -> bool {
        matches!(self, MechanismChoice::MvgUnimodal | MechanismChoice::MvgEquimodal { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DirectionSource {
    /// Standard basis with a binary allocation favouring `indices`; an unset
    /// `tau` is swept over [`TAU_GRID`] and the best mean is kept.
    StandardBasis {
        indices: Vec<usize>,
        #[serde(default)]
        tau: Option<f64>,
    },
    /// Directions from a private estimate of the covariance, spending `frac`
    /// of the budget, with the max-PNR allocation.
    PrivateSvd {
        #[serde(default = "default_frac")]
        frac: f64,
    },
    /// Standard basis with equal allocation.
    Iid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySetting {
    pub epsilon: f64,
    /// Unset means `1/n` for the `n` private records.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub mechanism: MechanismChoice,
    pub privacy: PrivacySetting,
    pub trials: usize,
    pub seed: RandomSeed,
    pub directions: DirectionSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub mechanism: String,
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci_half_width: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Binary-allocation split used, when one applies.
    pub tau: Option<f64>,
}

/// Mean and `1.96 * s / sqrt(T)` with the sample standard deviation; the
/// half-width is zero for a single value.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let t = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / t;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1.0);
    (mean, 1.96 * var.sqrt() / t.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    /// Mean of `a_t - b_t`.
    pub mean: f64,
    pub ci_half_width: f64,
}

pub fn paired_difference(a: &TrialReport, b: &TrialReport) -> Result<PairedDifference> {
    if a.values.len() != b.values.len() {
        return Err(MvgError::param("paired reports need the same number of trials"));
    }
    let diffs: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let (mean, ci_half_width) = mean_ci(&diffs);
    Ok(PairedDifference { mean, ci_half_width })
}

/// Everything a trial needs that does not depend on the trial index.
struct Prepared {
    task: Task,
    f_x: Matrix,
    q: QuerySpec,
    p: PrivacyParams,
    /// The private records, for direction estimation.
    x_private: Matrix,
    value_bound: f64,
    s1: f64,
    s_bar: Option<SpdMatrix>,
    test: Option<RegressionTest>,
}

struct RegressionTest {
    target: usize,
    features: Matrix,
    targets: Vec<f64>,
}

enum Plan {
    Fixed(Box<MvgMechanism>),
    PrivateSvd { frac: f64, choice: MechanismChoice },
    Gaussian(f64),
    Laplace(f64),
    Exact,
}

fn config_err(msg: impl Into<String>) -> MvgError {
    MvgError::Config(msg.into())
}

fn validate(cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    if cfg.trials == 0 {
        return Err(config_err("trials must be at least 1"));
    }
    let square = matches!(cfg.task, Task::FirstPc);
    if let MechanismChoice::MvgEquimodal { .. } = cfg.mechanism {
        if !square {
            return Err(config_err("equi-modal noise needs a square query; use the first-pc task"));
        }
    }
    if let MechanismChoice::Laplace { s1: Some(s1) } = cfg.mechanism {
        if !(s1 >= 0.0 && s1.is_finite()) {
            return Err(config_err("laplace s1 must be non-negative"));
        }
    }
    if let Task::Regression { target, holdout } = &cfg.task {
        if data.feature_index(target).is_none() {
            return Err(config_err(format!("unknown target feature {target:?}")));
        }
        if *holdout == 0 || holdout + 2 > data.n() {
            return Err(config_err(format!(
                "holdout of {holdout} leaves too few of {} samples for training",
                data.n()
            )));
        }
        if data.m() < 2 {
            return Err(config_err("regression needs at least one feature besides the target"));
        }
    }
    match &cfg.directions {
        DirectionSource::StandardBasis { indices, tau } => {
            if let Some(t) = tau {
                if !(*t > 0.0 && *t < 1.0) {
                    return Err(config_err(format!("tau = {t} must lie in (0,1)")));
                }
            }
            if cfg.mechanism.is_mvg() {
                PrecisionAllocation::binary(data.m(), indices, tau.unwrap_or(TAU_GRID[0]))
                    .map_err(|e| config_err(e.to_string()))?;
            }
        }
        DirectionSource::PrivateSvd { frac } => {
            if !(*frac > 0.0 && *frac < 1.0) {
                return Err(config_err(format!("direction budget fraction {frac} must lie in (0,1)")));
            }
        }
        DirectionSource::Iid => {}
    }
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, data: &Dataset) -> Result<Prepared> {
    validate(cfg, data)?;
    let (lo, hi) = data.value_range();
    let c = data.value_bound();
    let (private, test) = match &cfg.task {
        Task::Regression { target, holdout } => {
            let mut idx: Vec<usize> = (0..data.n()).collect();
            idx.shuffle(&mut cfg.seed.derive(LABEL_SPLIT).with_stream(0).rng());
            let (test_idx, train_idx) = idx.split_at(*holdout);
            let mut train_idx = train_idx.to_vec();
            let mut test_idx = test_idx.to_vec();
            train_idx.sort_unstable();
            test_idx.sort_unstable();
            let target = data.feature_index(target).expect("validated");
            let test = data.select_samples(&test_idx)?;
            let (features, targets) = split_target(test.features(), target)?;
            (
                data.select_samples(&train_idx)?,
                Some(RegressionTest {
                    target,
                    features,
                    targets,
                }),
            )
        }
        _ => (data.clone(), None),
    };
    let (m, n) = (private.m(), private.n());
    let delta = cfg.privacy.delta.unwrap_or(1.0 / n as f64);
    let p = PrivacyParams::new(cfg.privacy.epsilon, delta)?;
    let x_private = private.features().clone();
    let (f_x, q, s1, s_bar) = match cfg.task {
        Task::FirstPc => {
            let sens = sensitivity_catalog(&CatalogQuery::Covariance { c, m, n })?;
            let structure = match cfg.mechanism {
                MechanismChoice::MvgUnimodal => Structure::General,
                _ => Structure::SymmetricPsd,
            };
            let f_x = query_covariance(&private);
            let s_bar = SpdMatrix::new(f_x.clone())?;
            let s1 = 2.0 * (m * m) as f64 * c * c / n as f64;
            (f_x, QuerySpec::new(m, m, sens.s2, sens.gamma, structure)?, s1, Some(s_bar))
        }
        Task::Regression { .. } | Task::CovarianceEstimation => {
            let sens = sensitivity_catalog(&CatalogQuery::Identity { lo, hi, m, n })?;
            let s_bar = match cfg.task {
                Task::CovarianceEstimation => Some(SpdMatrix::new(query_covariance(&private))?),
                _ => None,
            };
            let s1 = (hi - lo) * m as f64;
            (
                query_identity(&private),
                QuerySpec::new(m, n, sens.s2, sens.gamma, Structure::General)?,
                s1,
                s_bar,
            )
        }
    };
    Ok(Prepared {
        task: cfg.task.clone(),
        f_x,
        q,
        p,
        x_private,
        value_bound: c,
        s1,
        s_bar,
        test,
    })
}

/// Splits a feature matrix into the non-target rows and the target row.
fn split_target(x: &Matrix, target: usize) -> Result<(Matrix, Vec<f64>)> {
    let rows: Vec<usize> = (0..x.rows()).filter(|&i| i != target).collect();
    let a = x.as_dmatrix();
    let features = DMatrix::from_fn(rows.len(), x.cols(), |i, j| a[(rows[i], j)]);
    Ok((Matrix::from_dmatrix(features)?, a.row(target).iter().copied().collect()))
}

fn build_mvg(
    choice: MechanismChoice,
    q: &QuerySpec,
    p: &PrivacyParams,
    dirs: &NoiseDirections,
    alloc: &PrecisionAllocation,
) -> Result<MvgMechanism> {
    match choice {
        MechanismChoice::MvgUnimodal => MvgMechanism::unimodal(q, p, dirs, alloc),
        MechanismChoice::MvgEquimodal { theorem } => MvgMechanism::equimodal(q, p, dirs, alloc, theorem),
        _ => Err(MvgError::Internal("not an MVG mechanism".into())),
    }
}

fn mvg_budget(choice: MechanismChoice, q: &QuerySpec, p: &PrivacyParams) -> Result<f64> {
    match choice {
        MechanismChoice::MvgUnimodal => precision_budget(q, p, PrecisionMode::Unimodal),
        MechanismChoice::MvgEquimodal { theorem } => equimodal_budget(q, p, theorem),
        _ => Err(MvgError::Internal("not an MVG mechanism".into())),
    }
}

fn plan(cfg: &ExperimentConfig, prep: &Prepared, tau: Option<f64>) -> Result<Plan> {
    let m = prep.q.m();
    Ok(match cfg.mechanism {
        MechanismChoice::Gaussian => Plan::Gaussian(gaussian_scale(prep.q.s2(), &prep.p)),
        MechanismChoice::Laplace { s1 } => Plan::Laplace(s1.unwrap_or(prep.s1) / prep.p.epsilon()),
        MechanismChoice::NonPrivate => Plan::Exact,
        choice => match &cfg.directions {
            DirectionSource::StandardBasis { indices, .. } => {
                let alloc = PrecisionAllocation::binary(m, indices, tau.expect("tau chosen"))?;
                Plan::Fixed(Box::new(build_mvg(choice, &prep.q, &prep.p, &NoiseDirections::identity(m), &alloc)?))
            }
            DirectionSource::Iid => {
                let alloc = PrecisionAllocation::equal(m)?;
                Plan::Fixed(Box::new(build_mvg(choice, &prep.q, &prep.p, &NoiseDirections::identity(m), &alloc)?))
            }
            DirectionSource::PrivateSvd { frac } => Plan::PrivateSvd { frac: *frac, choice },
        },
    })
}

fn perturb(cfg: &ExperimentConfig, prep: &Prepared, plan: &Plan, t: u64) -> Result<Matrix> {
    let seed = cfg.seed.with_stream(t);
    let mut rng = seed.rng();
    match plan {
        Plan::Fixed(mech) => mech.perturb(&prep.f_x, &mut rng),
        Plan::Gaussian(scale) => add_gaussian_noise(&prep.f_x, *scale, &mut rng),
        Plan::Laplace(b) => add_laplace_noise(&prep.f_x, *b, &mut rng),
        Plan::Exact => Ok(prep.f_x.clone()),
        Plan::PrivateSvd { frac, choice } => {
            let dir_seed = cfg.seed.derive(LABEL_DIRECTIONS).with_stream(t);
            let pd = private_directions(&prep.x_private, prep.value_bound, *frac, &prep.p, dir_seed)?;
            // signal eigenvalues of X X^T, floored so water filling sees positive levels
            let n = prep.x_private.cols() as f64;
            let top = pd.eigenvalues[0].max(0.0) * n;
            let alloc = if top > 0.0 {
                let lambda: Vec<f64> = pd.eigenvalues.iter().map(|l| (l * n).max(top * 1e-12)).collect();
                max_pnr_allocation(&lambda, mvg_budget(*choice, &prep.q, &pd.remaining)?)?
            } else {
                PrecisionAllocation::equal(pd.dirs.dim())?
            };
            build_mvg(*choice, &prep.q, &pd.remaining, &pd.dirs, &alloc)?.perturb(&prep.f_x, &mut rng)
        }
    }
}

/// Unit-norm top left singular vector.
pub fn top_principal_component(s: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(s)?.u.column(0))
}

fn evaluate(prep: &Prepared, out: &Matrix) -> Result<f64> {
    match &prep.task {
        Task::Regression { .. } => {
            let test = prep.test.as_ref().expect("regression has a test split");
            let (features, targets) = split_target(out, test.target)?;
            let model = RidgeModel::fit(&features, &targets, RIDGE_LAMBDA)?;
            metric_rmse(&model.predict(&test.features)?, &test.targets)
        }
        Task::FirstPc => {
            let v = top_principal_component(out)?;
            metric_delta_rho(&v, prep.s_bar.as_ref().expect("covariance task"))
        }
        Task::CovarianceEstimation => {
            let (_, vectors) = symmetric_eigen(&second_moment(out))?;
            rss_from_vectors(&vectors, prep.s_bar.as_ref().expect("covariance task"))
        }
    }
}

fn run_trials(cfg: &ExperimentConfig, prep: &Prepared, plan: &Plan) -> Result<Vec<f64>> {
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| evaluate(prep, &perturb(cfg, prep, plan, t)?))
        .collect()
}

/// Runs all trials of one configuration.
///
/// Configuration problems are reported as [`MvgError::Config`] before any
/// trial runs.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrialReport> {
    let prep = prepare(cfg, data)?;
    let taus: Vec<Option<f64>> = match (&cfg.directions, cfg.mechanism.is_mvg()) {
        (DirectionSource::StandardBasis { tau: Some(t), .. }, true) => vec![Some(*t)],
        (DirectionSource::StandardBasis { tau: None, .. }, true) => TAU_GRID.iter().map(|t| Some(*t)).collect(),
        _ => vec![None],
    };
    let mut best: Option<(Vec<f64>, f64, Option<f64>)> = None;
    for tau in taus {
        let values = run_trials(cfg, &prep, &plan(cfg, &prep, tau)?)?;
        let (mean, _) = mean_ci(&values);
        if best.as_ref().is_none_or(|(_, m, _)| mean < *m) {
            best = Some((values, mean, tau));
        }
    }
    let (values, _, tau) = best.expect("at least one tau");
    let (mean, ci_half_width) = mean_ci(&values);
    Ok(TrialReport {
        mechanism: cfg.mechanism.label(),
        metric: cfg.task.metric_name().into(),
        values,
        mean,
        ci_half_width,
        epsilon: prep.p.epsilon(),
        delta: prep.p.delta(),
        tau,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub direction: usize,
    pub epsilon: f64,
    pub report: TrialReport,
}

/// One report per (direction choice, epsilon) cell, all cells sharing the
/// base seed so that they are paired trial by trial.
pub fn direction_study(
    base: &ExperimentConfig,
    choices: &[DirectionSource],
    epsilons: &[f64],
    data: &Dataset,
) -> Result<Vec<StudyCell>> {
    if choices.len() < 2 {
        return Err(config_err("a direction study needs at least two direction choices"));
    }
    if epsilons.is_empty() {
        return Err(config_err("a direction study needs at least one epsilon"));
    }
    let mut cells = Vec::with_capacity(choices.len() * epsilons.len());
    for (direction, choice) in choices.iter().enumerate() {
        for &epsilon in epsilons {
            let cfg = ExperimentConfig {
                directions: choice.clone(),
                privacy: PrivacySetting { epsilon, ..base.privacy },
                ..base.clone()
            };
            cells.push(StudyCell {
                direction,
                epsilon,
                report: run_experiment(&cfg, data)?,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spd(rows: &[Vec<f64>]) -> SpdMatrix {
        SpdMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn diag21() -> SpdMatrix {
        spd(&[vec![2.0, 0.0], vec![0.0, 1.0]])
    }

    fn small_dataset(seed: u64, m: usize, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        Dataset::new(
            Matrix::from_dmatrix(x).unwrap(),
            (0..m).map(|i| format!("f{i}")).collect(),
            (-1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn identity_query() {
        let d = small_dataset(1, 3, 5);
        assert_eq!(&query_identity(&d), d.features());
        let again = Dataset::new(query_identity(&d), d.feature_names().to_vec(), d.value_range()).unwrap();
        assert_eq!(query_identity(&again), query_identity(&d));
        let liver = synthetic_dataset(SyntheticKind::Liver, 1);
        let train = liver.select_samples(&(0..248).collect::<Vec<_>>()).unwrap();
        assert_eq!(query_identity(&train).shape(), (6, 248));
    }

    #[test]
    fn covariance_query() {
        let x = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(second_moment(&x), Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap());
        let d = Dataset::new(Matrix::identity(2), vec!["a".into(), "b".into()], (-1.0, 1.0)).unwrap();
        assert_eq!(query_covariance(&d), Matrix::identity(2).scale(0.5).unwrap());

        let d = small_dataset(2, 3, 50);
        let s = query_covariance(&d);
        let mut brute = [[0.0; 3]; 3];
        for j in 0..50 {
            let c = d.features().column(j);
            for a in 0..3 {
                for b in 0..3 {
                    brute[a][b] += c[a] * c[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                assert!((s.get(a, b) - brute[a][b] / 50.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(metric_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(metric_rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!((metric_rmse(&[0.5, -0.5], &[1.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(metric_rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn delta_rho_examples() {
        let s = diag21();
        assert!(metric_delta_rho(&[1.0, 0.0], &s).unwrap().abs() < 1e-15);
        assert!((metric_delta_rho(&[0.0, 1.0], &s).unwrap() - 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((metric_delta_rho(&[h, h], &s).unwrap() - 0.5).abs() < 1e-12);
        assert!(metric_delta_rho(&[1.0, 1.0], &s).is_err());
    }

    fn random_spd(rng: &mut impl Rng, n: usize) -> SpdMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(Matrix::from_dmatrix(&a * a.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()).unwrap()
    }

    #[test]
    fn delta_rho_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let s = random_spd(&mut rng, n);
            let top = s.eigenvectors().column(0);
            assert!(metric_delta_rho(&top, &s).unwrap() < 1e-8);
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            assert!(metric_delta_rho(&v, &s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn rss_examples() {
        let s = diag21();
        assert_eq!(metric_rss(&s, &s).unwrap(), 0.0);
        let swapped = spd(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert!((metric_rss(&swapped, &s).unwrap() - 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_spd(&mut rng, 4);
            let b = random_spd(&mut rng, 4);
            let q = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let conj = |s: &SpdMatrix| {
                let c = &q * s.matrix().as_dmatrix() * q.transpose();
                SpdMatrix::new(Matrix::from_dmatrix((&c + c.transpose()) * 0.5).unwrap()).unwrap()
            };
            let r0 = metric_rss(&a, &b).unwrap();
            let r1 = metric_rss(&conj(&a), &conj(&b)).unwrap();
            assert!((r0 - r1).abs() <= 1e-9 * r0.max(1.0));
        }
    }

    #[test]
    fn pnr_examples() {
        let i2 = SpdMatrix::identity(2);
        assert!((metric_pnr(&i2, &i2).unwrap().pnr - 4.0).abs() < 1e-12);
        let tiny = SpdMatrix::new(Matrix::identity(2).scale(1e-14).unwrap()).unwrap();
        assert!((metric_pnr(&tiny, &i2).unwrap().pnr - 1.0).abs() < 1e-12);
        let k = spd(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        let out = metric_pnr(&k, &i2).unwrap();
        assert!((out.pnr - 8.0).abs() < 1e-12);
        assert!((out.mutual_information - 0.5 * 8f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_spd(&mut rng, 3);
            let b = random_spd(&mut rng, 3);
            assert!(metric_pnr(&a, &b).unwrap().pnr >= 1.0);
        }
    }

    #[test]
    fn ridge_oracles() {
        // exact linear data
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Matrix::from_dmatrix(DMatrix::from_fn(3, 40, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let w_true = [0.5, -1.5, 2.0];
        let y: Vec<f64> = (0..40).map(|j| (0..3).map(|i| w_true[i] * x.get(i, j)).sum()).collect();
        let w = ridge_fit(&x, &y, 1e-12).unwrap();
        for (a, b) in w.iter().zip(&w_true) {
            assert!((a - b).abs() < 1e-6);
        }
        let w = ridge_fit(&x, &y, 1e12).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-9));

        // 1 feature, 3 samples: w = sum(x y) / (sum(x^2) + lambda)
        let x = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let w = ridge_fit(&x, &[2.0, 3.0, 7.0], 0.5).unwrap();
        assert!((w[0] - 29.0 / 14.5).abs() < 1e-10);
        assert!(ridge_fit(&x, &[1.0], 0.5).is_err());
    }

    #[test]
    fn standardized_ridge_predicts_affine_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Matrix::from_dmatrix(DMatrix::from_fn(2, 60, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let y: Vec<f64> = (0..60).map(|j| 3.0 + x.get(0, j) - 2.0 * x.get(1, j)).collect();
        let model = RidgeModel::fit(&x, &y, 1e-9).unwrap();
        let pred = model.predict(&x).unwrap();
        assert!(metric_rmse(&pred, &y).unwrap() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let d = small_dataset(8, 3, 4);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice(), (-1.0, 1.0)).unwrap();
        assert_eq!(back, d);
        assert!(Dataset::from_csv_reader("a,b\n1,2\n3,4\n".as_bytes(), (0.0, 3.0)).is_err());
        assert!(Dataset::from_csv_reader("a,b\n1,x\n3,2\n".as_bytes(), (0.0, 5.0)).is_err());
    }

    #[test]
    fn synthetic_shapes_and_ranges() {
        for kind in [SyntheticKind::Liver, SyntheticKind::Movement, SyntheticKind::Ctg] {
            let d = synthetic_dataset(kind, 3);
            assert_eq!((d.m(), d.n()), kind.shape());
            assert_eq!(d, synthetic_dataset(kind, 3));
            // informative features carry more variance than the rest
            let s = query_covariance(&d);
            let informative = kind.informative();
            let min_inf = informative.iter().map(|&i| s.get(i, i)).fold(f64::INFINITY, f64::min);
            let max_other = (0..d.m())
                .filter(|i| !informative.contains(i))
                .map(|i| s.get(i, i))
                .fold(0.0, f64::max);
            assert!(min_inf > max_other, "{kind:?}");
        }
    }

    #[test]
    fn mean_ci_convention() {
        assert_eq!(mean_ci(&[3.0]), (3.0, 0.0));
        let (m, ci) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    fn cfg(task: Task, mechanism: MechanismChoice, directions: DirectionSource, epsilon: f64, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            task,
            mechanism,
            privacy: PrivacySetting { epsilon, delta: None },
            trials,
            seed: RandomSeed::new(11, 0),
            directions,
        }
    }

    fn regression() -> Task {
        Task::Regression {
            target: "drinks".into(),
            holdout: DEFAULT_HOLDOUT,
        }
    }

    #[test]
    fn config_errors_precede_trials() {
        let liver = synthetic_dataset(SyntheticKind::Liver, 1);
        let eq = MechanismChoice::MvgEquimodal { theorem: Theorem::General };
        let bad = [
            cfg(regression(), eq, DirectionSource::Iid, 1.0, 5),
            cfg(regression(), MechanismChoice::Gaussian, DirectionSource::Iid, 1.0, 0),
            cfg(
                Task::Regression { target: "nope".into(), holdout: 97 },
                MechanismChoice::Gaussian,
                DirectionSource::Iid,
                1.0,
                5,
            ),
            cfg(
                regression(),
                MechanismChoice::MvgUnimodal,
                DirectionSource::StandardBasis { indices: vec![9], tau: None },
                1.0,
                5,
            ),
            cfg(regression(), MechanismChoice::MvgUnimodal, DirectionSource::PrivateSvd { frac: 1.5 }, 1.0, 5),
        ];
        for c in &bad {
            assert!(matches!(run_experiment(c, &liver), Err(MvgError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn single_trial_has_zero_ci_and_is_reproducible() {
        let liver = synthetic_dataset(SyntheticKind::Liver, 1);
        let c = cfg(regression(), MechanismChoice::Gaussian, DirectionSource::Iid, 1.0, 1);
        let a = run_experiment(&c, &liver).unwrap();
        assert_eq!(a.ci_half_width, 0.0);
        assert_eq!(a, run_experiment(&c, &liver).unwrap());
        assert!((a.delta - 1.0 / 248.0).abs() < 1e-18);
    }

    #[test]
    fn huge_epsilon_recovers_non_private_rmse() {
        let liver = synthetic_dataset(SyntheticKind::Liver, 2);
        let dirs = DirectionSource::StandardBasis { indices: vec![2, 5], tau: Some(0.75) };
        let exact = run_experiment(&cfg(regression(), MechanismChoice::NonPrivate, dirs.clone(), 1.0, 1), &liver).unwrap();
        let mvg = run_experiment(&cfg(regression(), MechanismChoice::MvgUnimodal, dirs, 1e12, 20), &liver).unwrap();
        assert!((mvg.mean - exact.mean).abs() <= mvg.ci_half_width.max(1e-3 * exact.mean), "{} vs {}", mvg.mean, exact.mean);
    }

    #[test]
    fn private_svd_pipeline_runs() {
        let liver = synthetic_dataset(SyntheticKind::Liver, 2);
        let c = cfg(regression(), MechanismChoice::MvgUnimodal, DirectionSource::PrivateSvd { frac: 0.2 }, 1e12, 4);
        let r = run_experiment(&c, &liver).unwrap();
        assert!(r.mean.is_finite());
        assert_eq!(r, run_experiment(&c, &liver).unwrap());
    }

    #[test]
    fn tau_sweep_reports_best() {
        let mov = synthetic_dataset(SyntheticKind::Movement, 1);
        let dirs = DirectionSource::StandardBasis { indices: vec![0, 3], tau: None };
        let c = cfg(Task::FirstPc, MechanismChoice::MvgEquimodal { theorem: Theorem::Psd }, dirs, 1.0, 5);
        let best = run_experiment(&c, &mov).unwrap();
        let tau = best.tau.unwrap();
        assert!(TAU_GRID.contains(&tau));
        for t in TAU_GRID {
            let fixed = DirectionSource::StandardBasis { indices: vec![0, 3], tau: Some(t) };
            let r = run_experiment(&ExperimentConfig { directions: fixed, ..c.clone() }, &mov).unwrap();
            assert!(best.mean <= r.mean);
        }
    }

    #[test]
    fn identical_choices_are_indistinguishable() {
        let d = small_dataset(9, 3, 200);
        let base = cfg(Task::FirstPc, MechanismChoice::MvgEquimodal { theorem: Theorem::Psd }, DirectionSource::Iid, 1.0, 10);
        let cells = direction_study(&base, &[DirectionSource::Iid, DirectionSource::Iid], &[0.5, 1.0, 2.0], &d).unwrap();
        assert_eq!(cells.len(), 6);
        let diff = paired_difference(&cells[0].report, &cells[3].report).unwrap();
        assert!(diff.mean.abs() <= diff.ci_half_width);
        assert!(direction_study(&base, &[DirectionSource::Iid], &[1.0], &d).is_err());
    }

    #[test]
    fn informative_allocation_beats_anti_informative() {
        // the target depends on one dominant feature; noise at a level where
        // the allocation matters
        let liver = synthetic_dataset(SyntheticKind::Liver, 4);
        let base = cfg(regression(), MechanismChoice::MvgUnimodal, DirectionSource::Iid, 1e8, 30);
        let good = DirectionSource::StandardBasis { indices: vec![2, 5], tau: Some(0.95) };
        let bad = DirectionSource::StandardBasis { indices: vec![0, 1], tau: Some(0.95) };
        let cells = direction_study(&base, &[good, bad], &[1e8], &liver).unwrap();
        let diff = paired_difference(&cells[0].report, &cells[1].report).unwrap();
        assert!(diff.mean + diff.ci_half_width < 0.0, "{diff:?}");
    }
}
