//! The MVG mechanism with directional noise, precision allocation, the
//! water-filling (max-PNR) noise design, private direction estimation and
//! the i.i.d. Gaussian and Laplace baselines.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{
    budget_terms, check_sufficient_with, equimodal_budget, general_bound, precision_budget,
    sensitivity_catalog, CatalogQuery, ConditionReport, PrecisionMode, PrivacyParams, QuerySpec,
    Structure, Theorem,
};
use crate::error::{MvgError, Result};
use crate::matcore::{symmetric_eigen, Matrix, SpdMatrix};
use crate::sampler::{standard_normal_matrix, MvgSpec, PreparedSampler, RandomSeed, SamplerMethod};

/// Tolerance on `sum(theta) <= 1`.
pub const ALLOCATION_SUM_TOL: f64 = 1e-12;

/// Orthonormal noise directions, one per column.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDirections {
    w: Matrix,
}

impl NoiseDirections {
    pub fn new(w: Matrix) -> Result<Self> {
        if !w.is_square() {
            return Err(MvgError::param(format!(
                "noise directions must be square, got {:?}",
                w.shape()
            )));
        }
        let m = w.rows();
        let gram = w.as_dmatrix().transpose() * w.as_dmatrix();
        let err = (gram - DMatrix::<f64>::identity(m, m)).norm();
        if err > 1e-8 * (m as f64).sqrt() {
            return Err(MvgError::param(format!(
                "noise directions are not orthonormal (|W^T W - I| = {err:e})"
            )));
        }
        Ok(NoiseDirections { w })
    }

    pub fn identity(m: usize) -> Self {
        NoiseDirections {
            w: Matrix::identity(m),
        }
    }

    /// Eigenvectors of `s`, strongest first.
    pub fn from_eigenvectors(s: &SpdMatrix) -> Self {
        NoiseDirections {
            w: s.eigenvectors().clone(),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }
}

/// Fractions `theta_i` of the precision budget given to each direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAllocation {
    theta: Vec<f64>,
}

impl PrecisionAllocation {
    /// Each `theta_i` must lie in `(0, 1]` and the total may not exceed 1.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(MvgError::Allocation("empty allocation".into()));
        }
        if let Some((i, t)) = theta
            .iter()
            .enumerate()
            .find(|(_, t)| !(**t > 0.0 && **t <= 1.0))
        {
            return Err(MvgError::Allocation(format!(
                "theta[{i}] = {t} must lie in (0, 1]"
            )));
        }
        let total: f64 = theta.iter().sum();
        if total > 1.0 + ALLOCATION_SUM_TOL {
            return Err(MvgError::Allocation(format!(
                "allocation sums to {total}, more than the whole budget"
            )));
        }
        Ok(PrecisionAllocation { theta })
    }

    pub fn equal(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(MvgError::Allocation("empty allocation".into()));
        }
        Self::new(vec![1.0 / m as f64; m])
    }

    /// `tau` of the budget split equally over `flagged`, the rest equally
    /// over the remaining indices.
    pub fn binary(m: usize, flagged: &[usize], tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MvgError::Allocation(format!("tau = {tau} must lie in (0,1)")));
        }
        let mut is_flagged = vec![false; m];
        for &i in flagged {
            if i >= m {
                return Err(MvgError::Allocation(format!(
                    "flagged index {i} out of range for {m} directions"
                )));
            }
            is_flagged[i] = true;
        }
        let k = is_flagged.iter().filter(|f| **f).count();
        if k == 0 || k == m {
            return Err(MvgError::Allocation(
                "binary allocation needs both flagged and unflagged directions".into(),
            ));
        }
        let hi = tau / k as f64;
        let lo = (1.0 - tau) / (m - k) as f64;
        Self::new(is_flagged.iter().map(|&f| if f { hi } else { lo }).collect())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.theta.iter().sum()
    }
}

/// `Sigma = W diag(1/sqrt(theta_i * budget)) W^T`.
pub fn compile_covariance(
    dirs: &NoiseDirections,
    alloc: &PrecisionAllocation,
    budget: f64,
) -> Result<SpdMatrix> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(MvgError::param(format!("precision budget {budget} must be positive")));
    }
    if alloc.len() != dirs.dim() {
        return Err(MvgError::Allocation(format!(
            "{} allocation entries for {} directions",
            alloc.len(),
            dirs.dim()
        )));
    }
    if let Some(t) = alloc.theta.iter().find(|t| !(**t > 0.0)) {
        return Err(MvgError::Allocation(format!("nonpositive allocation {t}")));
    }
    let sigmas: Vec<f64> = alloc.theta.iter().map(|t| 1.0 / (t * budget).sqrt()).collect();
    SpdMatrix::from_eigen(dirs.matrix(), &sigmas)
}

#[derive(Clone, Debug)]
pub struct MechanismOutput {
    pub value: Matrix,
    pub sigma: Arc<SpdMatrix>,
    pub psi: Arc<SpdMatrix>,
    /// Precision budget available under the chosen condition.
    pub budget: f64,
    /// `budget * sum(theta)`.
    pub budget_spent: f64,
    pub condition_report: ConditionReport,
    pub sampler: SamplerMethod,
}

/// A compiled MVG mechanism whose covariances and sampler are reused
/// across invocations.
#[derive(Clone, Debug)]
pub struct MvgMechanism {
    spec: MvgSpec,
    sampler: PreparedSampler,
    budget: f64,
    budget_spent: f64,
    report: ConditionReport,
}

impl MvgMechanism {
    /// Unimodal noise: directional row covariance, `Psi = I_n`.
    pub fn unimodal(
        q: &QuerySpec,
        p: &PrivacyParams,
        dirs: &NoiseDirections,
        alloc: &PrecisionAllocation,
    ) -> Result<Self> {
        if q.structure() != Structure::General {
            return Err(MvgError::structure("unimodal noise requires a general query"));
        }
        check_dirs(dirs, q.m())?;
        let budget = precision_budget(q, p, PrecisionMode::Unimodal)?;
        let sigma = compile_covariance(dirs, alloc, budget)?;
        Self::finish(sigma, SpdMatrix::identity(q.n()), q, p, Theorem::General, budget, alloc)
    }

    /// Equi-modal noise: `Psi = Sigma`, certified by `theorem`.
    pub fn equimodal(
        q: &QuerySpec,
        p: &PrivacyParams,
        dirs: &NoiseDirections,
        alloc: &PrecisionAllocation,
        theorem: Theorem,
    ) -> Result<Self> {
        if q.m() != q.n() {
            return Err(MvgError::structure("equi-modal noise requires a square query"));
        }
        if theorem == Theorem::Psd && q.structure() != Structure::SymmetricPsd {
            return Err(MvgError::structure(
                "the PSD condition requires a symmetric PSD query",
            ));
        }
        check_dirs(dirs, q.m())?;
        let budget = equimodal_budget(q, p, theorem)?;
        let sigma = compile_covariance(dirs, alloc, budget)?;
        let psi = sigma.clone();
        Self::finish(sigma, psi, q, p, theorem, budget, alloc)
    }

    fn finish(
        sigma: SpdMatrix,
        psi: SpdMatrix,
        q: &QuerySpec,
        p: &PrivacyParams,
        theorem: Theorem,
        budget: f64,
        alloc: &PrecisionAllocation,
    ) -> Result<Self> {
        let report = check_sufficient_with(&sigma, &psi, q, p, theorem)?;
        if !report.holds {
            return Err(MvgError::Internal(format!(
                "compiled covariance violates the sufficient condition (lhs {}, rhs {})",
                report.lhs, report.rhs
            )));
        }
        let spec = MvgSpec::new(sigma, psi);
        let sampler = PreparedSampler::auto(&spec)?;
        Ok(MvgMechanism {
            spec,
            sampler,
            budget,
            budget_spent: budget * alloc.total(),
            report,
        })
    }

    pub fn spec(&self) -> &MvgSpec {
        &self.spec
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn budget_spent(&self) -> f64 {
        self.budget_spent
    }

    pub fn condition_report(&self) -> ConditionReport {
        self.report
    }

    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        self.sampler.draw(rng)
    }

    /// `f_x + Z` with noise drawn from `rng`.
    pub fn perturb<R: Rng + ?Sized>(&self, f_x: &Matrix, rng: &mut R) -> Result<Matrix> {
        if f_x.shape() != (self.spec.m(), self.spec.n()) {
            return Err(MvgError::param(format!(
                "query output is {:?}, mechanism expects {}x{}",
                f_x.shape(),
                self.spec.m(),
                self.spec.n()
            )));
        }
        f_x.add(&self.noise(rng))
    }

    pub fn apply(&self, f_x: &Matrix, seed: RandomSeed) -> Result<MechanismOutput> {
        let value = self.perturb(f_x, &mut seed.rng())?;
        Ok(MechanismOutput {
            value,
            sigma: self.spec.sigma().clone(),
            psi: self.spec.psi().clone(),
            budget: self.budget,
            budget_spent: self.budget_spent,
            condition_report: self.report,
            sampler: self.sampler.method(),
        })
    }
}

fn check_dirs(dirs: &NoiseDirections, m: usize) -> Result<()> {
    if dirs.dim() != m {
        return Err(MvgError::param(format!(
            "{}x{} noise directions for a query with {m} rows",
            dirs.dim(),
            dirs.dim()
        )));
    }
    Ok(())
}

fn check_query_shape(f_x: &Matrix, q: &QuerySpec) -> Result<()> {
    if f_x.shape() != (q.m(), q.n()) {
        return Err(MvgError::param(format!(
            "query output is {:?} but the query spec is {}x{}",
            f_x.shape(),
            q.m(),
            q.n()
        )));
    }
    Ok(())
}

pub fn mvg_unimodal(
    f_x: &Matrix,
    q: &QuerySpec,
    p: &PrivacyParams,
    dirs: &NoiseDirections,
    alloc: &PrecisionAllocation,
    seed: RandomSeed,
) -> Result<MechanismOutput> {
    check_query_shape(f_x, q)?;
    MvgMechanism::unimodal(q, p, dirs, alloc)?.apply(f_x, seed)
}

pub fn mvg_equimodal(
    f_x: &Matrix,
    q: &QuerySpec,
    p: &PrivacyParams,
    dirs: &NoiseDirections,
    alloc: &PrecisionAllocation,
    theorem: Theorem,
    seed: RandomSeed,
) -> Result<MechanismOutput> {
    check_query_shape(f_x, q)?;
    MvgMechanism::equimodal(q, p, dirs, alloc, theorem)?.apply(f_x, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterFill {
    /// Noise precision per level; zero for deactivated levels.
    pub lambda_z_inv: Vec<f64>,
    /// Water level over the active set.
    pub c: f64,
    pub active: Vec<bool>,
}

/// Maximizes `prod_i (x_i + 1/lambda_i)` subject to `sum x_i = d`, `x >= 0`.
pub fn waterfill_allocation(lambda_f: &[f64], d: f64) -> Result<WaterFill> {
    if lambda_f.is_empty() {
        return Err(MvgError::param("water filling needs at least one level"));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(MvgError::param(format!("water-filling budget {d} must be positive")));
    }
    if let Some(l) = lambda_f.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(MvgError::param(format!("signal eigenvalue {l} must be positive")));
    }
    let floor: Vec<f64> = lambda_f.iter().map(|l| 1.0 / l).collect();
    let mut active = vec![true; floor.len()];
    let c = loop {
        let k = active.iter().filter(|a| **a).count();
        let sum: f64 = floor.iter().zip(&active).filter(|(_, a)| **a).map(|(f, _)| f).sum();
        let c = (d + sum) / k as f64;
        let mut changed = false;
        for (a, f) in active.iter_mut().zip(&floor) {
            if *a && c - f <= 0.0 {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break c;
        }
    };
    let lambda_z_inv = floor
        .iter()
        .zip(&active)
        .map(|(f, a)| if *a { c - f } else { 0.0 })
        .collect();
    Ok(WaterFill {
        lambda_z_inv,
        c,
        active,
    })
}

#[derive(Clone, Debug)]
pub struct MaxPnrNoise {
    /// Joint covariance of `vec(Z)` (mn x mn).
    pub covariance: SpdMatrix,
    pub waterfill: WaterFill,
    /// Budget `d` the active levels spend exactly.
    pub budget: f64,
    /// Variance given to deactivated directions, if any.
    pub floor_variance: Option<f64>,
    pub floored: Vec<usize>,
    /// `sum_i 1/variance_i` including the floored directions.
    pub total_precision: f64,
}

/// Noise covariance maximizing the power-to-noise ratio for a query whose
/// vectorized output has covariance `k_f`.
///
/// Directions the water level does not reach get the largest active variance
/// so that no direction is left noiseless; the report lists them and the
/// extra precision they carry.
pub fn max_pnr_covariance(k_f: &SpdMatrix, q: &QuerySpec, p: &PrivacyParams) -> Result<MaxPnrNoise> {
    let mn = q.m() * q.n();
    if k_f.dim() != mn {
        return Err(MvgError::param(format!(
            "signal covariance is {0}x{0}, expected {mn}x{mn}",
            k_f.dim()
        )));
    }
    if k_f.eigenvalues().iter().any(|l| !(*l > 0.0)) {
        return Err(MvgError::structure("signal covariance must be positive definite"));
    }
    let d = general_bound(&budget_terms(q, p), p);
    let wf = waterfill_allocation(k_f.eigenvalues(), d)?;
    let max_active_var = wf
        .lambda_z_inv
        .iter()
        .zip(&wf.active)
        .filter(|(_, a)| **a)
        .map(|(x, _)| 1.0 / x)
        .fold(0.0_f64, f64::max);
    let floored: Vec<usize> = (0..mn).filter(|&i| !wf.active[i]).collect();
    let variances: Vec<f64> = wf
        .lambda_z_inv
        .iter()
        .zip(&wf.active)
        .map(|(x, a)| if *a { 1.0 / x } else { max_active_var })
        .collect();
    let covariance = SpdMatrix::from_eigen(k_f.eigenvectors(), &variances)?;
    Ok(MaxPnrNoise {
        covariance,
        budget: d,
        floor_variance: (!floored.is_empty()).then_some(max_active_var),
        floored,
        total_precision: variances.iter().map(|v| 1.0 / v).sum(),
        waterfill: wf,
    })
}

/// Precision allocation from water filling on the signal eigenvalues
/// `lambda_f` (strongest first, matching the noise directions).
///
/// Levels the water does not reach get the smallest active precision, then
/// the whole vector is rescaled to spend exactly the budget, so every
/// direction is noised and the total stays within the budget.
pub fn max_pnr_allocation(lambda_f: &[f64], budget: f64) -> Result<PrecisionAllocation> {
    let wf = waterfill_allocation(lambda_f, budget)?;
    let min_active = wf
        .lambda_z_inv
        .iter()
        .zip(&wf.active)
        .filter(|(x, a)| **a && **x > 0.0)
        .map(|(x, _)| *x)
        .fold(f64::INFINITY, f64::min);
    let min_active = if min_active.is_finite() { min_active } else { budget };
    let precisions: Vec<f64> = wf
        .lambda_z_inv
        .iter()
        .map(|&x| if x > 0.0 { x } else { min_active })
        .collect();
    let total: f64 = precisions.iter().sum();
    PrecisionAllocation::new(precisions.iter().map(|x| (x / total).min(1.0)).collect())
}

#[derive(Clone, Debug)]
pub struct PrivateDirections {
    pub dirs: NoiseDirections,
    pub remaining: PrivacyParams,
    /// Eigenvalues of the perturbed covariance, matching `dirs`.
    pub eigenvalues: Vec<f64>,
}

/// Estimates the principal directions of `(1/n) X X^T` under a `frac` share
/// of the budget, using the Gaussian baseline on the covariance query.
/// `value_bound` bounds `|x_ij|` and sets the query's sensitivity.
pub fn private_directions(
    x: &Matrix,
    value_bound: f64,
    frac: f64,
    p: &PrivacyParams,
    seed: RandomSeed,
) -> Result<PrivateDirections> {
    let (spent, remaining) = p.split(frac)?;
    let (m, n) = x.shape();
    let sens = sensitivity_catalog(&CatalogQuery::Covariance { c: value_bound, m, n })?;
    let q = QuerySpec::new(m, m, sens.s2, sens.gamma, Structure::General)?;
    let cov = x.matmul(&x.transpose())?.scale(1.0 / n as f64)?;
    let noisy = baseline_gaussian(&cov, &q, &spent, seed)?;
    let sym = noisy.add(&noisy.transpose())?.scale(0.5)?;
    let (eigenvalues, vectors) = symmetric_eigen(&sym)?;
    Ok(PrivateDirections {
        dirs: NoiseDirections::new(vectors)?,
        remaining,
        eigenvalues,
    })
}

/// Per-entry standard deviation of the Gaussian baseline,
/// `s2 * sqrt(2 ln(1.25/delta)) / epsilon`.
pub fn gaussian_scale(s2: f64, p: &PrivacyParams) -> f64 {
    s2 * (2.0 * (1.25 / p.delta()).ln()).sqrt() / p.epsilon()
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(f_x: &Matrix, scale: f64, rng: &mut R) -> Result<Matrix> {
    if scale == 0.0 {
        return Ok(f_x.clone());
    }
    let noise = standard_normal_matrix(rng, f_x.rows(), f_x.cols()) * scale;
    Matrix::from_dmatrix(f_x.as_dmatrix() + noise)
}

/// i.i.d. Gaussian baseline calibrated to the query's L2-sensitivity.
///
/// The calibration is the classical one, valid for `epsilon <= 1`.
pub fn baseline_gaussian(
    f_x: &Matrix,
    q: &QuerySpec,
    p: &PrivacyParams,
    seed: RandomSeed,
) -> Result<Matrix> {
    check_query_shape(f_x, q)?;
    add_gaussian_noise(f_x, gaussian_scale(q.s2(), p), &mut seed.rng())
}

/// One Laplace(0, b) draw by inversion.
pub fn laplace_draw<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn add_laplace_noise<R: Rng + ?Sized>(f_x: &Matrix, b: f64, rng: &mut R) -> Result<Matrix> {
    if b == 0.0 {
        return Ok(f_x.clone());
    }
    let (m, n) = f_x.shape();
    let noise = DMatrix::from_iterator(m, n, (0..m * n).map(|_| laplace_draw(rng, b)));
    Matrix::from_dmatrix(f_x.as_dmatrix() + noise)
}

/// i.i.d. Laplace baseline with scale `s1 / epsilon`. `s1 = 0` leaves the
/// input unchanged.
pub fn baseline_laplace(f_x: &Matrix, s1: f64, epsilon: f64, seed: RandomSeed) -> Result<Matrix> {
    if !(s1 >= 0.0 && s1.is_finite()) {
        return Err(MvgError::param(format!("L1-sensitivity {s1} must be non-negative")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(MvgError::param("epsilon must be positive and finite"));
    }
    add_laplace_noise(f_x, s1 / epsilon, &mut seed.rng())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::check_sufficient;
    use crate::matcore::frobenius_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rotation(angle: f64) -> Matrix {
        let (s, c) = angle.sin_cos();
        Matrix::new(2, 2, vec![c, -s, s, c]).unwrap()
    }

    fn random_orthonormal(rng: &mut impl Rng, m: usize) -> Matrix {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        Matrix::from_dmatrix(a.qr().q()).unwrap()
    }

    fn random_theta(rng: &mut impl Rng, m: usize) -> PrecisionAllocation {
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let spend = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.3..1.0) };
        PrecisionAllocation::new(raw.iter().map(|r| r / total * spend).collect()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn compile_equal_allocation() {
        let budget = 3.0;
        let s = compile_covariance(&NoiseDirections::identity(2), &PrecisionAllocation::equal(2).unwrap(), budget)
            .unwrap();
        let expected = (2.0 / budget).sqrt();
        assert!((s.matrix().get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(s.matrix().get(0, 1), 0.0);
        assert!(rel(s.inverse_sq_norm(), budget) < 1e-12);
    }

    #[test]
    fn compile_plug_in_and_rotation() {
        let alloc = PrecisionAllocation::new(vec![0.8, 0.2]).unwrap();
        let s = compile_covariance(&NoiseDirections::identity(2), &alloc, 1.0).unwrap();
        assert!((s.matrix().get(0, 0) - 1.0 / 0.8f64.sqrt()).abs() < 1e-15);
        assert!((s.matrix().get(1, 1) - 1.0 / 0.2f64.sqrt()).abs() < 1e-15);

        let w = rotation(std::f64::consts::FRAC_PI_4);
        let r = compile_covariance(&NoiseDirections::new(w.clone()).unwrap(), &alloc, 1.0).unwrap();
        let fresh = SpdMatrix::new(r.matrix().clone()).unwrap();
        let mut a = fresh.eigenvalues().to_vec();
        let mut b = s.eigenvalues().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // the weaker precision (larger variance) lies along W's second column
        let top = fresh.eigenvectors().column(0);
        let w1 = w.column(1);
        let dot: f64 = top.iter().zip(&w1).map(|(x, y)| x * y).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn allocation_validation() {
        assert!(matches!(PrecisionAllocation::new(vec![0.7, 0.4]), Err(MvgError::Allocation(_))));
        assert!(matches!(PrecisionAllocation::new(vec![0.5, 0.0]), Err(MvgError::Allocation(_))));
        assert!(matches!(PrecisionAllocation::new(vec![-0.1, 0.5]), Err(MvgError::Allocation(_))));
        assert!(PrecisionAllocation::new(vec![1.0]).is_ok());
        let b = PrecisionAllocation::binary(4, &[0], 0.85).unwrap();
        assert!((b.theta()[0] - 0.85).abs() < 1e-15);
        assert!((b.theta()[3] - 0.05).abs() < 1e-15);
        assert!(PrecisionAllocation::binary(2, &[0, 1], 0.6).is_err());
        assert!(PrecisionAllocation::binary(2, &[5], 0.6).is_err());
        assert!(matches!(
            compile_covariance(&NoiseDirections::identity(3), &PrecisionAllocation::equal(2).unwrap(), 1.0),
            Err(MvgError::Allocation(_))
        ));
    }

    #[test]
    fn directions_must_be_orthonormal() {
        let bad = Matrix::new(2, 2, vec![1.0, 0.1, 0.0, 1.0]).unwrap();
        assert!(NoiseDirections::new(bad).is_err());
        assert!(NoiseDirections::new(rotation(0.3)).is_ok());
    }

    #[test]
    fn unimodal_budget_boundary() {
        let (m, n) = (6, 248);
        let q = QuerySpec::new(m, n, 2.0 * 6f64.sqrt(), ((m * n) as f64).sqrt(), Structure::General).unwrap();
        let p = PrivacyParams::new(1.0, 1.0 / n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dirs = NoiseDirections::new(random_orthonormal(&mut rng, m)).unwrap();
        let alloc = PrecisionAllocation::binary(m, &[0, 2], 0.75).unwrap();
        let f_x = Matrix::zeros(m, n);
        let out = mvg_unimodal(&f_x, &q, &p, &dirs, &alloc, RandomSeed::new(1, 0)).unwrap();
        let budget = precision_budget(&q, &p, PrecisionMode::Unimodal).unwrap();
        assert!(rel(out.sigma.inverse_sq_norm(), budget) < 1e-9);
        assert!(out.condition_report.holds);
        assert!(out.psi.is_diagonal());
    }

    #[test]
    fn unimodal_large_epsilon_is_nearly_exact() {
        let (m, n) = (6, 248);
        let q = QuerySpec::new(m, n, 2.0 * 6f64.sqrt(), ((m * n) as f64).sqrt(), Structure::General).unwrap();
        let p = PrivacyParams::new(1e12, 1.0 / n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f_x = Matrix::from_dmatrix(DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let alloc = PrecisionAllocation::equal(m).unwrap();
        let out = mvg_unimodal(&f_x, &q, &p, &NoiseDirections::identity(m), &alloc, RandomSeed::new(2, 0)).unwrap();
        let noise = frobenius_norm(&out.value.sub(&f_x).unwrap());
        assert!(noise < 1e-2 * frobenius_norm(&f_x), "noise {noise}");
    }

    #[test]
    fn mechanisms_are_deterministic() {
        let q = QuerySpec::new(3, 3, 1.0, 2.0, Structure::SymmetricPsd).unwrap();
        let p = PrivacyParams::new(1.0, 1e-3).unwrap();
        let f_x = Matrix::identity(3);
        let dirs = NoiseDirections::new(random_orthonormal(&mut ChaCha8Rng::seed_from_u64(1), 3)).unwrap();
        let alloc = PrecisionAllocation::equal(3).unwrap();
        let s = RandomSeed::new(3, 4);
        let a = mvg_equimodal(&f_x, &q, &p, &dirs, &alloc, Theorem::Psd, s).unwrap();
        let b = mvg_equimodal(&f_x, &q, &p, &dirs, &alloc, Theorem::Psd, s).unwrap();
        assert_eq!(a.value, b.value);
        let g = q.with_structure(Structure::General).unwrap();
        let a = mvg_unimodal(&f_x, &g, &p, &dirs, &alloc, s).unwrap();
        let b = mvg_unimodal(&f_x, &g, &p, &dirs, &alloc, s).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn equimodal_identity_directions() {
        let q = QuerySpec::new(4, 4, 2.0 * 4.0 * 1e4 / 10176.0, 4.0 * 1e4, Structure::SymmetricPsd).unwrap();
        let p = PrivacyParams::new(1.0, 1.0 / 10176.0).unwrap();
        let alloc = PrecisionAllocation::equal(4).unwrap();
        let out = mvg_equimodal(
            &Matrix::identity(4),
            &q,
            &p,
            &NoiseDirections::identity(4),
            &alloc,
            Theorem::Psd,
            RandomSeed::new(1, 1),
        )
        .unwrap();
        let d = out.sigma.matrix().get(0, 0);
        assert!(out.sigma.is_diagonal());
        assert!((0..4).all(|i| out.sigma.matrix().get(i, i) == d));
        assert!(rel(out.sigma.inverse_sq_norm(), out.budget) < 1e-12);
    }

    #[test]
    fn psd_branch_uses_less_noise() {
        let q = QuerySpec::new(4, 4, 1.0, 3.0, Structure::SymmetricPsd).unwrap();
        let p = PrivacyParams::new(1.0, 1e-4).unwrap();
        let dirs = NoiseDirections::identity(4);
        let alloc = PrecisionAllocation::equal(4).unwrap();
        let psd = MvgMechanism::equimodal(&q, &p, &dirs, &alloc, Theorem::Psd).unwrap();
        let gen = MvgMechanism::equimodal(&q, &p, &dirs, &alloc, Theorem::General).unwrap();
        let a = psd.spec().sigma().eigenvalues();
        let b = gen.spec().sigma().eigenvalues();
        assert!(a.iter().zip(b).all(|(x, y)| x < y));
    }

    #[test]
    fn structure_errors() {
        let g = QuerySpec::new(3, 3, 1.0, 2.0, Structure::General).unwrap();
        let p = PrivacyParams::new(1.0, 1e-3).unwrap();
        let dirs = NoiseDirections::identity(3);
        let alloc = PrecisionAllocation::equal(3).unwrap();
        assert!(matches!(
            MvgMechanism::equimodal(&g, &p, &dirs, &alloc, Theorem::Psd),
            Err(MvgError::Structure(_))
        ));
        let rect = QuerySpec::new(3, 5, 1.0, 2.0, Structure::General).unwrap();
        assert!(matches!(
            MvgMechanism::equimodal(&rect, &p, &dirs, &alloc, Theorem::General),
            Err(MvgError::Structure(_))
        ));
        let psd = g.with_structure(Structure::SymmetricPsd).unwrap();
        assert!(matches!(
            MvgMechanism::unimodal(&psd, &p, &dirs, &alloc),
            Err(MvgError::Structure(_))
        ));
        assert!(matches!(
            mvg_unimodal(&Matrix::zeros(2, 3), &g, &p, &dirs, &alloc, RandomSeed::new(0, 0)),
            Err(MvgError::Parameter(_))
        ));
    }

    #[test]
    fn every_output_satisfies_its_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..500 {
            let m = rng.random_range(1..=6);
            let eps = rng.random_range(0.05..5.0);
            let delta = rng.random_range(1e-6..0.5);
            let p = PrivacyParams::new(eps, delta).unwrap();
            let gamma = rng.random_range(0.1..10.0);
            let s2 = rng.random_range(0.0..1.0) * gamma;
            let dirs = NoiseDirections::new(random_orthonormal(&mut rng, m)).unwrap();
            let alloc = random_theta(&mut rng, m);
            let mech = if rng.random_bool(0.5) {
                let n = rng.random_range(1..=6);
                let q = QuerySpec::new(m, n, s2, gamma, Structure::General).unwrap();
                MvgMechanism::unimodal(&q, &p, &dirs, &alloc).unwrap()
            } else {
                let theorem = if rng.random_bool(0.5) { Theorem::Psd } else { Theorem::General };
                let structure = match theorem {
                    Theorem::Psd => Structure::SymmetricPsd,
                    Theorem::General => Structure::General,
                };
                let q = QuerySpec::new(m, m, s2, gamma, structure).unwrap();
                let mech = MvgMechanism::equimodal(&q, &p, &dirs, &alloc, theorem).unwrap();
                if theorem == Theorem::Psd {
                    let again = check_sufficient(mech.spec().sigma(), mech.spec().psi(), &q, &p).unwrap();
                    assert!(again.holds);
                }
                mech
            };
            assert!(mech.condition_report().holds);
            let spent = mech.spec().sigma().inverse_sq_norm();
            assert!(rel(spent, mech.budget() * alloc.total()) < 1e-9);
            assert!(rel(mech.budget_spent(), mech.budget() * alloc.total()) < 1e-15);
        }
    }

    #[test]
    fn direction_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let q = QuerySpec::new(5, 7, 1.0, 3.0, Structure::General).unwrap();
        let p = PrivacyParams::new(0.5, 1e-5).unwrap();
        for _ in 0..50 {
            let alloc = random_theta(&mut rng, 5);
            let a = MvgMechanism::unimodal(&q, &p, &NoiseDirections::new(random_orthonormal(&mut rng, 5)).unwrap(), &alloc)
                .unwrap();
            let b = MvgMechanism::unimodal(&q, &p, &NoiseDirections::new(random_orthonormal(&mut rng, 5)).unwrap(), &alloc)
                .unwrap();
            let mut x = SpdMatrix::new(a.spec().sigma().matrix().clone()).unwrap().eigenvalues().to_vec();
            let mut y = SpdMatrix::new(b.spec().sigma().matrix().clone()).unwrap().eigenvalues().to_vec();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            for (u, v) in x.iter().zip(&y) {
                assert!(rel(*u, *v) < 1e-9);
            }
            assert!(rel(a.condition_report().lhs, b.condition_report().lhs) < 1e-9);
        }
    }

    #[test]
    fn waterfill_examples() {
        let w = waterfill_allocation(&[1.0, 1.0], 2.0).unwrap();
        assert_eq!(w.c, 2.0);
        assert_eq!(w.lambda_z_inv, vec![1.0, 1.0]);
        let w = waterfill_allocation(&[1.0, 0.5], 5.0).unwrap();
        assert!((w.c - 4.0).abs() < 1e-15);
        assert!((w.lambda_z_inv[0] - 3.0).abs() < 1e-15 && (w.lambda_z_inv[1] - 2.0).abs() < 1e-15);
        let w = waterfill_allocation(&[1.0, 0.01], 1.0).unwrap();
        assert!((w.c - 2.0).abs() < 1e-15);
        assert_eq!(w.lambda_z_inv, vec![1.0, 0.0]);
        assert_eq!(w.active, vec![true, false]);
        assert!(waterfill_allocation(&[1.0], 0.0).is_err());
        assert!(waterfill_allocation(&[1.0, -1.0], 1.0).is_err());
    }

    /// Brute force over active subsets: for each subset the water level is
    /// fixed by the budget; the feasible subset with the largest objective wins.
    fn brute_force(lambda: &[f64], d: f64) -> f64 {
        let k = lambda.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 1u32..(1 << k) {
            let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let c = (d + idx.iter().map(|&i| 1.0 / lambda[i]).sum::<f64>()) / idx.len() as f64;
            if idx.iter().any(|&i| c - 1.0 / lambda[i] < 0.0) {
                continue;
            }
            let obj: f64 = (0..k)
                .map(|i| {
                    let x = if mask & (1 << i) != 0 { c - 1.0 / lambda[i] } else { 0.0 };
                    (x + 1.0 / lambda[i]).ln()
                })
                .sum();
            best = best.max(obj);
        }
        best
    }

    #[test]
    fn waterfill_matches_brute_force_and_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for _ in 0..200 {
            let k = rng.random_range(1..=7);
            let lambda: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
            let d = 10f64.powf(rng.random_range(-2.0..2.0));
            let w = waterfill_allocation(&lambda, d).unwrap();
            let spent: f64 = w.lambda_z_inv.iter().sum();
            assert!(rel(spent, d) < 1e-9);
            assert!(w.lambda_z_inv.iter().all(|x| *x >= 0.0));
            let obj: f64 = w.lambda_z_inv.iter().zip(&lambda).map(|(x, l)| (x + 1.0 / l).ln()).sum();
            assert!(obj >= brute_force(&lambda, d) - 1e-9);
            for _ in 0..200 {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                let t: f64 = raw.iter().sum();
                let cand: f64 = raw.iter().zip(&lambda).map(|(r, l)| (r / t * d + 1.0 / l).ln()).sum();
                assert!(obj >= cand - 1e-12);
            }
        }
    }

    #[test]
    fn max_pnr_examples() {
        let q = QuerySpec::new(2, 1, 1.0, 1.0, Structure::General).unwrap();
        let p = PrivacyParams::new(1.0, 0.1).unwrap();
        let iso = max_pnr_covariance(&SpdMatrix::identity(2), &q, &p).unwrap();
        let v = iso.covariance.matrix().get(0, 0);
        assert!((iso.covariance.matrix().get(1, 1) - v).abs() < 1e-15 && iso.covariance.matrix().get(0, 1) == 0.0);
        assert!(iso.floored.is_empty());

        // a budget of 5 on diag(1, 1/2) gives noise variances (1/3, 1/2);
        // bisect epsilon on the monotone bound to land on d = 5
        let t = budget_terms(&q, &p);
        let (mut lo, mut hi) = (1e-6_f64, 1e6_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if general_bound(&t, &PrivacyParams::new(mid, 0.1).unwrap()) < 5.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eps_for_five = hi;
        let p5 = PrivacyParams::new(eps_for_five, 0.1).unwrap();
        let kf = SpdMatrix::new(Matrix::from_diagonal(&[1.0, 0.5])).unwrap();
        let out = max_pnr_covariance(&kf, &q, &p5).unwrap();
        assert!((out.budget - 5.0).abs() < 1e-9);
        assert!((out.covariance.matrix().get(0, 0) - 1.0 / 3.0).abs() < 1e-9);
        assert!((out.covariance.matrix().get(1, 1) - 0.5).abs() < 1e-9);

        // rotated signal: noise shares the signal's eigenbasis
        let w = rotation(0.4);
        let kr = SpdMatrix::from_eigen(&w, &[1.0, 0.5]).unwrap();
        let out = max_pnr_covariance(&kr, &q, &p5).unwrap();
        let expect = SpdMatrix::from_eigen(&w, &[1.0 / 3.0, 0.5]).unwrap();
        assert!(out.covariance.approx_eq(&expect, 1e-9));
    }

    #[test]
    fn max_pnr_floor_reporting() {
        let q = QuerySpec::new(2, 1, 1.0, 1.0, Structure::General).unwrap();
        let p = PrivacyParams::new(0.01, 0.1).unwrap();
        let kf = SpdMatrix::new(Matrix::from_diagonal(&[1.0, 1e-6])).unwrap();
        let out = max_pnr_covariance(&kf, &q, &p).unwrap();
        assert_eq!(out.floored, vec![1]);
        let floor = out.floor_variance.unwrap();
        assert!((floor - 1.0 / out.budget).abs() < 1e-9 * floor);
        assert!(rel(out.total_precision, 2.0 * out.budget) < 1e-9);
        assert!(max_pnr_covariance(&SpdMatrix::identity(3), &q, &p).is_err());
    }

    #[test]
    fn private_directions_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Matrix::from_dmatrix(DMatrix::from_fn(3, 400, |i, _| rng.random_range(-1.0..1.0) * [1.0, 0.5, 0.2][i]))
            .unwrap();
        let p = PrivacyParams::new(1.0, 1e-3).unwrap();
        let out = private_directions(&x, 1.0, 0.2, &p, RandomSeed::new(1, 0)).unwrap();
        assert!((out.remaining.epsilon() - 0.8).abs() < 1e-15);
        assert!((out.remaining.delta() - 0.8e-3).abs() < 1e-18);
        let again = private_directions(&x, 1.0, 0.2, &p, RandomSeed::new(1, 0)).unwrap();
        assert_eq!(out.dirs, again.dirs);
        assert!(matches!(private_directions(&x, 1.0, 1.0, &p, RandomSeed::new(1, 0)), Err(MvgError::Parameter(_))));

        // with a huge budget the directions match the exact eigenvectors
        let big = PrivacyParams::new(1e12, 1e-3).unwrap();
        let out = private_directions(&x, 1.0, 0.5, &big, RandomSeed::new(1, 0)).unwrap();
        let cov = x.matmul(&x.transpose()).unwrap().scale(1.0 / 400.0).unwrap();
        let (_, exact) = symmetric_eigen(&cov).unwrap();
        for j in 0..3 {
            let dot: f64 = out.dirs.matrix().column(j).iter().zip(exact.column(j)).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_baseline() {
        let x = Matrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let p = PrivacyParams::new(1.0, 1e-3).unwrap();
        let zero = QuerySpec::new(1, 2, 0.0, 3.0, Structure::General).unwrap();
        assert_eq!(baseline_gaussian(&x, &zero, &p, RandomSeed::new(1, 1)).unwrap(), x);
        let q = QuerySpec::new(1, 2, 1.0, 3.0, Structure::General).unwrap();
        let s = RandomSeed::new(2, 3);
        assert_eq!(baseline_gaussian(&x, &q, &p, s).unwrap(), baseline_gaussian(&x, &q, &p, s).unwrap());

        let sd = gaussian_scale(1.0, &p);
        let mut rng = RandomSeed::new(4, 0).rng();
        let one = Matrix::zeros(1, 1);
        let n = 100_000;
        let var = (0..n)
            .map(|_| add_gaussian_noise(&one, sd, &mut rng).unwrap().get(0, 0).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(rel(var, sd * sd) < 0.02, "{var} vs {}", sd * sd);
    }

    #[test]
    fn laplace_baseline() {
        let x = Matrix::new(2, 1, vec![0.5, 1.5]).unwrap();
        assert_eq!(baseline_laplace(&x, 0.0, 1.0, RandomSeed::new(0, 0)).unwrap(), x);
        assert!(baseline_laplace(&x, -1.0, 1.0, RandomSeed::new(0, 0)).is_err());
        assert!(baseline_laplace(&x, 1.0, 0.0, RandomSeed::new(0, 0)).is_err());
        let s = RandomSeed::new(5, 5);
        assert_eq!(baseline_laplace(&x, 1.0, 0.5, s).unwrap(), baseline_laplace(&x, 1.0, 0.5, s).unwrap());

        let b = 2.0 / 0.5;
        let mut rng = RandomSeed::new(6, 0).rng();
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let v = laplace_draw(&mut rng, b);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(rel(var, 2.0 * b * b) < 0.02, "{var}");
    }

    #[test]
    fn max_pnr_allocation_spends_budget() {
        let a = max_pnr_allocation(&[1.0, 0.5], 5.0).unwrap();
        assert!((a.theta()[0] - 0.6).abs() < 1e-12 && (a.theta()[1] - 0.4).abs() < 1e-12);
        let b = max_pnr_allocation(&[1.0, 0.01], 1.0).unwrap();
        assert!((b.theta()[0] - 0.5).abs() < 1e-12 && (b.theta()[1] - 0.5).abs() < 1e-12);
        assert!(b.total() <= 1.0 + ALLOCATION_SUM_TOL);
    }
}
