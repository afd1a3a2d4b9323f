//! Privacy calculus for the MVG mechanism: sensitivities, the alpha/beta/omega
//! terms, the two sufficient conditions (general and symmetric-PSD), precision
//! budgets and the general-vs-PSD regime comparison.

use serde::{Deserialize, Serialize};

use crate::error::{MvgError, Result};
use crate::matcore::{harmonic, zeta, HarmonicOrder, SpdMatrix};

/// Relative slack allowed when comparing a condition's two sides.
pub const CONDITION_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrivacyParams")]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

#[derive(Deserialize)]
struct RawPrivacyParams {
    epsilon: f64,
    delta: f64,
}

impl TryFrom<RawPrivacyParams> for PrivacyParams {
    type Error = MvgError;

    fn try_from(raw: RawPrivacyParams) -> Result<Self> {
        PrivacyParams::new(raw.epsilon, raw.delta)
    }
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(MvgError::param("epsilon must be positive and finite"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(MvgError::param("delta must lie in (0,1)"));
        }
        Ok(PrivacyParams { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Splits off a fraction of both epsilon and delta; returns `(spent, remaining)`.
    pub fn split(&self, frac: f64) -> Result<(PrivacyParams, PrivacyParams)> {
        if !(frac > 0.0 && frac < 1.0) {
            return Err(MvgError::param("budget fraction must lie in (0,1)"));
        }
        Ok((
            PrivacyParams::new(frac * self.epsilon, frac * self.delta)?,
            PrivacyParams::new((1.0 - frac) * self.epsilon, (1.0 - frac) * self.delta)?,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    General,
    SymmetricPsd,
}

/// Shape and sensitivity description of a matrix-valued query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    m: usize,
    n: usize,
    s2: f64,
    gamma: f64,
    structure: Structure,
}

impl QuerySpec {
    /// `s2` may be zero (a constant query); `gamma` must be positive. The
    /// triangle inequality bounds `s2` by `2 gamma`, and by `sqrt(2) gamma`
    /// for symmetric PSD queries.
    pub fn new(m: usize, n: usize, s2: f64, gamma: f64, structure: Structure) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(MvgError::param("query dimensions must be positive"));
        }
        if !(s2 >= 0.0 && s2.is_finite()) {
            return Err(MvgError::param("s2 must be non-negative and finite"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(MvgError::param("gamma must be positive and finite"));
        }
        let cap = match structure {
            Structure::General => 2.0 * gamma,
            Structure::SymmetricPsd => {
                if m != n {
                    return Err(MvgError::structure("symmetric PSD query must be square"));
                }
                std::f64::consts::SQRT_2 * gamma
            }
        };
        if s2 > cap * (1.0 + CONDITION_SLACK) {
            return Err(MvgError::param(format!(
                "s2 = {s2} exceeds the largest possible change {cap} implied by gamma"
            )));
        }
        Ok(QuerySpec {
            m,
            n,
            s2,
            gamma,
            structure,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn r(&self) -> usize {
        self.m.min(self.n)
    }

    pub fn with_structure(&self, structure: Structure) -> Result<Self> {
        QuerySpec::new(self.m, self.n, self.s2, self.gamma, structure)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetTerms {
    pub r: usize,
    pub h_r: f64,
    pub h_r_half: f64,
    pub zeta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Only present for symmetric PSD queries.
    pub omega: Option<f64>,
}

/// For a PSD query `m = n = r`, so `(mn)^{1/4} = r^{1/2}` and
/// `zeta(delta, m, n) = zeta(delta, r, r)`: one formula for beta serves both
/// conditions.
pub fn budget_terms(q: &QuerySpec, p: &PrivacyParams) -> BudgetTerms {
    let r = q.r();
    let h_r = harmonic(r, HarmonicOrder::One);
    let h_r_half = harmonic(r, HarmonicOrder::Half);
    let z = zeta(p.delta(), q.m(), q.n()).expect("validated delta and dimensions");
    let (gamma, s2) = (q.gamma(), q.s2());
    let mn = q.m() as f64 * q.n() as f64;
    let alpha = (h_r + h_r_half) * gamma * gamma + 2.0 * h_r * gamma * s2;
    let beta = 2.0 * mn.powf(0.25) * z * h_r * s2;
    let omega = match q.structure() {
        Structure::SymmetricPsd => Some(4.0 * h_r * gamma * s2),
        Structure::General => None,
    };
    BudgetTerms {
        r,
        h_r,
        h_r_half,
        zeta: z,
        alpha,
        beta,
        omega,
    }
}

/// `(-b + sqrt(b^2 + 8 a eps))^2 / (4 a^2)`, the squared positive root of
/// `a x^2 + b x - 2 eps = 0`.
///
/// Evaluated as `(4 eps / (b + sqrt(b^2 + 8 a eps)))^2`, which is the same
/// root without the cancellation between `-b` and the square root.
pub fn quadratic_bound(a: f64, b: f64, epsilon: f64) -> f64 {
    let denom = b + (b * b + 8.0 * a * epsilon).sqrt();
    if denom == 0.0 {
        return f64::INFINITY;
    }
    let root = 4.0 * epsilon / denom;
    root * root
}

/// Right-hand side of the general sufficient condition on
/// `||sigma(Sigma^-1)||_2 * ||sigma(Psi^-1)||_2`.
pub fn general_bound(t: &BudgetTerms, p: &PrivacyParams) -> f64 {
    quadratic_bound(t.alpha, t.beta, p.epsilon())
}

/// Right-hand side of the symmetric-PSD sufficient condition on
/// `||sigma(Sigma^-1)||_2^2` (with `Psi = Sigma`).
pub fn psd_bound(t: &BudgetTerms, p: &PrivacyParams) -> Result<f64> {
    let omega = t
        .omega
        .ok_or_else(|| MvgError::structure("PSD bound requires a symmetric PSD query"))?;
    Ok(quadratic_bound(omega, t.beta, p.epsilon()))
}

/// Which sufficient condition certifies a design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    General,
    Psd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Checks the sufficient condition matching the query's structure: the
/// general one for `General`, the PSD one (which requires `psi == sigma`)
/// for `SymmetricPsd`.
pub fn check_sufficient(
    sigma: &SpdMatrix,
    psi: &SpdMatrix,
    q: &QuerySpec,
    p: &PrivacyParams,
) -> Result<ConditionReport> {
    let theorem = match q.structure() {
        Structure::General => Theorem::General,
        Structure::SymmetricPsd => Theorem::Psd,
    };
    check_sufficient_with(sigma, psi, q, p, theorem)
}

pub fn check_sufficient_with(
    sigma: &SpdMatrix,
    psi: &SpdMatrix,
    q: &QuerySpec,
    p: &PrivacyParams,
    theorem: Theorem,
) -> Result<ConditionReport> {
    if sigma.dim() != q.m() || psi.dim() != q.n() {
        return Err(MvgError::param(format!(
            "covariances are {}x{} and {}x{} but the query is {}x{}",
            sigma.dim(),
            sigma.dim(),
            psi.dim(),
            psi.dim(),
            q.m(),
            q.n()
        )));
    }
    let t = budget_terms(q, p);
    let (lhs, rhs) = match theorem {
        Theorem::General => {
            let lhs = sigma.inverse_sq_norm().sqrt() * psi.inverse_sq_norm().sqrt();
            (lhs, general_bound(&t, p))
        }
        Theorem::Psd => {
            if q.structure() != Structure::SymmetricPsd {
                return Err(MvgError::structure("PSD condition requires a symmetric PSD query"));
            }
            if !sigma.approx_eq(psi, 1e-10) {
                return Err(MvgError::structure("PSD condition requires psi = sigma"));
            }
            (sigma.inverse_sq_norm(), psd_bound(&t, p)?)
        }
    };
    Ok(ConditionReport {
        holds: lhs <= rhs * (1.0 + CONDITION_SLACK),
        lhs,
        rhs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionMode {
    /// `Psi = I_n`, directional noise in the rows only.
    Unimodal,
    /// `Psi = Sigma`; uses the PSD condition for symmetric PSD queries.
    EquiModal,
}

/// Upper limit `P` on `sum_i 1 / sigma_i(Sigma)^2`.
pub fn precision_budget(q: &QuerySpec, p: &PrivacyParams, mode: PrecisionMode) -> Result<f64> {
    match mode {
        PrecisionMode::Unimodal => {
            if q.structure() != Structure::General {
                return Err(MvgError::structure(
                    "unimodal budget applies to general queries; use the equi-modal budget for PSD queries",
                ));
            }
            let b = general_bound(&budget_terms(q, p), p);
            Ok(b * b / q.n() as f64)
        }
        PrecisionMode::EquiModal => {
            let theorem = match q.structure() {
                Structure::General => Theorem::General,
                Structure::SymmetricPsd => Theorem::Psd,
            };
            equimodal_budget(q, p, theorem)
        }
    }
}

/// Equi-modal (`Psi = Sigma`) precision budget under an explicit theorem.
pub fn equimodal_budget(q: &QuerySpec, p: &PrivacyParams, theorem: Theorem) -> Result<f64> {
    if q.m() != q.n() {
        return Err(MvgError::structure("equi-modal noise requires a square query"));
    }
    let t = budget_terms(q, p);
    match theorem {
        Theorem::General => Ok(general_bound(&t, p)),
        Theorem::Psd => psd_bound(&t, p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceReason {
    SensitivityLeqGamma,
    RankGt12,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsdPreference {
    pub preferred: bool,
    pub reason: PreferenceReason,
}

/// Whether the PSD condition is guaranteed to allow less noise than the
/// general one: it does when `s2 <= gamma` or when `r > 12`.
pub fn prefer_psd_theorem(q: &QuerySpec) -> Result<PsdPreference> {
    if q.structure() != Structure::SymmetricPsd {
        return Err(MvgError::structure("regime comparison requires a symmetric PSD query"));
    }
    let reason = if q.s2() <= q.gamma() {
        PreferenceReason::SensitivityLeqGamma
    } else if q.r() > 12 {
        PreferenceReason::RankGt12
    } else {
        PreferenceReason::Neither
    };
    Ok(PsdPreference {
        preferred: reason != PreferenceReason::Neither,
        reason,
    })
}

/// Query families with closed-form sensitivities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CatalogQuery {
    /// `f(X) = X` for `X` in `[lo, hi]^{m x n}`.
    Identity { lo: f64, hi: f64, m: usize, n: usize },
    /// `f(X) = X X^T / n` for `X` in `[-c, c]^{m x n}`.
    Covariance { c: f64, m: usize, n: usize },
    /// n x n kernel matrix with kernel values bounded by `c`.
    Kernel { c: f64, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub s2: f64,
    pub gamma: f64,
}

pub fn sensitivity_catalog(query: &CatalogQuery) -> Result<Sensitivity> {
    match *query {
        CatalogQuery::Identity { lo, hi, m, n } => {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(MvgError::param("value range must satisfy lo < hi"));
            }
            if m == 0 || n == 0 {
                return Err(MvgError::param("dimensions must be positive"));
            }
            Ok(Sensitivity {
                s2: (hi - lo) * (m as f64).sqrt(),
                gamma: lo.abs().max(hi.abs()) * ((m * n) as f64).sqrt(),
            })
        }
        CatalogQuery::Covariance { c, m, n } => {
            if !(c > 0.0 && c.is_finite()) || m == 0 || n == 0 {
                return Err(MvgError::param("covariance query needs c > 0 and positive dimensions"));
            }
            let mc2 = m as f64 * c * c;
            Ok(Sensitivity {
                s2: 2.0 * mc2 / n as f64,
                gamma: mc2,
            })
        }
        CatalogQuery::Kernel { c, n } => {
            if !(c > 0.0 && c.is_finite()) || n == 0 {
                return Err(MvgError::param("kernel query needs c > 0 and n > 0"));
            }
            Ok(Sensitivity {
                s2: c * (8.0 * n as f64 - 4.0).sqrt(),
                gamma: n as f64 * c,
            })
        }
    }
}
