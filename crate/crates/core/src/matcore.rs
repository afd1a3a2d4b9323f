//! Dense matrix primitives and scalar special functions.
//!
//! [`Matrix`] is a thin validated wrapper around `nalgebra::DMatrix<f64>`:
//! every entry is finite and both dimensions are positive. [`SpdMatrix`]
//! additionally carries its symmetric eigendecomposition, computed once at
//! construction, so that square roots, inverses and log-determinants are
//! cheap afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvgError, Result};

/// Relative tolerance used for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-SPD_EIG_TOL * max_eigenvalue` are clamped to zero.
pub const SPD_EIG_TOL: f64 = 1e-10;

const SVD_MAX_ITER: usize = 10_000;

/// Dense real matrix with finite entries and positive dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, row_major: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols)?;
        if row_major.len() != rows * cols {
            return Err(MvgError::param(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                row_major.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &row_major))
    }

    /// Builds a matrix from column-major (vec-ordered) data.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols)?;
        if data.len() != rows * cols {
            return Err(MvgError::param(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_vec(rows, cols, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(MvgError::param("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        check_dims(m.nrows(), m.ncols())?;
        if let Some(bad) = m.iter().find(|x| !x.is_finite()) {
            return Err(MvgError::Numerical(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix(m))
    }

    /// Panics if `rows` or `cols` is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix(DMatrix::zeros(rows, cols))
    }

    /// Panics if `n` is zero.
    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        Matrix(DMatrix::identity(n, n))
    }

    /// Panics if `diag` is empty or contains non-finite values.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "matrix dimensions must be positive");
        assert!(diag.iter().all(|x| x.is_finite()), "non-finite diagonal");
        Matrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Entries in column-major (vec) order.
    pub fn column_major(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols() != rhs.rows() {
            return Err(MvgError::param(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Matrix::from_dmatrix(&self.0 * &rhs.0)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs)?;
        Matrix::from_dmatrix(&self.0 + &rhs.0)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.check_same_shape(rhs)?;
        Matrix::from_dmatrix(&self.0 - &rhs.0)
    }

    pub fn scale(&self, c: f64) -> Result<Matrix> {
        Matrix::from_dmatrix(&self.0 * c)
    }

    pub fn trace(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(MvgError::structure("trace of a non-square matrix"));
        }
        Ok(self.0.trace())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in (j + 1)..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)]).abs());
            }
        }
        worst
    }

    fn check_same_shape(&self, rhs: &Matrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(MvgError::param(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(())
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(MvgError::param(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    Ok(())
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.0.norm()
}

/// Full singular value decomposition `a = u * diag(s) * vt`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// m x m, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length `min(m, n)`.
    pub singular_values: Vec<f64>,
    /// n x n, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// Rebuilds `u * diag(s) * vt` (m x n).
    pub fn reconstruct(&self) -> Matrix {
        let m = self.u.rows();
        let n = self.vt.rows();
        let mut s = DMatrix::zeros(m, n);
        for (i, &v) in self.singular_values.iter().enumerate() {
            s[(i, i)] = v;
        }
        Matrix(&self.u.0 * s * &self.vt.0)
    }
}

/// Singular value decomposition with sorted singular values and a fixed
/// sign convention: the first nonzero entry of every left singular vector
/// (and of every completing right singular vector) is positive.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let r = m.min(n);
    let dec = a
        .0
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            MvgError::Numerical(format!(
                "SVD did not converge for {m}x{n} matrix (frobenius norm {:e}, max |entry| {:e})",
                frobenius_norm(a),
                a.max_abs()
            ))
        })?;
    let (u_thin, vt_thin) = match (dec.u, dec.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(MvgError::Numerical("SVD factors missing".into())),
    };

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));

    let mut singular_values = Vec::with_capacity(r);
    let mut u_cols: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut v_rows: Vec<DVector<f64>> = Vec::with_capacity(n);
    for &k in &order {
        let mut uc: DVector<f64> = u_thin.column(k).into_owned();
        let mut vr: DVector<f64> = vt_thin.row(k).transpose().into_owned();
        if leading_sign(&uc) < 0.0 {
            uc.neg_mut();
            vr.neg_mut();
        }
        singular_values.push(dec.singular_values[k].max(0.0));
        u_cols.push(uc);
        v_rows.push(vr);
    }
    complete_orthonormal(&mut u_cols, m);
    complete_orthonormal(&mut v_rows, n);

    let u = DMatrix::from_columns(&u_cols);
    let vt = DMatrix::from_columns(&v_rows).transpose();
    Ok(SvdResult {
        u: Matrix(u),
        singular_values,
        vt: Matrix(vt),
    })
}

fn leading_sign(v: &DVector<f64>) -> f64 {
    v.iter()
        .find(|x| x.abs() > 1e-12)
        .map_or(1.0, |x| x.signum())
}

/// Extends an orthonormal set to a basis of R^dim by Gram-Schmidt against
/// the standard basis. Added vectors follow the positive-leading-entry rule.
fn complete_orthonormal(basis: &mut Vec<DVector<f64>>, dim: usize) {
    let mut candidate = 0;
    while basis.len() < dim && candidate < dim {
        let mut v = DVector::zeros(dim);
        v[candidate] = 1.0;
        candidate += 1;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in basis.iter() {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            if leading_sign(&v) < 0.0 {
                v.neg_mut();
            }
            basis.push(v);
        }
    }
}

/// Eigendecomposition of a symmetric, possibly indefinite, matrix.
///
/// Eigenvalues are non-increasing; each eigenvector column has a positive
/// first nonzero entry.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(MvgError::structure(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let scale = frobenius_norm(a).max(1.0);
    if a.asymmetry() > SYMMETRY_TOL * scale {
        return Err(MvgError::structure("matrix is not symmetric"));
    }
    let n = a.rows();
    let sym = (&a.0 + a.0.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| MvgError::Numerical(format!("symmetric eigendecomposition failed for {n}x{n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let cols: Vec<DVector<f64>> = order
        .iter()
        .map(|&k| {
            let mut c: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            if leading_sign(&c) < 0.0 {
                c.neg_mut();
            }
            c
        })
        .collect();
    Ok((
        order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        Matrix(DMatrix::from_columns(&cols)),
    ))
}

/// Kronecker product with block structure `a[i,j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows = a.rows().checked_mul(b.rows());
    let cols = a.cols().checked_mul(b.cols());
    match (rows, cols) {
        (Some(r), Some(c)) if r.checked_mul(c).is_some() => Ok(Matrix(a.0.kronecker(&b.0))),
        _ => Err(MvgError::Size(format!(
            "kronecker product of {:?} and {:?} overflows",
            a.shape(),
            b.shape()
        ))),
    }
}

/// Order of the generalized harmonic number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HarmonicOrder {
    /// `sum 1/i`
    One,
    /// `sum 1/sqrt(i)`
    Half,
}

pub fn harmonic(r: usize, order: HarmonicOrder) -> f64 {
    match order {
        HarmonicOrder::One => (1..=r).map(|i| 1.0 / i as f64).sum(),
        HarmonicOrder::Half => (1..=r).map(|i| 1.0 / (i as f64).sqrt()).sum(),
    }
}

/// Tail constant `2 sqrt(-mn ln delta) - 2 ln delta + mn` bounding the
/// squared Frobenius norm of an m x n standard normal matrix with
/// probability at least `1 - delta`.
pub fn zeta(delta: f64, m: usize, n: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MvgError::param("delta must lie in (0,1)"));
    }
    if m == 0 || n == 0 {
        return Err(MvgError::param("dimensions must be positive"));
    }
    let mn = (m as f64) * (n as f64);
    let ln_d = delta.ln();
    Ok(2.0 * (-mn * ln_d).sqrt() - 2.0 * ln_d + mn)
}

/// Symmetric positive (semi-)definite matrix with a cached eigendecomposition.
///
/// Eigenvalues are stored non-increasing. Values in
/// `(-SPD_EIG_TOL * max, 0]` are clamped to zero; anything more negative is
/// rejected.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    base: Matrix,
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    diagonal: bool,
}

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(MvgError::structure(format!(
                "covariance must be square, got {:?}",
                m.shape()
            )));
        }
        let scale = frobenius_norm(&m).max(1.0);
        let asym = m.asymmetry();
        if asym > SYMMETRY_TOL * scale {
            return Err(MvgError::structure(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let n = m.rows();
        let sym = (&m.0 + m.0.transpose()) * 0.5;
        let diagonal = (0..n).all(|j| (0..n).all(|i| i == j || sym[(i, j)] == 0.0));

        let (values, vectors) = if diagonal {
            let d: Vec<f64> = (0..n).map(|i| sym[(i, i)]).collect();
            (d, DMatrix::identity(n, n))
        } else {
            let eig = nalgebra::SymmetricEigen::try_new(sym.clone(), f64::EPSILON, SVD_MAX_ITER)
                .ok_or_else(|| {
                    MvgError::Numerical(format!("symmetric eigendecomposition failed for {n}x{n}"))
                })?;
            (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
        };

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        let max = values[order[0]];
        if max <= 0.0 {
            return Err(MvgError::structure("matrix has no positive eigenvalue"));
        }
        let min = values[order[n - 1]];
        if min < -SPD_EIG_TOL * max {
            return Err(MvgError::structure(format!(
                "matrix is not positive definite (eigenvalue {min:e}, largest {max:e})"
            )));
        }
        let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k].max(0.0)).collect();
        let cols: Vec<DVector<f64>> = order.iter().map(|&k| vectors.column(k).into_owned()).collect();
        Ok(SpdMatrix {
            base: Matrix(sym),
            eigenvalues,
            eigenvectors: Matrix(DMatrix::from_columns(&cols)),
            diagonal,
        })
    }

    /// Builds `w * diag(values) * w^T` from a known orthonormal `w` and
    /// strictly positive `values`, without re-factorizing.
    pub fn from_eigen(w: &Matrix, values: &[f64]) -> Result<Self> {
        let n = w.rows();
        if !w.is_square() || values.len() != n {
            return Err(MvgError::param("eigenvector/eigenvalue shape mismatch"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(MvgError::structure(format!("eigenvalue {v} is not positive")));
        }
        let d = DVector::from_column_slice(values);
        let scaled = &w.0 * DMatrix::from_diagonal(&d);
        let prod = &scaled * w.0.transpose();
        let sym = (&prod + prod.transpose()) * 0.5;
        let base = Matrix::from_dmatrix(sym)?;
        let diagonal = (0..n).all(|j| (0..n).all(|i| i == j || base.0[(i, j)] == 0.0));

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        let cols: Vec<DVector<f64>> = order.iter().map(|&k| w.0.column(k).into_owned()).collect();
        Ok(SpdMatrix {
            base,
            eigenvalues: order.iter().map(|&k| values[k]).collect(),
            eigenvectors: Matrix(DMatrix::from_columns(&cols)),
            diagonal,
        })
    }

    /// Panics if `n` is zero.
    pub fn identity(n: usize) -> Self {
        SpdMatrix {
            base: Matrix::identity(n),
            eigenvalues: vec![1.0; n],
            eigenvectors: Matrix::identity(n),
            diagonal: true,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.rows()
    }

    /// Non-increasing eigenvalues (equal to the singular values).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns are eigenvectors matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// Singular values of the inverse, `1 / lambda_i` (infinite for zero
    /// eigenvalues).
    pub fn inverse_singular_values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| 1.0 / l).collect()
    }

    /// `sum_i 1 / lambda_i^2`, the squared 2-norm of the inverse's singular values.
    pub fn inverse_sq_norm(&self) -> f64 {
        self.eigenvalues.iter().map(|&l| 1.0 / (l * l)).sum()
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln()).sum()
    }

    /// Whether the two matrices agree within `tol` relative Frobenius distance.
    pub fn approx_eq(&self, other: &SpdMatrix, tol: f64) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        let diff = (&self.base.0 - &other.base.0).norm();
        diff <= tol * frobenius_norm(&self.base).max(1.0)
    }
}

/// Square root factor `B` with `B * B^T = s`, built from the eigendecomposition
/// as `W * Lambda^{1/2}`.
///
/// Diagonal inputs return the diagonal root `diag(sqrt(s_ii))` directly.
pub fn spd_sqrt(s: &SpdMatrix) -> Matrix {
    if s.diagonal {
        let roots: Vec<f64> = (0..s.dim()).map(|i| s.base.0[(i, i)].max(0.0).sqrt()).collect();
        return Matrix::from_diagonal(&roots);
    }
    let roots: Vec<f64> = s.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(&roots));
    Matrix(&s.eigenvectors.0 * d)
}
