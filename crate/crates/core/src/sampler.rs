//! Seeded sampling from the matrix-variate Gaussian `MVG(0, Sigma, Psi)`.
//!
//! Two constructions are provided. The affine sampler draws an m x n
//! standard normal matrix `N` and returns `B_Sigma N B_Psi^T`; the vectorized
//! sampler draws from the mn-dimensional Gaussian with covariance
//! `Psi (x) Sigma` and un-vectorizes column-major. [`sample_auto`] picks the
//! cheaper of the two.
//!
//! Randomness comes from ChaCha20 keyed by [`RandomSeed::seed`] with
//! [`RandomSeed::stream`] selecting an independent stream, so identical
//! `(spec, seed, method)` triples reproduce bit-identical draws.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MvgError, Result};
use crate::matcore::{kron, spd_sqrt, Matrix, SpdMatrix};

/// Default cap on `m * n` for the vectorized sampler (its covariance is
/// `(mn)^2` entries).
pub const DEFAULT_VECTORIZED_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        RandomSeed { seed, stream }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        RandomSeed { stream, ..*self }
    }

    /// Independent key for a labelled purpose, keeping the stream id.
    pub fn derive(&self, label: u64) -> Self {
        RandomSeed {
            seed: splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x5EED))),
            stream: self.stream,
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters of a zero-mean matrix-variate Gaussian.
#[derive(Clone, Debug)]
pub struct MvgSpec {
    sigma: Arc<SpdMatrix>,
    psi: Arc<SpdMatrix>,
}

impl MvgSpec {
    pub fn new(sigma: SpdMatrix, psi: SpdMatrix) -> Self {
        MvgSpec {
            sigma: Arc::new(sigma),
            psi: Arc::new(psi),
        }
    }

    pub fn from_shared(sigma: Arc<SpdMatrix>, psi: Arc<SpdMatrix>) -> Self {
        MvgSpec { sigma, psi }
    }

    pub fn m(&self) -> usize {
        self.sigma.dim()
    }

    pub fn n(&self) -> usize {
        self.psi.dim()
    }

    pub fn sigma(&self) -> &Arc<SpdMatrix> {
        &self.sigma
    }

    pub fn psi(&self) -> &Arc<SpdMatrix> {
        &self.psi
    }

    /// Covariance of `vec(Z)`: `Psi (x) Sigma`.
    pub fn vec_covariance(&self) -> Result<Matrix> {
        kron(self.psi.matrix(), self.sigma.matrix())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMethod {
    Affine,
    Vectorized,
}

/// Draws an `rows x cols` matrix of independent standard normals, filled in
/// column-major order.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Clone, Debug)]
enum Factor {
    Identity,
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Factor {
    fn of(s: &SpdMatrix) -> Factor {
        let n = s.dim();
        let base = s.matrix().as_dmatrix();
        if s.is_diagonal() {
            if (0..n).all(|i| base[(i, i)] == 1.0) {
                Factor::Identity
            } else {
                Factor::Diagonal(DVector::from_iterator(n, (0..n).map(|i| base[(i, i)].sqrt())))
            }
        } else {
            Factor::Dense(spd_sqrt(s).into_dmatrix())
        }
    }
}

/// Affine construction `Z = B_Sigma N B_Psi^T` with precomputed factors.
#[derive(Clone, Debug)]
pub struct AffineSampler {
    m: usize,
    n: usize,
    left: Factor,
    right: Factor,
}

impl AffineSampler {
    pub fn new(spec: &MvgSpec) -> Self {
        AffineSampler {
            m: spec.m(),
            n: spec.n(),
            left: Factor::of(&spec.sigma),
            right: Factor::of(&spec.psi),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let mut z = standard_normal_matrix(rng, self.m, self.n);
        match &self.left {
            Factor::Identity => {}
            Factor::Diagonal(d) => {
                for mut col in z.column_iter_mut() {
                    col.component_mul_assign(d);
                }
            }
            Factor::Dense(b) => z = b * z,
        }
        match &self.right {
            Factor::Identity => {}
            Factor::Diagonal(d) => {
                for (j, mut col) in z.column_iter_mut().enumerate() {
                    col *= d[j];
                }
            }
            Factor::Dense(b) => z *= b.transpose(),
        }
        Matrix::from_dmatrix(z).expect("finite factors produce finite draws")
    }
}

/// Vectorized construction through the `mn`-dimensional Gaussian with
/// covariance `Psi (x) Sigma`.
#[derive(Clone, Debug)]
pub struct VectorizedSampler {
    m: usize,
    n: usize,
    factor: DMatrix<f64>,
}

impl VectorizedSampler {
    pub fn new(spec: &MvgSpec) -> Result<Self> {
        Self::with_cap(spec, DEFAULT_VECTORIZED_CAP)
    }

    pub fn with_cap(spec: &MvgSpec, cap: usize) -> Result<Self> {
        let (m, n) = (spec.m(), spec.n());
        if m.saturating_mul(n) > cap {
            return Err(MvgError::Size(format!(
                "vectorized sampling of a {m}x{n} matrix exceeds the cap of {cap} entries; use the affine sampler"
            )));
        }
        let cov = SpdMatrix::new(spec.vec_covariance()?)?;
        Ok(VectorizedSampler {
            m,
            n,
            factor: spd_sqrt(&cov).into_dmatrix(),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let mn = self.m * self.n;
        let g = DVector::from_iterator(mn, (0..mn).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let v = &self.factor * g;
        Matrix::from_column_major(self.m, self.n, v.as_slice().to_vec())
            .expect("finite factors produce finite draws")
    }
}

/// A sampler prepared once and reused across draws.
#[derive(Clone, Debug)]
pub enum PreparedSampler {
    Affine(AffineSampler),
    Vectorized(VectorizedSampler),
}

impl PreparedSampler {
    pub fn new(spec: &MvgSpec, method: SamplerMethod) -> Result<Self> {
        Ok(match method {
            SamplerMethod::Affine => PreparedSampler::Affine(AffineSampler::new(spec)),
            SamplerMethod::Vectorized => PreparedSampler::Vectorized(VectorizedSampler::new(spec)?),
        })
    }

    pub fn auto(spec: &MvgSpec) -> Result<Self> {
        Self::new(spec, choose_method(spec))
    }

    pub fn method(&self) -> SamplerMethod {
        match self {
            PreparedSampler::Affine(_) => SamplerMethod::Affine,
            PreparedSampler::Vectorized(_) => SamplerMethod::Vectorized,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        match self {
            PreparedSampler::Affine(s) => s.draw(rng),
            PreparedSampler::Vectorized(s) => s.draw(rng),
        }
    }

    pub fn sample(&self, seed: RandomSeed) -> Matrix {
        self.draw(&mut seed.rng())
    }
}

fn factor_cost(s: &SpdMatrix) -> f64 {
    let d = s.dim() as f64;
    if s.is_diagonal() {
        d
    } else {
        d * d * d
    }
}

/// Estimated cost of the affine construction: cubic factorization of each
/// dense covariance; diagonal covariances need no factorization.
pub fn affine_cost(spec: &MvgSpec) -> f64 {
    factor_cost(&spec.sigma).max(factor_cost(&spec.psi))
}

/// Estimated cost of the vectorized construction, `(mn)^2`.
pub fn vectorized_cost(spec: &MvgSpec) -> f64 {
    let mn = spec.m() as f64 * spec.n() as f64;
    mn * mn
}

/// Lower estimated cost wins; ties and specs above the vectorized cap go to
/// the affine sampler.
pub fn choose_method(spec: &MvgSpec) -> SamplerMethod {
    let fits = spec.m().saturating_mul(spec.n()) <= DEFAULT_VECTORIZED_CAP;
    if fits && vectorized_cost(spec) < affine_cost(spec) {
        SamplerMethod::Vectorized
    } else {
        SamplerMethod::Affine
    }
}

pub fn sample_affine(spec: &MvgSpec, seed: RandomSeed) -> Matrix {
    AffineSampler::new(spec).draw(&mut seed.rng())
}

pub fn sample_vectorized(spec: &MvgSpec, seed: RandomSeed) -> Result<Matrix> {
    Ok(VectorizedSampler::new(spec)?.draw(&mut seed.rng()))
}

pub fn sample_vectorized_with_cap(spec: &MvgSpec, seed: RandomSeed, cap: usize) -> Result<Matrix> {
    Ok(VectorizedSampler::with_cap(spec, cap)?.draw(&mut seed.rng()))
}

pub fn sample_with(spec: &MvgSpec, seed: RandomSeed, method: SamplerMethod) -> Result<Matrix> {
    Ok(PreparedSampler::new(spec, method)?.sample(seed))
}

pub fn sample_auto(spec: &MvgSpec, seed: RandomSeed) -> Result<Matrix> {
    sample_with(spec, seed, choose_method(spec))
}
