//! Synthetic linear-model data: covariate distributions, the response model
//! `y = x^T theta_star + eps`, and exact second-moment information.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, Matrix};

/// Half-width `sqrt(3)` of the uniform cube whose coordinates have unit variance.
pub const UNIT_VARIANCE_HALF_WIDTH: f64 = 1.732_050_807_568_877_2;

/// Box half-width used when drawing `theta_star` uniformly.
pub const THETA_BOX_HALF_WIDTH: f64 = 10.0;

/// Relative eigenvalue threshold (times `lambda_max`) below which an
/// eigenvalue counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    FullCube,
    LowRank,
}

/// Distribution of the input vectors.
///
/// `FullCube`: iid coordinates uniform on `[-h, h]^d`.
/// `LowRank`: `x = U z` with `z` uniform on `[-h, h]^s` and `U` a `d x s`
/// matrix of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    dim: usize,
    rank: usize,
    embed: Option<Matrix>,
    half_width: f64,
    // spectral norm squared of the embedding, cached for the ||x||^2 bound
    embed_norm_sq: f64,
}

impl CovariateSpec {
    pub fn full_cube(dim: usize) -> Result<Self> {
        Self::full_cube_with_half_width(dim, UNIT_VARIANCE_HALF_WIDTH)
    }

    pub fn full_cube_with_half_width(dim: usize, half_width: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        check_half_width(half_width)?;
        Ok(Self {
            dim,
            rank: dim,
            embed: None,
            half_width,
            embed_norm_sq: 1.0,
        })
    }

    pub fn low_rank(embed: Matrix) -> Result<Self> {
        Self::low_rank_with_half_width(embed, UNIT_VARIANCE_HALF_WIDTH)
    }

    pub fn low_rank_with_half_width(embed: Matrix, half_width: f64) -> Result<Self> {
        let (dim, rank) = (embed.rows(), embed.cols());
        if dim == 0 || rank == 0 {
            return Err(invalid("embedding", "matrix must be non-empty"));
        }
        if rank > dim {
            return Err(invalid(
                "s",
                format!("intrinsic dimension {rank} exceeds ambient dimension {dim}"),
            ));
        }
        if !embed.is_finite() {
            return Err(invalid("embedding", "contains non-finite entries"));
        }
        check_half_width(half_width)?;
        let gram = embed.transpose().matmul(&embed)?;
        let eig = linalg::symmetric_eigen(&gram)?;
        let top = *eig.values.last().unwrap_or(&0.0);
        if top <= 0.0 || eig.values[0] <= RANK_TOLERANCE * top {
            return Err(Error::RankDeficientEmbedding);
        }
        Ok(Self {
            dim,
            rank,
            embed: Some(embed),
            half_width,
            embed_norm_sq: top,
        })
    }

    pub fn kind(&self) -> CovariateKind {
        if self.embed.is_some() {
            CovariateKind::LowRank
        } else {
            CovariateKind::FullCube
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `s`; equals `d` for the full cube.
    pub fn intrinsic_dim(&self) -> usize {
        self.rank
    }

    pub fn embed(&self) -> Option<&Matrix> {
        self.embed.as_ref()
    }

    /// `h^2 / 3`, exactly 1 at the unit-variance half-width.
    pub fn coordinate_variance(&self) -> f64 {
        if self.half_width == UNIT_VARIANCE_HALF_WIDTH {
            1.0
        } else {
            self.half_width * self.half_width / 3.0
        }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Almost-sure bound `b >= ||x||^2`.
    pub fn norm_sq_bound(&self) -> f64 {
        let h2 = 3.0 * self.coordinate_variance();
        match self.embed {
            None => self.dim as f64 * h2,
            Some(_) => self.embed_norm_sq * h2 * self.rank as f64,
        }
    }

    /// Draws one covariate vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    /// Draws one covariate vector into `out` (length `d`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let coord = Uniform::new_inclusive(-self.half_width, self.half_width)
            .expect("half-width validated at construction");
        match &self.embed {
            None => out.iter_mut().for_each(|o| *o = coord.sample(rng)),
            Some(u) => {
                let z: Vec<f64> = (0..self.rank).map(|_| coord.sample(rng)).collect();
                u.matvec_into(&z, out);
            }
        }
    }

    /// Analytic second moment `E[x x^T]`.
    pub fn second_moment(&self) -> Result<SecondMomentSummary> {
        let var = self.coordinate_variance();
        let sigma = match &self.embed {
            None => Matrix::identity(self.dim).scaled(var),
            Some(u) => u.matmul(&u.transpose())?.scaled(var),
        };
        SecondMomentSummary::from_matrix(sigma)
    }

    /// Empirical average of `x x^T` over `n_samples` draws.
    pub fn estimate_second_moment<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<SecondMomentSummary> {
        if n_samples == 0 {
            return Err(invalid("n_samples", "at least one sample is required"));
        }
        let d = self.dim;
        let mut acc = Matrix::zeros(d, d);
        let mut x = vec![0.0; d];
        for _ in 0..n_samples {
            self.sample_into(rng, &mut x);
            for i in 0..d {
                for j in i..d {
                    acc[(i, j)] += x[i] * x[j];
                }
            }
        }
        let inv = 1.0 / n_samples as f64;
        for i in 0..d {
            for j in i..d {
                let v = acc[(i, j)] * inv;
                acc[(i, j)] = v;
                acc[(j, i)] = v;
            }
        }
        SecondMomentSummary::from_matrix(acc)
    }
}

fn check_half_width(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(invalid("half_width", "must be positive and finite"))
    }
}

/// Spectral summary of a second moment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentSummary {
    pub sigma: Matrix,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub lambda_min_nonzero: f64,
    pub trace: f64,
    pub rank: usize,
    /// `lambda_max / lambda_min`, only for full rank.
    pub condition_number: Option<f64>,
}

impl SecondMomentSummary {
    pub fn from_matrix(sigma: Matrix) -> Result<Self> {
        if !sigma.is_symmetric(SYMMETRY_TOLERANCE) {
            return Err(Error::NotPositiveSemiDefinite(
                "matrix is not symmetric".into(),
            ));
        }
        let eig = linalg::symmetric_eigen(&sigma)?;
        let values = eig.values;
        let lambda_min = values[0];
        if lambda_min < -PSD_TOLERANCE {
            return Err(Error::NotPositiveSemiDefinite(format!(
                "eigenvalue {lambda_min:e} below -{PSD_TOLERANCE:e}"
            )));
        }
        let lambda_max = *values.last().expect("non-empty matrix");
        if lambda_max <= 0.0 {
            return Err(Error::NotPositiveSemiDefinite(
                "second moment matrix is zero".into(),
            ));
        }
        let cutoff = RANK_TOLERANCE * lambda_max;
        let rank = values.iter().filter(|&&v| v > cutoff).count();
        let lambda_min_nonzero = values
            .iter()
            .copied()
            .find(|&v| v > cutoff)
            .expect("lambda_max exceeds the cutoff");
        let dim = values.len();
        let condition_number = (rank == dim).then(|| lambda_max / lambda_min);
        Ok(Self {
            trace: sigma.trace(),
            sigma,
            lambda_max,
            lambda_min: lambda_min.max(0.0),
            lambda_min_nonzero,
            rank,
            condition_number,
            eigenvalues: values,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    /// Intrinsic dimension `tr(Sigma) / lambda_max`.
    pub fn effective_rank(&self) -> f64 {
        self.trace / self.lambda_max
    }
}

/// Linear model `y = x^T theta_star + eps`, `eps ~ N(0, noise_std^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub covariates: CovariateSpec,
    pub theta_star: Vec<f64>,
    pub noise_std: f64,
    pub b_bound: f64,
}

impl ModelSpec {
    pub fn new(covariates: CovariateSpec, theta_star: Vec<f64>) -> Result<Self> {
        check_len("theta_star", covariates.dim(), theta_star.len())?;
        if theta_star.iter().any(|t| !t.is_finite()) {
            return Err(invalid("theta_star", "contains non-finite entries"));
        }
        let b_bound = covariates.norm_sq_bound();
        Ok(Self {
            covariates,
            theta_star,
            noise_std: 1.0,
            b_bound,
        })
    }

    /// Overrides the noise level. The theory assumes unit variance; other
    /// values are for exploration only.
    pub fn with_noise_std(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(invalid("noise_std", "must be finite and non-negative"));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn has_unit_noise(&self) -> bool {
        self.noise_std == 1.0
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let mut x = vec![0.0; self.dim()];
        let y = self.sample_pair_into(rng, &mut x);
        (x, y)
    }

    /// Writes `x` into `out` and returns `y`.
    pub fn sample_pair_into<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) -> f64 {
        self.covariates.sample_into(rng, x);
        let eps: f64 = StandardNormal.sample(rng);
        linalg::dot(x, &self.theta_star) + self.noise_std * eps
    }
}

/// How `theta_star` is drawn for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaPolicy {
    /// Uniform on `[-10, 10]^d`.
    Uniform,
    /// Uniform draw rescaled to unit Euclidean norm.
    Normalized,
}

impl ThetaPolicy {
    pub fn draw<R: Rng + ?Sized>(self, dim: usize, rng: &mut R) -> Vec<f64> {
        let box_dist = Uniform::new_inclusive(-THETA_BOX_HALF_WIDTH, THETA_BOX_HALF_WIDTH)
            .expect("constant bounds");
        let mut theta: Vec<f64> = (0..dim).map(|_| box_dist.sample(rng)).collect();
        if self == ThetaPolicy::Normalized {
            let n = linalg::norm(&theta);
            if n > 0.0 {
                theta.iter_mut().for_each(|t| *t /= n);
            }
        }
        theta
    }
}

/// How the `d x s` embedding of a low-rank covariate model is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingPolicy {
    /// Orthonormal columns spanning a uniformly random `s`-dimensional subspace.
    Orthonormal,
    /// iid standard normal entries, used as drawn.
    Gaussian,
}

impl EmbeddingPolicy {
    pub fn draw<R: Rng + ?Sized>(self, dim: usize, rank: usize, rng: &mut R) -> Result<Matrix> {
        if rank == 0 || rank > dim {
            return Err(invalid("s", format!("need 1 <= s <= d = {dim}, got {rank}")));
        }
        loop {
            let data: Vec<f64> = (0..dim * rank)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let g = Matrix::from_row_major(dim, rank, data)?;
            let out = match self {
                EmbeddingPolicy::Gaussian => Ok(g),
                EmbeddingPolicy::Orthonormal => linalg::orthonormalize_columns(&g),
            };
            // rank loss has probability zero; redraw if it ever happens
            match out {
                Err(Error::RankDeficientEmbedding) => continue,
                other => return other,
            }
        }
    }
}
