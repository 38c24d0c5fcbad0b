use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::HvpOracle;
use crate::error::{Error, Result};
use crate::numerics::{dot, orthonormal_basis, DenseMatrix};

/// `f(x) = ½ xᵀ A x` with `A = Q diag(λ) Qᵀ`.
///
/// When `rotation` is `None` the eigenbasis is the identity and all products
/// are evaluated coordinate-wise, so every eigencoordinate keeps full relative
/// precision no matter how far apart their magnitudes drift.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    eigenvalues: Vec<f64>,
    rotation: Option<DenseMatrix>,
    /// Scale of the sampled-center gradient noise; see [`QuadraticProblem::sample_grad`].
    noise: f64,
}

impl QuadraticProblem {
    pub fn new(eigenvalues: Vec<f64>, rotation: Option<DenseMatrix>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Dimension(
                "quadratic needs at least one eigenvalue".into(),
            ));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::Validation("non-finite eigenvalue".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Validation(
                "eigenvalues must be nonincreasing".into(),
            ));
        }
        if *eigenvalues.last().unwrap() < 0.0 {
            return Err(Error::Validation("eigenvalues must be nonnegative".into()));
        }
        if let Some(q) = &rotation {
            let p = eigenvalues.len();
            if q.rows() != p || q.cols() != p {
                return Err(Error::Dimension(format!(
                    "rotation is {}x{}, expected {p}x{p}",
                    q.rows(),
                    q.cols()
                )));
            }
            if q.orthonormality_defect() > 1e-10 {
                return Err(Error::Validation("rotation is not orthogonal".into()));
            }
        }
        Ok(Self {
            eigenvalues,
            rotation,
            noise: 0.0,
        })
    }

    /// Same spectrum in a random orthonormal eigenbasis (QR of a seeded Gaussian matrix).
    pub fn with_random_rotation(eigenvalues: Vec<f64>, seed: u64) -> Result<Self> {
        let p = eigenvalues.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..p * p).map(|_| rng.sample(StandardNormal)).collect();
        let gaussian = DenseMatrix::new(p, p, data)?;
        let q = orthonormal_basis(&gaussian)?;
        Self::new(eigenvalues, Some(q))
    }

    /// Enables stochastic gradients: each draw sees `A (x − σ ξ)` with `ξ ~ N(0, I)`,
    /// the minibatch gradient of a quadratic whose sample minimizers are scattered
    /// around the origin.
    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "noise scale {sigma} must be >= 0"
            )));
        }
        self.noise = sigma;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn rotation(&self) -> Option<&DenseMatrix> {
        self.rotation.as_ref()
    }

    /// Leading `k` eigenvectors (`p × k`).
    pub fn eigenvectors(&self, k: usize) -> DenseMatrix {
        match &self.rotation {
            Some(q) => q.leading_columns(k),
            None => DenseMatrix::identity(self.dim()).leading_columns(k),
        }
    }

    /// Coordinates of `x` in the eigenbasis.
    pub fn eigencoordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        match &self.rotation {
            Some(q) => q.t_matvec(x),
            None => Ok(x.to_vec()),
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        match &self.rotation {
            None => Ok(x
                .iter()
                .zip(&self.eigenvalues)
                .map(|(a, l)| a * l)
                .collect()),
            Some(q) => {
                let mut c = q.t_matvec(x)?;
                c.iter_mut()
                    .zip(&self.eigenvalues)
                    .for_each(|(a, l)| *a *= l);
                q.matvec(&c)
            }
        }
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * dot(x, &self.apply(x)?))
    }

    /// Exact gradient `Q diag(λ) Qᵀ x`.
    pub fn quadratic_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply(x)
    }

    /// Gradient with the configured noise; equals the exact gradient when the
    /// noise scale is zero (and then consumes no randomness).
    pub fn sample_grad(&self, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        if self.noise == 0.0 {
            return self.apply(x);
        }
        let shifted: Vec<f64> = x
            .iter()
            .map(|&xi| xi - self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.apply(&shifted)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for a {}-dimensional quadratic",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl HvpOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn loss_at(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta)
    }

    fn grad_at(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.apply(theta)?;
        Ok((0.5 * dot(theta, &g), g))
    }

    fn hvp_at(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        self.apply(v)
    }
}

/// `p` eigenvalues log-spaced from `hi` down to `lo`.
pub fn log_spaced(p: usize, hi: f64, lo: f64) -> Vec<f64> {
    if p == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.log10(), lo.log10());
    (0..p)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (p - 1) as f64))
        .collect()
}

/// `outliers` eigenvalues log-spaced in `[outlier_lo, hi]` on top of a bulk
/// log-spaced in `[lo, bulk_hi]`.
pub fn outlier_spectrum(
    p: usize,
    outliers: usize,
    hi: f64,
    outlier_lo: f64,
    bulk_hi: f64,
    lo: f64,
) -> Vec<f64> {
    let mut out = log_spaced(outliers, hi, outlier_lo);
    out.extend(log_spaced(p - outliers, bulk_hi, lo));
    out
}
