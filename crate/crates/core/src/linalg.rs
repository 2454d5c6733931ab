//! Cholesky-based Gaussian machinery and the inverse-gamma draw.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{CometError, Result};

/// Diagonal jitter tried, in order, after a plain factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Smallest gamma variate inverted by [`InvGamma::sample`].
pub const GAMMA_FLOOR: f64 = 1e-300;

/// Lower Cholesky factor of a symmetric matrix, retrying with the jitter
/// ladder. Only the lower triangle of `m` is read.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.unpack());
    }
    for eps in JITTER_LADDER {
        let mut j = m.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::<f64, Dyn>::new(j) {
            return Ok(c.unpack());
        }
    }
    Err(CometError::numerical(format!(
        "Cholesky factorization of {what} failed after jitter {JITTER_LADDER:?}"
    )))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal")
}

pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// `N(A⁻¹ b, scale · A⁻¹)` held through the Cholesky factor of the
/// precision `A`; the covariance is never formed.
#[derive(Clone, Debug)]
pub struct PrecisionGaussian {
    pub chol: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub scale: f64,
}

impl PrecisionGaussian {
    pub fn new(precision: &DMatrix<f64>, linear: &DVector<f64>, scale: f64, what: &str) -> Result<Self> {
        let chol = cholesky_lower(precision, what)?;
        let mean = solve_upper_t(&chol, &solve_lower(&chol, linear));
        Ok(Self { chol, mean, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        &self.mean + solve_upper_t(&self.chol, &z) * self.scale.sqrt()
    }

    /// Log density up to an additive constant that does not depend on `x`.
    pub fn ln_kernel(&self, x: &DVector<f64>) -> f64 {
        let r = self.chol.transpose() * (x - &self.mean);
        -0.5 * r.norm_squared() / self.scale
    }
}

/// `N(mean, scale · L Lᵀ)` held through the lower Cholesky factor `L`.
#[derive(Clone, Debug)]
pub struct CovarianceGaussian {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
    pub scale: f64,
}

impl CovarianceGaussian {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>, scale: f64, what: &str) -> Result<Self> {
        let chol = cholesky_lower(cov, what)?;
        Ok(Self { mean, chol, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.mean.len(), rng);
        &self.mean + &self.chol * z * self.scale.sqrt()
    }

    pub fn ln_kernel(&self, x: &DVector<f64>) -> f64 {
        let r = solve_lower(&self.chol, &(x - &self.mean));
        -0.5 * r.norm_squared() / self.scale
    }
}

/// Inverse-gamma with shape `a` and scale `b`: density ∝ x^{-a-1} e^{-b/x}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(CometError::numerical(format!(
                "inverse-gamma parameters must be positive and finite, got shape {shape}, scale {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Draws `Gamma(shape, rate = scale)` and inverts it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale)
            .expect("validated parameters")
            .sample(rng);
        1.0 / g.max(GAMMA_FLOOR)
    }

    pub fn ln_kernel(&self, x: f64) -> f64 {
        -(self.shape + 1.0) * x.ln() - self.scale / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = cholesky_lower(&m, "test").unwrap();
        assert!((&l * l.transpose() - &m).abs().max() < 1e-5);
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(
            cholesky_lower(&neg, "neg"),
            Err(CometError::Numerical { .. })
        ));
    }

    #[test]
    fn precision_gaussian_scalar() {
        let g = PrecisionGaussian::new(
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, 2.0),
            1.0,
            "t",
        )
        .unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inv_gamma_reciprocal_mean() {
        let ig = InvGamma::new(3.0, 2.0).unwrap();
        let mut rng = stream(5, Purpose::Sweep, &[0]);
        let n = 100_000;
        let mean_recip: f64 = (0..n).map(|_| 1.0 / ig.sample(&mut rng)).sum::<f64>() / n as f64;
        // E[1/x] = shape/scale, sd of 1/x = sqrt(shape)/scale.
        let se = 3f64.sqrt() / 2.0 / (n as f64).sqrt();
        assert!((mean_recip - 1.5).abs() < 4.0 * se);
        assert!(InvGamma::new(0.0, 1.0).is_err());
        assert!(InvGamma::new(1.0, f64::INFINITY).is_err());
    }
}
