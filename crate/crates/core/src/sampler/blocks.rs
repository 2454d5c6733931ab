//! The joint Gaussian of a subject's responses and compressed core, the
//! conditional draw of the core, and whitening by the marginal covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::prepared::PreparedSubject;
use crate::error::Result;
use crate::linalg::{cholesky_lower, log_det_from_cholesky, solve_lower, solve_lower_mat, symmetrize, CovarianceGaussian};

/// Blocks of the joint covariance (up to the factor τ²) of `(y_i, d̃_i)`:
///
/// ```text
/// V_dd = R* R*ᵀ
/// V_yd = Z̃_i Γ* V_dd
/// V_yy = Z̃_i Γ* V_dd Γ*ᵀ Z̃_iᵀ + I
/// ```
#[derive(Clone, Debug)]
pub struct SubjectGaussianBlocks {
    /// `G = Z̃_i Γ*`.
    pub g: DMatrix<f64>,
    pub v_yy: DMatrix<f64>,
    pub v_yd: DMatrix<f64>,
    pub v_dd: DMatrix<f64>,
    /// Lower Cholesky factor of `C_i = V_yy`.
    pub chol_yy: DMatrix<f64>,
}

pub fn joint_blocks(
    subject: &PreparedSubject,
    v_dd: &DMatrix<f64>,
    gamma_star: &DMatrix<f64>,
) -> Result<SubjectGaussianBlocks> {
    let g = &subject.zc_rows * gamma_star;
    let v_yd = &g * v_dd;
    let mut v_yy = &v_yd * g.transpose();
    for i in 0..v_yy.nrows() {
        v_yy[(i, i)] += 1.0;
    }
    symmetrize(&mut v_yy);
    let chol_yy = cholesky_lower(&v_yy, "V_yy")?;
    Ok(SubjectGaussianBlocks {
        g,
        v_yy,
        v_yd,
        v_dd: v_dd.clone(),
        chol_yy,
    })
}

impl SubjectGaussianBlocks {
    /// Mean and covariance (without τ²) of `d̃_i | y_i` given the residual
    /// `y_i - X_i β`:
    ///
    /// ```text
    /// μ      = V_ydᵀ V_yy⁻¹ r
    /// V_cond = V_dd - V_ydᵀ V_yy⁻¹ V_yd
    /// ```
    ///
    /// `V_cond` is assembled in the equivalent form
    /// `(I - W G) V_dd (I - W G)ᵀ + W Wᵀ` with `W = V_ydᵀ V_yy⁻¹`, a sum of
    /// positive semidefinite terms.
    pub fn core_conditional(&self, residual: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        // Wᵀ = V_yy⁻¹ V_yd through the Cholesky factor.
        let half = solve_lower_mat(&self.chol_yy, &self.v_yd);
        let w_t = self
            .chol_yy
            .tr_solve_lower_triangular(&half)
            .expect("positive diagonal");
        let w = w_t.transpose();
        let mu = &w * residual;
        let k = self.v_dd.nrows();
        let a = DMatrix::identity(k, k) - &w * &self.g;
        let mut v = &a * &self.v_dd * a.transpose() + &w * w_t;
        symmetrize(&mut v);
        (mu, v)
    }

    pub fn whitener(&self) -> Whitener {
        Whitener {
            chol: self.chol_yy.clone(),
        }
    }
}

/// Full conditional `N(μ, τ² V_cond)` of the compressed core.
pub fn dtilde_conditional(
    blocks: &SubjectGaussianBlocks,
    residual: &DVector<f64>,
    tau2: f64,
) -> Result<CovarianceGaussian> {
    let (mu, v) = blocks.core_conditional(residual);
    CovarianceGaussian::new(mu, &v, tau2, "conditional core covariance")
}

pub fn sample_dtilde<R: Rng + ?Sized>(
    blocks: &SubjectGaussianBlocks,
    residual: &DVector<f64>,
    tau2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(dtilde_conditional(blocks, residual, tau2)?.sample(rng))
}

/// `L_i⁻¹` for the lower Cholesky factor `L_i` of a subject's marginal
/// covariance `C_i`; whitened residuals have covariance `τ² I`.
#[derive(Clone, Debug)]
pub struct Whitener {
    pub chol: DMatrix<f64>,
}

impl Whitener {
    pub fn from_covariance(c: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            chol: cholesky_lower(c, "C_i")?,
        })
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        solve_lower(&self.chol, v)
    }

    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        solve_lower_mat(&self.chol, m)
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_cholesky(&self.chol)
    }
}

pub fn whiten(blocks: &SubjectGaussianBlocks, y: &DVector<f64>) -> DVector<f64> {
    solve_lower(&blocks.chol_yy, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_subject(z: f64) -> PreparedSubject {
        PreparedSubject {
            y: DVector::from_element(1, 0.0),
            x_rows: DMatrix::zeros(1, 1),
            x_unfold: vec![],
            zc_rows: DMatrix::from_element(1, 1, z),
            zc_unfold: vec![],
        }
    }

    #[test]
    fn scalar_blocks() {
        let r = 0.7;
        let b = joint_blocks(&scalar_subject(2.0), &DMatrix::from_element(1, 1, r * r), &DMatrix::identity(1, 1)).unwrap();
        assert!((b.v_dd[(0, 0)] - r * r).abs() < 1e-15);
        assert!((b.v_yd[(0, 0)] - 2.0 * r * r).abs() < 1e-15);
        assert!((b.v_yy[(0, 0)] - (4.0 * r * r + 1.0)).abs() < 1e-15);

        let (mu, v) = b.core_conditional(&DVector::from_element(1, 1.0));
        let denom = 4.0 * r * r + 1.0;
        assert!((mu[0] - 2.0 * r * r / denom).abs() < 1e-14);
        assert!((v[(0, 0)] - (r * r - 4.0 * r.powi(4) / denom)).abs() < 1e-14);
    }

    #[test]
    fn zero_gamma_gives_prior() {
        let s = PreparedSubject {
            y: DVector::zeros(3),
            x_rows: DMatrix::zeros(3, 1),
            x_unfold: vec![],
            zc_rows: DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64),
            zc_unfold: vec![],
        };
        let v_dd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = joint_blocks(&s, &v_dd, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(b.v_yd, DMatrix::zeros(3, 2));
        assert_eq!(b.v_yy, DMatrix::identity(3, 3));
        let (mu, v) = b.core_conditional(&DVector::from_element(3, 4.0));
        assert_eq!(mu, DVector::zeros(2));
        assert!((v - v_dd).abs().max() < 1e-15);
    }

    #[test]
    fn whitening_examples() {
        let w = Whitener::from_covariance(&DMatrix::identity(2, 2)).unwrap();
        let y = DVector::from_column_slice(&[3.0, -1.0]);
        assert_eq!(w.apply(&y), y);
        let w = Whitener::from_covariance(&DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_eq!(w.apply(&DVector::from_element(1, 3.0))[0], 1.5);
    }
}
