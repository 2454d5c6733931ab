//! Updates of the compressed covariance factors `Γ_d` given imputed cores.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::prepared::PreparedData;
use crate::error::Result;
use crate::linalg::PrecisionGaussian;
use crate::model::ParamState;
use crate::tensor::{kronecker_desc, DenseTensor};

/// Linear regression of the fixed-effect residuals on `γ_d`.
#[derive(Clone, Debug)]
pub struct GammaDesign {
    /// Stacked `y_ij - <X_ij, B>`.
    pub ycheck: DVector<f64>,
    /// Row `(i, j)` is `vec(Z̃_ij(d) · Γ_{-d} · D̃_i(d)ᵀ)ᵀ`, where `Γ_{-d}` is
    /// the descending Kronecker product of the other modes' factors.
    pub z: DMatrix<f64>,
}

pub fn gamma_design(mode: usize, prep: &PreparedData, state: &ParamState) -> Result<GammaDesign> {
    let beta = DVector::from_vec(state.beta());
    let kd = prep.k[mode];
    let gamma_minus = kronecker_desc(state.gamma.mats(), Some(mode));
    let mut ycheck = DVector::zeros(prep.n_obs);
    let mut z = DMatrix::zeros(prep.n_obs, kd * kd);
    let mut row = 0;
    for (i, s) in prep.subjects.iter().enumerate() {
        let core = DenseTensor::new(prep.k.clone(), state.dtilde[i].as_slice().to_vec())?;
        // Γ_{-d} D̃_i(d)ᵀ is shared by every observation of the subject.
        let right = &gamma_minus * core.unfold(mode)?.transpose();
        let fitted = &s.x_rows * &beta;
        for j in 0..s.len() {
            ycheck[row] = s.y[j] - fitted[j];
            let cell = &s.zc_unfold[mode][j] * &right;
            for (c, v) in cell.iter().enumerate() {
                z[(row, c)] = *v;
            }
            row += 1;
        }
    }
    Ok(GammaDesign { ycheck, z })
}

/// `N(μ_γ, Σ_γ)` with `Σ_γ = (τ⁻² ŽᵀŽ + σ_d⁻² I)⁻¹`, `μ_γ = τ⁻² Σ_γ Žᵀ y̌`.
pub fn gamma_conditional(design: &GammaDesign, tau2: f64, sigma2: f64) -> Result<PrecisionGaussian> {
    let mut precision = design.z.tr_mul(&design.z) / tau2;
    for i in 0..precision.nrows() {
        precision[(i, i)] += 1.0 / sigma2;
    }
    let linear = design.z.tr_mul(&design.ycheck) / tau2;
    PrecisionGaussian::new(&precision, &linear, 1.0, "γ precision")
}

/// Draws `γ_d` and writes it back into the state.
pub fn sample_gamma<R: Rng + ?Sized>(
    mode: usize,
    design: &GammaDesign,
    state: &mut ParamState,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let draw = gamma_conditional(design, state.tau2, sigma2)?.sample(rng);
    state.gamma.set_from_vec(mode, draw.as_slice())?;
    Ok(draw)
}

/// `Ã_i = D̃_i x_1 Γ_1 ... x_D Γ_D`, the compressed random-effect tensor.
pub fn compressed_random_effect(core: &DenseTensor, gammas: &[DMatrix<f64>]) -> Result<DenseTensor> {
    gammas
        .iter()
        .enumerate()
        .try_fold(core.clone(), |acc, (d, g)| acc.mode_multiply(g, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_gamma_posterior() {
        let design = GammaDesign {
            ycheck: DVector::from_element(1, 2.0),
            z: DMatrix::from_element(1, 1, 1.0),
        };
        let g = gamma_conditional(&design, 1.0, 1.0).unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-15);
        let l = g.chol[(0, 0)];
        assert!((1.0 / (l * l) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_design_returns_prior() {
        let design = GammaDesign {
            ycheck: DVector::from_element(3, 5.0),
            z: DMatrix::zeros(3, 4),
        };
        let g = gamma_conditional(&design, 0.3, 2.5).unwrap();
        assert!(g.mean.iter().all(|v| *v == 0.0));
        let cov = (&g.chol * g.chol.transpose()).try_inverse().unwrap();
        assert!((cov - DMatrix::identity(4, 4) * 2.5).abs().max() < 1e-12);
    }

    #[test]
    fn diffuse_prior_approaches_least_squares() {
        let z = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.5);
        let y = DVector::from_fn(6, |i, _| (i as f64).sin());
        let design = GammaDesign { ycheck: y.clone(), z: z.clone() };
        let g = gamma_conditional(&design, 0.7, 1e8).unwrap();
        let ls = (z.transpose() * &z).try_inverse().unwrap() * z.transpose() * y;
        for (a, b) in g.mean.iter().zip(ls.iter()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }
}
