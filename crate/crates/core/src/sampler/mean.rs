//! Updates of the CP factor margins and the error variance, with the cores
//! integrated out: each subject's responses are whitened by the Cholesky
//! factor of its marginal covariance `C_i` so the margin regression has iid
//! `N(0, τ²)` errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::blocks::Whitener;
use super::prepared::PreparedData;
use crate::error::{CometError, Result};
use crate::linalg::{InvGamma, PrecisionGaussian};
use crate::model::{Hyperparams, ParamState};
use crate::tensor::{khatri_rao_desc, CpDecomposition};

/// Whitened regression for `vec(B_d)`.
#[derive(Clone, Debug)]
pub struct BetaDesign {
    pub ystar: DVector<f64>,
    /// Whitened rows `vec(X_ij(d) B_{-d})ᵀ`, `N x K p_d`.
    pub x: DMatrix<f64>,
}

/// Unwhitened design rows for one subject, `m_i x K p_d`.
pub fn beta_design_rows(x_unfold: &[DMatrix<f64>], b_minus: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = x_unfold.first().map_or(0, |x| x.nrows()) * b_minus.ncols();
    let mut rows = DMatrix::zeros(x_unfold.len(), cols);
    for (j, x) in x_unfold.iter().enumerate() {
        let cell = x * b_minus;
        for (c, v) in cell.iter().enumerate() {
            rows[(j, c)] = *v;
        }
    }
    rows
}

pub fn beta_design(
    mode: usize,
    prep: &PreparedData,
    whiteners: &[Whitener],
    factors: &CpDecomposition,
) -> Result<BetaDesign> {
    let b_minus = khatri_rao_desc(factors.factors(), Some(mode))?;
    let cols = prep.p[mode] * factors.rank();
    let mut x = DMatrix::zeros(prep.n_obs, cols);
    let mut ystar = DVector::zeros(prep.n_obs);
    let mut row = 0;
    for (s, w) in prep.subjects.iter().zip(whiteners) {
        let m = s.len();
        let raw = beta_design_rows(&s.x_unfold[mode], &b_minus);
        x.rows_mut(row, m).copy_from(&w.apply_rows(&raw));
        ystar.rows_mut(row, m).copy_from(&w.apply(&s.y));
        row += m;
    }
    Ok(BetaDesign { ystar, x })
}

/// `N(Σ_B X*ᵀ y*, τ² Σ_B)` with
/// `Σ_B = [X*ᵀ X* + diag(δ²_1 Λ_1d, ..., δ²_K Λ_Kd)⁻¹]⁻¹`.
pub fn beta_conditional(mode: usize, design: &BetaDesign, state: &ParamState) -> Result<PrecisionGaussian> {
    let lambda2 = &state.lambda2[mode];
    let p = lambda2.nrows();
    let mut precision = design.x.tr_mul(&design.x);
    for g in 0..state.rank() {
        for j in 0..p {
            let c = g * p + j;
            precision[(c, c)] += 1.0 / (state.delta2[g] * lambda2[(j, g)]);
        }
    }
    let linear = design.x.tr_mul(&design.ystar);
    PrecisionGaussian::new(&precision, &linear, state.tau2, "factor-margin precision")
}

/// Draws `vec(B_d)` and writes it back into the state.
pub fn sample_beta_margin<R: Rng + ?Sized>(
    mode: usize,
    design: &BetaDesign,
    state: &mut ParamState,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let draw = beta_conditional(mode, design, state)?.sample(rng);
    let (p, k) = state.factors.factor(mode).shape();
    state
        .factors
        .set_factor(mode, DMatrix::from_column_slice(p, k, draw.as_slice()))?;
    Ok(draw)
}

/// `‖y* - X* β‖²`: whitened residual sum of squares of the composed tensor.
pub fn whitened_rss(prep: &PreparedData, whiteners: &[Whitener], beta: &DVector<f64>) -> f64 {
    prep.subjects
        .iter()
        .zip(whiteners)
        .map(|(s, w)| w.apply(&(&s.y - &s.x_rows * beta)).norm_squared())
        .sum()
}

/// `Σ_{g,d,j} β²_{dj(g)} / (δ²_g λ²_{gdj})`.
pub fn prior_quadratic(state: &ParamState) -> f64 {
    let mut acc = 0.0;
    for (f, l2) in state.factors.factors().iter().zip(&state.lambda2) {
        for g in 0..f.ncols() {
            for j in 0..f.nrows() {
                acc += f[(j, g)].powi(2) / (state.delta2[g] * l2[(j, g)]);
            }
        }
    }
    acc
}

/// `IG(a0 + (N + K Σ p_d)/2, b0 + ½[‖y* - X*β‖² + Σ β²/(δ²λ²)])`.
pub fn tau2_conditional(
    prep: &PreparedData,
    whiteners: &[Whitener],
    state: &ParamState,
    hp: &Hyperparams,
) -> Result<InvGamma> {
    let beta = DVector::from_vec(state.beta());
    let rss = whitened_rss(prep, whiteners, &beta);
    let n_prior = (state.rank() * prep.p.iter().sum::<usize>()) as f64;
    let shape = hp.a0 + (prep.n_obs as f64 + n_prior) / 2.0;
    let scale = hp.b0 + 0.5 * (rss + prior_quadratic(state));
    InvGamma::new(shape, scale)
}

pub fn sample_tau2<R: Rng + ?Sized>(
    prep: &PreparedData,
    whiteners: &[Whitener],
    state: &mut ParamState,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    let draw = tau2_conditional(prep, whiteners, state, hp)?.sample(rng);
    if !(draw > 0.0 && draw.is_finite()) {
        return Err(CometError::numerical(format!("τ² draw {draw}")));
    }
    state.tau2 = draw;
    Ok(draw)
}
