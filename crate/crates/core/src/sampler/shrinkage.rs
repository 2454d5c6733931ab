//! Horseshoe shrinkage updates in the parameter-expanded form, where each
//! half-Cauchy scale is an inverse-gamma mixture over an auxiliary variable:
//!
//! ```text
//! λ²_gdj | ν_gdj ~ IG(1/2, 1/ν_gdj),   ν_gdj ~ IG(1/2, 1)
//! δ²_g   | ξ_g   ~ IG(1/2, 1/ξ_g),     ξ_g   ~ IG(1/2, 1)
//! ```

use rand::Rng;

use crate::error::Result;
use crate::linalg::InvGamma;
use crate::model::ParamState;

/// `λ²_gdj | rest ~ IG(1, 1/ν_gdj + β²_dj(g) / (2 τ² δ²_g))`.
pub fn local_conditional(state: &ParamState, mode: usize, g: usize, j: usize) -> Result<InvGamma> {
    let beta = state.factors.factor(mode)[(j, g)];
    InvGamma::new(
        1.0,
        1.0 / state.nu[mode][(j, g)] + beta * beta / (2.0 * state.tau2 * state.delta2[g]),
    )
}

/// `ν | λ² ~ IG(1, 1 + 1/λ²)`; the same form serves `ξ_g | δ²_g`.
pub fn auxiliary_conditional(scale2: f64) -> Result<InvGamma> {
    InvGamma::new(1.0, 1.0 + 1.0 / scale2)
}

/// Updates `λ²_gdj` then `ν_gdj` for every `(g, j)` of one mode.
pub fn sample_local_shrinkage<R: Rng + ?Sized>(state: &mut ParamState, mode: usize, rng: &mut R) -> Result<()> {
    let p = state.lambda2[mode].nrows();
    for g in 0..state.rank() {
        for j in 0..p {
            let l2 = local_conditional(state, mode, g, j)?.sample(rng);
            state.lambda2[mode][(j, g)] = l2;
            state.nu[mode][(j, g)] = auxiliary_conditional(l2)?.sample(rng);
        }
    }
    Ok(())
}

/// `δ²_g | rest ~ IG((1 + Σ_d p_d)/2, 1/ξ_g + (1/(2τ²)) Σ_d Σ_j β²_dj(g)/λ²_gdj)`.
pub fn global_conditional(state: &ParamState, g: usize) -> Result<InvGamma> {
    let mut p_total = 0usize;
    let mut quad = 0.0;
    for (f, l2) in state.factors.factors().iter().zip(&state.lambda2) {
        p_total += f.nrows();
        for j in 0..f.nrows() {
            quad += f[(j, g)].powi(2) / l2[(j, g)];
        }
    }
    InvGamma::new(
        (1.0 + p_total as f64) / 2.0,
        1.0 / state.xi[g] + quad / (2.0 * state.tau2),
    )
}

pub fn sample_global_shrinkage<R: Rng + ?Sized>(state: &mut ParamState, rng: &mut R) -> Result<()> {
    for g in 0..state.rank() {
        let d2 = global_conditional(state, g)?.sample(rng);
        state.delta2[g] = d2;
        state.xi[g] = auxiliary_conditional(d2)?.sample(rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::CompressedFactors;
    use crate::rng::{stream, Purpose};
    use crate::tensor::CpDecomposition;
    use nalgebra::DMatrix;

    fn zero_state(p: &[usize], rank: usize) -> ParamState {
        ParamState {
            factors: CpDecomposition::zeros(p, rank).unwrap(),
            gamma: CompressedFactors::zeros(&vec![1; p.len()]),
            tau2: 1.0,
            lambda2: p.iter().map(|&d| DMatrix::from_element(d, rank, 1.0)).collect(),
            nu: p.iter().map(|&d| DMatrix::from_element(d, rank, 1.0)).collect(),
            delta2: vec![1.0; rank],
            xi: vec![1.0; rank],
            dtilde: vec![],
        }
    }

    #[test]
    fn global_shape_counts_every_mode() {
        let s = zero_state(&[2, 2, 2], 1);
        let ig = global_conditional(&s, 0).unwrap();
        assert_eq!(ig.shape, 3.5);
        assert_eq!(ig.scale, 1.0);
    }

    #[test]
    fn local_at_zero_factor_is_unit_inverse_gamma() {
        let mut s = zero_state(&[1], 1);
        let ig = local_conditional(&s, 0, 0, 0).unwrap();
        assert_eq!((ig.shape, ig.scale), (1.0, 1.0));

        // E[1/λ²] = shape/scale = 1 for IG(1, 1); sd of Gamma(1,1) is 1.
        let n = 100_000;
        let mut rng = stream(1, Purpose::Sweep, &[]);
        let mut acc = 0.0;
        for _ in 0..n {
            s.nu[0][(0, 0)] = 1.0;
            sample_local_shrinkage(&mut s, 0, &mut rng).unwrap();
            acc += 1.0 / s.lambda2[0][(0, 0)];
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 4.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn scales_stay_positive_for_extreme_inputs() {
        let mut s = zero_state(&[3], 2);
        s.factors.set_factor(0, DMatrix::from_element(3, 2, 1e150)).unwrap();
        s.tau2 = 1e-150;
        s.delta2 = vec![1e-150, 1e150];
        for g in 0..2 {
            for j in 0..3 {
                let ig = local_conditional(&s, 0, g, j);
                if let Ok(ig) = ig {
                    assert!(ig.scale > 0.0);
                }
            }
            assert!(global_conditional(&s, g).map_or(true, |ig| ig.scale > 0.0));
        }
        assert!(auxiliary_conditional(1e-300).unwrap().scale > 0.0);
    }
}
