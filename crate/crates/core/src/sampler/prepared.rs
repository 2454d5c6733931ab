use nalgebra::{DMatrix, DVector};

use crate::compression::ProjectionSet;
use crate::error::{CometError, Result};
use crate::model::ClusteredDataset;

/// Per-subject quantities that stay fixed for a whole fit.
#[derive(Clone, Debug)]
pub struct PreparedSubject {
    pub y: DVector<f64>,
    /// Rows are `vec(X_ij)ᵀ`, `m_i x p*`.
    pub x_rows: DMatrix<f64>,
    /// `x_unfold[d][j]` is the mode-`d` unfolding of `X_ij`.
    pub x_unfold: Vec<Vec<DMatrix<f64>>>,
    /// Rows are `vec(Z̃_ij)ᵀ`, `m_i x k*`; empty without projections.
    pub zc_rows: DMatrix<f64>,
    /// `zc_unfold[d][j]` is the mode-`d` unfolding of `Z̃_ij`.
    pub zc_unfold: Vec<Vec<DMatrix<f64>>>,
}

impl PreparedSubject {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The dataset reshaped for the sampler: vectorized and unfolded fixed-effect
/// covariates, compressed random-effect covariates, and `V_dd = R* R*ᵀ`.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub k: Vec<usize>,
    pub subjects: Vec<PreparedSubject>,
    pub n_obs: usize,
    pub v_dd: DMatrix<f64>,
}

impl PreparedData {
    /// Validates `ds` and precomputes everything; pass `None` for the
    /// fixed-effects-only layout used when the working covariance is known.
    pub fn new(ds: &ClusteredDataset, ps: Option<&ProjectionSet>) -> Result<Self> {
        ds.validate()?;
        if let Some(ps) = ps {
            if ps.q() != ds.q.as_slice() {
                return Err(CometError::DimensionMismatch(format!(
                    "projections expect q = {:?}, dataset has {:?}",
                    ps.q(),
                    ds.q
                )));
            }
        }
        let order = ds.order();
        let p_star: usize = ds.p.iter().product();
        let k_star = ps.map_or(0, |ps| ps.k_star());
        let mut subjects = Vec::with_capacity(ds.n_subjects());
        for s in &ds.subjects {
            let m = s.len();
            let mut x_rows = DMatrix::zeros(m, p_star);
            let mut zc_rows = DMatrix::zeros(m, k_star);
            let mut x_unfold = vec![Vec::with_capacity(m); order];
            let mut zc_unfold = vec![Vec::with_capacity(m); if ps.is_some() { order } else { 0 }];
            for (j, o) in s.observations.iter().enumerate() {
                for (c, v) in o.x.data().iter().enumerate() {
                    x_rows[(j, c)] = *v;
                }
                for (d, u) in x_unfold.iter_mut().enumerate() {
                    u.push(o.x.unfold(d)?);
                }
                if let Some(ps) = ps {
                    let zc = ps.compress_covariate(&o.z)?;
                    for (c, v) in zc.data().iter().enumerate() {
                        zc_rows[(j, c)] = *v;
                    }
                    for (d, u) in zc_unfold.iter_mut().enumerate() {
                        u.push(zc.unfold(d)?);
                    }
                }
            }
            subjects.push(PreparedSubject {
                y: s.responses(),
                x_rows,
                x_unfold,
                zc_rows,
                zc_unfold,
            });
        }
        Ok(Self {
            p: ds.p.clone(),
            q: ds.q.clone(),
            k: ps.map_or_else(Vec::new, |ps| ps.k().to_vec()),
            subjects,
            n_obs: ds.n_obs(),
            v_dd: ps.map_or_else(|| DMatrix::zeros(0, 0), |ps| ps.core_covariance()),
        })
    }

    pub fn order(&self) -> usize {
        self.p.len()
    }

    pub fn k_star(&self) -> usize {
        self.k.iter().product()
    }

    pub fn has_projections(&self) -> bool {
        !self.k.is_empty()
    }
}
