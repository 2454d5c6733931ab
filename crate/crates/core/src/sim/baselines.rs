//! Reference fits: the sampler with the true random-effect covariance
//! plugged in, and a ridge regression that ignores the clustering.

use nalgebra::{DMatrix, DVector};

use crate::error::{CometError, Result};
use crate::linalg::{cholesky_lower, symmetrize};
use crate::model::{init_state_for, ClusteredDataset, Hyperparams, Subject};
use crate::posterior::{Chain, ChainHeader, Method};
use crate::rng::{stream, Purpose};
use crate::sampler::{collect_chain, mean_block, BlockTimings, PreparedData, Stopwatch, Whitener};

/// Rows `vec(X_ij)ᵀ` of one subject.
pub fn x_rows(s: &Subject) -> DMatrix<f64> {
    let cols = s.observations.first().map_or(0, |o| o.x.len());
    DMatrix::from_fn(s.len(), cols, |j, c| s.observations[j].x.data()[c])
}

/// Rows `vec(Z_ij)ᵀ` of one subject.
pub fn z_rows(s: &Subject) -> DMatrix<f64> {
    let cols = s.observations.first().map_or(0, |o| o.z.len());
    DMatrix::from_fn(s.len(), cols, |j, c| s.observations[j].z.data()[c])
}

/// Whiteners of `C_i = Z_i Σ* Z_iᵀ + I` for a known `Σ*`.
pub fn known_whiteners(ds: &ClusteredDataset, sigma_star: &DMatrix<f64>) -> Result<Vec<Whitener>> {
    ds.subjects
        .iter()
        .map(|s| {
            let z = z_rows(s);
            if z.ncols() != sigma_star.nrows() {
                return Err(CometError::DimensionMismatch(format!(
                    "Σ* is {:?}, covariates have {} cells",
                    sigma_star.shape(),
                    z.ncols()
                )));
            }
            let mut c = &z * sigma_star * z.transpose();
            for i in 0..c.nrows() {
                c[(i, i)] += 1.0;
            }
            symmetrize(&mut c);
            Whitener::from_covariance(&c)
        })
        .collect()
}

/// Runs only the mean, shrinkage and error-variance updates, with every
/// subject whitened by its covariance under the known `Σ*`.
pub fn oracle_fit(ds: &ClusteredDataset, hp: &Hyperparams, sigma_star: &DMatrix<f64>) -> Result<Chain> {
    hp.validate(ds.order())?;
    let prep = PreparedData::new(ds, None)?;
    let whiteners = known_whiteners(ds, sigma_star)?;
    let state = init_state_for(&ds.p, &[], ds.n_subjects(), hp, &mut stream(hp.seed, Purpose::Init, &[]))?;
    let mut header = ChainHeader::new(ds, hp, None, Method::Oracle);
    header.k = Vec::new();
    collect_chain(header, hp, state, |s, t| {
        let mut clock = Stopwatch::start();
        let mut next = s.clone();
        let mut rng = stream(hp.seed, Purpose::Sweep, &[t as u64, 1]);
        mean_block(&prep, &whiteners, hp, &mut next, &mut rng)
            .and_then(|_| next.audit(0))
            .map_err(|e| e.at_iteration(t))?;
        let timings = BlockTimings {
            mean: clock.lap(),
            ..Default::default()
        };
        Ok((next, timings))
    })
}

/// Half-decade grid from 1e-3 to 1e4.
pub fn default_penalty_grid() -> Vec<f64> {
    (0..=14).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

/// `(XᵀX + λI)⁻¹ Xᵀy`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> Result<DVector<f64>> {
    let mut a = x.tr_mul(x);
    for i in 0..a.nrows() {
        a[(i, i)] += penalty;
    }
    let l = cholesky_lower(&a, "ridge normal equations")?;
    let half = l.solve_lower_triangular(&x.tr_mul(y)).expect("positive diagonal");
    Ok(l.tr_solve_lower_triangular(&half).expect("positive diagonal"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    /// `vec(B̂)`.
    pub beta: DVector<f64>,
    pub penalty: f64,
    /// Held-out mean squared error at the chosen penalty.
    pub cv_error: f64,
}

impl RidgeFit {
    pub fn predict(&self, s: &Subject) -> Vec<f64> {
        (x_rows(s) * &self.beta).iter().copied().collect()
    }
}

fn stack<'a>(subjects: impl Iterator<Item = &'a Subject>) -> (DMatrix<f64>, DVector<f64>) {
    let subjects: Vec<_> = subjects.collect();
    let rows: Vec<DMatrix<f64>> = subjects.iter().map(|s| x_rows(s)).collect();
    let n: usize = rows.iter().map(|r| r.nrows()).sum();
    let cols = rows.first().map_or(0, |r| r.ncols());
    let mut x = DMatrix::zeros(n, cols);
    let mut y = DVector::zeros(n);
    let mut at = 0;
    for (s, r) in subjects.iter().zip(&rows) {
        x.rows_mut(at, r.nrows()).copy_from(r);
        y.rows_mut(at, r.nrows()).copy_from(&s.responses());
        at += r.nrows();
    }
    (x, y)
}

/// Ridge regression of `y` on `vec(X)` without intercept, the penalty chosen
/// by cross-validation over `folds` groups of whole subjects (subject `i`
/// is held out in fold `i mod folds`).
pub fn ridge_baseline(ds: &ClusteredDataset, grid: &[f64], folds: usize) -> Result<RidgeFit> {
    ds.validate()?;
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(CometError::Config(format!("penalty grid {grid:?} must be positive")));
    }
    let folds = folds.clamp(1, ds.n_subjects());
    let mut best: Option<(f64, f64)> = None;
    if folds > 1 {
        let splits: Vec<_> = (0..folds)
            .map(|f| {
                let train = stack(ds.subjects.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, s)| s));
                let test = stack(ds.subjects.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, s)| s));
                (train, test)
            })
            .collect();
        for &penalty in grid {
            let mut ss = 0.0;
            let mut count = 0usize;
            for ((xt, yt), (xv, yv)) in &splits {
                let b = ridge_solve(xt, yt, penalty)?;
                ss += (yv - xv * b).norm_squared();
                count += yv.len();
            }
            let err = ss / count as f64;
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((penalty, err));
            }
        }
    }
    let (penalty, cv_error) = best.unwrap_or((grid[0], f64::NAN));
    let (x, y) = stack(ds.subjects.iter());
    Ok(RidgeFit {
        beta: ridge_solve(&x, &y, penalty)?,
        penalty,
        cv_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Observation;
    use crate::tensor::DenseTensor;

    fn linear(n: usize, noise: bool) -> ClusteredDataset {
        let beta = [1.0, -2.0, 0.5];
        let subjects = (0..n)
            .map(|i| Subject {
                observations: (0..4)
                    .map(|j| {
                        let v = (i * 4 + j) as f64;
                        let x = DenseTensor::new(vec![3], vec![(v * 0.37).sin(), (v * 1.1).cos(), (v * 0.23 + 1.0).sin()]).unwrap();
                        let e = if noise { 0.1 * (v * 7.7).sin() } else { 0.0 };
                        let y = x.data().iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + e;
                        Observation {
                            y,
                            x,
                            z: DenseTensor::new(vec![1], vec![1.0]).unwrap(),
                        }
                    })
                    .collect(),
            })
            .collect();
        ClusteredDataset {
            p: vec![3],
            q: vec![1],
            subjects,
        }
    }

    #[test]
    fn zero_penalty_is_least_squares_and_large_penalty_is_zero() {
        let ds = linear(5, false);
        let (x, y) = stack(ds.subjects.iter());
        let b = ridge_solve(&x, &y, 0.0).unwrap();
        for (a, e) in b.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - e).abs() < 1e-9);
        }
        let b = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(b.amax() < 1e-9);
    }

    #[test]
    fn cross_validation_prefers_small_penalty_on_clean_signal() {
        let ds = linear(10, true);
        let fit = ridge_baseline(&ds, &default_penalty_grid(), 5).unwrap();
        assert!(fit.penalty < 1.0, "{}", fit.penalty);
        assert!((fit.beta[1] + 2.0).abs() < 0.1);
        assert!(ridge_baseline(&ds, &[0.0], 5).is_err());
    }

    #[test]
    fn zero_covariance_oracle_whitener_is_identity() {
        let ds = linear(2, false);
        let w = known_whiteners(&ds, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(w[0].chol, DMatrix::identity(4, 4));
    }
}
