//! Retained draws and everything computed from them: point estimates,
//! credible intervals, support selection and posterior prediction.
//!
//! Summaries act on the composed tensor `B` of each draw, never on the CP
//! factors, which are identified only up to sign and permutation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compression::ProjectionSet;
use crate::error::{CometError, Result};
use crate::linalg::{cholesky_lower, standard_normal_vector, symmetrize};
use crate::model::{ClusteredDataset, Hyperparams, ParamState, Standardization};
use crate::sampler::BlockTimings;
use crate::tensor::{kronecker_desc, DenseTensor};

pub const FIT_FORMAT: &str = "comet-fit/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Comet,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainHeader {
    pub format: String,
    pub method: Method,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub k: Vec<usize>,
    pub rank: usize,
    pub hyper: Hyperparams,
    /// Regenerates the projections; absent for the known-covariance fit.
    pub projection_seed: Option<u64>,
    pub dataset_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl ChainHeader {
    pub fn new(ds: &ClusteredDataset, hp: &Hyperparams, projection_seed: Option<u64>, method: Method) -> Self {
        Self {
            format: FIT_FORMAT.into(),
            method,
            p: ds.p.clone(),
            q: ds.q.clone(),
            k: hp.k.clone(),
            rank: hp.rank,
            hyper: hp.clone(),
            projection_seed,
            dataset_fingerprint: ds.fingerprint(),
            standardization: None,
        }
    }
}

/// One retained iteration. Matrices are flattened column by column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    /// `vec(B)`, first mode fastest.
    pub b: Vec<f64>,
    pub factors: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub tau2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtilde: Option<Vec<Vec<f64>>>,
}

impl Snapshot {
    pub fn from_state(s: &ParamState, hp: &Hyperparams) -> Self {
        Self {
            b: s.beta(),
            factors: s.factors.factors().iter().map(|f| f.as_slice().to_vec()).collect(),
            gamma: s.gamma.mats().iter().map(|g| g.as_slice().to_vec()).collect(),
            tau2: s.tau2,
            lambda2: hp
                .keep_shrinkage
                .then(|| s.lambda2.iter().map(|l| l.as_slice().to_vec()).collect()),
            delta2: hp.keep_shrinkage.then(|| s.delta2.clone()),
            dtilde: hp
                .keep_dtilde
                .then(|| s.dtilde.iter().map(|d| d.as_slice().to_vec()).collect()),
        }
    }

    /// `Γ_d` as `k_d x k_d` matrices.
    pub fn gamma_mats(&self, k: &[usize]) -> Result<Vec<DMatrix<f64>>> {
        if self.gamma.len() != k.len() {
            return Err(CometError::Format(format!(
                "snapshot has {} covariance factors, expected {}",
                self.gamma.len(),
                k.len()
            )));
        }
        k.iter()
            .zip(&self.gamma)
            .map(|(&kd, g)| {
                if g.len() != kd * kd {
                    return Err(CometError::Format(format!("Γ has {} entries, expected {}", g.len(), kd * kd)));
                }
                Ok(DMatrix::from_column_slice(kd, kd, g))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub header: ChainHeader,
    pub snapshots: Vec<Snapshot>,
    /// Accumulated sweep timings; not part of the artifact.
    pub timings: BlockTimings,
}

impl Chain {
    pub fn new(header: ChainHeader) -> Self {
        Self {
            header,
            snapshots: Vec::new(),
            timings: BlockTimings::default(),
        }
    }

    pub fn push(&mut self, s: Snapshot) {
        self.snapshots.push(s);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n_cells(&self) -> usize {
        self.header.p.iter().product()
    }

    /// Draws of one cell of `B`, in chain order.
    pub fn cell_draws(&self, cell: usize) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.b[cell]).collect()
    }

    fn nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(CometError::EmptyChain)
        } else {
            Ok(())
        }
    }

    fn sorted_cells(&self) -> Result<Vec<Vec<f64>>> {
        self.nonempty()?;
        Ok((0..self.n_cells())
            .map(|c| {
                let mut v = self.cell_draws(c);
                v.sort_by(f64::total_cmp);
                v
            })
            .collect())
    }
}

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics: position `(n - 1) prob`.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CometError::Level(level))
    }
}

/// Cell-wise posterior median of `B`.
pub fn point_estimate(chain: &Chain) -> Result<DenseTensor> {
    let data = chain.sorted_cells()?.iter().map(|v| quantile(v, 0.5)).collect();
    DenseTensor::new(chain.header.p.clone(), data)
}

/// Equal-tailed cell-wise intervals of `B` at `level`.
pub fn credible_intervals(chain: &Chain, level: f64) -> Result<Vec<(f64, f64)>> {
    check_level(level)?;
    let tail = (1.0 - level) / 2.0;
    Ok(chain
        .sorted_cells()?
        .iter()
        .map(|v| (quantile(v, tail), quantile(v, 1.0 - tail)))
        .collect())
}

/// Two-cluster split of non-negative values, Lloyd iterations started at the
/// minimum and maximum. `true` marks the high cluster; with all values equal
/// nothing is marked.
pub fn two_means(values: &[f64]) -> Vec<bool> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() || min >= max {
        return vec![false; values.len()];
    }
    let (mut lo, mut hi) = (min, max);
    let mut high = vec![false; values.len()];
    for _ in 0..100 {
        let next: Vec<bool> = values.iter().map(|&v| (v - hi).abs() < (v - lo).abs()).collect();
        let changed = next != high;
        high = next;
        let (mut sl, mut nl, mut sh, mut nh) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &h) in values.iter().zip(&high) {
            if h {
                sh += v;
                nh += 1;
            } else {
                sl += v;
                nl += 1;
            }
        }
        if nl == 0 || nh == 0 || !changed {
            break;
        }
        lo = sl / nl as f64;
        hi = sh / nh as f64;
    }
    high
}

/// Cells that land in the high cluster of [`two_means`] on `|B|` in more
/// than half of the draws.
pub fn select_s2m(chain: &Chain) -> Result<Vec<bool>> {
    chain.nonempty()?;
    let mut counts = vec![0usize; chain.n_cells()];
    for s in &chain.snapshots {
        let abs: Vec<f64> = s.b.iter().map(|v| v.abs()).collect();
        for (c, h) in counts.iter_mut().zip(two_means(&abs)) {
            *c += h as usize;
        }
    }
    let n = chain.len();
    Ok(counts.into_iter().map(|c| 2 * c > n).collect())
}

/// Cells whose credible interval excludes zero.
pub fn select_ci(intervals: &[(f64, f64)]) -> Vec<bool> {
    intervals.iter().map(|&(lo, hi)| lo > 0.0 || hi < 0.0).collect()
}

/// Covariates of one new subject.
#[derive(Clone, Debug)]
pub struct NewSubject {
    pub x: Vec<DenseTensor>,
    pub z: Vec<DenseTensor>,
}

impl NewSubject {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn check(&self, p: &[usize], q: &[usize]) -> Result<()> {
        if self.x.len() != self.z.len() || self.x.is_empty() {
            return Err(CometError::DimensionMismatch(format!(
                "new subject has {} fixed and {} random covariates",
                self.x.len(),
                self.z.len()
            )));
        }
        for (x, z) in self.x.iter().zip(&self.z) {
            if x.dims() != p || z.dims() != q {
                return Err(CometError::DimensionMismatch(format!(
                    "new covariates have dims {:?} and {:?}, the fit expects {p:?} and {q:?}",
                    x.dims(),
                    z.dims()
                )));
            }
        }
        Ok(())
    }

    fn rows<'a>(ts: impl ExactSizeIterator<Item = &'a DenseTensor>, cols: usize) -> DMatrix<f64> {
        let ts: Vec<_> = ts.collect();
        DMatrix::from_fn(ts.len(), cols, |j, c| ts[j].data()[c])
    }

    pub fn x_rows(&self) -> DMatrix<f64> {
        Self::rows(self.x.iter(), self.x[0].len())
    }

    pub fn z_rows(&self) -> DMatrix<f64> {
        Self::rows(self.z.iter(), self.z[0].len())
    }
}

fn predict_with<R, F>(chain: &Chain, x_rows: &DMatrix<f64>, cov: F, rng: &mut R) -> Result<DMatrix<f64>>
where
    R: Rng + ?Sized,
    F: Fn(&Snapshot) -> Result<DMatrix<f64>>,
{
    chain.nonempty()?;
    let m = x_rows.nrows();
    let mut draws = DMatrix::zeros(chain.len(), m);
    for (t, s) in chain.snapshots.iter().enumerate() {
        let mean = x_rows * DVector::from_column_slice(&s.b);
        let l = cholesky_lower(&cov(s)?, "predictive covariance")?;
        let y = mean + l * standard_normal_vector(m, rng) * s.tau2.sqrt();
        draws.row_mut(t).copy_from(&y.transpose());
    }
    Ok(draws)
}

/// One predictive draw per retained iteration (rows) for each new
/// observation (columns), from
/// `N(X β, τ² (Z̃ Γ* R* R*ᵀ Γ*ᵀ Z̃ᵀ + I))` with the training projections.
pub fn predict_draws<R: Rng + ?Sized>(
    chain: &Chain,
    ps: &ProjectionSet,
    subject: &NewSubject,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let h = &chain.header;
    subject.check(&h.p, &h.q)?;
    if ps.k() != h.k.as_slice() || ps.q() != h.q.as_slice() {
        return Err(CometError::DimensionMismatch(
            "projections do not match the fit".into(),
        ));
    }
    let zc: Vec<DenseTensor> = subject.z.iter().map(|z| ps.compress_covariate(z)).collect::<Result<_>>()?;
    let zc_rows = NewSubject::rows(zc.iter(), ps.k_star());
    let v_dd = ps.core_covariance();
    predict_with(
        chain,
        &subject.x_rows(),
        |s| {
            let g = &zc_rows * kronecker_desc(&s.gamma_mats(&h.k)?, None);
            let mut c = &g * &v_dd * g.transpose();
            for i in 0..c.nrows() {
                c[(i, i)] += 1.0;
            }
            symmetrize(&mut c);
            Ok(c)
        },
        rng,
    )
}

/// Predictive draws when the random-effect covariance `Σ*` (up to τ²) is
/// known: `N(X β, τ² (Z Σ* Zᵀ + I))`.
pub fn predict_draws_known<R: Rng + ?Sized>(
    chain: &Chain,
    sigma_star: &DMatrix<f64>,
    subject: &NewSubject,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let h = &chain.header;
    subject.check(&h.p, &h.q)?;
    let z = subject.z_rows();
    if sigma_star.shape() != (z.ncols(), z.ncols()) {
        return Err(CometError::DimensionMismatch(format!(
            "Σ* is {:?}, covariates need {}",
            sigma_star.shape(),
            z.ncols()
        )));
    }
    let mut c = &z * sigma_star * z.transpose();
    for i in 0..c.nrows() {
        c[(i, i)] += 1.0;
    }
    symmetrize(&mut c);
    predict_with(chain, &subject.x_rows(), |_| Ok(c.clone()), rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Point prediction (mean over draws) and equal-tailed interval per column.
pub fn prediction_intervals(draws: &DMatrix<f64>, level: f64) -> Result<Vec<PredictionInterval>> {
    check_level(level)?;
    if draws.nrows() == 0 {
        return Err(CometError::EmptyChain);
    }
    let tail = (1.0 - level) / 2.0;
    Ok(draws
        .column_iter()
        .map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            PredictionInterval {
                mean: col.mean(),
                lo: quantile(&v, tail),
                hi: quantile(&v, 1.0 - tail),
            }
        })
        .collect())
}
