//! Synthetic clustered data with a sparse CP fixed effect and an
//! equicorrelated tensor-normal random effect, plus the reference fits,
//! metrics and benchmark driver built on top of it.

pub mod baselines;
pub mod bench;
pub mod geweke;
pub mod metrics;

use nalgebra::DMatrix;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CometError, Result};
use crate::linalg::cholesky_lower;
use crate::model::{ClusteredDataset, Observation, Subject};
use crate::rng::{stream, Purpose};
use crate::tensor::{inner_product, kronecker_desc, CpDecomposition, DenseTensor};

pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Fixed-effect dims `p_d`.
    pub p: Vec<usize>,
    /// Random-effect dims `q_d`.
    pub q: Vec<usize>,
    /// Rank of the generating CP tensor.
    pub true_rank: usize,
    /// Fraction of nonzero entries in each generating factor matrix.
    pub density: f64,
    /// Values the nonzero factor entries are drawn from, with replacement.
    pub values: Vec<f64>,
    /// Equicorrelation of each mode's random-effect covariance.
    pub rho: f64,
    pub tau2: f64,
    /// Training subjects.
    pub n: usize,
    /// Balanced cluster size; ignored when `m_list` is given.
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    /// Test subjects, each with `m` observations.
    pub n_test: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    /// 16 x 16 tensors, rank 4, 50 training and 25 test subjects of 6
    /// observations, 5 replications.
    pub fn desk() -> Self {
        Self {
            p: vec![16, 16],
            q: vec![16, 16],
            true_rank: 4,
            density: 0.25,
            values: vec![-2.0, -1.0, 1.0, 2.0],
            rho: 0.5,
            tau2: 0.1,
            n: 50,
            m: 6,
            m_list: None,
            n_test: 25,
            replications: 5,
            seed: 20_240_601,
        }
    }

    /// 32 x 32 tensors, rank 4, 100 training and 50 test subjects,
    /// 25 replications.
    pub fn paper() -> Self {
        Self {
            p: vec![32, 32],
            q: vec![32, 32],
            n: 100,
            n_test: 50,
            replications: 25,
            ..Self::desk()
        }
    }

    pub fn order(&self) -> usize {
        self.p.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.m_list.clone().unwrap_or_else(|| vec![self.m; self.n])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CometError::Config(m));
        if self.p.is_empty() || self.p.len() != self.q.len() {
            return fail(format!("p {:?} and q {:?} must be non-empty and of equal order", self.p, self.q));
        }
        if self.p.iter().chain(&self.q).any(|&d| d == 0) {
            return fail("every dimension must be positive".into());
        }
        if self.true_rank == 0 {
            return fail("true_rank must be positive".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return fail(format!("density {} must lie in (0, 1]", self.density));
        }
        if self.values.is_empty() || self.values.iter().any(|v| !v.is_finite()) {
            return fail("values must be a non-empty list of finite numbers".into());
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return fail(format!("tau2 {} must be non-negative", self.tau2));
        }
        for &q in &self.q {
            check_rho(q, self.rho)?;
        }
        let sizes = self.cluster_sizes();
        if self.n == 0 || sizes.len() != self.n || sizes.contains(&0) {
            return fail(format!("need n = {} positive cluster sizes, got {:?}", self.n, sizes));
        }
        if self.m == 0 {
            return fail("m must be positive".into());
        }
        Ok(())
    }
}

fn check_rho(q: usize, rho: f64) -> Result<()> {
    let lower = if q > 1 { -1.0 / (q as f64 - 1.0) } else { f64::NEG_INFINITY };
    if rho > lower && rho < 1.0 {
        Ok(())
    } else {
        Err(CometError::Config(format!(
            "rho = {rho} gives an indefinite {q} x {q} equicorrelation matrix"
        )))
    }
}

/// Unit diagonal, `rho` elsewhere.
pub fn equicorrelation(q: usize, rho: f64) -> Result<DMatrix<f64>> {
    check_rho(q, rho)?;
    Ok(DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { rho }))
}

/// Sparse CP factors: in each `p_d x K` factor, `ceil(density p_d K)`
/// distinct positions receive values drawn with replacement from `values`.
pub fn gen_true_cp<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<CpDecomposition> {
    let k = cfg.true_rank;
    let factors = cfg
        .p
        .iter()
        .map(|&pd| {
            let cells = pd * k;
            let count = ((cfg.density * cells as f64).ceil() as usize).clamp(1, cells);
            let mut f = DMatrix::zeros(pd, k);
            let mut positions = index::sample(rng, cells, count).into_vec();
            positions.sort_unstable();
            for pos in positions {
                f[(pos % pd, pos / pd)] = cfg.values[rng.random_range(0..cfg.values.len())];
            }
            f
        })
        .collect();
    CpDecomposition::new(factors)
}

/// Draws `A` with `vec(A) ~ N(0, τ² Σ_D ⊗ ... ⊗ Σ_1)` as an iid core
/// multiplied along each mode by the Cholesky factor of `Σ_d`.
#[derive(Clone, Debug)]
pub struct TensorNormal {
    dims: Vec<usize>,
    chol: Vec<DMatrix<f64>>,
    sd: f64,
}

impl TensorNormal {
    pub fn new(covariances: &[DMatrix<f64>], tau2: f64) -> Result<Self> {
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(CometError::Config(format!("scale τ² = {tau2} must be non-negative")));
        }
        let chol = covariances
            .iter()
            .map(|s| cholesky_lower(s, "mode covariance"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims: covariances.iter().map(|s| s.nrows()).collect(),
            chol,
            sd: tau2.sqrt(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DenseTensor> {
        let len = self.dims.iter().product();
        let core: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * self.sd).collect();
        self.chol
            .iter()
            .enumerate()
            .try_fold(DenseTensor::new(self.dims.clone(), core)?, |t, (d, l)| t.mode_multiply(l, d))
    }
}

pub fn tensor_normal_draw<R: Rng + ?Sized>(
    covariances: &[DMatrix<f64>],
    tau2: f64,
    rng: &mut R,
) -> Result<DenseTensor> {
    TensorNormal::new(covariances, tau2)?.sample(rng)
}

/// The generating parameters of a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub factors: CpDecomposition,
    pub b: DenseTensor,
    /// Mode covariances `Σ_d` of the random effect (up to τ²).
    pub sigma: Vec<DMatrix<f64>>,
    pub rho: f64,
    pub tau2: f64,
}

impl Truth {
    /// `Σ* = Σ_D ⊗ ... ⊗ Σ_1`.
    pub fn sigma_star(&self) -> DMatrix<f64> {
        kronecker_desc(&self.sigma, None)
    }

    pub fn support(&self) -> Vec<bool> {
        self.b.data().iter().map(|v| *v != 0.0).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub train: ClusteredDataset,
    pub test: ClusteredDataset,
    pub truth: Truth,
}

fn standard_normal_tensor<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> DenseTensor {
    let len = dims.iter().product();
    DenseTensor::new(dims.to_vec(), (0..len).map(|_| rng.sample(StandardNormal)).collect()).expect("dims are valid")
}

fn simulate_split(cfg: &SimConfig, truth: &Truth, split: u64, sizes: &[usize]) -> Result<ClusteredDataset> {
    let re = TensorNormal::new(&truth.sigma, truth.tau2)?;
    let noise_sd = truth.tau2.sqrt();
    let subjects = sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let key = [split, i as u64];
            let mut cov_rng = stream(cfg.seed, Purpose::Covariates, &key);
            let mut re_rng = stream(cfg.seed, Purpose::RandomEffects, &key);
            let mut noise_rng = stream(cfg.seed, Purpose::Noise, &key);
            let a = re.sample(&mut re_rng)?;
            let observations = (0..m)
                .map(|_| {
                    let x = standard_normal_tensor(&cfg.p, &mut cov_rng);
                    let z = standard_normal_tensor(&cfg.q, &mut cov_rng);
                    let eps: f64 = noise_rng.sample(StandardNormal);
                    let y = inner_product(&x, &truth.b)? + inner_product(&z, &a)? + noise_sd * eps;
                    Ok(Observation { y, x, z })
                })
                .collect::<Result<_>>()?;
            Ok(Subject { observations })
        })
        .collect::<Result<_>>()?;
    Ok(ClusteredDataset {
        p: cfg.p.clone(),
        q: cfg.q.clone(),
        subjects,
    })
}

/// `y_ij = <X_ij, B> + <Z_ij, A_i> + ε_ij` with standard normal covariate
/// entries, `A_i` tensor normal with covariances `τ² Σ_d` and
/// `ε_ij ~ N(0, τ²)`. Every subject draws from its own streams, keyed by
/// split (train 0, test 1) and index.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let factors = gen_true_cp(cfg, &mut stream(cfg.seed, Purpose::TrueFactors, &[]))?;
    let sigma = cfg
        .q
        .iter()
        .map(|&q| equicorrelation(q, cfg.rho))
        .collect::<Result<Vec<_>>>()?;
    let truth = Truth {
        b: factors.compose(),
        factors,
        sigma,
        rho: cfg.rho,
        tau2: cfg.tau2,
    };
    let train = simulate_split(cfg, &truth, 0, &cfg.cluster_sizes())?;
    let test = simulate_split(cfg, &truth, 1, &vec![cfg.m; cfg.n_test])?;
    Ok(SimulatedData { train, test, truth })
}
