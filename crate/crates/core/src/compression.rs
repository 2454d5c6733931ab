//! Mode-wise random projections.
//!
//! Each mode `d` owns two fixed `k_d x q_d` Gaussian matrices: `S_d`
//! compresses the random-effect covariates, `R_d` compresses the latent core,
//! and the square-root covariance factor is replaced by a small `k_d x k_d`
//! matrix `Γ_d`. Projections are drawn once per fit and regenerated from the
//! seed whenever they are needed again, so they are never stored.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{CometError, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::{kronecker_desc, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    q: Vec<usize>,
    k: Vec<usize>,
    seed: u64,
    r: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
}

/// `k_d = max(1, ceil(ln max_d q_d))`, clamped to `q_d`.
pub fn default_compression(q: &[usize]) -> Vec<usize> {
    let qmax = q.iter().copied().max().unwrap_or(1) as f64;
    let k = (qmax.ln().ceil() as usize).max(1);
    q.iter().map(|&qd| k.min(qd)).collect()
}

pub fn draw_projections(q: &[usize], k: &[usize], seed: u64) -> Result<ProjectionSet> {
    if q.len() != k.len() || q.is_empty() {
        return Err(CometError::Compression(format!(
            "need one compression dim per mode, got q={q:?}, k={k:?}"
        )));
    }
    for (d, (&qd, &kd)) in q.iter().zip(k).enumerate() {
        if kd < 1 || kd > qd {
            return Err(CometError::Compression(format!(
                "mode {d}: k_d = {kd} must satisfy 1 <= k_d <= q_d = {qd}"
            )));
        }
    }
    let draw = |purpose: Purpose, d: usize| {
        let kd = k[d];
        let normal = Normal::new(0.0, (1.0 / kd as f64).sqrt()).expect("positive sd");
        let mut rng = stream(seed, purpose, &[d as u64]);
        DMatrix::from_fn(kd, q[d], |_, _| normal.sample(&mut rng))
    };
    Ok(ProjectionSet {
        q: q.to_vec(),
        k: k.to_vec(),
        seed,
        r: (0..q.len()).map(|d| draw(Purpose::ProjectionR, d)).collect(),
        s: (0..q.len()).map(|d| draw(Purpose::ProjectionS, d)).collect(),
    })
}

impl ProjectionSet {
    /// Builds a set from explicit matrices (tests, hand-constructed examples).
    pub fn from_matrices(r: Vec<DMatrix<f64>>, s: Vec<DMatrix<f64>>) -> Result<Self> {
        if r.len() != s.len() || r.is_empty() {
            return Err(CometError::Compression("need matching R and S lists".into()));
        }
        for (d, (rd, sd)) in r.iter().zip(&s).enumerate() {
            if rd.shape() != sd.shape() || rd.nrows() > rd.ncols() || rd.nrows() == 0 {
                return Err(CometError::Compression(format!(
                    "mode {d}: R is {:?}, S is {:?}",
                    rd.shape(),
                    sd.shape()
                )));
            }
        }
        Ok(Self {
            q: r.iter().map(|m| m.ncols()).collect(),
            k: r.iter().map(|m| m.nrows()).collect(),
            seed: 0,
            r,
            s,
        })
    }

    pub fn q(&self) -> &[usize] {
        &self.q
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn order(&self) -> usize {
        self.q.len()
    }

    pub fn r(&self, d: usize) -> &DMatrix<f64> {
        &self.r[d]
    }

    pub fn s(&self, d: usize) -> &DMatrix<f64> {
        &self.s[d]
    }

    pub fn k_star(&self) -> usize {
        self.k.iter().product()
    }

    pub fn q_star(&self) -> usize {
        self.q.iter().product()
    }

    /// `V_dd = R* R*ᵀ = ⊗_desc (R_d R_dᵀ)`, the prior covariance (up to τ²)
    /// of the compressed core.
    pub fn core_covariance(&self) -> DMatrix<f64> {
        let grams: Vec<_> = self.r.iter().map(|r| r * r.transpose()).collect();
        kronecker_desc(&grams, None)
    }

    /// `Z̃ = Z x_1 S_1 ... x_D S_D`.
    pub fn compress_covariate(&self, z: &DenseTensor) -> Result<DenseTensor> {
        compress_covariate(z, self)
    }
}

pub fn compress_covariate(z: &DenseTensor, ps: &ProjectionSet) -> Result<DenseTensor> {
    if z.dims() != ps.q() {
        return Err(CometError::DimensionMismatch(format!(
            "covariate dims {:?} do not match projection dims {:?}",
            z.dims(),
            ps.q()
        )));
    }
    ps.s
        .iter()
        .enumerate()
        .try_fold(z.clone(), |acc, (d, s)| acc.mode_multiply(s, d))
}

/// The compressed covariance factors `Γ_1, ..., Γ_D`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedFactors {
    mats: Vec<DMatrix<f64>>,
}

impl CompressedFactors {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(CometError::Compression("need at least one factor".into()));
        }
        for (d, m) in mats.iter().enumerate() {
            if !m.is_square() || m.nrows() == 0 {
                return Err(CometError::Compression(format!(
                    "Γ_{d} must be square and non-empty, got {:?}",
                    m.shape()
                )));
            }
        }
        Ok(Self { mats })
    }

    pub fn zeros(k: &[usize]) -> Self {
        Self {
            mats: k.iter().map(|&kd| DMatrix::zeros(kd, kd)).collect(),
        }
    }

    pub fn identity(k: &[usize]) -> Self {
        Self {
            mats: k.iter().map(|&kd| DMatrix::identity(kd, kd)).collect(),
        }
    }

    pub fn k(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.nrows()).collect()
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    pub fn get(&self, d: usize) -> &DMatrix<f64> {
        &self.mats[d]
    }

    /// `γ_d = vec(Γ_d)`.
    pub fn gamma_vec(&self, d: usize) -> Vec<f64> {
        self.mats[d].as_slice().to_vec()
    }

    pub fn set_from_vec(&mut self, d: usize, gamma: &[f64]) -> Result<()> {
        let kd = self.mats[d].nrows();
        if gamma.len() != kd * kd {
            return Err(CometError::DimensionMismatch(format!(
                "γ_{d} needs {} entries, got {}",
                kd * kd,
                gamma.len()
            )));
        }
        self.mats[d] = DMatrix::from_column_slice(kd, kd, gamma);
        Ok(())
    }

    /// `Γ* = Γ_D ⊗ ... ⊗ Γ_1`.
    pub fn kron(&self) -> DMatrix<f64> {
        kronecker_desc(&self.mats, None)
    }
}

/// `(Γ*, R*, S*)`, each the descending-mode Kronecker product of its
/// per-mode matrices.
#[derive(Clone, Debug)]
pub struct KronAssembly {
    pub gamma: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

pub fn assemble_kron(ps: &ProjectionSet, cf: &CompressedFactors) -> Result<KronAssembly> {
    if cf.k() != ps.k() {
        return Err(CometError::DimensionMismatch(format!(
            "Γ dims {:?} do not match projection dims {:?}",
            cf.k(),
            ps.k()
        )));
    }
    Ok(KronAssembly {
        gamma: cf.kron(),
        r: kronecker_desc(&ps.r, None),
        s: kronecker_desc(&ps.s, None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projections_are_deterministic() {
        let a = draw_projections(&[7, 5], &[3, 2], 11).unwrap();
        let b = draw_projections(&[7, 5], &[3, 2], 11).unwrap();
        assert_eq!(a, b);
        let c = draw_projections(&[7, 5], &[3, 2], 12).unwrap();
        assert_ne!(a.r(0), c.r(0));
        assert_ne!(a.r(0), a.s(0));
    }

    #[test]
    fn projection_variance_is_one_over_k() {
        let ps = draw_projections(&[100], &[10], 3).unwrap();
        let vals = ps.r(0).as_slice();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Var of the sample variance of Gaussians is 2σ⁴/(n-1).
        let se = (2.0 * 0.1f64.powi(2) / (n - 1.0)).sqrt();
        assert!((var - 0.1).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn projection_dims_validated() {
        assert!(draw_projections(&[4], &[5], 0).is_err());
        assert!(draw_projections(&[4], &[0], 0).is_err());
        assert!(draw_projections(&[4, 4], &[2], 0).is_err());
        let square = draw_projections(&[4], &[4], 0).unwrap();
        assert_eq!(square.r(0).shape(), (4, 4));
    }

    #[test]
    fn default_compression_uses_log_of_largest_mode() {
        assert_eq!(default_compression(&[32, 32]), vec![4, 4]);
        assert_eq!(default_compression(&[16, 3]), vec![3, 3]);
        assert_eq!(default_compression(&[1]), vec![1]);
        assert_eq!(default_compression(&[20, 2]), vec![3, 2]);
    }

    #[test]
    fn compress_scalar_example() {
        let s = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let ps = ProjectionSet::from_matrices(vec![s.clone(), s.clone()], vec![s.clone(), s]).unwrap();
        let z = DenseTensor::from_matrix(&DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]));
        let zc = compress_covariate(&z, &ps).unwrap();
        assert_eq!(zc.dims(), &[1, 1]);
        assert_eq!(zc.data(), &[10.0]);
        let wrong = DenseTensor::zeros(vec![3, 2]).unwrap();
        assert!(compress_covariate(&wrong, &ps).is_err());
    }

    #[test]
    fn identity_projection_leaves_covariate() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let ps = ProjectionSet::from_matrices(vec![eye.clone(), eye.clone()], vec![eye.clone(), eye]).unwrap();
        let z = DenseTensor::from_fn(vec![3, 3], |i| (i[0] * 3 + i[1]) as f64).unwrap();
        assert_eq!(compress_covariate(&z, &ps).unwrap(), z);
    }

    #[test]
    fn assemble_kron_examples() {
        let ps = draw_projections(&[3, 4], &[2, 3], 1).unwrap();
        let kr = assemble_kron(&ps, &CompressedFactors::identity(&[2, 3])).unwrap();
        assert_eq!(kr.gamma, DMatrix::identity(6, 6));
        assert_eq!(kr.r.shape(), (6, 12));
        assert_eq!(kr.s.shape(), (6, 12));

        let ps1 = draw_projections(&[1, 1], &[1, 1], 1).unwrap();
        let cf = CompressedFactors::new(vec![
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 3.0),
        ])
        .unwrap();
        assert_eq!(assemble_kron(&ps1, &cf).unwrap().gamma[(0, 0)], 6.0);
        assert!(assemble_kron(&ps, &CompressedFactors::identity(&[2, 2])).is_err());
    }
}
