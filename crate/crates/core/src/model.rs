//! Observed data, hyperparameters, and the mutable Gibbs state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compression::{default_compression, CompressedFactors, ProjectionSet};
use crate::error::{CometError, DatasetIssue, Result};
use crate::tensor::{CpDecomposition, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub x: DenseTensor,
    pub z: DenseTensor,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Subject {
    pub observations: Vec<Observation>,
}

impl Subject {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn responses(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.y))
    }
}

/// `n` subjects, subject `i` carrying `m_i` scalar responses with paired
/// fixed-effect (`p`-shaped) and random-effect (`q`-shaped) covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredDataset {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub subjects: Vec<Subject>,
}

impl ClusteredDataset {
    pub fn order(&self) -> usize {
        self.p.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(Subject::len).sum()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.subjects.iter().map(Subject::len).collect()
    }

    /// Checks every invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.p.len() != self.q.len() {
            return Err(CometError::Shape(format!(
                "p {:?} and q {:?} must be non-empty and of equal order",
                self.p, self.q
            )));
        }
        if self.p.contains(&0) || self.q.contains(&0) {
            return Err(CometError::Shape("dimensions must be positive".into()));
        }
        if self.subjects.is_empty() {
            return Err(CometError::Dataset {
                subject: 0,
                observation: None,
                kind: DatasetIssue::NoSubjects,
            });
        }
        for (i, s) in self.subjects.iter().enumerate() {
            let subject = i + 1;
            if s.is_empty() {
                return Err(CometError::Dataset {
                    subject,
                    observation: None,
                    kind: DatasetIssue::EmptySubject,
                });
            }
            for (j, o) in s.observations.iter().enumerate() {
                let err = |kind| CometError::Dataset {
                    subject,
                    observation: Some(j + 1),
                    kind,
                };
                if o.x.dims() != self.p.as_slice() {
                    return Err(err(DatasetIssue::XDims {
                        expected: self.p.clone(),
                        found: o.x.dims().to_vec(),
                    }));
                }
                if o.z.dims() != self.q.as_slice() {
                    return Err(err(DatasetIssue::ZDims {
                        expected: self.q.clone(),
                        found: o.z.dims().to_vec(),
                    }));
                }
                if !o.y.is_finite() {
                    return Err(err(DatasetIssue::NonFinite { field: "y" }));
                }
                if !o.x.data().iter().all(|v| v.is_finite()) {
                    return Err(err(DatasetIssue::NonFinite { field: "X" }));
                }
                if !o.z.data().iter().all(|v| v.is_finite()) {
                    return Err(err(DatasetIssue::NonFinite { field: "Z" }));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over dims, cluster sizes and the bit patterns of every value,
    /// hex-encoded (first 16 bytes).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.p.iter().chain(&self.q) {
            h.update((*d as u64).to_le_bytes());
        }
        for s in &self.subjects {
            h.update((s.len() as u64).to_le_bytes());
            for o in &s.observations {
                h.update(o.y.to_bits().to_le_bytes());
                for v in o.x.data().iter().chain(o.z.data()) {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn validate_dataset(ds: &ClusteredDataset) -> Result<()> {
    ds.validate()
}

/// Per-cell z-scoring of covariates, fitted on one dataset and reusable on
/// new covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_sd: Vec<f64>,
}

fn cell_moments<'a>(cells: usize, it: impl Iterator<Item = &'a DenseTensor> + Clone) -> (Vec<f64>, Vec<f64>) {
    let n = it.clone().count() as f64;
    let mut mean = vec![0.0; cells];
    for t in it.clone() {
        for (m, v) in mean.iter_mut().zip(t.data()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; cells];
    for t in it {
        for ((s, v), m) in var.iter_mut().zip(t.data()).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let sd = var
        .into_iter()
        .map(|s| {
            let sd = if n > 1.0 { (s / (n - 1.0)).sqrt() } else { 0.0 };
            if sd > 0.0 && sd.is_finite() { sd } else { 1.0 }
        })
        .collect();
    (mean, sd)
}

impl Standardization {
    pub fn fit(ds: &ClusteredDataset) -> Self {
        let obs = || ds.subjects.iter().flat_map(|s| s.observations.iter());
        let (x_mean, x_sd) = cell_moments(ds.p.iter().product(), obs().map(|o| &o.x));
        let (z_mean, z_sd) = cell_moments(ds.q.iter().product(), obs().map(|o| &o.z));
        Self { x_mean, x_sd, z_mean, z_sd }
    }

    pub fn apply_x(&self, x: &mut DenseTensor) {
        for ((v, m), s) in x.data_mut().iter_mut().zip(&self.x_mean).zip(&self.x_sd) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply_z(&self, z: &mut DenseTensor) {
        for ((v, m), s) in z.data_mut().iter_mut().zip(&self.z_mean).zip(&self.z_sd) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, ds: &mut ClusteredDataset) {
        for o in ds.subjects.iter_mut().flat_map(|s| s.observations.iter_mut()) {
            self.apply_x(&mut o.x);
            self.apply_z(&mut o.z);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// CP rank `K` of the fixed-effect tensor.
    pub rank: usize,
    /// Compression dims `k_d`.
    pub k: Vec<usize>,
    pub a0: f64,
    pub b0: f64,
    /// Prior variance of each `γ_d`.
    pub sigma2: Vec<f64>,
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Keep λ², δ² in the retained snapshots.
    #[serde(default)]
    pub keep_shrinkage: bool,
    /// Keep the imputed compressed cores in the retained snapshots.
    #[serde(default)]
    pub keep_dtilde: bool,
}

/// `max(1, ceil(ln max_d p_d))`.
pub fn default_rank(p: &[usize]) -> usize {
    let pmax = p.iter().copied().max().unwrap_or(1) as f64;
    (pmax.ln().ceil() as usize).max(1)
}

impl Hyperparams {
    /// The sampler defaults: `a0 = b0 = 0.01`, `σ_d² = 1`, 11000 iterations
    /// with 1000 burn-in, logarithmic rank and compression dims.
    pub fn defaults_for(p: &[usize], q: &[usize]) -> Self {
        Self {
            rank: default_rank(p),
            k: default_compression(q),
            a0: 0.01,
            b0: 0.01,
            sigma2: vec![1.0; q.len()],
            iters: 11_000,
            burnin: 1_000,
            seed: 0,
            keep_shrinkage: false,
            keep_dtilde: false,
        }
    }

    pub fn retained(&self) -> usize {
        self.iters.saturating_sub(self.burnin)
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let fail = |m: String| Err(CometError::Hyperparams(m));
        if self.rank < 1 {
            return fail("rank must be at least 1".into());
        }
        if self.k.len() != order || self.sigma2.len() != order {
            return fail(format!(
                "need {order} compression dims and prior variances, got {} and {}",
                self.k.len(),
                self.sigma2.len()
            ));
        }
        if !(self.a0 > 0.0 && self.b0 > 0.0 && self.a0.is_finite() && self.b0.is_finite()) {
            return fail(format!("a0 = {}, b0 = {} must be positive", self.a0, self.b0));
        }
        if self.sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return fail(format!("σ² = {:?} must be positive", self.sigma2));
        }
        if self.burnin >= self.iters {
            return fail(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burnin, self.iters
            ));
        }
        Ok(())
    }
}

/// One Gibbs-iteration snapshot. Shrinkage arrays share the `p_d x K` shape
/// of the factor matrix they scale: `lambda2[d][(j, g)]` is λ²_{gdj}.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    pub factors: CpDecomposition,
    pub gamma: CompressedFactors,
    pub tau2: f64,
    pub lambda2: Vec<DMatrix<f64>>,
    pub nu: Vec<DMatrix<f64>>,
    pub delta2: Vec<f64>,
    pub xi: Vec<f64>,
    pub dtilde: Vec<DVector<f64>>,
}

impl ParamState {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    /// `β = vec(B)`.
    pub fn beta(&self) -> Vec<f64> {
        self.factors.compose().into_data()
    }

    /// Checks shapes, positivity of every variance-like quantity, and
    /// finiteness of everything.
    pub fn audit(&self, k_star: usize) -> Result<()> {
        let bad = |what: String| Err(CometError::numerical(what));
        let rank = self.rank();
        let dims = self.factors.dims();
        if self.lambda2.len() != dims.len() || self.nu.len() != dims.len() {
            return bad("shrinkage arrays do not match tensor order".into());
        }
        for (d, &p) in dims.iter().enumerate() {
            for (name, m) in [("λ²", &self.lambda2[d]), ("ν", &self.nu[d])] {
                if m.shape() != (p, rank) {
                    return bad(format!("{name} for mode {d} has shape {:?}", m.shape()));
                }
                if !m.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} for mode {d} is not positive and finite"));
                }
            }
            if !self.factors.factor(d).iter().all(|v| v.is_finite()) {
                return bad(format!("factor {d} is not finite"));
            }
        }
        if self.delta2.len() != rank || self.xi.len() != rank {
            return bad("global shrinkage length does not match rank".into());
        }
        if !self
            .delta2
            .iter()
            .chain(&self.xi)
            .chain(std::iter::once(&self.tau2))
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return bad("δ², ξ or τ² is not positive and finite".into());
        }
        if !self.gamma.mats().iter().all(|m| m.iter().all(|v| v.is_finite())) {
            return bad("Γ is not finite".into());
        }
        for (i, d) in self.dtilde.iter().enumerate() {
            if d.len() != k_star {
                return bad(format!("core {i} has length {}, expected {k_star}", d.len()));
            }
            if !d.iter().all(|v| v.is_finite()) {
                return bad(format!("core {i} is not finite"));
            }
        }
        Ok(())
    }
}

/// Starting state: factor entries `N(0, 0.01)`, `Γ_d` entries
/// `N(0, 0.01 / k_d)`, `τ² = 1`, every shrinkage and auxiliary variable at
/// 1, cores at zero.
pub fn init_state<R: Rng + ?Sized>(
    ds: &ClusteredDataset,
    hp: &Hyperparams,
    ps: &ProjectionSet,
    rng: &mut R,
) -> Result<ParamState> {
    init_state_for(&ds.p, ps.k(), ds.n_subjects(), hp, rng)
}

/// With an empty `k` the state carries no covariance factors and no cores,
/// which is the layout used when the working covariance is known.
pub(crate) fn init_state_for<R: Rng + ?Sized>(
    p: &[usize],
    k: &[usize],
    n_subjects: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<ParamState> {
    let rank = hp.rank;
    let factor_dist = Normal::new(0.0, 0.1).expect("positive sd");
    let factors = CpDecomposition::new(
        p.iter()
            .map(|&pd| DMatrix::from_fn(pd, rank, |_, _| factor_dist.sample(rng)))
            .collect(),
    )?;
    let gamma = if k.is_empty() {
        CompressedFactors::zeros(&[])
    } else {
        CompressedFactors::new(
        k
            .iter()
            .map(|&kd| {
                let g = Normal::new(0.0, (0.01 / kd as f64).sqrt()).expect("positive sd");
                DMatrix::from_fn(kd, kd, |_, _| g.sample(rng))
            })
            .collect(),
    )?
    };
    let ones = || p.iter().map(|&pd| DMatrix::from_element(pd, rank, 1.0)).collect::<Vec<_>>();
    Ok(ParamState {
        factors,
        gamma,
        tau2: 1.0,
        lambda2: ones(),
        nu: ones(),
        delta2: vec![1.0; rank],
        xi: vec![1.0; rank],
        dtilde: if k.is_empty() {
            Vec::new()
        } else {
            vec![DVector::zeros(k.iter().product()); n_subjects]
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::draw_projections;
    use crate::rng::{stream, Purpose};

    fn tiny(n: usize, m: usize) -> ClusteredDataset {
        let obs = |v: f64| Observation {
            y: v,
            x: DenseTensor::from_fn(vec![2, 3], |i| v + i[0] as f64).unwrap(),
            z: DenseTensor::from_fn(vec![2, 2], |i| v - i[1] as f64).unwrap(),
        };
        ClusteredDataset {
            p: vec![2, 3],
            q: vec![2, 2],
            subjects: (0..n)
                .map(|i| Subject {
                    observations: (0..m).map(|j| obs((i * m + j) as f64)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn well_formed_dataset_validates() {
        tiny(2, 3).validate().unwrap();
    }

    #[test]
    fn wrong_x_dims_names_subject_and_observation() {
        let mut ds = tiny(2, 2);
        ds.subjects[1].observations[0].x = DenseTensor::zeros(vec![3, 2]).unwrap();
        let err = validate_dataset(&ds).unwrap_err();
        match &err {
            CometError::Dataset { subject, observation, kind } => {
                assert_eq!((*subject, *observation), (2, Some(1)));
                assert!(matches!(kind, DatasetIssue::XDims { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("subject 2, observation 1"));
    }

    #[test]
    fn nan_response_rejected() {
        let mut ds = tiny(2, 2);
        ds.subjects[0].observations[0].y = f64::NAN;
        assert!(matches!(
            ds.validate(),
            Err(CometError::Dataset {
                subject: 1,
                observation: Some(1),
                kind: DatasetIssue::NonFinite { field: "y" }
            })
        ));
    }

    #[test]
    fn empty_subject_rejected() {
        let mut ds = tiny(2, 2);
        ds.subjects[1].observations.clear();
        assert!(matches!(
            ds.validate(),
            Err(CometError::Dataset { subject: 2, observation: None, kind: DatasetIssue::EmptySubject })
        ));
        ds.subjects.clear();
        assert!(ds.validate().is_err());
    }

    #[test]
    fn init_state_is_valid_and_deterministic() {
        let ds = tiny(3, 2);
        let mut hp = Hyperparams::defaults_for(&ds.p, &ds.q);
        hp.rank = 2;
        hp.k = vec![1, 2];
        let ps = draw_projections(&ds.q, &hp.k, 4).unwrap();
        let a = init_state(&ds, &hp, &ps, &mut stream(9, Purpose::Init, &[])).unwrap();
        let b = init_state(&ds, &hp, &ps, &mut stream(9, Purpose::Init, &[])).unwrap();
        assert_eq!(a, b);
        a.audit(ps.k_star()).unwrap();
        assert_eq!(a.dtilde.len(), 3);
        assert_eq!(a.dtilde[0].len(), 2);
        assert_eq!(a.tau2, 1.0);
    }

    #[test]
    fn init_state_order_one_rank_one() {
        let ds = ClusteredDataset {
            p: vec![3],
            q: vec![2],
            subjects: vec![Subject {
                observations: vec![Observation {
                    y: 1.0,
                    x: DenseTensor::zeros(vec![3]).unwrap(),
                    z: DenseTensor::zeros(vec![2]).unwrap(),
                }],
            }],
        };
        let mut hp = Hyperparams::defaults_for(&ds.p, &ds.q);
        hp.rank = 1;
        let ps = draw_projections(&ds.q, &hp.k, 0).unwrap();
        let s = init_state(&ds, &hp, &ps, &mut stream(0, Purpose::Init, &[])).unwrap();
        s.audit(ps.k_star()).unwrap();
        assert_eq!(s.factors.factor(0).shape(), (3, 1));
    }

    #[test]
    fn hyperparams_validation() {
        let mut hp = Hyperparams::defaults_for(&[4, 4], &[4, 4]);
        hp.validate(2).unwrap();
        hp.burnin = hp.iters;
        assert!(hp.validate(2).is_err());
        let mut hp = Hyperparams::defaults_for(&[4, 4], &[4, 4]);
        hp.a0 = 0.0;
        assert!(hp.validate(2).is_err());
        assert!(Hyperparams::defaults_for(&[4, 4], &[4, 4]).validate(3).is_err());
    }

    #[test]
    fn standardization_centres_cells() {
        let mut ds = tiny(3, 2);
        let st = Standardization::fit(&ds);
        st.apply(&mut ds);
        let again = Standardization::fit(&ds);
        assert!(again.x_mean.iter().all(|m| m.abs() < 1e-12));
        assert!(again.x_sd.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fingerprint_changes_with_data() {
        let a = tiny(2, 2);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.subjects[0].observations[0].y += 1.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
