//! The collapsed Gibbs sampler.
//!
//! One sweep runs, in order:
//!
//! 1. (a) a compressed core `d̃_i` for every subject, then (b) `γ_1, ..., γ_D`
//!    in sequence given the cores;
//! 2. with the cores integrated out, (c) for each mode `d` the margin `B_d`
//!    followed by its local shrinkage `λ², ν`, then (d) the global shrinkage
//!    `δ², ξ` and (e) the error variance `τ²`.
//!
//! The per-subject whiteners used by block 2 are rebuilt once the new `Γ_d`
//! are in place and are shared by every step of that block.

pub mod blocks;
pub mod covariance;
pub mod mean;
pub mod prepared;
pub mod shrinkage;

use nalgebra::DVector;
use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::compression::{CompressedFactors, ProjectionSet};
use crate::error::Result;
use crate::model::{init_state, ClusteredDataset, Hyperparams, ParamState};
use crate::posterior::{Chain, ChainHeader, Method, Snapshot};
use crate::rng::{stream, Purpose};

pub use blocks::{joint_blocks, SubjectGaussianBlocks, Whitener};
pub use prepared::{PreparedData, PreparedSubject};

/// Wall-clock seconds spent in each part of the sweep. Never written to
/// artifacts, so reruns stay byte-identical.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockTimings {
    pub cores: f64,
    pub covariance: f64,
    pub whitening: f64,
    pub mean: f64,
}

impl BlockTimings {
    pub fn total(&self) -> f64 {
        self.cores + self.covariance + self.whitening + self.mean
    }
}

impl std::ops::AddAssign for BlockTimings {
    fn add_assign(&mut self, o: Self) {
        self.cores += o.cores;
        self.covariance += o.covariance;
        self.whitening += o.whitening;
        self.mean += o.mean;
    }
}

#[cfg(not(target_arch = "wasm32"))]
pub(crate) struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self(std::time::Instant::now())
    }

    /// Seconds since the last lap.
    pub(crate) fn lap(&mut self) -> f64 {
        let now = std::time::Instant::now();
        let s = (now - self.0).as_secs_f64();
        self.0 = now;
        s
    }
}

#[cfg(target_arch = "wasm32")]
pub(crate) struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self
    }

    pub(crate) fn lap(&mut self) -> f64 {
        0.0
    }
}

fn map_subjects<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whiteners `L_i⁻¹` of `C_i = Z̃_i Γ* R* R*ᵀ Γ*ᵀ Z̃_iᵀ + I` for every subject.
pub fn comet_whiteners(prep: &PreparedData, gamma: &CompressedFactors) -> Result<Vec<Whitener>> {
    let gstar = gamma.kron();
    map_subjects(prep.subjects.len(), |i| {
        Ok(joint_blocks(&prep.subjects[i], &prep.v_dd, &gstar)?.whitener())
    })
}

/// Step (a): a fresh core for every subject, each from its own stream.
pub fn sample_cores(prep: &PreparedData, state: &ParamState, seed: u64, t: usize) -> Result<Vec<DVector<f64>>> {
    let gstar = state.gamma.kron();
    let beta = DVector::from_vec(state.beta());
    map_subjects(prep.subjects.len(), |i| {
        let s = &prep.subjects[i];
        let blocks = joint_blocks(s, &prep.v_dd, &gstar)?;
        let residual = &s.y - &s.x_rows * &beta;
        let mut rng = stream(seed, Purpose::Dtilde, &[t as u64, i as u64]);
        blocks::sample_dtilde(&blocks, &residual, state.tau2, &mut rng)
    })
}

/// Steps (c) to (e) given fixed whiteners.
pub fn mean_block<R: Rng + ?Sized>(
    prep: &PreparedData,
    whiteners: &[Whitener],
    hp: &Hyperparams,
    state: &mut ParamState,
    rng: &mut R,
) -> Result<()> {
    for d in 0..prep.order() {
        let design = mean::beta_design(d, prep, whiteners, &state.factors)?;
        mean::sample_beta_margin(d, &design, state, rng)?;
        shrinkage::sample_local_shrinkage(state, d, rng)?;
    }
    shrinkage::sample_global_shrinkage(state, rng)?;
    mean::sample_tau2(prep, whiteners, state, hp, rng)?;
    Ok(())
}

/// One full sweep from `state`; the input is left untouched. `t` keys the
/// random streams, so a sweep is reproducible in isolation.
pub fn gibbs_step(
    prep: &PreparedData,
    hp: &Hyperparams,
    state: &ParamState,
    t: usize,
) -> Result<(ParamState, BlockTimings)> {
    sweep(prep, hp, state, t).map_err(|e| e.at_iteration(t))
}

fn sweep(prep: &PreparedData, hp: &Hyperparams, state: &ParamState, t: usize) -> Result<(ParamState, BlockTimings)> {
    let mut next = state.clone();
    let mut timings = BlockTimings::default();
    let mut clock = Stopwatch::start();

    next.dtilde = sample_cores(prep, &next, hp.seed, t)?;
    timings.cores = clock.lap();

    let mut rng = stream(hp.seed, Purpose::Sweep, &[t as u64, 0]);
    for d in 0..prep.order() {
        let design = covariance::gamma_design(d, prep, &next)?;
        covariance::sample_gamma(d, &design, &mut next, hp.sigma2[d], &mut rng)?;
    }
    timings.covariance = clock.lap();

    let whiteners = comet_whiteners(prep, &next.gamma)?;
    timings.whitening = clock.lap();

    let mut rng = stream(hp.seed, Purpose::Sweep, &[t as u64, 1]);
    mean_block(prep, &whiteners, hp, &mut next, &mut rng)?;
    timings.mean = clock.lap();

    next.audit(prep.k_star())?;
    Ok((next, timings))
}

/// Iterates `step` from `state` for `hp.iters` sweeps and keeps the sweeps
/// from `hp.burnin` on.
pub(crate) fn collect_chain<F>(header: ChainHeader, hp: &Hyperparams, mut state: ParamState, mut step: F) -> Result<Chain>
where
    F: FnMut(&ParamState, usize) -> Result<(ParamState, BlockTimings)>,
{
    let mut chain = Chain::new(header);
    for t in 0..hp.iters {
        let (next, timings) = step(&state, t)?;
        chain.timings += timings;
        if t >= hp.burnin {
            chain.push(Snapshot::from_state(&next, hp));
        }
        state = next;
    }
    Ok(chain)
}

/// Runs the sampler on `ds` with the projections `ps`.
pub fn run_chain(ds: &ClusteredDataset, hp: &Hyperparams, ps: &ProjectionSet) -> Result<Chain> {
    hp.validate(ds.order())?;
    if hp.k != ps.k() {
        return Err(crate::error::CometError::Hyperparams(format!(
            "hyperparameters ask for k = {:?}, projections have k = {:?}",
            hp.k,
            ps.k()
        )));
    }
    let prep = PreparedData::new(ds, Some(ps))?;
    let state = init_state(ds, hp, ps, &mut stream(hp.seed, Purpose::Init, &[]))?;
    let header = ChainHeader::new(ds, hp, Some(ps.seed()), Method::Comet);
    collect_chain(header, hp, state, |s, t| gibbs_step(&prep, hp, s, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::draw_projections;
    use crate::model::{Observation, Subject};
    use crate::tensor::DenseTensor;

    fn toy() -> ClusteredDataset {
        let subjects = (0..4)
            .map(|i| Subject {
                observations: (0..3)
                    .map(|j| {
                        let v = (i * 3 + j) as f64;
                        Observation {
                            y: (v * 0.7).sin(),
                            x: DenseTensor::from_fn(vec![2, 2], |c| ((v + c[0] as f64) * 1.3 + c[1] as f64).cos()).unwrap(),
                            z: DenseTensor::from_fn(vec![2, 2], |c| ((v - c[1] as f64) * 0.9 + c[0] as f64).sin()).unwrap(),
                        }
                    })
                    .collect(),
            })
            .collect();
        ClusteredDataset {
            p: vec![2, 2],
            q: vec![2, 2],
            subjects,
        }
    }

    fn hp(iters: usize, burnin: usize) -> Hyperparams {
        let mut hp = Hyperparams::defaults_for(&[2, 2], &[2, 2]);
        hp.rank = 2;
        hp.k = vec![1, 2];
        hp.iters = iters;
        hp.burnin = burnin;
        hp.seed = 11;
        hp
    }

    #[test]
    fn chain_length_is_iters_minus_burnin() {
        let ds = toy();
        let hp = hp(2, 1);
        let ps = draw_projections(&ds.q, &hp.k, 3).unwrap();
        assert_eq!(run_chain(&ds, &hp, &ps).unwrap().len(), 1);
    }

    #[test]
    fn sweep_is_deterministic_and_pure() {
        let ds = toy();
        let hp = hp(5, 0);
        let ps = draw_projections(&ds.q, &hp.k, 3).unwrap();
        let prep = PreparedData::new(&ds, Some(&ps)).unwrap();
        let s0 = init_state(&ds, &hp, &ps, &mut stream(1, Purpose::Init, &[])).unwrap();
        let copy = s0.clone();
        let (a, _) = gibbs_step(&prep, &hp, &s0, 4).unwrap();
        let (b, _) = gibbs_step(&prep, &hp, &s0, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(s0, copy);
        a.audit(prep.k_star()).unwrap();
        let (c, _) = gibbs_step(&prep, &hp, &s0, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identical_seeds_give_identical_chains() {
        let ds = toy();
        let hp = hp(20, 5);
        let ps = draw_projections(&ds.q, &hp.k, 3).unwrap();
        let a = run_chain(&ds, &hp, &ps).unwrap();
        let b = run_chain(&ds, &hp, &ps).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.len(), 15);
    }
}
