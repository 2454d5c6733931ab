//! Joint-distribution test of the sampler. Marginal means of `ln τ²` and
//! `ln δ²_1` from independent draws of the prior are compared with those
//! along chains that alternate a sampler sweep with a fresh draw of the
//! responses. Both sequences target the same joint of parameters and data
//! only if every update is correct.
//!
//! Each chain starts from its own prior draw, which is already a draw from
//! the joint, so no burn-in is needed. The standard error of the chain mean
//! comes from the spread of independent chain means and stays valid however
//! slowly a single chain mixes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{draw_projections, CompressedFactors};
use crate::error::{CometError, Result};
use crate::linalg::{standard_normal_vector, InvGamma};
use crate::model::{ClusteredDataset, Hyperparams, Observation, ParamState, Subject};
use super::par_map;
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampler::{gibbs_step, joint_blocks, PreparedData};
use crate::tensor::{CpDecomposition, DenseTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GewekeConfig {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub k: Vec<usize>,
    pub rank: usize,
    pub n: usize,
    pub m: usize,
    /// Total sweeps, split evenly over the chains.
    pub sweeps: usize,
    /// Number of independent prior draws.
    pub forward: usize,
    /// Proper prior for τ²; the defaults of the sampler are too vague to
    /// give finite moments on the log scale at this sample size.
    pub a0: f64,
    pub b0: f64,
    pub sigma2: f64,
    /// Independent alternating chains.
    pub chains: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            p: vec![2, 2],
            q: vec![2, 2],
            k: vec![1, 1],
            rank: 1,
            n: 3,
            m: 2,
            sweeps: 50_000,
            forward: 50_000,
            a0: 3.0,
            b0: 2.0,
            sigma2: 1.0,
            chains: 500,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    /// `(chain - forward) / sqrt(se_chain² + se_forward²)`.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub config: GewekeConfig,
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

fn hyper(cfg: &GewekeConfig) -> Hyperparams {
    Hyperparams {
        rank: cfg.rank,
        k: cfg.k.clone(),
        a0: cfg.a0,
        b0: cfg.b0,
        sigma2: vec![cfg.sigma2; cfg.p.len()],
        iters: cfg.sweeps.max(1),
        burnin: 0,
        seed: cfg.seed,
        keep_shrinkage: false,
        keep_dtilde: false,
    }
}

/// A draw from the parameter-expanded prior:
/// `ξ, ν ~ IG(1/2, 1)`, `δ² | ξ ~ IG(1/2, 1/ξ)`, `λ² | ν ~ IG(1/2, 1/ν)`,
/// `τ² ~ IG(a0, b0)`, `β_dj(g) ~ N(0, τ² δ²_g λ²_gdj)`, `γ_d ~ N(0, σ² I)`.
pub fn prior_draw<R: Rng + ?Sized>(
    p: &[usize],
    k: &[usize],
    n_subjects: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<ParamState> {
    let rank = hp.rank;
    let half = |scale: f64, rng: &mut R| -> Result<f64> { Ok(InvGamma::new(0.5, scale)?.sample(rng)) };
    let mut xi = Vec::with_capacity(rank);
    let mut delta2 = Vec::with_capacity(rank);
    for _ in 0..rank {
        let x = half(1.0, rng)?;
        xi.push(x);
        delta2.push(half(1.0 / x, rng)?);
    }
    let tau2 = InvGamma::new(hp.a0, hp.b0)?.sample(rng);
    let mut nu = Vec::new();
    let mut lambda2 = Vec::new();
    let mut factors = Vec::new();
    for &pd in p {
        let mut n_d = DMatrix::zeros(pd, rank);
        let mut l_d = DMatrix::zeros(pd, rank);
        let mut b_d = DMatrix::zeros(pd, rank);
        for g in 0..rank {
            for j in 0..pd {
                n_d[(j, g)] = half(1.0, rng)?;
                l_d[(j, g)] = half(1.0 / n_d[(j, g)], rng)?;
                let sd = (tau2 * delta2[g] * l_d[(j, g)]).sqrt();
                b_d[(j, g)] = sd * standard_normal_vector(1, rng)[0];
            }
        }
        nu.push(n_d);
        lambda2.push(l_d);
        factors.push(b_d);
    }
    let gamma = k
        .iter()
        .zip(&hp.sigma2)
        .map(|(&kd, s2)| {
            let v = standard_normal_vector(kd * kd, rng) * s2.sqrt();
            DMatrix::from_column_slice(kd, kd, v.as_slice())
        })
        .collect();
    Ok(ParamState {
        factors: CpDecomposition::new(factors)?,
        gamma: CompressedFactors::new(gamma)?,
        tau2,
        lambda2,
        nu,
        delta2,
        xi,
        dtilde: vec![DVector::zeros(k.iter().product()); n_subjects],
    })
}

/// Replaces every response by a draw from `N(X_i β, τ² C_i)`, the model with
/// the cores integrated out.
pub fn redraw_responses<R: Rng + ?Sized>(prep: &mut PreparedData, state: &ParamState, rng: &mut R) -> Result<()> {
    let beta = DVector::from_vec(state.beta());
    let gstar = state.gamma.kron();
    let v_dd = prep.v_dd.clone();
    for s in &mut prep.subjects {
        let blocks = joint_blocks(s, &v_dd, &gstar)?;
        let e = standard_normal_vector(s.len(), rng);
        s.y = &s.x_rows * &beta + &blocks.chol_yy * e * state.tau2.sqrt();
    }
    Ok(())
}

fn fixed_design(cfg: &GewekeConfig) -> ClusteredDataset {
    let normal = |dims: &[usize], rng: &mut crate::rng::CometRng| {
        let len = dims.iter().product();
        DenseTensor::new(dims.to_vec(), standard_normal_vector(len, rng).as_slice().to_vec()).expect("valid dims")
    };
    let subjects = (0..cfg.n)
        .map(|i| {
            let mut rng = stream(cfg.seed, Purpose::Covariates, &[i as u64]);
            Subject {
                observations: (0..cfg.m)
                    .map(|_| Observation {
                        y: 0.0,
                        x: normal(&cfg.p, &mut rng),
                        z: normal(&cfg.q, &mut rng),
                    })
                    .collect(),
            }
        })
        .collect();
    ClusteredDataset {
        p: cfg.p.clone(),
        q: cfg.q.clone(),
        subjects,
    }
}

fn tracked(s: &ParamState) -> [f64; 2] {
    [s.tau2.ln(), s.delta2[0].ln()]
}

fn mean_se_iid(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean of `ln τ²` and `ln δ²_1` along one alternating chain started from a
/// prior draw.
fn chain_means(cfg: &GewekeConfig, hp: &Hyperparams, prep: &PreparedData, chain: usize, sweeps: usize) -> Result<[f64; 2]> {
    let mut prep = prep.clone();
    let mut hp = hp.clone();
    hp.seed = derive_seed(cfg.seed, Purpose::Geweke, &[2, chain as u64]);
    let mut rng = stream(cfg.seed, Purpose::Geweke, &[1, chain as u64]);
    let mut state = prior_draw(&cfg.p, &cfg.k, cfg.n, &hp, &mut rng)?;
    let mut acc = [0.0; 2];
    for t in 0..sweeps {
        redraw_responses(&mut prep, &state, &mut rng)?;
        state = gibbs_step(&prep, &hp, &state, t)?.0;
        for (a, v) in acc.iter_mut().zip(tracked(&state)) {
            *a += v;
        }
    }
    Ok(acc.map(|a| a / sweeps as f64))
}

pub fn run_geweke(cfg: &GewekeConfig) -> Result<GewekeReport> {
    let hp = hyper(cfg);
    hp.validate(cfg.p.len())?;
    if cfg.chains < 2 || cfg.sweeps < cfg.chains || cfg.forward < 2 {
        return Err(CometError::Config(format!(
            "need at least 2 chains, one sweep per chain and 2 forward draws; got {} chains, {} sweeps, {} forward",
            cfg.chains, cfg.sweeps, cfg.forward
        )));
    }
    let ds = fixed_design(cfg);
    let ps = draw_projections(&cfg.q, &cfg.k, cfg.seed)?;
    let prep = PreparedData::new(&ds, Some(&ps))?;

    let mut rng = stream(cfg.seed, Purpose::Geweke, &[0]);
    let mut forward: [Vec<f64>; 2] = [Vec::with_capacity(cfg.forward), Vec::with_capacity(cfg.forward)];
    for _ in 0..cfg.forward {
        let s = prior_draw(&cfg.p, &cfg.k, cfg.n, &hp, &mut rng)?;
        for (f, v) in forward.iter_mut().zip(tracked(&s)) {
            f.push(v);
        }
    }

    let per_chain = cfg.sweeps / cfg.chains;
    let ids: Vec<usize> = (0..cfg.chains).collect();
    let means = par_map(&ids, |&c| chain_means(cfg, &hp, &prep, c, per_chain))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let stats = ["ln tau2", "ln delta2_1"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (fm, fse) = mean_se_iid(&forward[i]);
            let chain: Vec<f64> = means.iter().map(|m| m[i]).collect();
            let (cm, cse) = mean_se_iid(&chain);
            GewekeStat {
                name: name.to_string(),
                forward_mean: fm,
                forward_se: fse,
                chain_mean: cm,
                chain_se: cse,
                z: (cm - fm) / (cse * cse + fse * fse).sqrt(),
            }
        })
        .collect();
    Ok(GewekeReport {
        config: cfg.clone(),
        stats,
    })
}
