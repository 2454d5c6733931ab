//! Browser bindings for three small operations: simulate a dataset, fit it
//! and score the fit, and draw random effects from the equicorrelated
//! tensor normal. Every function takes and returns JSON strings so the page
//! needs no generated type glue.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use comet::compression::draw_projections;
use comet::model::Hyperparams;
use comet::posterior::{
    credible_intervals, point_estimate, predict_draws, prediction_intervals, select_ci, select_s2m, NewSubject,
};
use comet::rng::{stream, Purpose};
use comet::sampler::run_chain;
use comet::sim::metrics::{coverage_width, f1, rmse};
use comet::sim::{equicorrelation, simulate_dataset, tensor_normal_draw, SimConfig};

/// Largest side length the page may ask for.
const MAX_SIDE: usize = 24;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRequest {
    pub side: usize,
    pub true_rank: usize,
    pub rho: f64,
    pub tau2: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl SimRequest {
    fn config(&self) -> Result<SimConfig, String> {
        if self.side == 0 || self.side > MAX_SIDE {
            return Err(format!("side must be between 1 and {MAX_SIDE}"));
        }
        Ok(SimConfig {
            p: vec![self.side; 2],
            q: vec![self.side; 2],
            true_rank: self.true_rank,
            n: self.n,
            m: self.m,
            rho: self.rho,
            tau2: self.tau2,
            n_test: 10,
            replications: 1,
            seed: self.seed,
            ..SimConfig::desk()
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub sim: SimRequest,
    pub rank: usize,
    pub k: usize,
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    pub level: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectRequest {
    pub side: usize,
    pub rho: f64,
    pub tau2: f64,
    pub seed: u64,
}

/// A side x side matrix, column-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub side: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimResponse {
    pub truth: Grid,
    pub support: Vec<bool>,
    pub responses: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResponse {
    pub truth: Grid,
    pub median: Grid,
    pub s2m: Vec<bool>,
    pub ci: Vec<bool>,
    pub tau2: Vec<f64>,
    pub rmse: f64,
    pub f1_s2m: f64,
    pub f1_ci: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectResponse {
    pub sigma: Grid,
    pub effect: Grid,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimRequest = serde_json::from_str(request).map_err(err)?;
    let sim = simulate_dataset(&req.config()?).map_err(err)?;
    let resp = SimResponse {
        truth: Grid {
            side: req.side,
            values: sim.truth.b.data().to_vec(),
        },
        support: sim.truth.support(),
        responses: sim.train.subjects.iter().flat_map(|s| s.observations.iter().map(|o| o.y)).collect(),
    };
    serde_json::to_string(&resp).map_err(err)
}

pub fn fit_json(request: &str) -> Result<String, String> {
    let req: FitRequest = serde_json::from_str(request).map_err(err)?;
    let sim = simulate_dataset(&req.sim.config()?).map_err(err)?;
    let q = &sim.train.q;
    let hp = Hyperparams {
        rank: req.rank,
        k: vec![req.k; q.len()],
        iters: req.iters,
        burnin: req.burnin,
        seed: req.seed,
        ..Hyperparams::defaults_for(&sim.train.p, q)
    };
    let ps = draw_projections(q, &hp.k, req.seed).map_err(err)?;
    let chain = run_chain(&sim.train, &hp, &ps).map_err(err)?;
    let median = point_estimate(&chain).map_err(err)?;
    let ci = credible_intervals(&chain, req.level).map_err(err)?;
    let support = sim.truth.support();
    let s2m = select_s2m(&chain).map_err(err)?;
    let ci_sel = select_ci(&ci);

    let mut intervals = Vec::new();
    let mut targets = Vec::new();
    for (i, s) in sim.test.subjects.iter().enumerate() {
        let subject = NewSubject {
            x: s.observations.iter().map(|o| o.x.clone()).collect(),
            z: s.observations.iter().map(|o| o.z.clone()).collect(),
        };
        let draws =
            predict_draws(&chain, &ps, &subject, &mut stream(req.seed, Purpose::Predict, &[i as u64])).map_err(err)?;
        for iv in prediction_intervals(&draws, req.level).map_err(err)? {
            intervals.push((iv.lo, iv.hi));
        }
        targets.extend(s.observations.iter().map(|o| o.y));
    }
    let (coverage, width) = coverage_width(&intervals, &targets).map_err(err)?;

    let side = req.sim.side;
    let resp = FitResponse {
        rmse: rmse(median.data(), sim.truth.b.data()).map_err(err)?,
        f1_s2m: f1(&s2m, &support).map_err(err)?,
        f1_ci: f1(&ci_sel, &support).map_err(err)?,
        truth: Grid {
            side,
            values: sim.truth.b.data().to_vec(),
        },
        median: Grid {
            side,
            values: median.data().to_vec(),
        },
        s2m,
        ci: ci_sel,
        tau2: chain.snapshots.iter().map(|s| s.tau2).collect(),
        coverage,
        width,
    };
    serde_json::to_string(&resp).map_err(err)
}

pub fn effect_json(request: &str) -> Result<String, String> {
    let req: EffectRequest = serde_json::from_str(request).map_err(err)?;
    if req.side == 0 || req.side > MAX_SIDE {
        return Err(format!("side must be between 1 and {MAX_SIDE}"));
    }
    let sigma = equicorrelation(req.side, req.rho).map_err(err)?;
    let a = tensor_normal_draw(
        &[sigma.clone(), sigma.clone()],
        req.tau2,
        &mut stream(req.seed, Purpose::Demo, &[]),
    )
    .map_err(err)?;
    let resp = EffectResponse {
        sigma: Grid {
            side: req.side,
            values: sigma.as_slice().to_vec(),
        },
        effect: Grid {
            side: req.side,
            values: a.data().to_vec(),
        },
    };
    serde_json::to_string(&resp).map_err(err)
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsValue> {
    simulate_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fit(request: &str) -> Result<String, JsValue> {
    fit_json(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn random_effect(request: &str) -> Result<String, JsValue> {
    effect_json(request).map_err(|e| JsValue::from_str(&e))
}
