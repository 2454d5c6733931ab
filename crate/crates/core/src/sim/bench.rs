//! Replicated simulation study: every replication x method x grid cell is
//! fitted, evaluated on held-out subjects and summarized.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::baselines::{default_penalty_grid, oracle_fit, ridge_baseline};
use super::metrics::{coverage_width, f1, rmse, rmspe, summarize, Summary};
use super::{par_map, simulate_dataset, SimConfig, SimulatedData};
use crate::compression::draw_projections;
use crate::error::{CometError, Result};
use crate::model::Hyperparams;
use crate::posterior::{
    point_estimate, predict_draws, predict_draws_known, prediction_intervals, select_s2m, Chain, NewSubject,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampler::{run_chain, Stopwatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Comet,
    Oracle,
    Ridge,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Comet => "comet",
            Self::Oracle => "oracle",
            Self::Ridge => "ridge",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub sim: SimConfig,
    pub methods: Vec<BenchMethod>,
    /// Cluster sizes; each replaces `sim.m` for training and test subjects.
    pub m_grid: Vec<usize>,
    /// Compression dim used for every mode (capped at `q_d`).
    pub k_grid: Vec<usize>,
    /// Fitted CP ranks.
    pub rank_grid: Vec<usize>,
    pub iters: usize,
    pub burnin: usize,
    /// Nominal level of the prediction intervals.
    pub level: f64,
    pub a0: f64,
    pub b0: f64,
    pub sigma2: f64,
    pub ridge_folds: usize,
}

impl BenchConfig {
    /// The desk-scale study: 16 x 16, m in {3, 6, 12}, k = 3, K = 4,
    /// 3000 sweeps with 500 burn-in, 5 replications.
    pub fn desk() -> Self {
        Self {
            sim: SimConfig::desk(),
            methods: vec![BenchMethod::Comet, BenchMethod::Oracle, BenchMethod::Ridge],
            m_grid: vec![3, 6, 12],
            k_grid: vec![3],
            rank_grid: vec![4],
            iters: 3000,
            burnin: 500,
            level: 0.95,
            a0: 0.01,
            b0: 0.01,
            sigma2: 1.0,
            ridge_folds: 5,
        }
    }

    /// The full study: 32 x 32, m in {3, 6, 9, 12}, k in {3, 6, 9},
    /// K in {1, 2, 4, 6, 8}, 11000 sweeps with 1000 burn-in, 25
    /// replications. Long-running.
    pub fn paper() -> Self {
        Self {
            sim: SimConfig::paper(),
            m_grid: vec![3, 6, 9, 12],
            k_grid: vec![3, 6, 9],
            rank_grid: vec![1, 2, 4, 6, 8],
            iters: 11_000,
            burnin: 1_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let fail = |m: String| Err(CometError::Config(m));
        if self.methods.is_empty() || self.m_grid.is_empty() || self.k_grid.is_empty() || self.rank_grid.is_empty() {
            return fail("methods and every grid must be non-empty".into());
        }
        if self.m_grid.contains(&0) || self.k_grid.contains(&0) || self.rank_grid.contains(&0) {
            return fail("grid values must be positive".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return fail(format!("level {} must lie in (0, 1)", self.level));
        }
        if self.sim.replications == 0 {
            return fail("need at least one replication".into());
        }
        self.hyper(self.k_grid[0], self.rank_grid[0], 0).validate(self.sim.order())
    }

    fn hyper(&self, k: usize, rank: usize, seed: u64) -> Hyperparams {
        Hyperparams {
            rank,
            k: self.sim.q.iter().map(|&q| k.min(q)).collect(),
            a0: self.a0,
            b0: self.b0,
            sigma2: vec![self.sigma2; self.sim.order()],
            iters: self.iters,
            burnin: self.burnin,
            seed,
            keep_shrinkage: false,
            keep_dtilde: false,
        }
    }

    /// Number of rows `run_benchmark` emits.
    pub fn n_rows(&self) -> usize {
        self.sim.replications * self.methods.len() * self.m_grid.len() * self.k_grid.len() * self.rank_grid.len()
    }
}

/// One fit. Metrics a method does not produce are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub replication: usize,
    pub method: BenchMethod,
    pub m: usize,
    pub k: usize,
    pub rank: usize,
    pub rmse: Option<f64>,
    pub rmspe: Option<f64>,
    pub coverage: Option<f64>,
    pub width: Option<f64>,
    pub f1: Option<f64>,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: BenchMethod,
    pub m: usize,
    pub k: usize,
    pub rank: usize,
    pub rmse: Option<Summary>,
    pub rmspe: Option<Summary>,
    pub coverage: Option<Summary>,
    pub width: Option<Summary>,
    pub f1: Option<Summary>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<CellSummary>,
}

impl BenchReport {
    pub fn cell(&self, method: BenchMethod, m: usize, k: usize, rank: usize) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.method == method && c.m == m && c.k == k && c.rank == rank)
    }
}

#[derive(Clone, Copy, Debug)]
struct Job {
    replication: usize,
    m_index: usize,
    method: BenchMethod,
    k: usize,
    rank: usize,
}

struct Metrics {
    rmse: f64,
    rmspe: f64,
    coverage: Option<f64>,
    width: Option<f64>,
    f1: Option<f64>,
}

fn new_subjects(data: &SimulatedData) -> Vec<NewSubject> {
    data.test
        .subjects
        .iter()
        .map(|s| NewSubject {
            x: s.observations.iter().map(|o| o.x.clone()).collect(),
            z: s.observations.iter().map(|o| o.z.clone()).collect(),
        })
        .collect()
}

fn evaluate_chain<F>(chain: &Chain, data: &SimulatedData, level: f64, seed: u64, mut draws: F) -> Result<Metrics>
where
    F: FnMut(&NewSubject, &mut crate::rng::CometRng) -> Result<nalgebra::DMatrix<f64>>,
{
    let b_hat = point_estimate(chain)?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut intervals = Vec::new();
    let mut targets = Vec::new();
    for (i, (ns, s)) in new_subjects(data).iter().zip(&data.test.subjects).enumerate() {
        let d = draws(ns, &mut stream(seed, Purpose::Predict, &[i as u64]))?;
        let pi = prediction_intervals(&d, level)?;
        preds.push(pi.iter().map(|p| p.mean).collect());
        let y: Vec<f64> = s.responses().iter().copied().collect();
        intervals.extend(pi.iter().map(|p| (p.lo, p.hi)));
        targets.extend(y.iter().copied());
        truth.push(y);
    }
    let (coverage, width) = coverage_width(&intervals, &targets)?;
    Ok(Metrics {
        rmse: rmse(b_hat.data(), data.truth.b.data())?,
        rmspe: rmspe(&preds, &truth)?,
        coverage: Some(coverage),
        width: Some(width),
        f1: Some(f1(&select_s2m(chain)?, &data.truth.support())?),
    })
}

fn run_job(cfg: &BenchConfig, job: Job, data: &SimulatedData) -> Result<Metrics> {
    let seed = derive_seed(
        cfg.sim.seed,
        Purpose::Benchmark,
        &[job.replication as u64, job.method as u64, cfg.m_grid[job.m_index] as u64, job.k as u64, job.rank as u64],
    );
    let hp = cfg.hyper(job.k, job.rank, seed);
    match job.method {
        BenchMethod::Comet => {
            let ps = draw_projections(&data.train.q, &hp.k, seed)?;
            let chain = run_chain(&data.train, &hp, &ps)?;
            evaluate_chain(&chain, data, cfg.level, seed, |ns, rng| predict_draws(&chain, &ps, ns, rng))
        }
        BenchMethod::Oracle => {
            let sigma_star = data.truth.sigma_star();
            let chain = oracle_fit(&data.train, &hp, &sigma_star)?;
            evaluate_chain(&chain, data, cfg.level, seed, |ns, rng| {
                predict_draws_known(&chain, &sigma_star, ns, rng)
            })
        }
        BenchMethod::Ridge => {
            let fit = ridge_baseline(&data.train, &default_penalty_grid(), cfg.ridge_folds)?;
            let preds: Vec<Vec<f64>> = data.test.subjects.iter().map(|s| fit.predict(s)).collect();
            let truth: Vec<Vec<f64>> = data
                .test
                .subjects
                .iter()
                .map(|s| s.responses().iter().copied().collect())
                .collect();
            Ok(Metrics {
                rmse: rmse(fit.beta.as_slice(), data.truth.b.data())?,
                rmspe: rmspe(&preds, &truth)?,
                coverage: None,
                width: None,
                f1: None,
            })
        }
    }
}

/// The simulated data of replication `r` at cluster size `m`. Replications
/// share nothing; within a replication the cluster sizes share the truth
/// and each subject's leading observations.
pub fn replication_data(cfg: &BenchConfig, replication: usize, m: usize) -> Result<SimulatedData> {
    simulate_dataset(&SimConfig {
        m,
        m_list: None,
        seed: derive_seed(cfg.sim.seed, Purpose::Benchmark, &[replication as u64]),
        ..cfg.sim.clone()
    })
}

/// Fits every replication x method x grid cell. A failing cell becomes a row
/// with its error in `status`; `progress` sees each row with its wall-clock
/// seconds.
pub fn run_benchmark(cfg: &BenchConfig, progress: &(dyn Fn(&BenchRow, f64) + Sync)) -> Result<BenchReport> {
    cfg.validate()?;
    let reps = cfg.sim.replications;
    let keys: Vec<(usize, usize)> = (0..reps).flat_map(|r| (0..cfg.m_grid.len()).map(move |mi| (r, mi))).collect();
    let datasets = par_map(&keys, |&(r, mi)| replication_data(cfg, r, cfg.m_grid[mi]));
    let datasets = datasets.into_iter().collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::with_capacity(cfg.n_rows());
    for replication in 0..reps {
        for m_index in 0..cfg.m_grid.len() {
            for &k in &cfg.k_grid {
                for &rank in &cfg.rank_grid {
                    for &method in &cfg.methods {
                        jobs.push(Job {
                            replication,
                            m_index,
                            method,
                            k,
                            rank,
                        });
                    }
                }
            }
        }
    }
    let rows = par_map(&jobs, |&job| {
        let mut clock = Stopwatch::start();
        let data = &datasets[job.replication * cfg.m_grid.len() + job.m_index];
        let result = run_job(cfg, job, data);
        let mut row = BenchRow {
            replication: job.replication,
            method: job.method,
            m: cfg.m_grid[job.m_index],
            k: job.k,
            rank: job.rank,
            rmse: None,
            rmspe: None,
            coverage: None,
            width: None,
            f1: None,
            status: "ok".into(),
        };
        match result {
            Ok(mt) => {
                row.rmse = Some(mt.rmse);
                row.rmspe = Some(mt.rmspe);
                row.coverage = mt.coverage;
                row.width = mt.width;
                row.f1 = mt.f1;
            }
            Err(e) => row.status = format!("error: {e}"),
        }
        progress(&row, clock.lap());
        row
    });
    let summary = summarize_rows(cfg, &rows);
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn summarize_rows(cfg: &BenchConfig, rows: &[BenchRow]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &m in &cfg.m_grid {
        for &k in &cfg.k_grid {
            for &rank in &cfg.rank_grid {
                for &method in &cfg.methods {
                    let cell: Vec<&BenchRow> = rows
                        .iter()
                        .filter(|r| r.method == method && r.m == m && r.k == k && r.rank == rank)
                        .collect();
                    let col = |f: fn(&BenchRow) -> Option<f64>| {
                        summarize(&cell.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
                    };
                    out.push(CellSummary {
                        method,
                        m,
                        k,
                        rank,
                        rmse: col(|r| r.rmse),
                        rmspe: col(|r| r.rmspe),
                        coverage: col(|r| r.coverage),
                        width: col(|r| r.width),
                        f1: col(|r| r.f1),
                        failures: cell.iter().filter(|r| r.status != "ok").count(),
                    });
                }
            }
        }
    }
    out
}

pub const CSV_HEADER: [&str; 11] = [
    "replication",
    "method",
    "m",
    "k",
    "rank",
    "rmse",
    "rmspe",
    "coverage",
    "width",
    "f1",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// One line per row under [`CSV_HEADER`]; absent metrics are empty fields.
pub fn write_rows_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.replication.to_string(),
            r.method.name().to_string(),
            r.m.to_string(),
            r.k.to_string(),
            r.rank.to_string(),
            opt(r.rmse),
            opt(r.rmspe),
            opt(r.coverage),
            opt(r.width),
            opt(r.f1),
            r.status.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
