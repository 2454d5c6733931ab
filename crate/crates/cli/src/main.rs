//! `comet` command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a JSON object with the same keys
//! as the long flags (underscores for dashes). Flags given on the command
//! line override the file. Exit codes: 0 success, 2 validation or format
//! error, 3 numerical failure, 4 I/O error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use comet::compression::draw_projections;
use comet::io::{
    projections_for, read_dataset_path, read_fit, read_truth, write_dataset_f64le, write_dataset_json, write_fit,
    write_predictions_csv, write_selection_csv, write_truth, CellSelection, LoadedDataset,
};
use comet::model::{Hyperparams, Standardization};
use comet::posterior::{
    credible_intervals, point_estimate, predict_draws, predict_draws_known, prediction_intervals, select_ci,
    select_s2m, Chain, Method, NewSubject,
};
use comet::rng::{stream, Purpose};
use comet::sampler::run_chain;
use comet::sim::baselines::oracle_fit;
use comet::sim::bench::{run_benchmark, write_rows_csv, BenchConfig};
use comet::sim::geweke::{run_geweke, GewekeConfig};
use comet::sim::{simulate_dataset, SimConfig};
use comet::CometError;

#[derive(Parser)]
#[command(name = "comet", version, about = "Compressed mixed-effects tensor regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Simulate a training set, a test set and the generating truth.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler on a dataset and write the retained draws.
    Fit(FitArgs),
    /// Posterior predictive intervals for new subjects.
    Predict(PredictArgs),
    /// Per-cell posterior summaries and selected support of B.
    Select(SelectArgs),
    /// Simulation study, or the joint-distribution test of the sampler.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SimPreset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BenchPreset {
    Desk,
    Paper,
    Geweke,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EncodingArg {
    Json,
    F64le,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Starting configuration; other flags override its fields.
    #[arg(long, value_enum)]
    preset: Option<SimPreset>,
    /// Output directory for train.json, test.json and truth.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    p: Option<Vec<usize>>,
    #[arg(long, num_args = 1..)]
    q: Option<Vec<usize>>,
    #[arg(long)]
    true_rank: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Unbalanced cluster sizes, one per training subject.
    #[arg(long, num_args = 1..)]
    m_list: Option<Vec<usize>>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fit artifact to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CP rank K.
    #[arg(long)]
    rank: Option<usize>,
    /// Compression dim per mode.
    #[arg(long, num_args = 1..)]
    k: Option<Vec<usize>>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
    /// Prior variance of the compressed covariance factors.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Z-score every covariate cell before fitting; prediction reuses the
    /// training moments.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standardize: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    keep_shrinkage: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    keep_dtilde: Option<bool>,
    /// Fit with the random-effect covariance of this truth file held fixed.
    #[arg(long)]
    known_covariance: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    fit: Option<PathBuf>,
    /// New subjects; responses, when present, are copied to the output.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    level: Option<f64>,
    /// Seed of the predictive draws; defaults to the fit's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Truth file supplying the covariance of a known-covariance fit.
    #[arg(long)]
    known_covariance: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<BenchPreset>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 1..)]
    m_grid: Option<Vec<usize>>,
    #[arg(long, num_args = 1..)]
    k_grid: Option<Vec<usize>>,
    #[arg(long, num_args = 1..)]
    rank_grid: Option<Vec<usize>>,
    /// Sweeps and forward draws of the joint-distribution test.
    #[arg(long)]
    sweeps: Option<usize>,
    /// A complete study configuration, replacing the preset.
    #[arg(skip)]
    study: Option<BenchConfig>,
    /// A complete joint-distribution test configuration.
    #[arg(skip)]
    geweke: Option<GewekeConfig>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<CometError> for Failure {
    fn from(e: CometError) -> Self {
        let code = match &e {
            CometError::Io(_) => 4,
            CometError::Json(j) if j.is_io() => 4,
            CometError::Csv(c) if c.is_io_error() => 4,
            CometError::Numerical { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        CometError::Io(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let file = File::open(path).map_err(|e| Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| {
        let code = if e.is_io() { 4 } else { 2 };
        Failure {
            code,
            message: format!("config {}: {e}", path.display()),
        }
    })
}

fn required<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| invalid(format!("missing required key `{key}` (flag --{})", key.replace('_', "-"))))
}

/// Fills every unset flag from the config file.
macro_rules! merge {
    ($flags:expr, $file:expr; $($field:ident),+) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )+
    };
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_fit(path: &Path) -> CliResult<Chain> {
    read_fit(open(path)?).map_err(|e| in_file(e, path))
}

fn load_dataset(path: &Path) -> CliResult<LoadedDataset> {
    open(path)?;
    read_dataset_path(path).map_err(|e| in_file(e, path))
}

fn in_file(e: CometError, path: &Path) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn simulate(mut a: SimulateArgs) -> CliResult<()> {
    let mut file: SimulateArgs = load_config(a.config.as_deref())?;
    merge!(a, file; preset, out, p, q, true_rank, density, values, rho, tau2, n, m, m_list, n_test, seed, encoding);
    let out = required(a.out, "out")?;
    let mut cfg = match a.preset.unwrap_or(SimPreset::Desk) {
        SimPreset::Desk => SimConfig::desk(),
        SimPreset::Paper => SimConfig::paper(),
    };
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(q) = a.q {
        cfg.q = q;
    }
    cfg.true_rank = a.true_rank.unwrap_or(cfg.true_rank);
    cfg.density = a.density.unwrap_or(cfg.density);
    if let Some(v) = a.values {
        cfg.values = v;
    }
    cfg.rho = a.rho.unwrap_or(cfg.rho);
    cfg.tau2 = a.tau2.unwrap_or(cfg.tau2);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.m = a.m.unwrap_or(cfg.m);
    if a.m_list.is_some() {
        cfg.m_list = a.m_list;
    }
    cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
    cfg.seed = a.seed.unwrap_or(cfg.seed);

    let sim = simulate_dataset(&cfg)?;
    std::fs::create_dir_all(&out)?;
    for (name, ds) in [("train.json", &sim.train), ("test.json", &sim.test)] {
        let path = out.join(name);
        match a.encoding.unwrap_or(EncodingArg::Json) {
            EncodingArg::Json => write_dataset_json(ds, true, create(&path)?)?,
            EncodingArg::F64le => write_dataset_f64le(ds, true, &path)?,
        }
    }
    write_truth(&sim.truth, &cfg.q, create(&out.join("truth.json"))?)?;
    eprintln!(
        "simulated {} training and {} test subjects into {}",
        sim.train.n_subjects(),
        sim.test.n_subjects(),
        out.display()
    );
    Ok(())
}

fn fit(mut a: FitArgs) -> CliResult<()> {
    let mut file: FitArgs = load_config(a.config.as_deref())?;
    merge!(a, file; data, out, rank, k, iters, burnin, seed, a0, b0, sigma2, standardize, keep_shrinkage, keep_dtilde, known_covariance);
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let mut ds = load_dataset(&data)?;
    if !ds.responses {
        return Err(invalid(format!("{} has no responses to fit", data.display())));
    }
    let standardization = a.standardize.unwrap_or(false).then(|| {
        let s = Standardization::fit(&ds.dataset);
        s.apply(&mut ds.dataset);
        s
    });
    let ds = ds.dataset;
    let mut hp = Hyperparams::defaults_for(&ds.p, &ds.q);
    hp.rank = a.rank.unwrap_or(hp.rank);
    if let Some(k) = a.k {
        hp.k = k;
    }
    hp.iters = a.iters.unwrap_or(hp.iters);
    hp.burnin = a.burnin.unwrap_or(hp.burnin);
    hp.seed = a.seed.unwrap_or(hp.seed);
    hp.a0 = a.a0.unwrap_or(hp.a0);
    hp.b0 = a.b0.unwrap_or(hp.b0);
    if let Some(s2) = a.sigma2 {
        hp.sigma2 = vec![s2; ds.order()];
    }
    hp.keep_shrinkage = a.keep_shrinkage.unwrap_or(false);
    hp.keep_dtilde = a.keep_dtilde.unwrap_or(false);
    hp.validate(ds.order())?;

    let started = Instant::now();
    let mut chain = match a.known_covariance {
        Some(path) => {
            let truth = read_truth(open(&path)?)?;
            oracle_fit(&ds, &hp, &truth.sigma_star())?
        }
        None => {
            let ps = draw_projections(&ds.q, &hp.k, hp.seed)?;
            run_chain(&ds, &hp, &ps)?
        }
    };
    chain.header.standardization = standardization;
    write_fit(&chain, create(&out)?)?;
    let t = chain.timings;
    eprintln!(
        "fit: {} sweeps, {} retained, {:.2}s (cores {:.2}s, covariance {:.2}s, whitening {:.2}s, mean {:.2}s)",
        hp.iters,
        chain.len(),
        started.elapsed().as_secs_f64(),
        t.cores,
        t.covariance,
        t.whitening,
        t.mean
    );
    Ok(())
}

fn predict(mut a: PredictArgs) -> CliResult<()> {
    let mut file: PredictArgs = load_config(a.config.as_deref())?;
    merge!(a, file; fit, data, out, level, seed, known_covariance);
    let chain = load_fit(&required(a.fit, "fit")?)?;
    let data = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let level = a.level.unwrap_or(0.95);
    let mut loaded = load_dataset(&data)?;
    if loaded.dataset.p != chain.header.p || loaded.dataset.q != chain.header.q {
        return Err(invalid(format!(
            "new covariates have dims {:?} and {:?}, the fit expects {:?} and {:?}",
            loaded.dataset.p, loaded.dataset.q, chain.header.p, chain.header.q
        )));
    }
    let responses: Vec<Vec<f64>> = loaded
        .dataset
        .subjects
        .iter()
        .map(|s| s.observations.iter().map(|o| o.y).collect())
        .collect();
    if let Some(s) = &chain.header.standardization {
        s.apply(&mut loaded.dataset);
    }
    let seed = a.seed.unwrap_or(chain.header.hyper.seed);
    let sigma_star = match chain.header.method {
        Method::Oracle => {
            let path = required(a.known_covariance, "known_covariance")?;
            Some(read_truth(open(&path)?)?.sigma_star())
        }
        Method::Comet => None,
    };
    let ps = match chain.header.method {
        Method::Comet => Some(projections_for(&chain.header)?),
        Method::Oracle => None,
    };
    let mut intervals = Vec::with_capacity(loaded.dataset.n_subjects());
    for (i, s) in loaded.dataset.subjects.iter().enumerate() {
        let subject = NewSubject {
            x: s.observations.iter().map(|o| o.x.clone()).collect(),
            z: s.observations.iter().map(|o| o.z.clone()).collect(),
        };
        let mut rng = stream(seed, Purpose::Predict, &[i as u64]);
        let draws = match (&ps, &sigma_star) {
            (Some(ps), _) => predict_draws(&chain, ps, &subject, &mut rng)?,
            (None, Some(sig)) => predict_draws_known(&chain, sig, &subject, &mut rng)?,
            (None, None) => unreachable!("one of the two is set for each method"),
        };
        intervals.push(prediction_intervals(&draws, level)?);
    }
    write_predictions_csv(&intervals, loaded.responses.then_some(responses.as_slice()), create(&out)?)?;
    Ok(())
}

fn select(mut a: SelectArgs) -> CliResult<()> {
    let mut file: SelectArgs = load_config(a.config.as_deref())?;
    merge!(a, file; fit, out, level);
    let chain = load_fit(&required(a.fit, "fit")?)?;
    let out = required(a.out, "out")?;
    let level = a.level.unwrap_or(0.95);
    let median = point_estimate(&chain)?;
    let ci = credible_intervals(&chain, level)?;
    let s2m = select_s2m(&chain)?;
    let excl = select_ci(&ci);
    let cells: Vec<CellSelection> = (0..chain.n_cells())
        .map(|c| CellSelection {
            median: median.data()[c],
            lo: ci[c].0,
            hi: ci[c].1,
            s2m: s2m[c],
            ci: excl[c],
        })
        .collect();
    write_selection_csv(&chain.header.p, &cells, create(&out)?)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchSummaryFile<'a> {
    config: &'a BenchConfig,
    summary: &'a [comet::sim::bench::CellSummary],
}

fn benchmark(mut a: BenchmarkArgs) -> CliResult<()> {
    let mut file: BenchmarkArgs = load_config(a.config.as_deref())?;
    merge!(a, file; preset, out, replications, iters, burnin, seed, m_grid, k_grid, rank_grid, sweeps, study, geweke);
    let out = required(a.out, "out")?;
    std::fs::create_dir_all(&out)?;
    let started = Instant::now();
    let preset = a.preset.unwrap_or(BenchPreset::Desk);
    if preset == BenchPreset::Geweke || (a.geweke.is_some() && a.study.is_none()) {
        let mut cfg = a.geweke.unwrap_or_default();
        if let Some(s) = a.sweeps {
            cfg.sweeps = s;
            cfg.forward = s;
        }
        cfg.seed = a.seed.unwrap_or(cfg.seed);
        let report = run_geweke(&cfg)?;
        let mut w = create(&out.join("geweke.json"))?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(CometError::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        for s in &report.stats {
            eprintln!(
                "{}: forward {:.4} ± {:.4}, chain {:.4} ± {:.4}, z = {:.2}",
                s.name, s.forward_mean, s.forward_se, s.chain_mean, s.chain_se, s.z
            );
        }
        eprintln!("joint-distribution test took {:.1}s", started.elapsed().as_secs_f64());
        return Ok(());
    }
    let mut cfg = a.study.unwrap_or_else(|| match preset {
        BenchPreset::Paper => BenchConfig::paper(),
        _ => BenchConfig::desk(),
    });
    if let Some(r) = a.replications {
        cfg.sim.replications = r;
    }
    cfg.iters = a.iters.unwrap_or(cfg.iters);
    cfg.burnin = a.burnin.unwrap_or(cfg.burnin);
    cfg.sim.seed = a.seed.unwrap_or(cfg.sim.seed);
    if let Some(g) = a.m_grid {
        cfg.m_grid = g;
    }
    if let Some(g) = a.k_grid {
        cfg.k_grid = g;
    }
    if let Some(g) = a.rank_grid {
        cfg.rank_grid = g;
    }
    let total = cfg.n_rows();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let report = run_benchmark(&cfg, &|row, secs| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        eprintln!(
            "[{n}/{total}] rep {} {} m={} k={} K={}: {} ({secs:.1}s)",
            row.replication,
            row.method.name(),
            row.m,
            row.k,
            row.rank,
            row.status
        );
    })?;
    write_rows_csv(&report.rows, create(&out.join("rows.csv"))?)?;
    let mut w = create(&out.join("summary.json"))?;
    serde_json::to_writer_pretty(
        &mut w,
        &BenchSummaryFile {
            config: &report.config,
            summary: &report.summary,
        },
    )
    .map_err(CometError::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    for c in &report.summary {
        let med = |s: Option<comet::sim::metrics::Summary>| s.map_or("-".to_string(), |s| format!("{:.4}", s.median));
        eprintln!(
            "{:6} m={:<2} k={} K={}: rmse {} rmspe {} coverage {} f1 {} failures {}",
            c.method.name(),
            c.m,
            c.k,
            c.rank,
            med(c.rmse),
            med(c.rmspe),
            med(c.coverage),
            med(c.f1),
            c.failures
        );
    }
    eprintln!("study took {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("COMET_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| invalid(format!("COMET_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Select(a) => select(a),
        Command::Benchmark(a) => benchmark(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
