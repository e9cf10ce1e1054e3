//! Argument definitions and the implementation of every subcommand.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use margfit_core::data::{
    chain_instances, gen_chain_model, gen_denoise, ChainGenConfig, DenoiseConfig, ImageSource,
};
use margfit_core::exact::random_params;
use margfit_core::grad::{loss_gradient, Engine, PerturbationConfig, Sides};
use margfit_core::infer::{infer, trw_from, InferenceConfig, Mode, RhoAssignment};
use margfit_core::losses::{marginal_loss, LossKind};
use margfit_core::model::{Graph, Labeling, Tables};
use margfit_core::trainer::{
    describe, evaluate_model, train, FeatureModel, HistoryEntry, Init, LbfgsConfig, Observer,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{
    loss_name, parse_loss, EngineName, EngineSpec, InferenceSpec, InitName, MethodName, RunConfig,
};
use crate::exec::{RayonExecutor, WallClock};
use crate::io::{
    dataset_meta, read_dataset, read_pgm, write_dataset, write_metrics, write_table, Checkpoint,
    Dataset, GridDims, HistoryWriter,
};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "margfit",
    version,
    about = "Train pairwise CRFs by differentiating through approximate marginal inference"
)]
pub struct Cli {
    /// Worker threads for per-instance work.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Add per-instance results in instance order so sums do not depend on
    /// thread scheduling.
    #[arg(long, global = true)]
    pub deterministic_reduce: bool,
    /// Seed for all random draws.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Fit a model and write a checkpoint and history.csv.
    Train(TrainArgs),
    /// Loss and Hamming error of a checkpoint, written to metrics.csv.
    Eval(EvalArgs),
    /// Compare gradient engines against finite differences on random grids.
    Gradcheck(GradcheckArgs),
    /// Dump the marginals of one instance as CSV.
    Infer(InferArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Two-layer ladder: labels are the lower chain, features the upper
    /// chain circularly shifted.
    Chain(ChainArgs),
    /// Binary images corrupted by noise on a grid.
    Denoise(DenoiseArgs),
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Chain length.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Circular shift of the input layer.
    #[arg(long, default_value_t = 0)]
    pub shift: usize,
    /// Training samples.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Test samples, drawn from the same model.
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Total Gibbs sweeps; the first half is burn-in.
    #[arg(long, default_value_t = 20_000)]
    pub gibbs_sweeps: usize,
    /// Output directory; splits go to `train/` and `test/`.
    #[arg(long, default_value = "data/chain")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Noise level, above 1; smaller is noisier.
    #[arg(long, default_value_t = 1.25)]
    pub noise: f64,
    /// Training images.
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    /// Test images.
    #[arg(long, default_value_t = 4)]
    pub test: usize,
    /// Image size as ROWSxCOLS.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<GridDims>,
    /// Binary PGM (P5) images to corrupt instead of random blobs; the first
    /// `--train` become training images and the rest test images.
    #[arg(long)]
    pub pgm: Vec<PathBuf>,
    /// Output directory; splits go to `train/` and `test/`.
    #[arg(long, default_value = "data/denoise")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    /// Inference method.
    #[arg(long = "inference", value_enum, default_value_t = MethodName::Trw)]
    pub method: MethodName,
    /// Edge appearance probabilities for TRW: `comb` or a number. Defaults
    /// to comb on grids and 1 elsewhere.
    #[arg(long)]
    pub rho: Option<String>,
    /// Sweeps of truncated inference.
    #[arg(long, default_value_t = 5)]
    pub sweeps: usize,
    /// Run inference to convergence at this threshold instead of truncating.
    #[arg(long)]
    pub converge: Option<f64>,
    /// Sweep cap for converged inference.
    #[arg(long, default_value_t = 10_000)]
    pub max_sweeps: usize,
}

impl InferenceArgs {
    fn spec(&self) -> InferenceSpec {
        InferenceSpec {
            method: self.method,
            rho: self.rho.clone(),
            sweeps: self.sweeps,
            threshold: self.converge,
            max_sweeps: self.max_sweeps,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset split directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json and history.csv.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Loss, e.g. `univ_logistic` or `smooth_class:alpha=50`.
    #[arg(long, default_value = "univ_logistic", value_parser = check_loss)]
    pub loss: String,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Gradient engine for marginal-based and truncated likelihood losses.
    #[arg(long, value_enum, default_value_t = EngineName::Backprop)]
    pub engine: EngineName,
    /// Perturbation: 1, 2 or 4 sided differences.
    #[arg(long, default_value_t = 2)]
    pub sides: u32,
    /// Perturbation: step size multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub multiplier: f64,
    /// Ridge strength, relative to the per-node risk.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    /// Maximum L-BFGS iterations.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Stop when the gradient norm falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    /// Starting point.
    #[arg(long, value_enum, default_value_t = InitName::Auto)]
    pub init: InitName,
    /// Checkpoint to start from; implies `--init checkpoint`.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Keep the edge weights at their initial values.
    #[arg(long)]
    pub freeze_edges: bool,
    /// Fit the unary-only baseline: univ_logistic from zero with one
    /// mean-field sweep and the edge weights frozen at zero. Overrides the
    /// loss, inference, engine and init flags.
    #[arg(long)]
    pub independent: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset split directories; one metrics row each.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Loss to report instead of the training loss.
    #[arg(long, value_parser = check_loss)]
    pub loss: Option<String>,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset split directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Instance index within the split.
    #[arg(long, default_value_t = 0)]
    pub instance: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Grid size as ROWSxCOLS.
    #[arg(long, value_parser = parse_size, default_value = "10x10")]
    pub size: GridDims,
    /// Labels per node.
    #[arg(long, default_value_t = 2)]
    pub labels: usize,
    /// Standard deviation of the edge parameters; unaries are standard normal.
    #[arg(long, default_value_t = 1.0)]
    pub coupling: f64,
    /// Random grids to check.
    #[arg(long, default_value_t = 3)]
    pub grids: usize,
    /// Marginal-based loss to differentiate.
    #[arg(long, default_value = "univ_logistic", value_parser = check_loss)]
    pub loss: String,
    /// TRW convergence threshold.
    #[arg(long, default_value_t = 1e-15)]
    pub threshold: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_sweeps: usize,
    /// Perturbation step multipliers.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1e-4,1e-3,1e-2,1e-1,1,1e1,1e2,1e3"
    )]
    pub multipliers: Vec<f64>,
    /// Perturbation sides to try.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub sides: Vec<u32>,
    /// Step of the fourth-order finite-difference reference.
    #[arg(long, default_value_t = 2e-3)]
    pub fd_step: f64,
    /// Per-grid errors as tidy CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_loss(s: &str) -> Result<String, String> {
    parse_loss(s).map(|_| s.to_string())
}

fn parse_size(s: &str) -> Result<GridDims, String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let num = |v: &str| -> Result<usize, String> {
        match v.trim().parse() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("bad dimension {v:?} in {s:?}")),
        }
    };
    Ok(GridDims {
        rows: num(r)?,
        cols: num(c)?,
    })
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let exec = RayonExecutor::new(cli.workers, cli.deterministic_reduce)?;
    match cli.command {
        Command::Gen(GenCommand::Chain(a)) => gen_chain(&a, cli.seed),
        Command::Gen(GenCommand::Denoise(a)) => gen_denoise_cmd(&a, cli.seed),
        Command::Train(a) => train_cmd(&a, cli.seed, &exec),
        Command::Eval(a) => eval_cmd(&a, &exec),
        Command::Gradcheck(a) => gradcheck(&a, cli.seed, &exec),
        Command::Infer(a) => infer_cmd(&a),
    }
}

fn json_params(pairs: &[(&str, serde_json::Value)]) -> serde_json::Map<String, serde_json::Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn write_splits(out: &Path, train: Dataset, test: Dataset) -> Result<(), CliError> {
    write_dataset(&out.join("train"), &train)?;
    if !test.instances.is_empty() {
        write_dataset(&out.join("test"), &test)?;
    }
    Ok(())
}

fn gen_chain(a: &ChainArgs, seed: u64) -> Result<(), CliError> {
    let cfg = ChainGenConfig {
        n: a.n,
        seed,
        shift: a.shift,
        samples: a.samples + a.test,
        gibbs_sweeps: a.gibbs_sweeps,
    };
    if a.samples == 0 {
        return Err(CliError::input("--samples must be positive".into()));
    }
    let (_, mut samples) = gen_chain_model(&cfg)?;
    let test = samples.split_off(a.samples);
    let params = json_params(&[
        ("n", a.n.into()),
        ("shift", a.shift.into()),
        ("gibbs_sweeps", a.gibbs_sweeps.into()),
    ]);
    let split = |s, name: &str| -> Result<Dataset, CliError> {
        let instances = chain_instances(s)?;
        let mut meta = dataset_meta("chain", seed, &instances, None);
        meta.params = params.clone();
        meta.params.insert("split".into(), name.into());
        Ok(Dataset { meta, instances })
    };
    let train = split(&samples, "train")?;
    let test = if test.is_empty() {
        Dataset {
            meta: train.meta.clone(),
            instances: Vec::new(),
        }
    } else {
        split(&test, "test")?
    };
    write_splits(&a.out, train, test)
}

fn gen_denoise_cmd(a: &DenoiseArgs, seed: u64) -> Result<(), CliError> {
    let total = a.train + a.test;
    if a.train == 0 {
        return Err(CliError::input("--train must be positive".into()));
    }
    let (dims, source) = if a.pgm.is_empty() {
        (
            a.size.unwrap_or(GridDims { rows: 32, cols: 32 }),
            ImageSource::Blobs { count: total },
        )
    } else {
        if a.pgm.len() != total {
            return Err(CliError::input(format!(
                "{} PGM files given for {} training and {} test images",
                a.pgm.len(),
                a.train,
                a.test
            )));
        }
        let rasters = a
            .pgm
            .iter()
            .map(|p| read_pgm(p))
            .collect::<Result<Vec<_>, _>>()?;
        let dims = a.size.unwrap_or(GridDims {
            rows: rasters[0].rows,
            cols: rasters[0].cols,
        });
        for (r, p) in rasters.iter().zip(&a.pgm) {
            if (r.rows, r.cols) != (dims.rows, dims.cols) {
                return Err(CliError::input(format!(
                    "{} is {}x{}, expected {}x{}",
                    p.display(),
                    r.rows,
                    r.cols,
                    dims.rows,
                    dims.cols
                )));
            }
        }
        (
            dims,
            ImageSource::Rasters(rasters.into_iter().map(|r| r.pixels).collect()),
        )
    };
    let cfg = DenoiseConfig {
        rows: dims.rows,
        cols: dims.cols,
        source,
        noise: a.noise,
        seed,
    };
    let mut train = gen_denoise(&cfg)?;
    let test = train.split_off(a.train);
    let params = json_params(&[
        ("noise", a.noise.into()),
        (
            "images",
            if !a.pgm.is_empty() { "pgm" } else { "blobs" }.into(),
        ),
    ]);
    let split = |instances: Vec<_>, name: &str| {
        let mut meta = dataset_meta("denoise", seed, &instances, Some(dims));
        meta.params = params.clone();
        meta.params.insert("split".into(), name.into());
        Dataset { meta, instances }
    };
    write_splits(&a.out, split(train, "train"), split(test, "test"))
}

fn read_nonempty(dir: &Path) -> Result<Dataset, CliError> {
    let d = read_dataset(dir)?;
    if d.instances.is_empty() {
        return Err(CliError::input(format!(
            "{} has no instances",
            dir.display()
        )));
    }
    Ok(d)
}

fn resolve_init(
    a: &TrainArgs,
    loss: &LossKind,
    fm: &FeatureModel,
    seed: u64,
) -> Result<(InitName, Init), CliError> {
    let name = if a.init_from.is_some() {
        InitName::Checkpoint
    } else {
        a.init
    };
    let init = match name {
        InitName::Auto => match loss {
            LossKind::SmoothClass { .. } => Init::Surrogate,
            l if l.is_marginal_based() => Init::Independent,
            _ => Init::Zero,
        },
        InitName::Zero => Init::Zero,
        InitName::Independent => Init::Independent,
        InitName::Surrogate => Init::Surrogate,
        InitName::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Init::Weights(
                (0..fm.weights.len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
            )
        }
        InitName::Checkpoint => {
            let path = a
                .init_from
                .as_ref()
                .ok_or_else(|| CliError::input("--init checkpoint needs --init-from".into()))?;
            let m = Checkpoint::read(path)?.model()?;
            if (m.labels, m.unary_dim, m.edge_dim) != (fm.labels, fm.unary_dim, fm.edge_dim) {
                return Err(CliError::input(format!(
                    "{} has shape {}x{}x{}, dataset needs {}x{}x{}",
                    path.display(),
                    m.labels,
                    m.unary_dim,
                    m.edge_dim,
                    fm.labels,
                    fm.unary_dim,
                    fm.edge_dim
                )));
            }
            Init::Weights(m.weights)
        }
    };
    Ok((name, init))
}

fn train_cmd(a: &TrainArgs, seed: u64, exec: &RayonExecutor) -> Result<(), CliError> {
    let data = read_nonempty(&a.data)?;
    let mut loss = parse_loss(&a.loss).map_err(CliError::Input)?;
    let mut spec = a.inference.spec();
    let mut engine_spec = EngineSpec {
        kind: a.engine,
        sides: a.sides,
        multiplier: a.multiplier,
    };
    let fm0 = FeatureModel::zeros(data.meta.labels, data.meta.unary_dim, data.meta.edge_dim);
    let (mut init_name, mut init) = resolve_init(a, &loss, &fm0, seed)?;
    let mut freeze_edges = a.freeze_edges;
    if a.independent {
        loss = LossKind::UnivLogistic;
        spec = InferenceSpec {
            method: MethodName::Mf,
            sweeps: 1,
            threshold: None,
            ..spec
        };
        engine_spec = EngineSpec::default();
        (init_name, init) = (InitName::Zero, Init::Zero);
        freeze_edges = true;
    }
    let inference = spec.resolve(data.meta.grid)?;
    let engine = engine_spec.resolve()?;
    let run = RunConfig {
        loss: loss_name(&loss),
        inference: spec,
        engine: engine_spec,
        lambda: a.lambda,
        iterations: a.iters,
        grad_tol: a.grad_tol,
        init: init_name,
        freeze_edges,
    };
    let config = TrainConfig {
        loss,
        inference: inference.clone(),
        engine,
        lambda: a.lambda,
        optimizer: LbfgsConfig {
            max_iters: a.iters,
            grad_tol: a.grad_tol,
            ..LbfgsConfig::default()
        },
        init,
        freeze_edges,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let history = RefCell::new(HistoryWriter::create(&a.out.join("history.csv"))?);
    let failure: RefCell<Option<CliError>> = RefCell::new(None);
    let last_error = RefCell::new(f64::NAN);
    let observer: Observer<'_> = Box::new(|h: &HistoryEntry| {
        if failure.borrow().is_some() {
            return;
        }
        let mut fm = fm0.clone();
        fm.weights.copy_from_slice(&h.weights);
        let res = evaluate_model(&fm, &data.instances, &loss, &inference, exec)
            .map_err(CliError::from)
            .and_then(|m| {
                *last_error.borrow_mut() = m.hamming_error;
                history.borrow_mut().row(h, m.hamming_error)
            });
        if let Err(e) = res {
            *failure.borrow_mut() = Some(e);
        }
    });
    let clock = WallClock::start();
    let out = train(&fm0, &data.instances, &config, exec, &clock, Some(observer))?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let iteration = out.history.last().map_or(0, |h| h.iteration);
    Checkpoint::new(&out.model, run, iteration, out.risk).write(&a.out.join("checkpoint.json"))?;
    println!(
        "iterations {iteration} risk {} train_error {} status {:?}",
        out.risk,
        last_error.into_inner(),
        out.status
    );
    if let Some(d) = &out.divergence {
        eprintln!("divergence: {}", describe(d));
    }
    Ok(())
}

fn split_name(dir: &Path) -> String {
    dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn eval_cmd(a: &EvalArgs, exec: &RayonExecutor) -> Result<(), CliError> {
    let ck = Checkpoint::read(&a.model)?;
    let fm = ck.model()?;
    let loss = match &a.loss {
        Some(l) => parse_loss(l).map_err(CliError::Input)?,
        None => ck.config.loss()?,
    };
    let mut rows = Vec::new();
    for dir in &a.data {
        let data = read_nonempty(dir)?;
        let inference = ck.config.inference.resolve(data.meta.grid)?;
        let m = evaluate_model(&fm, &data.instances, &loss, &inference, exec)?;
        println!(
            "{}: loss {} hamming_error {} instances {}",
            split_name(dir),
            m.loss,
            m.hamming_error,
            m.instances
        );
        rows.push((split_name(dir), m));
    }
    write_metrics(&a.out, &rows)
}

fn infer_cmd(a: &InferArgs) -> Result<(), CliError> {
    let ck = Checkpoint::read(&a.model)?;
    let fm = ck.model()?;
    let data = read_nonempty(&a.data)?;
    let inst = data.instances.get(a.instance).ok_or_else(|| {
        CliError::input(format!(
            "instance {} out of range; {} has {}",
            a.instance,
            a.data.display(),
            data.instances.len()
        ))
    })?;
    let inference = ck.config.inference.resolve(data.meta.grid)?;
    let theta = fm.build_theta(inst)?;
    let out = infer(&theta, &inference)?;
    let mu = &out.marginals;
    let g = &inst.graph;
    let mut rows = Vec::new();
    for i in 0..g.node_count() {
        for (x, p) in mu.unary(i).iter().enumerate() {
            let s = |v: usize| v.to_string();
            rows.push(vec![
                "node".into(),
                s(i),
                s(i),
                String::new(),
                s(x),
                String::new(),
                p.to_string(),
            ]);
        }
    }
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let lj = g.labels(j);
        for (k, p) in mu.edge(e).iter().enumerate() {
            let s = |v: usize| v.to_string();
            rows.push(vec![
                "edge".into(),
                s(e),
                s(i),
                s(j),
                s(k / lj),
                s(k % lj),
                p.to_string(),
            ]);
        }
    }
    write_table(
        a.out.as_deref(),
        &["kind", "index", "i", "j", "label_i", "label_j", "marginal"],
        &rows,
    )?;
    if !out.converged && matches!(inference.mode, Mode::Converged { .. }) {
        eprintln!(
            "warning: inference stopped after {} sweeps without converging",
            out.sweeps
        );
    }
    Ok(())
}

fn rel_error(a: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn gradcheck(a: &GradcheckArgs, seed: u64, exec: &RayonExecutor) -> Result<(), CliError> {
    let loss = parse_loss(&a.loss).map_err(CliError::Input)?;
    if !loss.is_marginal_based() {
        return Err(CliError::input(format!(
            "{} is not a marginal-based loss",
            a.loss
        )));
    }
    if !(a.coupling.is_finite() && a.coupling >= 0.0) || !(a.fd_step > 0.0) {
        return Err(CliError::input(
            "--coupling must be non-negative and --fd-step positive".into(),
        ));
    }
    let perturb = a
        .sides
        .iter()
        .map(|&s| Sides::from_count(s).map(|sides| (s, sides)))
        .collect::<Result<Vec<_>, _>>()?;
    let g = Graph::grid(a.size.rows, a.size.cols, a.labels)?;
    let rho = RhoAssignment::grid_combs(a.size.rows, a.size.cols)?.spec();
    let rho_values = rho.resolve(&g)?;
    let mode = Mode::Converged {
        threshold: a.threshold,
        max_iters: a.max_sweeps,
    };
    let cfg = InferenceConfig::trw(rho, mode).with_trace(true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (engine, sides, multiplier) -> per-grid errors
    let mut results: Vec<(String, String, String, Vec<f64>)> = Vec::new();
    let mut record = |engine: &str, sides: String, m: String, err: f64| match results
        .iter_mut()
        .find(|r| r.0 == engine && r.1 == sides && r.2 == m)
    {
        Some(r) => r.3.push(err),
        None => results.push((engine.into(), sides, m, vec![err])),
    };
    for grid in 0..a.grids {
        let theta = random_params(&g, 1.0, a.coupling, &mut rng);
        let labels: Vec<usize> = (0..g.node_count())
            .map(|_| rng.random_range(0..a.labels))
            .collect();
        let target = Labeling::full(&labels);
        let out = infer(&theta, &cfg)?;
        if !out.converged {
            eprintln!(
                "warning: grid {grid} did not converge in {} sweeps",
                out.sweeps
            );
        }
        let base = out.messages.clone();
        let value = |t: &Tables| -> margfit_core::Result<f64> {
            let o = trw_from(t, &rho_values, mode, false, base.clone())?;
            Ok(marginal_loss(&loss, &o.marginals, &target)?.value)
        };
        let h = a.fd_step;
        let fd: Vec<f64> = exec.install(|| {
            (0..theta.as_slice().len())
                .into_par_iter()
                .map(|k| {
                    let at = |d: f64| {
                        let mut p = theta.clone();
                        p.as_mut_slice()[k] += d;
                        value(&p)
                    };
                    Ok((8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h))
                })
                .collect::<margfit_core::Result<Vec<f64>>>()
        })?;
        let ml = marginal_loss(&loss, &out.marginals, &target)?;
        let grad = |e: &Engine| -> Result<Vec<f64>, CliError> {
            Ok(loss_gradient(&theta, &cfg, &out, &ml.dq_dmu, e)?
                .grad
                .into_vec())
        };
        record(
            "backprop",
            String::new(),
            String::new(),
            rel_error(&grad(&Engine::Backprop)?, &fd),
        );
        record(
            "implicit",
            String::new(),
            String::new(),
            rel_error(&grad(&Engine::Implicit)?, &fd),
        );
        for &(count, sides) in &perturb {
            for &m in &a.multipliers {
                let e = Engine::Perturbation(PerturbationConfig {
                    sides,
                    multiplier: m,
                });
                record(
                    "perturbation",
                    count.to_string(),
                    m.to_string(),
                    rel_error(&grad(&e)?, &fd),
                );
            }
        }
    }
    let mut tidy = Vec::new();
    let mut summary = Vec::new();
    for (engine, sides, m, errs) in &results {
        for (k, e) in errs.iter().enumerate() {
            tidy.push(vec![
                k.to_string(),
                engine.clone(),
                sides.clone(),
                m.clone(),
                e.to_string(),
            ]);
        }
        let max = errs.iter().copied().fold(0.0, f64::max);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        summary.push(vec![
            engine.clone(),
            sides.clone(),
            m.clone(),
            format!("{max:.3e}"),
            format!("{mean:.3e}"),
            errs.len().to_string(),
        ]);
    }
    if let Some(path) = &a.out {
        write_table(
            Some(path),
            &["grid", "engine", "sides", "multiplier", "rel_error"],
            &tidy,
        )?;
    }
    write_table(
        None,
        &[
            "engine",
            "sides",
            "multiplier",
            "max_rel_error",
            "mean_rel_error",
            "grids",
        ],
        &summary,
    )
}
