//! `dm2l` command-line front end.
//!
//! Failures print a one-line JSON object `{"error": {"kind", "message"}}`
//! on stderr and exit with status 1 (usage errors exit with 2).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dm2l_core::dataset::{
    apply_mask, generate_mask, generate_synthetic, generate_xor, load_dataset, save_dataset, DataFormat,
    FeatureScaler, SyntheticSpec,
};
use dm2l_core::experiment::{
    cross_validate, emit_results, fit_method, nemenyi_cd, q_alpha_005, run_ablation, run_experiment,
    ExperimentConfig, Method, ResultFormat, SyntheticKind,
};
use dm2l_core::metrics::evaluate_all;
use dm2l_core::model::{load_model, save_model};
use dm2l_core::seed::child_seed;
use dm2l_core::Matrix;

#[derive(Parser)]
#[command(name = "dm2l", version, about = "Discriminant multi-label learning with missing labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it in the binary model format.
    Train(TrainArgs),
    /// Score a dataset with a saved model.
    Predict(PredictArgs),
    /// Compute ranking metrics for a model or a score file.
    Evaluate(EvaluateArgs),
    /// Run repeated train/test experiments from a config file.
    Experiment(ExperimentArgs),
    /// Write a synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Nemenyi critical difference at α = 0.05.
    Nemenyi(NemenyiArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// `sparse` or `csv`.
    #[arg(long, default_value = "sparse")]
    format: DataFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Flat `key = value` file; supplies grids, folds and solver settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dm2l-l")]
    method: Method,
    /// Fixed λ_d; cross-validated over the config grid when absent.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fixed Gaussian width for dm2l-nl; cross-validated when absent.
    #[arg(long)]
    sigma: Option<f64>,
    /// Fraction of training label entries kept observed.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV convergence trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Score CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    model: Option<PathBuf>,
    /// Score CSV as written by `predict`.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results file; `.json` selects JSON unless `--format` is given.
    #[arg(long)]
    out: PathBuf,
    /// `csv` or `json`.
    #[arg(long)]
    format: Option<ResultFormat>,
    /// Compare dm2l-l, dm2l-lo, global-only and ridge instead of the configured methods.
    #[arg(long)]
    ablation: bool,
}

#[derive(Args)]
struct GenSynthArgs {
    /// `lowrank` or `xor`.
    #[arg(long, default_value = "lowrank")]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    c: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sparse")]
    format: DataFormat,
}

#[derive(Args)]
struct NemenyiArgs {
    /// Number of compared methods.
    #[arg(long)]
    k: usize,
    /// Number of datasets.
    #[arg(long)]
    n: usize,
    /// Critical value; taken from the α = 0.05 table for `k` when absent.
    #[arg(long)]
    q: Option<f64>,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.max_outer {
        cfg.solver.max_outer = v;
    }
    if let Some(v) = args.max_inner {
        cfg.solver.max_inner = v;
    }
    cfg.solver.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);

    let ds = load_dataset(&args.data.data, args.data.format)?;
    let scaler = FeatureScaler::fit(ds.features())?;
    let x = scaler.transform(ds.features())?;
    let mask = generate_mask(ds.instance_count(), ds.label_count(), args.rho, child_seed(seed, 1))?;
    let observed = apply_mask(ds.labels(), &mask)?;

    let lambdas = args.lambda.map_or(cfg.lambda_grid.clone(), |l| vec![l]);
    let sigmas = args.sigma.map_or(cfg.sigma_grid.clone(), |s| vec![s]);
    let chosen = cross_validate(
        &x,
        &observed,
        args.method,
        &lambdas,
        &sigmas,
        cfg.cv_folds,
        child_seed(seed, 100),
        &cfg.solver,
    )?
    .chosen;
    log::info!("training {} with {:?}", args.method, chosen);
    let fitted = fit_method(args.method, &x, &observed, chosen, &cfg.solver, scaler)?;
    save_model(&fitted.model, &args.out)?;
    if let Some(path) = &args.trace {
        fitted.trace.save_csv(path)?;
    }
    println!(
        "{}",
        json!({
            "method": args.method.name(),
            "lambda": chosen.lambda,
            "sigma": chosen.sigma,
            "objective": fitted.trace.best_objective(),
            "outer_iterations": fitted.trace.iterations.len(),
            "status": format!("{:?}", fitted.trace.status),
            "model": args.out,
        })
    );
    Ok(())
}

fn write_scores(scores: &Matrix, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    let header: Vec<String> = (1..=scores.ncols()).map(|j| format!("s{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in scores.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn read_scores(path: &Path) -> Result<Matrix> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad score", path.display(), i + 1))?;
        if *width.get_or_insert(row.len()) != row.len() {
            bail!("{}:{}: expected {} scores", path.display(), i + 1, width.unwrap_or(0));
        }
        rows.push(row);
    }
    let cols = width.unwrap_or(0);
    Ok(Matrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let ds = load_dataset(&args.data.data, args.data.format)?;
    let scores = model.predict_scores(ds.features())?;
    match &args.out {
        Some(path) => write_scores(&scores, File::create(path)?),
        None => write_scores(&scores, std::io::stdout().lock()),
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&args.data.data, args.data.format)?;
    let scores = match (&args.model, &args.scores) {
        (Some(model), _) => load_model(model)?.predict_scores(ds.features())?,
        (None, Some(path)) => read_scores(path)?,
        (None, None) => bail!("either --model or --scores is required"),
    };
    let report = evaluate_all(&scores, ds.labels())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    let table = if args.ablation {
        run_ablation(&cfg)?
    } else {
        run_experiment(&cfg)?
    };
    let format = args.format.unwrap_or_else(|| ResultFormat::from_path(&args.out));
    emit_results(&table, &args.out, format)?;
    for a in table.aggregates() {
        println!(
            "{:<12} rho={:<4} runs={:<3} rkl={:.4} auc={:.4}±{:.4} cvg={:.4} ap={:.4}",
            a.method.name(),
            a.rho,
            a.runs,
            a.ranking_loss.mean,
            a.macro_auc.mean,
            a.macro_auc.std,
            a.coverage.mean,
            a.average_precision.mean
        );
    }
    Ok(())
}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let ds = match args.kind {
        SyntheticKind::LowRank => generate_synthetic(&SyntheticSpec {
            n: args.n,
            d: args.d,
            c: args.c,
            rank: args.rank,
            noise: args.noise,
            seed: args.seed,
        })?,
        SyntheticKind::Xor => generate_xor(args.n, args.d, args.c, args.noise, args.seed)?,
    };
    save_dataset(&ds, &args.out, args.format)?;
    Ok(())
}

fn nemenyi(args: NemenyiArgs) -> Result<()> {
    let q = match args.q {
        Some(q) => q,
        None => match q_alpha_005(args.k) {
            Some(q) => q,
            None => bail!("no tabulated critical value for k = {}; pass --q", args.k),
        },
    };
    let cd = nemenyi_cd(args.k, args.n, q)?;
    println!("{}", json!({ "k": args.k, "n": args.n, "q": q, "cd": cd }));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Nemenyi(a) => nemenyi(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<dm2l_core::Error>())
                .map_or("cli", |e| e.kind());
            let message = format!("{err:#}");
            eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
            ExitCode::FAILURE
        }
    }
}
