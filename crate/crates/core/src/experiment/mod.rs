//! Experiment harness: hyper-parameter selection, repeated train/test runs
//! under label masking, ablations and result tables.
//!
//! Every repetition derives its seeds from `(seed, rep)` with
//! [`crate::seed::child_seed`]: stream 0 drives the split, stream `1 + r`
//! the mask for the `r`-th ρ, and stream `100 + r` the cross-validation
//! folds. The mask touches training labels only; test labels are always
//! complete.

mod config;
mod nemenyi;
mod results;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    default_lambda_grid, default_sigma_grid, DataSource, ExperimentConfig, SyntheticKind,
    SyntheticSource,
};
pub use nemenyi::{nemenyi_cd, q_alpha_005};
pub use results::{emit_results, Aggregate, MetricSummary, ResultFormat, ResultTable, RunRecord, CSV_HEADER};

use crate::dataset::{
    apply_mask, generate_mask, generate_synthetic, generate_xor, load_dataset, split_train_test,
    Dataset, FeatureScaler, ObservedLabelMatrix,
};
use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, KernelSpec};
use crate::metrics::{average_precision, evaluate_all};
use crate::model::{ModelMetadata, TrainedModel};
use crate::objective::{build_label_groups, ObjectiveSpec, Regularizer};
use crate::optimizer::{fit, CccpConfig, CccpTrace};
use crate::seed::child_seed;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Linear model, discriminant objective.
    #[serde(rename = "dm2l-l")]
    Dm2lLinear,
    /// Gaussian-kernel model, discriminant objective.
    #[serde(rename = "dm2l-nl")]
    Dm2lKernel,
    /// Linear model, local nuclear norms only.
    #[serde(rename = "dm2l-lo")]
    Dm2lLocal,
    /// Linear model, global nuclear norm only.
    #[serde(rename = "global-only")]
    GlobalOnly,
    /// Linear model with `λ_d = 0`.
    #[serde(rename = "ridge")]
    Ridge,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dm2lLinear,
        Method::Dm2lKernel,
        Method::Dm2lLocal,
        Method::GlobalOnly,
        Method::Ridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dm2lLinear => "dm2l-l",
            Method::Dm2lKernel => "dm2l-nl",
            Method::Dm2lLocal => "dm2l-lo",
            Method::GlobalOnly => "global-only",
            Method::Ridge => "ridge",
        }
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            Method::Dm2lLinear | Method::Dm2lKernel | Method::Ridge => Regularizer::Discriminant,
            Method::Dm2lLocal => Regularizer::LocalOnly,
            Method::GlobalOnly => Regularizer::GlobalOnly,
        }
    }

    pub fn is_kernel(self) -> bool {
        self == Method::Dm2lKernel
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda: f64,
    pub sigma: Option<f64>,
}

impl Hyper {
    fn kernel(&self) -> Result<KernelSpec> {
        match self.sigma {
            Some(sigma) => KernelSpec::gaussian(sigma),
            None => Err(Error::Config("kernel method needs sigma".into())),
        }
    }
}

fn check_method_hyper(method: Method, hyper: &Hyper) -> Result<()> {
    match (method.is_kernel(), hyper.sigma) {
        (true, None) => Err(Error::Config(format!("{method} needs a kernel width sigma"))),
        (false, Some(_)) => Err(Error::Config(format!("{method} is linear and takes no sigma"))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub model: TrainedModel,
    pub trace: CccpTrace,
}

/// Trains `method` on features already normalized by `scaler`.
pub fn fit_method(
    method: Method,
    x: &Matrix,
    observed: &ObservedLabelMatrix,
    hyper: Hyper,
    solver: &CccpConfig,
    scaler: FeatureScaler,
) -> Result<MethodFit> {
    check_method_hyper(method, &hyper)?;
    let lambda = if method == Method::Ridge { 0.0 } else { hyper.lambda };
    let groups = build_label_groups(observed);
    let design = if method.is_kernel() {
        gram_matrix(x, hyper.kernel()?)?.values
    } else {
        x.clone()
    };
    let spec = ObjectiveSpec::new(design, observed.clone(), groups, lambda)?
        .with_delta(solver.delta)?
        .with_regularizer(method.regularizer());
    let out = fit(&spec, solver)?;
    let metadata = ModelMetadata {
        lambda,
        config_digest: solver.digest(),
        training_objective: out.trace.best_objective(),
    };
    let model = if method.is_kernel() {
        TrainedModel::kernel(out.theta, x.clone(), hyper.kernel()?, scaler, metadata)?
    } else {
        TrainedModel::linear(out.theta, scaler, metadata)?
    };
    Ok(MethodFit {
        model,
        trace: out.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: Hyper,
    /// Mean validation average precision per grid point, in search order.
    pub scores: Vec<(Hyper, f64)>,
}

fn candidate_grid(method: Method, lambda_grid: &[f64], sigma_grid: &[f64]) -> Vec<Hyper> {
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut sigmas = sigma_grid.to_vec();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    if method == Method::Ridge {
        return vec![Hyper {
            lambda: 0.0,
            sigma: None,
        }];
    }
    lambdas
        .iter()
        .flat_map(|&lambda| {
            if method.is_kernel() {
                sigmas
                    .iter()
                    .map(|&s| Hyper {
                        lambda,
                        sigma: Some(s),
                    })
                    .collect::<Vec<_>>()
            } else {
                vec![Hyper {
                    lambda,
                    sigma: None,
                }]
            }
        })
        .collect()
}

struct Fold {
    train: Vec<usize>,
    valid: Vec<usize>,
}

fn make_folds(n: usize, folds: usize, seed: u64) -> Vec<Fold> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seed::rng(seed));
    (0..folds)
        .map(|f| {
            let mut valid: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
            valid.sort_unstable();
            let mut train: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % folds != f)
                .map(|(_, &i)| i)
                .collect();
            train.sort_unstable();
            Fold { train, valid }
        })
        .collect()
}

/// Picks the grid point with the best mean validation average precision.
/// Validation uses only the observed labels of held-out instances. Ties go
/// to the smaller `λ_d`, then the smaller `σ`.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    x: &Matrix,
    observed: &ObservedLabelMatrix,
    method: Method,
    lambda_grid: &[f64],
    sigma_grid: &[f64],
    folds: usize,
    seed: u64,
    solver: &CccpConfig,
) -> Result<CvOutcome> {
    let candidates = candidate_grid(method, lambda_grid, sigma_grid);
    if candidates.is_empty() {
        return Err(Error::Config(format!("empty hyper-parameter grid for {method}")));
    }
    if folds < 2 {
        return Err(Error::param("folds", "need at least 2"));
    }
    if folds > x.nrows() {
        return Err(Error::param(
            "folds",
            format!("{folds} folds for {} instances", x.nrows()),
        ));
    }
    if candidates.len() == 1 {
        return Ok(CvOutcome {
            chosen: candidates[0],
            scores: vec![(candidates[0], f64::NAN)],
        });
    }
    let folds = make_folds(x.nrows(), folds, seed);
    let fold_obs: Vec<(ObservedLabelMatrix, ObservedLabelMatrix)> = folds
        .iter()
        .map(|f| (observed.select_rows(&f.train), observed.select_rows(&f.valid)))
        .collect();

    // Gram matrices over the whole training set, one per sigma
    let mut grams: Vec<(f64, Matrix)> = Vec::new();
    if method.is_kernel() {
        for h in &candidates {
            let s = h.sigma.unwrap_or(1.0);
            if !grams.iter().any(|(g, _)| *g == s) {
                grams.push((s, gram_matrix(x, KernelSpec::gaussian(s)?)?.values));
            }
        }
    }

    let mut scores = Vec::with_capacity(candidates.len());
    for hyper in &candidates {
        let mut total = 0.0;
        let mut counted = 0usize;
        for (fold, (obs_train, obs_valid)) in folds.iter().zip(&fold_obs) {
            let (design, valid_design) = if method.is_kernel() {
                let k = &grams
                    .iter()
                    .find(|(s, _)| Some(*s) == hyper.sigma)
                    .expect("gram computed for every sigma")
                    .1;
                (
                    k.select_rows(&fold.train).select_columns(&fold.train),
                    k.select_rows(&fold.valid).select_columns(&fold.train),
                )
            } else {
                (x.select_rows(&fold.train), x.select_rows(&fold.valid))
            };
            let groups = build_label_groups(obs_train);
            let spec = ObjectiveSpec::new(design, obs_train.clone(), groups, hyper.lambda)?
                .with_delta(solver.delta)?
                .with_regularizer(method.regularizer());
            let theta = match fit(&spec, solver) {
                Ok(out) => out.theta,
                Err(Error::NonFinite(what)) => {
                    log::warn!("{method} {hyper:?}: fold diverged ({what})");
                    total = f64::NEG_INFINITY;
                    counted = 1;
                    break;
                }
                Err(e) => return Err(e),
            };
            let predictions = valid_design * theta;
            match average_precision(&predictions, obs_valid.values()) {
                Ok(ap) => {
                    total += ap;
                    counted += 1;
                }
                Err(Error::EmptyEvaluation { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let mean = if counted == 0 {
            f64::NEG_INFINITY
        } else {
            total / counted as f64
        };
        scores.push((*hyper, mean));
    }
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen: scores[best].0,
        scores,
    })
}

pub fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::File { path, format } => load_dataset(path, *format),
        DataSource::Synthetic(s) => match s.kind {
            SyntheticKind::LowRank => generate_synthetic(&s.spec),
            SyntheticKind::Xor => generate_xor(s.spec.n, s.spec.d, s.spec.c, s.spec.noise, s.spec.seed),
        },
    }
}

fn run_repetition(ds: &Dataset, cfg: &ExperimentConfig, rep: usize) -> Result<Vec<RunRecord>> {
    let rep_seed = child_seed(cfg.seed, rep as u64);
    let split = split_train_test(ds, cfg.train_frac, child_seed(rep_seed, 0))?;
    let train = ds.subset(&split.train_indices)?;
    let test = ds.subset(&split.test_indices)?;
    let scaler = FeatureScaler::fit(train.features())?;
    let x_train = scaler.transform(train.features())?;
    let x_test = scaler.transform(test.features())?;

    let mut records = Vec::new();
    for (r, &rho) in cfg.rhos.iter().enumerate() {
        let mask = generate_mask(
            train.instance_count(),
            train.label_count(),
            rho,
            child_seed(rep_seed, 1 + r as u64),
        )?;
        let observed = apply_mask(train.labels(), &mask)?;
        for &method in &cfg.methods {
            let cv = cross_validate(
                &x_train,
                &observed,
                method,
                &cfg.lambda_grid,
                &cfg.sigma_grid,
                cfg.cv_folds,
                child_seed(rep_seed, 100 + r as u64),
                &cfg.solver,
            )?;
            let fitted = fit_method(method, &x_train, &observed, cv.chosen, &cfg.solver, scaler.clone())?;
            let scores = fitted.model.predict_normalized(&x_test)?;
            let report = evaluate_all(&scores, test.labels())?;
            log::info!(
                "rep {rep} rho {rho} {method}: lambda {} auc {:.4} ap {:.4}",
                cv.chosen.lambda,
                report.macro_auc,
                report.average_precision
            );
            records.push(RunRecord {
                method,
                rho,
                rep,
                report,
                lambda: cv.chosen.lambda,
                sigma: cv.chosen.sigma,
            });
        }
    }
    Ok(records)
}

/// Thread count from `DM2L_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("DM2L_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let ds = load_source(&cfg.data)?;
    let run = || -> Result<Vec<Vec<RunRecord>>> {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(&ds, cfg, rep))
            .collect()
    };
    let per_rep = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(ResultTable::new(per_rep.into_iter().flatten().collect()))
}

/// Runs the full model against its three baselines on the same splits and
/// masks.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let cfg = ExperimentConfig {
        methods: vec![
            Method::Dm2lLinear,
            Method::Dm2lLocal,
            Method::GlobalOnly,
            Method::Ridge,
        ],
        ..cfg.clone()
    };
    run_experiment(&cfg)
}
