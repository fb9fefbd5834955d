//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! synthetic    = lowrank        # or xor; ignored when `dataset` is set
//! synth_n      = 500
//! synth_d      = 20
//! synth_c      = 10
//! synth_rank   = 3
//! synth_noise  = 0.1
//! methods      = dm2l-l, ridge
//! rho          = 1.0, 0.7, 0.3
//! train_frac   = 0.6
//! repetitions  = 10
//! lambda_grid  = 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1, 10, 100, 1e3, 1e4, 1e5
//! sigma_grid   = 0.5, 1, 1.5, 2
//! cv_folds     = 5
//! seed         = 0
//! ```
//!
//! Solver keys: `max_outer`, `max_inner`, `inner_step`, `outer_rel_tol`,
//! `delta`. Data-file keys: `dataset`, `format` (`sparse` or `csv`).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DataFormat, SyntheticSpec};
use crate::error::{Error, Result};
use crate::optimizer::CccpConfig;

use super::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    LowRank,
    Xor,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowrank" | "low-rank" => Ok(Self::LowRank),
            "xor" => Ok(Self::Xor),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub kind: SyntheticKind,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    File { path: PathBuf, format: DataFormat },
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub methods: Vec<Method>,
    pub rhos: Vec<f64>,
    pub train_frac: f64,
    pub repetitions: usize,
    pub lambda_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub cv_folds: usize,
    pub seed: u64,
    pub solver: CccpConfig,
}

/// `10⁻⁵, 10⁻⁴, …, 10⁵`
pub fn default_lambda_grid() -> Vec<f64> {
    (-5..=5).map(|e| 10f64.powi(e)).collect()
}

pub fn default_sigma_grid() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSource {
                kind: SyntheticKind::LowRank,
                spec: SyntheticSpec {
                    n: 500,
                    d: 20,
                    c: 10,
                    rank: 3,
                    noise: 0.1,
                    seed: 0,
                },
            }),
            methods: vec![Method::Dm2lLinear],
            rhos: vec![1.0],
            train_frac: 0.6,
            repetitions: 10,
            lambda_grid: default_lambda_grid(),
            sigma_grid: default_sigma_grid(),
            cv_folds: 5,
            seed: 0,
            solver: CccpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.rhos.is_empty() || self.rhos.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config("every rho must lie in (0, 1]".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config("train_frac must lie in (0, 1)".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda grid must be non-empty and >= 0".into()));
        }
        if self.methods.contains(&Method::Dm2lKernel)
            && (self.sigma_grid.is_empty() || self.sigma_grid.iter().any(|&s| !(s > 0.0 && s.is_finite())))
        {
            return Err(Error::Config("dm2l-nl needs a non-empty positive sigma grid".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        self.solver.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut dataset: Option<PathBuf> = None;
        let mut format = DataFormat::Sparse;
        let mut kind = SyntheticKind::LowRank;
        let DataSource::Synthetic(SyntheticSource { mut spec, .. }) = cfg.data.clone() else {
            unreachable!("default source is synthetic")
        };
        let mut synth_seed = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: invalid {what} `{value}`", lineno + 1));
            match key {
                "dataset" => dataset = Some(PathBuf::from(value)),
                "format" => format = value.parse()?,
                "synthetic" => kind = value.parse()?,
                "synth_n" => spec.n = value.parse().map_err(|_| bad(key))?,
                "synth_d" => spec.d = value.parse().map_err(|_| bad(key))?,
                "synth_c" => spec.c = value.parse().map_err(|_| bad(key))?,
                "synth_rank" => spec.rank = value.parse().map_err(|_| bad(key))?,
                "synth_noise" => spec.noise = value.parse().map_err(|_| bad(key))?,
                "synth_seed" => synth_seed = Some(value.parse().map_err(|_| bad(key))?),
                "method" | "methods" => {
                    cfg.methods = split_list(value).map(str::parse).collect::<Result<_>>()?
                }
                "rho" | "rhos" => cfg.rhos = parse_floats(value).map_err(|_| bad(key))?,
                "train_frac" => cfg.train_frac = value.parse().map_err(|_| bad(key))?,
                "repetitions" => cfg.repetitions = value.parse().map_err(|_| bad(key))?,
                "lambda_grid" => cfg.lambda_grid = parse_floats(value).map_err(|_| bad(key))?,
                "sigma_grid" => cfg.sigma_grid = parse_floats(value).map_err(|_| bad(key))?,
                "cv_folds" => cfg.cv_folds = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "max_outer" => cfg.solver.max_outer = value.parse().map_err(|_| bad(key))?,
                "max_inner" => cfg.solver.max_inner = value.parse().map_err(|_| bad(key))?,
                "inner_step" => {
                    cfg.solver.inner_step = if value == "auto" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad(key))?)
                    }
                }
                "outer_rel_tol" => cfg.solver.outer_rel_tol = value.parse().map_err(|_| bad(key))?,
                "delta" => cfg.solver.delta = value.parse().map_err(|_| bad(key))?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        spec.seed = synth_seed.unwrap_or(cfg.seed);
        cfg.data = match dataset {
            Some(path) => DataSource::File { path, format },
            None => DataSource::Synthetic(SyntheticSource { kind, spec }),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_floats(value: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    split_list(value).map(str::parse).collect()
}
