//! Concave-convex procedure.
//!
//! Each outer iteration linearizes the concave part at `Θ_t` and
//! approximately minimizes the resulting convex surrogate by subgradient
//! descent with steps `η₀/√t`, keeping the best iterate. The inner solve
//! never increases the surrogate, so the objective is non-increasing through
//! majorization.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::ObservedLabelMatrix;
use crate::error::{Error, Result};
use crate::nucnorm::DEFAULT_DELTA;
use crate::objective::{objective_value, LabelGroups, ObjectiveSpec, Surrogate};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccpConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Initial inner step `η₀`. `None` uses `1/‖Z‖₂²`, the reciprocal
    /// Lipschitz constant of the loss gradient.
    pub inner_step: Option<f64>,
    pub outer_rel_tol: f64,
    pub delta: f64,
}

impl Default for CccpConfig {
    fn default() -> Self {
        Self {
            max_outer: 50,
            max_inner: 200,
            inner_step: None,
            outer_rel_tol: 1e-5,
            delta: DEFAULT_DELTA,
        }
    }
}

impl CccpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 {
            return Err(Error::param("max_outer", "must be positive"));
        }
        if self.max_inner == 0 {
            return Err(Error::param("max_inner", "must be positive"));
        }
        if let Some(step) = self.inner_step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::param("inner_step", format!("{step} must be positive")));
            }
        }
        if self.outer_rel_tol.is_nan() || self.outer_rel_tol <= 0.0 {
            return Err(Error::param("outer_rel_tol", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param("delta", "must be positive"));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the configuration.
    pub fn digest(&self) -> u64 {
        let text = format!(
            "{}|{}|{:?}|{:e}|{:e}",
            self.max_outer,
            self.max_inner,
            self.inner_step.map(f64::to_bits),
            self.outer_rel_tol,
            self.delta
        );
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iter: usize,
    pub objective: f64,
    /// Surrogate value at the inner solution.
    pub surrogate: f64,
    pub inner_iters: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccpTrace {
    pub initial_objective: f64,
    pub iterations: Vec<OuterIteration>,
    pub status: FitStatus,
}

impl CccpTrace {
    /// Objective values starting with the initial point.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|it| it.objective))
            .collect()
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.objectives()
            .into_iter()
            .map(|j| {
                best = best.min(j);
                best
            })
            .collect()
    }

    pub fn best_objective(&self) -> f64 {
        self.best_so_far().last().copied().unwrap_or(self.initial_objective)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,objective,surrogate,inner_iters,seconds")?;
        writeln!(
            w,
            "0,{},{},0,0",
            self.initial_objective, self.initial_objective
        )?;
        for it in &self.iterations {
            writeln!(
                w,
                "{},{},{},{},{}",
                it.iter, it.objective, it.surrogate, it.inner_iters, it.seconds
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub theta: Matrix,
    pub trace: CccpTrace,
}

/// Rectangular truncation of the identity.
pub fn init_parameters(p: usize, c: usize) -> Matrix {
    Matrix::identity(p, c)
}

/// Largest eigenvalue of `ZᵀZ` by power iteration.
pub fn spectral_norm_squared(z: &Matrix) -> f64 {
    let p = z.ncols();
    if p == 0 || z.nrows() == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_fn(p, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..500 {
        let zv = z * &v;
        let w = z.tr_mul(&zv);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = zv.norm_squared();
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next {
            return norm.max(next);
        }
        estimate = next;
    }
    estimate
}

fn resolve_step(spec: &ObjectiveSpec, cfg: &CccpConfig) -> f64 {
    cfg.inner_step.unwrap_or_else(|| {
        let l = spectral_norm_squared(spec.design());
        if l > 0.0 {
            1.0 / l
        } else {
            1.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub theta: Matrix,
    pub start_value: f64,
    pub best_value: f64,
    pub iterations: usize,
}

fn run_inner(sur: &Surrogate<'_>, theta_t: &Matrix, step: f64, max_inner: usize) -> Result<InnerResult> {
    let (start_value, mut grad) = sur.value_and_subgradient(theta_t)?;
    let mut best_value = start_value;
    let mut best_theta = theta_t.clone();
    let mut theta = theta_t.clone();
    let mut iterations = 0;
    for t in 1..=max_inner {
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        iterations = t;
        theta -= &grad * (step / (t as f64).sqrt());
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("inner iterate at step {t}")));
        }
        let (value, g) = sur.value_and_subgradient(&theta)?;
        if value < best_value {
            best_value = value;
            best_theta.copy_from(&theta);
        }
        grad = g;
    }
    Ok(InnerResult {
        theta: best_theta,
        start_value,
        best_value,
        iterations,
    })
}

/// Approximate minimizer of the surrogate built at `theta_t`.
pub fn inner_solve(spec: &ObjectiveSpec, theta_t: &Matrix, cfg: &CccpConfig) -> Result<InnerResult> {
    cfg.validate()?;
    let sur = Surrogate::at(spec, theta_t)?;
    run_inner(&sur, theta_t, resolve_step(spec, cfg), cfg.max_inner)
}

const STALL_LIMIT: usize = 5;

pub fn fit(spec: &ObjectiveSpec, cfg: &CccpConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let (p, c) = spec.param_shape();
    let step = resolve_step(spec, cfg);
    let mut theta = init_parameters(p, c);
    let mut current = objective_value(&theta, spec)?.total;
    let initial_objective = current;
    let mut best = (current, theta.clone());
    let mut iterations = Vec::new();
    let mut status = FitStatus::MaxIters;
    let mut stalled = 0;

    for iter in 1..=cfg.max_outer {
        let clock = Instant::now();
        let sur = Surrogate::at(spec, &theta)?;
        let inner = run_inner(&sur, &theta, step, cfg.max_inner)?;
        let next = objective_value(&inner.theta, spec)?.total;
        iterations.push(OuterIteration {
            iter,
            objective: next,
            surrogate: inner.best_value,
            inner_iters: inner.iterations,
            seconds: clock.elapsed().as_secs_f64(),
        });
        let scale = current.abs().max(1.0);
        let improvement = best.0 - next;
        if next < best.0 {
            best = (next, inner.theta.clone());
        }
        let converged = (next - current).abs() <= cfg.outer_rel_tol * scale;
        stalled = if improvement < cfg.outer_rel_tol * scale {
            stalled + 1
        } else {
            0
        };
        theta = inner.theta;
        current = next;
        if converged {
            status = FitStatus::Converged;
            break;
        }
        if stalled >= STALL_LIMIT {
            status = FitStatus::Stalled;
            break;
        }
    }
    log::debug!(
        "cccp finished: {:?} after {} outer iterations, objective {}",
        status,
        iterations.len(),
        best.0
    );
    Ok(FitOutput {
        theta: best.1,
        trace: CccpTrace {
            initial_objective,
            iterations,
            status,
        },
    })
}

/// Fits weights `W` (d×c) with `Z = X`.
pub fn fit_linear(
    x: &Matrix,
    observed: &ObservedLabelMatrix,
    groups: &LabelGroups,
    lambda: f64,
    cfg: &CccpConfig,
) -> Result<FitOutput> {
    let spec = ObjectiveSpec::new(x.clone(), observed.clone(), groups.clone(), lambda)?
        .with_delta(cfg.delta)?;
    fit(&spec, cfg)
}

/// Fits coefficients `A` (n×c) with `Z = K`.
pub fn fit_kernel(
    k: &Matrix,
    observed: &ObservedLabelMatrix,
    groups: &LabelGroups,
    lambda: f64,
    cfg: &CccpConfig,
) -> Result<FitOutput> {
    if k.nrows() != k.ncols() {
        return Err(Error::dims("Gram matrix", "square", format!("{:?}", k.shape())));
    }
    let spec = ObjectiveSpec::new(k.clone(), observed.clone(), groups.clone(), lambda)?
        .with_delta(cfg.delta)?;
    fit(&spec, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_mask, generate_mask};
    use crate::objective::build_label_groups;
    use nalgebra::dmatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn instance(seed: u64, n: usize, d: usize, c: usize, rho: f64) -> (Matrix, ObservedLabelMatrix, LabelGroups) {
        let mut rng = crate::seed::rng(seed);
        let x = gaussian(n, d, &mut rng);
        let w = gaussian(d, c, &mut rng);
        let y = (&x * w).map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        let mask = generate_mask(n, c, rho, seed + 1).unwrap();
        let obs = apply_mask(&y, &mask).unwrap();
        let groups = build_label_groups(&obs);
        (x, obs, groups)
    }

    #[test]
    fn identity_truncation() {
        assert_eq!(init_parameters(3, 3), Matrix::identity(3, 3));
        assert_eq!(init_parameters(4, 2), dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0; 0.0, 0.0]);
        assert_eq!(init_parameters(2, 3), dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0]);
    }

    #[test]
    fn power_iteration_matches_svd() {
        let mut rng = crate::seed::rng(8);
        let z = gaussian(30, 6, &mut rng);
        let exact = z.clone().singular_values().max().powi(2);
        assert!((spectral_norm_squared(&z) - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn inner_solve_descends_on_smooth_problem() {
        let (x, obs, groups) = instance(3, 30, 5, 3, 0.8);
        let spec = ObjectiveSpec::new(x, obs, groups, 0.0).unwrap();
        let start = init_parameters(5, 3);
        let cfg = CccpConfig {
            inner_step: Some(1e-3),
            ..CccpConfig::default()
        };
        let res = inner_solve(&spec, &start, &cfg).unwrap();
        let before = objective_value(&start, &spec).unwrap().loss;
        let after = objective_value(&res.theta, &spec).unwrap().loss;
        assert!(after < before);
        assert!(res.best_value <= res.start_value);
    }

    #[test]
    fn inner_solve_keeps_fixed_point() {
        let y = dmatrix![1.0, -1.0; -1.0, 1.0; 1.0, 1.0];
        let obs = ObservedLabelMatrix::fully_observed(&y).unwrap();
        let groups = build_label_groups(&obs);
        let spec = ObjectiveSpec::new(Matrix::identity(3, 3), obs, groups, 0.0).unwrap();
        let res = inner_solve(&spec, &y, &CccpConfig::default()).unwrap();
        assert_eq!(res.theta, y);
    }

    #[test]
    fn scalar_least_squares() {
        let x = Matrix::from_fn(20, 1, |i, _| (i as f64 - 9.5) / 5.0);
        let y = Matrix::from_fn(20, 1, |i, _| if i < 10 { -1.0 } else { 1.0 });
        let obs = ObservedLabelMatrix::fully_observed(&y).unwrap();
        let groups = build_label_groups(&obs);
        let out = fit_linear(&x, &obs, &groups, 0.0, &CccpConfig::default()).unwrap();
        let closed = x.dot(&y) / x.norm_squared();
        assert!((out.theta[(0, 0)] - closed).abs() < 1e-3);
    }

    #[test]
    fn huge_lambda_stays_finite_and_nonnegative() {
        let mut rng = crate::seed::rng(12);
        let n = 30;
        let x = gaussian(n, 4, &mut rng);
        let mut y = Matrix::from_fn(n, 3, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        for i in 0..n {
            y[(i, i % 3)] = 1.0;
        }
        let obs = ObservedLabelMatrix::fully_observed(&y).unwrap();
        let groups = build_label_groups(&obs);
        let cfg = CccpConfig {
            max_outer: 10,
            max_inner: 50,
            ..CccpConfig::default()
        };
        let out = fit_linear(&x, &obs, &groups, 1e5, &cfg).unwrap();
        let spec = ObjectiveSpec::new(x, obs, groups, 1e5).unwrap();
        let parts = objective_value(&out.theta, &spec).unwrap();
        assert!(parts.total.is_finite());
        assert!(parts.total >= 0.0);
    }

    #[test]
    fn deterministic_and_monotone() {
        let (x, obs, groups) = instance(5, 40, 6, 4, 0.7);
        let cfg = CccpConfig {
            max_outer: 8,
            max_inner: 40,
            ..CccpConfig::default()
        };
        let a = fit_linear(&x, &obs, &groups, 0.3, &cfg).unwrap();
        let b = fit_linear(&x, &obs, &groups, 0.3, &cfg).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.trace.objectives(), b.trace.objectives());
        let best = a.trace.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(best.last().copied().unwrap(), a.trace.best_objective());

        let spec = ObjectiveSpec::new(x.clone(), obs.clone(), groups.clone(), 0.3).unwrap();
        let init = objective_value(&init_parameters(6, 4), &spec).unwrap().total;
        let fitted = objective_value(&a.theta, &spec).unwrap().total;
        assert!(fitted <= init);
        assert_eq!(fitted, a.trace.best_objective());
    }

    #[test]
    fn trace_csv_layout() {
        let (x, obs, groups) = instance(6, 15, 3, 2, 1.0);
        let cfg = CccpConfig {
            max_outer: 3,
            max_inner: 5,
            ..CccpConfig::default()
        };
        let out = fit_linear(&x, &obs, &groups, 0.1, &cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,objective,surrogate,inner_iters,seconds"));
        assert_eq!(lines.count(), out.trace.iterations.len() + 1);
    }

    #[test]
    fn config_validation() {
        assert!(CccpConfig { max_outer: 0, ..CccpConfig::default() }.validate().is_err());
        assert!(CccpConfig { inner_step: Some(-1.0), ..CccpConfig::default() }.validate().is_err());
        assert_ne!(
            CccpConfig::default().digest(),
            CccpConfig { max_inner: 10, ..CccpConfig::default() }.digest()
        );
    }
}
