//! The training objective and its difference-of-convex split.
//!
//! For a design matrix `Z` (features `X` or Gram matrix `K`) and parameters
//! `Θ`, the discriminant objective is
//!
//! ```text
//! J(Θ) = ½‖R_Ω(ZΘ) − Ỹ‖²_F + λ_d (Σ_k ‖Z_k Θ‖_* − ‖ZΘ‖_*)
//!      = J_vex(Θ) + J_cave(Θ)
//! J_vex  = ½‖R_Ω(ZΘ) − Ỹ‖²_F + λ_d Σ_k ‖Z_k Θ‖_*
//! J_cave = −λ_d ‖ZΘ‖_*
//! ```
//!
//! `Z_k Θ` is the row selection `(ZΘ)[group_k]`, so every term is evaluated
//! from one product `ZΘ`. The CCCP surrogate at `Θ_t` replaces `J_cave` by
//! its tangent `⟨C_t, Θ⟩ + offset` with `C_t = −λ_d Zᵀ ∂‖ZΘ_t‖_*`.

use serde::{Deserialize, Serialize};

use crate::dataset::{mask_residual, ObservedLabelMatrix};
use crate::error::{Error, Result};
use crate::nucnorm::{nuclear_norm_subgradient, DEFAULT_DELTA};
use crate::Matrix;

/// Rows observed positive for each label, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGroups {
    groups: Vec<Vec<usize>>,
}

impl LabelGroups {
    pub fn new(groups: Vec<Vec<usize>>, rows: usize) -> Result<Self> {
        for (k, g) in groups.iter().enumerate() {
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param(
                    "label groups",
                    format!("group {k} is not strictly ascending"),
                ));
            }
            if let Some(&bad) = g.iter().find(|&&i| i >= rows) {
                return Err(Error::dims("label group", format!("row < {rows}"), bad));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// True when every row in `0..rows` belongs to some group.
    pub fn covers_rows(&self, rows: usize) -> bool {
        let mut seen = vec![false; rows];
        for &i in self.groups.iter().flatten() {
            if i < rows {
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn build_label_groups(observed: &ObservedLabelMatrix) -> LabelGroups {
    let values = observed.values();
    let groups = (0..values.ncols())
        .map(|k| {
            (0..values.nrows())
                .filter(|&i| observed.mask().contains(i, k) && values[(i, k)] > 0.0)
                .collect()
        })
        .collect();
    LabelGroups { groups }
}

/// Which nuclear-norm terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Regularizer {
    /// `λ (Σ_k ‖Z_kΘ‖_* − ‖ZΘ‖_*)`
    #[default]
    Discriminant,
    /// `λ Σ_k ‖Z_kΘ‖_*`
    LocalOnly,
    /// `λ ‖ZΘ‖_*`
    GlobalOnly,
}

#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    design: Matrix,
    /// `Zᵀ`, kept so the subgradient is a plain product.
    design_t: Matrix,
    observed: ObservedLabelMatrix,
    groups: LabelGroups,
    lambda: f64,
    delta: f64,
    regularizer: Regularizer,
}

impl ObjectiveSpec {
    pub fn new(
        design: Matrix,
        observed: ObservedLabelMatrix,
        groups: LabelGroups,
        lambda: f64,
    ) -> Result<Self> {
        let n = design.nrows();
        if n == 0 || design.ncols() == 0 {
            return Err(Error::dims("objective design", "non-empty", "empty"));
        }
        if observed.nrows() != n {
            return Err(Error::dims("observed labels rows", n, observed.nrows()));
        }
        if groups.len() != observed.ncols() {
            return Err(Error::dims(
                "label group count",
                observed.ncols(),
                groups.len(),
            ));
        }
        if groups.groups().iter().flatten().any(|&i| i >= n) {
            return Err(Error::dims("label group rows", format!("< {n}"), "out of range"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("{lambda} must be >= 0")));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective design".into()));
        }
        Ok(Self {
            design_t: design.transpose(),
            design,
            observed,
            groups,
            lambda,
            delta: DEFAULT_DELTA,
            regularizer: Regularizer::Discriminant,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("delta", format!("{delta} must be positive")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Self {
        self.regularizer = regularizer;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("{lambda} must be >= 0")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn observed(&self) -> &ObservedLabelMatrix {
        &self.observed
    }

    pub fn groups(&self) -> &LabelGroups {
        &self.groups
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    /// Shape `(p, c)` of the parameter matrix.
    pub fn param_shape(&self) -> (usize, usize) {
        (self.design.ncols(), self.observed.ncols())
    }

    fn predictions(&self, theta: &Matrix) -> Result<Matrix> {
        if theta.shape() != self.param_shape() {
            return Err(Error::dims(
                "parameter matrix",
                format!("{:?}", self.param_shape()),
                format!("{:?}", theta.shape()),
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter matrix".into()));
        }
        Ok(&self.design * theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub loss: f64,
    /// `Σ_k ‖Z_kΘ‖_*` over non-empty groups.
    pub local_sum: f64,
    /// `‖ZΘ‖_*`
    pub global: f64,
    pub total: f64,
}

fn local_terms(
    spec: &ObjectiveSpec,
    predictions: &Matrix,
    mut accumulate: Option<&mut Matrix>,
) -> Result<f64> {
    let mut sum = 0.0;
    for group in spec.groups.groups() {
        if group.is_empty() {
            continue;
        }
        let block = predictions.select_rows(group);
        if accumulate.is_none() {
            sum += crate::nucnorm::nuclear_norm(&block)?;
            continue;
        }
        let res = nuclear_norm_subgradient(&block, spec.delta)?;
        sum += res.norm;
        if let Some(acc) = accumulate.as_deref_mut() {
            for j in 0..acc.ncols() {
                for (r, &i) in group.iter().enumerate() {
                    acc[(i, j)] += spec.lambda * res.gradient[(r, j)];
                }
            }
        }
    }
    Ok(sum)
}

pub fn objective_value(theta: &Matrix, spec: &ObjectiveSpec) -> Result<ObjectiveParts> {
    let p = spec.predictions(theta)?;
    let residual = mask_residual(&p, &spec.observed)?;
    let loss = 0.5 * residual.norm_squared();
    let local_sum = local_terms(spec, &p, None)?;
    let global = crate::nucnorm::nuclear_norm(&p)?;
    let reg = match spec.regularizer {
        Regularizer::Discriminant => local_sum - global,
        Regularizer::LocalOnly => local_sum,
        Regularizer::GlobalOnly => global,
    };
    Ok(ObjectiveParts {
        loss,
        local_sum,
        global,
        total: loss + spec.lambda * reg,
    })
}

/// `J_vex(Θ)` and one of its subgradients.
pub fn convex_value_and_subgradient(theta: &Matrix, spec: &ObjectiveSpec) -> Result<(f64, Matrix)> {
    let p = spec.predictions(theta)?;
    let mut direction = mask_residual(&p, &spec.observed)?;
    let loss = 0.5 * direction.norm_squared();
    let reg = match spec.regularizer {
        Regularizer::Discriminant | Regularizer::LocalOnly => {
            if spec.lambda == 0.0 {
                0.0
            } else {
                local_terms(spec, &p, Some(&mut direction))?
            }
        }
        Regularizer::GlobalOnly => {
            if spec.lambda == 0.0 {
                0.0
            } else {
                let res = nuclear_norm_subgradient(&p, spec.delta)?;
                direction += &res.gradient * spec.lambda;
                res.norm
            }
        }
    };
    let grad = &spec.design_t * &direction;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("convex subgradient".into()));
    }
    Ok((loss + spec.lambda * reg, grad))
}

/// `Zᵀ(R_Ω(ZΘ) − Ỹ) + λ Σ_k Z_kᵀ ∂‖Z_kΘ‖_*` (global term instead for
/// [`Regularizer::GlobalOnly`]).
pub fn convex_subgradient(theta: &Matrix, spec: &ObjectiveSpec) -> Result<Matrix> {
    Ok(convex_value_and_subgradient(theta, spec)?.1)
}

/// Affine majorant `Θ ↦ ⟨slope, Θ⟩ + offset` of the concave part, tangent at
/// the expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub slope: Matrix,
    pub offset: f64,
}

impl Linearization {
    pub fn eval(&self, theta: &Matrix) -> f64 {
        self.slope.dot(theta) + self.offset
    }
}

pub fn concave_linearization(theta_t: &Matrix, spec: &ObjectiveSpec) -> Result<Linearization> {
    let (p, c) = spec.param_shape();
    if spec.regularizer != Regularizer::Discriminant || spec.lambda == 0.0 {
        spec.predictions(theta_t)?;
        return Ok(Linearization {
            slope: Matrix::zeros(p, c),
            offset: 0.0,
        });
    }
    let pred = spec.predictions(theta_t)?;
    let res = nuclear_norm_subgradient(&pred, spec.delta)?;
    let slope = (&spec.design_t * &res.gradient) * (-spec.lambda);
    let offset = -spec.lambda * res.norm - slope.dot(theta_t);
    Ok(Linearization { slope, offset })
}

/// The CCCP surrogate `J_vex(Θ) + ⟨C_t, Θ⟩ + offset` around a fixed expansion
/// point.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    spec: &'a ObjectiveSpec,
    linearization: Linearization,
}

impl<'a> Surrogate<'a> {
    pub fn at(spec: &'a ObjectiveSpec, theta_t: &Matrix) -> Result<Self> {
        Ok(Self {
            spec,
            linearization: concave_linearization(theta_t, spec)?,
        })
    }

    pub fn linearization(&self) -> &Linearization {
        &self.linearization
    }

    pub fn value(&self, theta: &Matrix) -> Result<f64> {
        Ok(self.value_and_subgradient(theta)?.0)
    }

    pub fn value_and_subgradient(&self, theta: &Matrix) -> Result<(f64, Matrix)> {
        let (vex, mut grad) = convex_value_and_subgradient(theta, self.spec)?;
        grad += &self.linearization.slope;
        Ok((vex + self.linearization.eval(theta), grad))
    }
}

pub fn surrogate_value(theta: &Matrix, theta_t: &Matrix, spec: &ObjectiveSpec) -> Result<f64> {
    Surrogate::at(spec, theta_t)?.value(theta)
}
