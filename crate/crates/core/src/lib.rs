//! Discriminant multi-label learning with missing labels.
//!
//! Predictions `ZΘ` (with `Z = X` for the linear model, `Z = K` for the
//! kernel model) are trained against a partially observed label matrix with
//!
//! ```text
//! ½‖R_Ω(ZΘ) − Ỹ‖²_F + λ_d (Σ_k ‖Z_k Θ‖_* − ‖ZΘ‖_*)
//! ```
//!
//! where `Z_k` holds the rows of instances observed positive for label `k`.
//! The per-label nuclear norms shrink the rank of each label group's
//! predictions while the subtracted global norm expands the overall rank.
//! The objective is a difference of convex functions and is minimised with
//! the concave-convex procedure ([`optimizer::fit`]).
//!
//! Module map:
//!
//! * [`dataset`]: datasets, masks, splits, file formats, synthetic data
//! * [`kernels`]: Gram and cross-kernel matrices
//! * [`nucnorm`]: nuclear norm and its thresholded-SVD subgradient
//! * [`objective`]: objective, D.C. split, surrogate and subgradients
//! * [`optimizer`]: CCCP outer loop and subgradient inner solver
//! * [`model`]: trained models, prediction and the binary model format
//! * [`metrics`]: ranking loss, macro AUC, coverage, average precision
//! * [`experiment`]: cross-validation, repeated runs, ablations, result tables

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nucnorm;
pub mod objective;
pub mod optimizer;
pub mod seed;

pub use dataset::{DataSplit, Dataset, ObservationMask, ObservedLabelMatrix};
pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelSpec};
pub use metrics::EvaluationReport;
pub use model::TrainedModel;
pub use nucnorm::SubgradientResult;
pub use objective::{LabelGroups, ObjectiveParts, ObjectiveSpec, Regularizer};
pub use optimizer::{CccpConfig, CccpTrace, FitStatus};

/// Dense real matrix used throughout the crate (column-major).
pub type Matrix = nalgebra::DMatrix<f64>;
