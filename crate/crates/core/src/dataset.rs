//! Multi-label datasets, observation masks and file formats.
//!
//! Labels are stored in the `{−1, +1}` alphabet. The observed label matrix
//! `Ỹ = R_Ω(Y)` keeps `Y[i, j]` on the mask and is zero elsewhere.
//!
//! # Sparse text format
//!
//! One instance per line: a comma-separated list of 1-based indices of the
//! positive labels, then whitespace-separated `feature:value` pairs with
//! 0-based feature indices. A line starting with whitespace has no positive
//! labels. Lines starting with `#` are comments, except an optional header
//! `# dm2l-sparse d=<d> c=<c>` that fixes the dimensions.
//!
//! ```text
//! # dm2l-sparse d=8 c=4
//! 1,3 2:0.5 7:1.0
//!   2:0.5
//! ```
//!
//! # Dense CSV format
//!
//! Header row `y1,..,yc,x1,..,xd`; label columns take values in `{0, 1}` or
//! `{−1, +1}` (0 is read as −1).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Matrix,
    label_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Matrix, label_names: Vec<String>) -> Result<Self> {
        let (n, d) = features.shape();
        let c = labels.ncols();
        if n == 0 || d == 0 || c == 0 {
            return Err(Error::dims(
                "dataset",
                "n, d, c >= 1",
                format!("n={n}, d={d}, c={c}"),
            ));
        }
        if labels.nrows() != n {
            return Err(Error::dims("dataset labels", n, labels.nrows()));
        }
        if label_names.len() != c {
            return Err(Error::dims("dataset label names", c, label_names.len()));
        }
        if let Some(v) = labels.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::param("labels", format!("entry {v} is not -1 or +1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            label_names,
        })
    }

    /// Builds a dataset with default label names `y1..yc`.
    pub fn from_matrices(features: Matrix, labels: Matrix) -> Result<Self> {
        let names = default_label_names(labels.ncols());
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn instance_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_count(&self) -> usize {
        self.labels.ncols()
    }

    /// Row subset in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let n = self.instance_count();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dims("dataset subset", format!("row < {n}"), bad));
        }
        Ok(Self {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
            label_names: self.label_names.clone(),
        })
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(features, self.labels.clone(), self.label_names.clone())
    }
}

fn default_label_names(c: usize) -> Vec<String> {
    (1..=c).map(|k| format!("y{k}")).collect()
}

/// The set Ω of observed label-matrix cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    // row-major membership flags
    observed: Vec<bool>,
    count: usize,
}

impl ObservationMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![true; rows * cols],
            count: rows * cols,
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![false; rows * cols],
            count: 0,
        }
    }

    pub fn from_entries<I>(rows: usize, cols: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut mask = Self::empty(rows, cols);
        for (i, j) in entries {
            if i >= rows || j >= cols {
                return Err(Error::dims(
                    "observation mask entry",
                    format!("< ({rows}, {cols})"),
                    format!("({i}, {j})"),
                ));
            }
            let slot = &mut mask.observed[i * cols + j];
            if *slot {
                return Err(Error::param("mask", format!("duplicate entry ({i}, {j})")));
            }
            *slot = true;
            mask.count += 1;
        }
        Ok(mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols && self.observed[row * self.cols + col]
    }

    /// Observed cells in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(move |(idx, _)| (idx / cols, idx % cols))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::empty(rows.len(), self.cols);
        for (new_i, &i) in rows.iter().enumerate() {
            for j in 0..self.cols {
                if self.contains(i, j) {
                    out.observed[new_i * self.cols + j] = true;
                    out.count += 1;
                }
            }
        }
        out
    }
}

/// `Ỹ = R_Ω(Y)`: entries in `{−1, +1}` on the mask, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedLabelMatrix {
    values: Matrix,
    mask: ObservationMask,
}

impl ObservedLabelMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Fully observed labels.
    pub fn fully_observed(labels: &Matrix) -> Result<Self> {
        apply_mask(labels, &ObservationMask::full(labels.nrows(), labels.ncols()))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            mask: self.mask.select_rows(rows),
        }
    }
}

fn check_mask_shape(context: &'static str, m: &Matrix, mask: &ObservationMask) -> Result<()> {
    if m.shape() != mask.shape() {
        return Err(Error::dims(
            context,
            format!("{:?}", mask.shape()),
            format!("{:?}", m.shape()),
        ));
    }
    Ok(())
}

/// The masking operator `R_Ω` on an arbitrary real matrix.
pub fn mask_matrix(m: &Matrix, mask: &ObservationMask) -> Result<Matrix> {
    check_mask_shape("mask_matrix", m, mask)?;
    Ok(Matrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if mask.contains(i, j) {
            m[(i, j)]
        } else {
            0.0
        }
    }))
}

/// Applies `R_Ω` to a label matrix; observed entries must be ±1.
pub fn apply_mask(labels: &Matrix, mask: &ObservationMask) -> Result<ObservedLabelMatrix> {
    check_mask_shape("apply_mask", labels, mask)?;
    for (i, j) in mask.entries() {
        let v = labels[(i, j)];
        if v != 1.0 && v != -1.0 {
            return Err(Error::param(
                "labels",
                format!("observed entry ({i}, {j}) = {v} is not -1 or +1"),
            ));
        }
    }
    Ok(ObservedLabelMatrix {
        values: mask_matrix(labels, mask)?,
        mask: mask.clone(),
    })
}

/// `R_Ω(P) − Ỹ`, zero off the mask.
pub fn mask_residual(predictions: &Matrix, observed: &ObservedLabelMatrix) -> Result<Matrix> {
    check_mask_shape("mask_residual", predictions, &observed.mask)?;
    let mut out = Matrix::zeros(predictions.nrows(), predictions.ncols());
    for (i, j) in observed.mask.entries() {
        out[(i, j)] = predictions[(i, j)] - observed.values[(i, j)];
    }
    Ok(out)
}

/// Samples `round(ρ·n·c)` cells uniformly without replacement.
pub fn generate_mask(rows: usize, cols: usize, rho: f64, seed: u64) -> Result<ObservationMask> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param("rho", format!("{rho} is outside [0, 1]")));
    }
    let total = rows * cols;
    let amount = ((rho * total as f64).round() as usize).min(total);
    let mut rng = seed::rng(seed);
    let picked = rand::seq::index::sample(&mut rng, total, amount);
    ObservationMask::from_entries(rows, cols, picked.into_iter().map(|idx| (idx / cols, idx % cols)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Random train/test partition with `round(train_frac·n)` training rows.
pub fn split_train_test(ds: &Dataset, train_frac: f64, seed: u64) -> Result<DataSplit> {
    split_indices(ds.instance_count(), train_frac, seed)
}

pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> Result<DataSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::param(
            "train_frac",
            format!("{train_frac} is outside (0, 1)"),
        ));
    }
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::param(
            "train_frac",
            format!("split of {n} rows at {train_frac} leaves an empty side"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut train_indices = order[..n_train].to_vec();
    let mut test_indices = order[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(DataSplit {
        train_indices,
        test_indices,
        seed,
    })
}

/// Per-feature z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Zero marks a constant column.
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::param("features", "normalization needs at least 2 rows"));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s <= 1e-12 * m.abs().max(1.0) { 0.0 } else { s });
        }
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::dims("feature scaler", self.dim(), x.ncols()));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let s = self.std[j];
            if s == 0.0 {
                0.0
            } else {
                (x[(i, j)] - self.mean[j]) / s
            }
        }))
    }
}

/// Standardizes each column to mean 0 and population std 1.
pub fn normalize_features(x: &Matrix) -> Result<Matrix> {
    FeatureScaler::fit(x)?.transform(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub rank: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Noise-free scores `X U Vᵀ`.
    pub latent_scores: Matrix,
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    // filled row by row so the draw order does not depend on storage layout
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, j)] = scale * z;
        }
    }
    m
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `Y = sign(X U Vᵀ + ε)` with Gaussian `X`, `U`, `V` and `ε ~ N(0, σ²)`.
pub fn generate_synthetic_full(spec: &SyntheticSpec) -> Result<Synthetic> {
    let SyntheticSpec {
        n,
        d,
        c,
        rank,
        noise,
        seed,
    } = *spec;
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::param("synthetic", "n, d, c must be positive"));
    }
    if rank == 0 || rank > d.min(c) {
        return Err(Error::param(
            "rank",
            format!("{rank} must lie in 1..={}", d.min(c)),
        ));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::param("noise", format!("{noise} must be finite and >= 0")));
    }
    let mut rng = seed::rng(seed);
    let x = gaussian_matrix(&mut rng, n, d, 1.0);
    let u = gaussian_matrix(&mut rng, d, rank, 1.0);
    let v = gaussian_matrix(&mut rng, c, rank, 1.0);
    let eps = gaussian_matrix(&mut rng, n, c, noise);
    let latent = &x * &u * v.transpose();
    let labels = (&latent + eps).map(sign);
    Ok(Synthetic {
        dataset: Dataset::from_matrices(x, labels)?,
        latent_scores: latent,
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    Ok(generate_synthetic_full(spec)?.dataset)
}

/// Nonlinear labels: label `k` is `sign(s_k · x_a · x_b + ε)` for a random
/// feature pair `(a, b)` and random sign `s_k`.
pub fn generate_xor(n: usize, d: usize, c: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || c == 0 || d < 2 {
        return Err(Error::param("xor", "requires n >= 1, c >= 1 and d >= 2"));
    }
    let mut rng = seed::rng(seed);
    let x = gaussian_matrix(&mut rng, n, d, 1.0);
    let mut labels = Matrix::zeros(n, c);
    for k in 0..c {
        let a = rng.random_range(0..d);
        let mut b = rng.random_range(0..d - 1);
        if b >= a {
            b += 1;
        }
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            labels[(i, k)] = sign(s * x[(i, a)] * x[(i, b)] + noise * e);
        }
    }
    Dataset::from_matrices(x, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataFormat {
    Sparse,
    DenseCsv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" | "sparse-multilabel" => Ok(Self::Sparse),
            "csv" | "dense-csv" => Ok(Self::DenseCsv),
            other => Err(Error::param("format", format!("unknown format `{other}`"))),
        }
    }
}

/// Explicit dimensions for the sparse format; missing values are taken from
/// the header or inferred from the largest index seen.
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseDims {
    pub feature_dim: Option<usize>,
    pub label_count: Option<usize>,
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Sparse => load_sparse(path, SparseDims::default()),
        DataFormat::DenseCsv => load_dense_csv(path),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Sparse => save_sparse(ds, path),
        DataFormat::DenseCsv => save_dense_csv(ds, path),
    }
}

struct SparseRow {
    labels: Vec<usize>,
    features: Vec<(usize, f64)>,
    line: usize,
}

fn parse_header(line: &str) -> Option<(Option<usize>, Option<usize>)> {
    let rest = line.trim_start_matches('#').trim();
    let rest = rest.strip_prefix("dm2l-sparse")?;
    let mut d = None;
    let mut c = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("c=") {
            c = v.parse().ok();
        }
    }
    Some((d, c))
}

pub fn load_sparse(path: &Path, dims: SparseDims) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header_d = None;
    let mut header_c = None;
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.starts_with('#') {
            if let Some((d, c)) = parse_header(&line) {
                header_d = d;
                header_c = c;
            }
            continue;
        }
        let mut tokens = line.split_whitespace().peekable();
        let mut labels = Vec::new();
        let starts_blank = line.starts_with(char::is_whitespace);
        if !starts_blank {
            if let Some(tok) = tokens.peek() {
                if !tok.contains(':') {
                    let tok = tokens.next().unwrap_or_default();
                    for part in tok.split(',').filter(|p| !p.is_empty()) {
                        let k: usize = part
                            .parse()
                            .map_err(|_| err(lineno, format!("invalid label index `{part}`")))?;
                        if k == 0 {
                            return Err(err(lineno, "label indices are 1-based".into()));
                        }
                        labels.push(k - 1);
                    }
                }
            }
        }
        let mut features = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("expected `index:value`, got `{tok}`")))?;
            let i: usize = i
                .parse()
                .map_err(|_| err(lineno, format!("invalid feature index `{i}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| err(lineno, format!("invalid feature value `{v}`")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite feature value `{v}`")));
            }
            features.push((i, v));
        }
        rows.push(SparseRow {
            labels,
            features,
            line: lineno,
        });
    }
    if rows.is_empty() {
        return Err(err(0, "no instances".into()));
    }
    let d = dims.feature_dim.or(header_d).unwrap_or_else(|| {
        rows.iter()
            .flat_map(|r| r.features.iter().map(|&(i, _)| i + 1))
            .max()
            .unwrap_or(1)
    });
    let c = dims.label_count.or(header_c).unwrap_or_else(|| {
        rows.iter()
            .flat_map(|r| r.labels.iter().map(|&k| k + 1))
            .max()
            .unwrap_or(1)
    });
    let n = rows.len();
    let mut x = Matrix::zeros(n, d);
    let mut y = Matrix::from_element(n, c, -1.0);
    for (i, row) in rows.iter().enumerate() {
        for &k in &row.labels {
            if k >= c {
                return Err(err(
                    row.line,
                    format!("label index {} exceeds label count {c}", k + 1),
                ));
            }
            y[(i, k)] = 1.0;
        }
        for &(j, v) in &row.features {
            if j >= d {
                return Err(err(
                    row.line,
                    format!("feature index {j} exceeds feature dimension {d}"),
                ));
            }
            x[(i, j)] = v;
        }
    }
    Dataset::from_matrices(x, y)
}

fn save_sparse(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# dm2l-sparse d={} c={}",
        ds.feature_dim(),
        ds.label_count()
    )?;
    for i in 0..ds.instance_count() {
        let positives: Vec<String> = (0..ds.label_count())
            .filter(|&k| ds.labels[(i, k)] > 0.0)
            .map(|k| (k + 1).to_string())
            .collect();
        let mut line = positives.join(",");
        for j in 0..ds.feature_dim() {
            let v = ds.features[(i, j)];
            if v.to_bits() != 0 {
                line.push_str(&format!(" {j}:{v}"));
            }
        }
        if positives.is_empty() && !line.starts_with(' ') {
            line.insert(0, ' ');
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn load_dense_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('y'))
        .map(|(i, _)| i)
        .collect();
    let feature_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x'))
        .map(|(i, _)| i)
        .collect();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if label_cols.len() + feature_cols.len() != headers.len() {
        return Err(err(1, "header columns must be named y<k> or x<j>".into()));
    }
    let names: Vec<String> = label_cols.iter().map(|&i| headers[i].to_string()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for &i in &label_cols {
            let raw = &record[i];
            let v: f64 = raw
                .parse()
                .map_err(|_| err(line, format!("invalid label `{raw}`")))?;
            let v = if v == 1.0 {
                1.0
            } else if v == 0.0 || v == -1.0 {
                -1.0
            } else {
                return Err(err(line, format!("label `{raw}` is outside {{0, 1, -1}}")));
            };
            ys.push(v);
        }
        for &i in &feature_cols {
            let raw = &record[i];
            let v: f64 = raw
                .parse()
                .map_err(|_| err(line, format!("invalid feature value `{raw}`")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite feature value `{raw}`")));
            }
            xs.push(v);
        }
    }
    let n = if label_cols.is_empty() {
        xs.len() / feature_cols.len().max(1)
    } else {
        ys.len() / label_cols.len()
    };
    let x = Matrix::from_row_slice(n, feature_cols.len(), &xs);
    let y = Matrix::from_row_slice(n, label_cols.len(), &ys);
    Dataset::new(x, y, names)
}

fn save_dense_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = default_label_names(ds.label_count());
    header.extend((1..=ds.feature_dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..ds.instance_count() {
        let mut rec: Vec<String> = (0..ds.label_count())
            .map(|k| if ds.labels[(i, k)] > 0.0 { "1" } else { "0" }.to_string())
            .collect();
        rec.extend((0..ds.feature_dim()).map(|j| ds.features[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_oneof, proptest, Just, Strategy};
    use rand::Rng;

    #[test]
    fn mask_identity_and_annihilation() {
        let y = dmatrix![1.0, -1.0; -1.0, 1.0];
        let full = apply_mask(&y, &ObservationMask::full(2, 2)).unwrap();
        assert_eq!(full.values(), &y);
        let none = apply_mask(&y, &ObservationMask::empty(2, 2)).unwrap();
        assert_eq!(none.values(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn mask_diagonal() {
        let y = dmatrix![1.0, -1.0; -1.0, 1.0];
        let mask = ObservationMask::from_entries(2, 2, [(0, 0), (1, 1)]).unwrap();
        let obs = apply_mask(&y, &mask).unwrap();
        assert_eq!(obs.values(), &dmatrix![1.0, 0.0; 0.0, 1.0]);
    }

    #[test]
    fn mask_shape_mismatch() {
        let y = dmatrix![1.0, -1.0];
        assert!(matches!(
            apply_mask(&y, &ObservationMask::full(2, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mask_rejects_duplicates_and_out_of_range() {
        assert!(ObservationMask::from_entries(2, 2, [(0, 0), (0, 0)]).is_err());
        assert!(ObservationMask::from_entries(2, 2, [(2, 0)]).is_err());
    }

    #[test]
    fn residual_examples() {
        let y = dmatrix![1.0, -1.0; -1.0, 1.0];
        let full = apply_mask(&y, &ObservationMask::full(2, 2)).unwrap();
        assert_eq!(mask_residual(&y, &full).unwrap(), Matrix::zeros(2, 2));
        let none = apply_mask(&y, &ObservationMask::empty(2, 2)).unwrap();
        let p = dmatrix![3.0, 4.0; 5.0, 6.0];
        assert_eq!(mask_residual(&p, &none).unwrap(), Matrix::zeros(2, 2));

        let y = dmatrix![1.0, 1.0];
        let mask = ObservationMask::from_entries(1, 2, [(0, 0)]).unwrap();
        let obs = apply_mask(&y, &mask).unwrap();
        let p = dmatrix![0.5, 2.0];
        assert_eq!(mask_residual(&p, &obs).unwrap(), dmatrix![-0.5, 0.0]);
    }

    #[test]
    fn generated_mask_sizes() {
        assert_eq!(generate_mask(4, 5, 1.0, 3).unwrap().len(), 20);
        assert!(generate_mask(4, 5, 0.0, 3).unwrap().is_empty());
        assert_eq!(generate_mask(4, 5, 0.5, 3).unwrap().len(), 10);
        assert!(generate_mask(4, 5, 1.5, 3).is_err());
        assert!(generate_mask(4, 5, -0.1, 3).is_err());
        assert_eq!(generate_mask(6, 7, 0.3, 11).unwrap(), generate_mask(6, 7, 0.3, 11).unwrap());
    }

    #[test]
    fn split_sizes() {
        let s = split_indices(10, 0.6, 1).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (6, 4));
        let s = split_indices(5, 0.6, 1).unwrap();
        assert_eq!((s.train_indices.len(), s.test_indices.len()), (3, 2));
        assert_eq!(split_indices(10, 0.6, 9).unwrap(), split_indices(10, 0.6, 9).unwrap());
        assert!(split_indices(2, 0.1, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let x = dmatrix![1.0, 5.0; 3.0, 5.0];
        let z = normalize_features(&x).unwrap();
        assert_eq!(z, dmatrix![-1.0, 0.0; 1.0, 0.0]);
        let x = dmatrix![5.0; 5.0; 5.0];
        assert_eq!(normalize_features(&x).unwrap(), Matrix::zeros(3, 1));
        let x = dmatrix![0.3, 1.0; -1.2, 2.0; 0.9, -0.5; 4.0, 0.0];
        let once = normalize_features(&x).unwrap();
        let twice = normalize_features(&once).unwrap();
        assert!((once - twice).amax() < 1e-12);
        assert!(normalize_features(&dmatrix![1.0, 2.0]).is_err());
    }

    #[test]
    fn synthetic_determinism_and_rank() {
        let spec = SyntheticSpec {
            n: 60,
            d: 8,
            c: 6,
            rank: 3,
            noise: 0.1,
            seed: 5,
        };
        let a = generate_synthetic_full(&spec).unwrap();
        let b = generate_synthetic_full(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let sv = a.latent_scores.clone().singular_values();
        let tol = 1e-10 * sv.max();
        assert_eq!(sv.iter().filter(|&&s| s > tol).count(), 3);
        assert!(generate_synthetic(&SyntheticSpec { rank: 7, ..spec }).is_err());
    }

    #[test]
    fn synthetic_noise_free_labels_follow_scores() {
        let spec = SyntheticSpec {
            n: 40,
            d: 5,
            c: 4,
            rank: 4,
            noise: 0.0,
            seed: 2,
        };
        let s = generate_synthetic_full(&spec).unwrap();
        assert_eq!(s.dataset.labels(), &s.latent_scores.map(sign));
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sparse_line_parsing() {
        let f = write("1,3 2:0.5 7:1.0\n  2:0.5\n");
        let dims = SparseDims {
            feature_dim: Some(8),
            label_count: Some(4),
        };
        let ds = load_sparse(f.path(), dims).unwrap();
        assert_eq!(ds.labels().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(ds.labels().row(1).iter().copied().collect::<Vec<_>>(), vec![-1.0; 4]);
        let mut expected = vec![0.0; 8];
        expected[2] = 0.5;
        expected[7] = 1.0;
        assert_eq!(ds.features().row(0).iter().copied().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn sparse_errors_carry_line_numbers() {
        let f = write("# dm2l-sparse d=3 c=2\n1 0:1\n3 1:2\n");
        match load_dataset(f.path(), DataFormat::Sparse) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write("1 0:abc\n");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Sparse),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_parsing() {
        let f = write("y1,y2,x1,x2\n1,0,0.5,-1\n0,1,2,3\n");
        let ds = load_dataset(f.path(), DataFormat::DenseCsv).unwrap();
        assert_eq!(ds.labels(), &dmatrix![1.0, -1.0; -1.0, 1.0]);
        assert_eq!(ds.features(), &dmatrix![0.5, -1.0; 2.0, 3.0]);
        let f = write("y1,x1\n2,0.5\n");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::DenseCsv),
            Err(Error::Parse { line: 2, .. })
        ));
        let f = write("y1,x1\n1,0.5,3\n");
        assert!(load_dataset(f.path(), DataFormat::DenseCsv).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..6, 1usize..5, 1usize..4).prop_flat_map(|(n, d, c)| {
            (
                proptest::collection::vec(
                    prop_oneof![Just(0.0), -1e6f64..1e6, Just(-0.0), Just(1e-300)],
                    n * d,
                ),
                proptest::collection::vec(prop_oneof![Just(1.0), Just(-1.0)], n * c),
            )
                .prop_map(move |(xs, ys)| {
                    Dataset::from_matrices(
                        Matrix::from_row_slice(n, d, &xs),
                        Matrix::from_row_slice(n, c, &ys),
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(ds in arb_dataset()) {
            for format in [DataFormat::Sparse, DataFormat::DenseCsv] {
                let f = tempfile::NamedTempFile::new().unwrap();
                save_dataset(&ds, f.path(), format).unwrap();
                let back = load_dataset(f.path(), format).unwrap();
                prop_assert_eq!(back.labels(), ds.labels());
                let same_bits = back
                    .features()
                    .iter()
                    .zip(ds.features().iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same_bits);
            }
        }

        #[test]
        fn mask_is_idempotent_and_linear(
            n in 1usize..6, c in 1usize..6, rho in 0.0f64..=1.0, seed in any::<u64>(),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let mask = generate_mask(n, c, rho, seed).unwrap();
            prop_assert_eq!(mask.len(), (rho * (n * c) as f64).round() as usize);
            let mut rng = seed::rng(seed);
            let y = Matrix::from_fn(n, c, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let once = apply_mask(&y, &mask).unwrap();
            let twice = apply_mask(once.values(), &mask).unwrap();
            prop_assert_eq!(&once, &twice);

            let m = Matrix::from_fn(n, c, |_, _| rng.random::<f64>() - 0.5);
            let k = Matrix::from_fn(n, c, |_, _| rng.random::<f64>() - 0.5);
            let lhs = mask_matrix(&(&m * a + &k * b), &mask).unwrap();
            let rhs = mask_matrix(&m, &mask).unwrap() * a + mask_matrix(&k, &mask).unwrap() * b;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn split_is_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            if let Ok(s) = split_indices(n, frac, seed) {
                let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(s.train_indices.len(), (frac * n as f64).round() as usize);
            }
        }
    }
}
