//! Trained models and the binary model file.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "DM2L"
//! version    u32      1
//! variant    u8       0 = linear, 1 = kernel
//! kernel     u8       0 = linear, 1 = gaussian
//! sigma      f64      0 for the linear kernel
//! lambda     f64
//! digest     u64      solver configuration digest
//! objective  f64      final training objective
//! d          u64      followed by d f64 means and d f64 standard deviations
//! matrices   linear: W; kernel: A then X_train
//!            each as rows u64, cols u64, rows·cols f64 in row-major order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::FeatureScaler;
use crate::error::{Error, Result};
use crate::kernels::{cross_kernel, KernelSpec};
use crate::Matrix;

pub const MAGIC: &[u8; 4] = b"DM2L";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Linear {
        weights: Matrix,
    },
    Kernel {
        coefficients: Matrix,
        /// Normalized training features.
        train_features: Matrix,
        kernel: KernelSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMetadata {
    pub lambda: f64,
    pub config_digest: u64,
    pub training_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    params: ModelParams,
    scaler: FeatureScaler,
    metadata: ModelMetadata,
}

impl TrainedModel {
    pub fn linear(weights: Matrix, scaler: FeatureScaler, metadata: ModelMetadata) -> Result<Self> {
        if weights.nrows() != scaler.dim() {
            return Err(Error::dims("linear model weights rows", scaler.dim(), weights.nrows()));
        }
        Ok(Self {
            params: ModelParams::Linear { weights },
            scaler,
            metadata,
        })
    }

    pub fn kernel(
        coefficients: Matrix,
        train_features: Matrix,
        kernel: KernelSpec,
        scaler: FeatureScaler,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        kernel.validate()?;
        if coefficients.nrows() != train_features.nrows() {
            return Err(Error::dims(
                "kernel model coefficient rows",
                train_features.nrows(),
                coefficients.nrows(),
            ));
        }
        if train_features.ncols() != scaler.dim() {
            return Err(Error::dims(
                "kernel model feature dimension",
                scaler.dim(),
                train_features.ncols(),
            ));
        }
        Ok(Self {
            params: ModelParams::Kernel {
                coefficients,
                train_features,
                kernel,
            },
            scaler,
            metadata,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn feature_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn label_count(&self) -> usize {
        match &self.params {
            ModelParams::Linear { weights } => weights.ncols(),
            ModelParams::Kernel { coefficients, .. } => coefficients.ncols(),
        }
    }

    /// Scores for raw (unnormalized) features.
    pub fn predict_scores(&self, x_test: &Matrix) -> Result<Matrix> {
        let x = self.scaler.transform(x_test)?;
        self.predict_normalized(&x)
    }

    /// Scores for features already in the model's normalized space.
    pub fn predict_normalized(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.feature_dim() {
            return Err(Error::dims("prediction features", self.feature_dim(), x.ncols()));
        }
        match &self.params {
            ModelParams::Linear { weights } => Ok(x * weights),
            ModelParams::Kernel {
                coefficients,
                train_features,
                kernel,
            } => Ok(cross_kernel(x, train_features, *kernel)? * coefficients),
        }
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    put_u64(w, m.nrows() as u64)?;
    put_u64(w, m.ncols() as u64)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            put_f64(w, m[(i, j)])?;
        }
    }
    Ok(())
}

pub fn write_model(model: &TrainedModel, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let (variant, kernel_tag, sigma) = match &model.params {
        ModelParams::Linear { .. } => (0u8, 0u8, 0.0),
        ModelParams::Kernel { kernel, .. } => match kernel {
            KernelSpec::Linear => (1, 0, 0.0),
            KernelSpec::Gaussian { sigma } => (1, 1, *sigma),
        },
    };
    w.write_all(&[variant, kernel_tag])?;
    put_f64(&mut w, sigma)?;
    put_f64(&mut w, model.metadata.lambda)?;
    put_u64(&mut w, model.metadata.config_digest)?;
    put_f64(&mut w, model.metadata.training_objective)?;
    put_u64(&mut w, model.scaler.dim() as u64)?;
    for &m in &model.scaler.mean {
        put_f64(&mut w, m)?;
    }
    for &s in &model.scaler.std {
        put_f64(&mut w, s)?;
    }
    match &model.params {
        ModelParams::Linear { weights } => put_matrix(&mut w, weights)?,
        ModelParams::Kernel {
            coefficients,
            train_features,
            ..
        } => {
            put_matrix(&mut w, coefficients)?;
            put_matrix(&mut w, train_features)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::ModelFormat(format!("truncated file while reading {what}"))
            }
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>(what)?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        // guards against allocating from a corrupt header
        if v > (1 << 32) {
            return Err(Error::ModelFormat(format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }

    fn matrix(&mut self, what: &str) -> Result<Matrix> {
        let rows = self.len(what)?;
        let cols = self.len(what)?;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= 1 << 31)
            .ok_or_else(|| Error::ModelFormat(format!("implausible {what} shape")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(self.f64(what)?);
        }
        Ok(Matrix::from_row_slice(rows, cols, &data))
    }
}

pub fn read_model(r: impl Read) -> Result<TrainedModel> {
    let mut r = Reader { inner: r };
    let magic = r.bytes::<4>("magic")?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(r.bytes::<4>("version")?);
    if version != FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let [variant, kernel_tag] = r.bytes::<2>("variant")?;
    let sigma = r.f64("sigma")?;
    let metadata = ModelMetadata {
        lambda: r.f64("lambda")?,
        config_digest: r.u64("digest")?,
        training_objective: r.f64("objective")?,
    };
    let d = r.len("feature dimension")?;
    let mean = (0..d).map(|_| r.f64("means")).collect::<Result<Vec<_>>>()?;
    let std = (0..d).map(|_| r.f64("stds")).collect::<Result<Vec<_>>>()?;
    let scaler = FeatureScaler { mean, std };
    let model = match variant {
        0 => TrainedModel::linear(r.matrix("weights")?, scaler, metadata)?,
        1 => {
            let kernel = match kernel_tag {
                0 => KernelSpec::Linear,
                1 => KernelSpec::Gaussian { sigma },
                t => return Err(Error::ModelFormat(format!("unknown kernel tag {t}"))),
            };
            let coefficients = r.matrix("coefficients")?;
            let train = r.matrix("training features")?;
            TrainedModel::kernel(coefficients, train, kernel, scaler, metadata)?
        }
        t => return Err(Error::ModelFormat(format!("unknown variant tag {t}"))),
    };
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::ModelFormat("trailing bytes after model".into()));
    }
    Ok(model)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    read_model(BufReader::new(File::open(path)?))
}
