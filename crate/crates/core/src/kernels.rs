//! Linear and Gaussian kernels.
//!
//! The Gaussian kernel is `κ(x, x′) = exp(−‖x − x′‖² / (2σ²))`. Label-group
//! blocks `K_k` are row selections of the full Gram matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            KernelSpec::Gaussian { sigma } => {
                Err(Error::param("sigma", format!("{sigma} must be positive")))
            }
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Gaussian { sigma } => Some(sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Matrix,
    pub spec: KernelSpec,
}

fn check_finite(x: &Matrix, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn squared_norms(x: &Matrix) -> Vec<f64> {
    x.row_iter().map(|r| r.norm_squared()).collect()
}

pub fn gram_matrix(x: &Matrix, spec: KernelSpec) -> Result<GramMatrix> {
    if x.nrows() == 0 {
        return Err(Error::dims("gram_matrix", "n >= 1", 0));
    }
    spec.validate()?;
    check_finite(x, "kernel features")?;
    let values = match spec {
        KernelSpec::Linear => {
            let k = x * x.transpose();
            // exact symmetry regardless of BLAS-style blocking
            Matrix::from_fn(k.nrows(), k.ncols(), |i, j| {
                if i <= j {
                    k[(i, j)]
                } else {
                    k[(j, i)]
                }
            })
        }
        KernelSpec::Gaussian { sigma } => {
            let n = x.nrows();
            let mut k = Matrix::from_element(n, n, 1.0);
            let denom = 2.0 * sigma * sigma;
            for i in 0..n {
                for j in (i + 1)..n {
                    let d2 = (x.row(i) - x.row(j)).norm_squared();
                    let v = (-d2 / denom).exp();
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            k
        }
    };
    Ok(GramMatrix { values, spec })
}

/// `κ(x_test_i, x_train_j)` for every pair.
pub fn cross_kernel(x_test: &Matrix, x_train: &Matrix, spec: KernelSpec) -> Result<Matrix> {
    if x_test.ncols() != x_train.ncols() {
        return Err(Error::dims("cross_kernel", x_train.ncols(), x_test.ncols()));
    }
    spec.validate()?;
    check_finite(x_test, "kernel test features")?;
    check_finite(x_train, "kernel training features")?;
    Ok(match spec {
        KernelSpec::Linear => x_test * x_train.transpose(),
        KernelSpec::Gaussian { sigma } => {
            let denom = 2.0 * sigma * sigma;
            let test_sq = squared_norms(x_test);
            let train_sq = squared_norms(x_train);
            let inner = x_test * x_train.transpose();
            Matrix::from_fn(x_test.nrows(), x_train.nrows(), |i, j| {
                let d2 = (test_sq[i] + train_sq[j] - 2.0 * inner[(i, j)]).max(0.0);
                // the expansion above loses exactness for identical points
                let d2 = if d2 < 1e-12 * (test_sq[i] + train_sq[j]) {
                    (x_test.row(i) - x_train.row(j)).norm_squared()
                } else {
                    d2
                };
                (-d2 / denom).exp()
            })
        }
    })
}

/// Row submatrix `M[group, :]` in the given order.
pub fn group_rows(m: &Matrix, group: &[usize]) -> Result<Matrix> {
    if let Some(&bad) = group.iter().find(|&&i| i >= m.nrows()) {
        return Err(Error::dims(
            "group_rows",
            format!("index < {}", m.nrows()),
            bad,
        ));
    }
    Ok(m.select_rows(group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::seed::rng(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn linear_identity() {
        let k = gram_matrix(&Matrix::identity(2, 2), KernelSpec::Linear).unwrap();
        assert_eq!(k.values, Matrix::identity(2, 2));
    }

    #[test]
    fn gaussian_diagonal_and_value() {
        let x = random(7, 3, 1);
        let k = gram_matrix(&x, KernelSpec::gaussian(0.8).unwrap()).unwrap();
        assert!(k.values.diagonal().iter().all(|&v| v == 1.0));
        assert!(k.values.iter().all(|&v| v > 0.0 && v <= 1.0));

        let x = dmatrix![0.0, 0.0; 2.0, 0.0];
        let k = gram_matrix(&x, KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert!((k.values[(0, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((k.values[(0, 1)] - 0.13534).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        let x = dmatrix![f64::NAN, 1.0];
        assert!(matches!(
            gram_matrix(&x, KernelSpec::Linear),
            Err(Error::NonFinite(_))
        ));
        assert!(cross_kernel(&random(2, 3, 1), &random(2, 4, 1), KernelSpec::Linear).is_err());
        assert!(group_rows(&random(2, 2, 1), &[2]).is_err());
    }

    #[test]
    fn cross_kernel_consistency() {
        let x = random(6, 4, 2);
        for spec in [KernelSpec::Linear, KernelSpec::Gaussian { sigma: 1.5 }] {
            let k = gram_matrix(&x, spec).unwrap();
            let cross = cross_kernel(&x, &x, spec).unwrap();
            assert!((&k.values - &cross).amax() < 1e-12);
        }
        let xt = random(3, 4, 3);
        let lin = cross_kernel(&xt, &x, KernelSpec::Linear).unwrap();
        assert_eq!(lin, &xt * x.transpose());

        let probe = x.rows(4, 1).into_owned();
        let row = cross_kernel(&probe, &x, KernelSpec::Gaussian { sigma: 0.5 }).unwrap();
        assert_eq!(row[(0, 4)], 1.0);
    }

    #[test]
    fn group_rows_examples() {
        let m = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        assert_eq!(group_rows(&m, &[0, 1, 2]).unwrap(), m);
        assert_eq!(group_rows(&m, &[]).unwrap().shape(), (0, 2));
        assert_eq!(group_rows(&m, &[2, 0]).unwrap(), dmatrix![5.0, 6.0; 1.0, 2.0]);
    }

    #[test]
    fn gram_properties() {
        for seed in 0..20 {
            let x = random(9, 3, seed);
            for spec in [KernelSpec::Linear, KernelSpec::Gaussian { sigma: 1.0 }] {
                let k = gram_matrix(&x, spec).unwrap().values;
                assert!((&k - k.transpose()).amax() < 1e-10);
                let eig = k.clone().symmetric_eigen().eigenvalues;
                assert!(eig.min() >= -1e-8 * eig.max());

                let g = [5usize, 1, 7];
                let lhs = group_rows(&k, &g).unwrap();
                let rhs = cross_kernel(&x.select_rows(&g), &x, spec).unwrap();
                assert!((lhs - rhs).amax() < 1e-12);
            }
            let shift = nalgebra::RowDVector::from_vec(vec![3.0, -1.0, 0.5]);
            let moved = Matrix::from_fn(9, 3, |i, j| x[(i, j)] + shift[j]);
            let spec = KernelSpec::Gaussian { sigma: 0.7 };
            let a = gram_matrix(&x, spec).unwrap().values;
            let b = gram_matrix(&moved, spec).unwrap().values;
            assert!((a - b).amax() < 1e-12);
        }
    }
}
