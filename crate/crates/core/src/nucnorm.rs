//! Nuclear norm and a thresholded-SVD subgradient.
//!
//! With the thin SVD `M = U Σ Vᵀ` and `s = #{σ_i > δ}`, the subgradient is
//! `G = U[:, :s] V[:, :s]ᵀ`. Its spectral norm is at most one and
//! `⟨G, M⟩ = Σ_{σ_i > δ} σ_i`. The product is invariant to the sign
//! ambiguity of singular vector pairs.

use crate::error::{Error, Result};
use crate::Matrix;

/// Threshold used when none is configured.
pub const DEFAULT_DELTA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientResult {
    pub gradient: Matrix,
    /// Number of singular values strictly above the threshold.
    pub retained: usize,
    pub threshold: f64,
    /// `‖M‖_*`, computed from the same decomposition.
    pub norm: f64,
    /// `Σ_{σ_i > δ} σ_i`.
    pub retained_norm: f64,
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("nuclear norm input".into()))
    }
}

const MAX_SWEEPS: usize = 80;

/// Singular values with the matching right singular vectors. Vectors are
/// only formed for values above the requested floor.
struct ThinSvd {
    values: Vec<f64>,
    /// `(index into values, unit vector)`
    vectors: Vec<(usize, Vec<f64>)>,
}

/// Four independent partial sums so the loop vectorizes.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Householder QR with column pivoting on a column-major `m × n` buffer,
/// `m ≥ n`. Returns `R` (row-major `n × n`, i.e. the buffer of `Rᵀ` in
/// column-major order) and the pivot order: column `k` of `AΠ` is `perm[k]`.
fn pivoted_r(a: &mut [f64], m: usize, n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    let col_sq = |a: &[f64], j: usize, k: usize| {
        let col = &a[j * m + k..(j + 1) * m];
        dot(col, col)
    };
    // trailing column norms², downdated after each step
    let mut norms: Vec<f64> = (0..n).map(|j| col_sq(a, j, 0)).collect();
    let mut fresh = norms.clone();
    for k in 0..n {
        let pivot = (k..n).max_by(|&i, &j| norms[i].total_cmp(&norms[j])).unwrap_or(k);
        if pivot != k {
            for i in 0..m {
                a.swap(k * m + i, pivot * m + i);
            }
            perm.swap(k, pivot);
            norms.swap(k, pivot);
            fresh.swap(k, pivot);
        }
        let x = &a[k * m + k..(k + 1) * m];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        for j in k + 1..n {
            let col = &mut a[j * m + k..(j + 1) * m];
            let f = 2.0 * dot(&v, col) / vv;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        a[k * m + k] = alpha;
        for i in k + 1..m {
            a[k * m + i] = 0.0;
        }
        for j in k + 1..n {
            norms[j] -= a[j * m + k].powi(2);
            // cancellation has eaten the downdated value
            if norms[j] <= 1e-4 * fresh[j] {
                norms[j] = col_sq(a, j, k + 1);
                fresh[j] = norms[j];
            }
        }
    }
    let mut rt = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..=j.min(m - 1) {
            rt[i * n + j] = a[j * m + i];
        }
    }
    (rt, perm)
}

/// One-sided Jacobi on `Rᵀ` from a pivoted QR of `tall`. With `AΠ = QR` and
/// `RᵀW = UΣ`, the right singular vectors of `A` are `ΠU`, so no rotations
/// need accumulating. The pivoting leaves `Rᵀ` nearly column-orthogonal and
/// Jacobi keeps small singular values accurate, which matters because the
/// label-group blocks are routinely rank-deficient.
fn thin_svd(tall: &Matrix, vector_floor: Option<f64>) -> Result<ThinSvd> {
    let (m, n) = tall.shape();
    debug_assert!(m >= n);
    let mut buf = tall.as_slice().to_vec();
    let (mut b, perm) = pivoted_r(&mut buf, m, n);
    let tol = (n as f64).sqrt() * f64::EPSILON;
    // columns below this are rounding noise and never rotate cleanly
    let negligible = (f64::EPSILON * dot(&b, &b).sqrt()).powi(2);
    let mut sq = vec![0.0; n];
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        // refreshed each sweep; updated in closed form within it
        for (j, s) in sq.iter_mut().enumerate() {
            let col = &b[j * n..(j + 1) * n];
            *s = dot(col, col);
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for r in p + 1..n {
                let (alpha, beta) = (sq[p], sq[r]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&b[p * n..(p + 1) * n], &b[r * n..(r + 1) * n]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                rotate_columns(&mut b, n, p, r, c, c * t);
                sq[p] = alpha - t * gamma;
                sq[r] = beta + t * gamma;
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Svd);
    }
    let values: Vec<f64> = (0..n).map(|j| dot(&b[j * n..(j + 1) * n], &b[j * n..(j + 1) * n]).sqrt()).collect();
    let vectors = match vector_floor {
        None => Vec::new(),
        Some(floor) => (0..n)
            .filter(|&j| values[j] > floor)
            .map(|j| {
                let mut v = vec![0.0; n];
                for (k, &row) in perm.iter().enumerate() {
                    v[row] = b[j * n + k] / values[j];
                }
                (j, v)
            })
            .collect(),
    };
    Ok(ThinSvd { values, vectors })
}

/// `[x_p, x_r] ← [c·x_p − s·x_r, s·x_p + c·x_r]` on a column-major buffer.
fn rotate_columns(data: &mut [f64], rows: usize, p: usize, r: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(r * rows);
    let xp = &mut head[p * rows..(p + 1) * rows];
    let xr = &mut tail[..rows];
    for (x, y) in xp.iter_mut().zip(xr.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn as_tall(m: &Matrix) -> (bool, Matrix) {
    if m.nrows() >= m.ncols() {
        (false, m.clone())
    } else {
        (true, m.transpose())
    }
}

fn descending_sum(values: &[f64], keep: impl Fn(f64) -> bool) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|&s| keep(s)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().sum()
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let (_, tall) = as_tall(m);
    let mut sv = thin_svd(&tall, None)?.values;
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    // same summation order as the subgradient's `norm`
    Ok(singular_values(m)?.iter().sum())
}

pub fn nuclear_norm_subgradient(m: &Matrix, delta: f64) -> Result<SubgradientResult> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("{delta} must be positive")));
    }
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return Ok(SubgradientResult {
            gradient: Matrix::zeros(rows, cols),
            retained: 0,
            threshold: delta,
            norm: 0.0,
            retained_norm: 0.0,
        });
    }
    let (transposed, tall) = as_tall(m);
    let svd = thin_svd(&tall, Some(delta))?;
    let norm = descending_sum(&svd.values, |_| true);
    let retained_norm = descending_sum(&svd.values, |s| s > delta);

    // U₁V₁ᵀ = M V₁ Σ₁⁻¹ V₁ᵀ; retained σ exceed δ so the scaling is safe
    let n = tall.ncols();
    let mut core = Matrix::zeros(n, n);
    for (j, v) in &svd.vectors {
        let v = nalgebra::DVector::from_column_slice(v);
        core.ger(1.0 / svd.values[*j], &v, &v, 1.0);
    }
    let g = if svd.vectors.is_empty() {
        Matrix::zeros(tall.nrows(), n)
    } else {
        &tall * core
    };
    Ok(SubgradientResult {
        gradient: if transposed { g.transpose() } else { g },
        retained: svd.vectors.len(),
        threshold: delta,
        norm,
        retained_norm,
    })
}
