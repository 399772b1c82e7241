//! Small dense linear-algebra helpers on top of nalgebra.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::numerics::Tensor;

/// Ridge weight used for every least-squares abundance solve.
pub const RIDGE_LAMBDA: f64 = 1e-6;

static RANK_WARNED: AtomicBool = AtomicBool::new(false);

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data)
}

/// `(MᵀM + λI)⁻¹ Mᵀ y` for an `L×P` matrix `M`.
///
/// Returns the solution and whether `M` looked rank deficient (smallest
/// Cholesky pivot of `MᵀM` below `1e-10` of its largest diagonal entry). A warning is
/// logged the first time a rank-deficient matrix is seen.
pub fn ridge_lstsq(m: &Tensor, y: &[f64], lambda: f64) -> (Vec<f64>, bool) {
    let (l, p) = (m.rows(), m.cols());
    assert_eq!(l, y.len(), "ridge_lstsq: M has {l} rows but y has {}", y.len());
    let md = m.data();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for r in 0..l {
        let row = &md[r * p..(r + 1) * p];
        for i in 0..p {
            rhs[i] += row[i] * y[r];
            for j in i..p {
                gram[i * p + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    let max_diag = (0..p).map(|i| gram[i * p + i]).fold(0.0, f64::max);
    let (_, min_pivot) = cholesky_solve(&mut gram.clone(), &rhs, p);
    let deficient = !(min_pivot > 1e-10 * max_diag.max(f64::MIN_POSITIVE));
    for i in 0..p {
        gram[i * p + i] += lambda;
    }
    let (x, _) = cholesky_solve(&mut gram, &rhs, p);
    if deficient && !RANK_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("rank-deficient endmember matrix; falling back on ridge solution (lambda={lambda})");
    }
    (x, deficient)
}

/// In-place Cholesky solve of a small SPD system. Returns the solution and
/// the smallest squared pivot.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        min_pivot = min_pivot.min(d);
        let d = d.max(1e-300).sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i * n + k] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k * n + i] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    (z, min_pivot)
}

/// Moore–Penrose pseudoinverse via SVD.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .pseudo_inverse(1e-12)
        .expect("pseudo_inverse with non-negative epsilon")
}

/// Symmetric eigendecomposition sorted by decreasing eigenvalue.
pub fn sorted_eigh(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap());
    let vals = DVector::from_iterator(n, idx.iter().map(|i| eig.eigenvalues[*i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(*i));
    }
    (vals, vecs)
}
