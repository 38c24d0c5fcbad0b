//! Singular value decomposition for the small and tall-skinny matrices that
//! show up as update histories.
//!
//! Tall inputs are first reduced with a row-sorted, column-pivoted Householder
//! QR, and the triangular factor is diagonalized with one-sided (Hestenes)
//! Jacobi applied to `Rᵀ`. Wide inputs go straight to Jacobi on the
//! transpose. Both paths keep relative accuracy on row-graded matrices, which
//! matters because gradient histories under oscillating dynamics have
//! per-direction magnitudes spanning many orders of magnitude.

use super::matrix::{canonicalize_sign, dot, norm, DenseMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Full thin factorization `M = U diag(s) Vᵀ` with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × r`, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `cols × r`. Columns paired with zero singular values are zero.
    pub v: DenseMatrix,
}

/// Leading `k` left singular vectors and values.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub left: DenseMatrix,
    pub values: Vec<f64>,
}

/// Leading `k` left singular vectors of `m` with their singular values.
///
/// Each returned vector is sign-canonicalized (largest-magnitude entry positive).
pub fn thin_svd(m: &DenseMatrix, k: usize) -> Result<ThinSvd> {
    let r = m.rows().min(m.cols());
    if k == 0 || k > r {
        return Err(Error::Dimension(format!(
            "k = {k} outside [1, {r}] for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let full = svd(m)?;
    Ok(ThinSvd {
        left: full.u.leading_columns(k),
        values: full.s[..k].to_vec(),
    })
}

/// Thin SVD of an arbitrary finite matrix.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    if m.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("non-finite entry in SVD input".into()));
    }
    let (p, l) = (m.rows(), m.cols());
    if p == 0 || l == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let mut out = if p >= l { svd_tall(m) } else { svd_wide(m) };
    for j in 0..out.s.len() {
        let mut u = out.u.column(j);
        let before = u.clone();
        canonicalize_sign(&mut u);
        if u != before {
            out.u.set_column(j, &u);
            let v: Vec<f64> = out.v.column(j).iter().map(|x| -x).collect();
            out.v.set_column(j, &v);
        }
    }
    Ok(out)
}

/// `p < l`: Jacobi on `Mᵀ` directly; the rotations give the left vectors.
fn svd_wide(m: &DenseMatrix) -> Svd {
    let (p, l) = (m.rows(), m.cols());
    // Columns of Mᵀ are the rows of M.
    let mut cols: Vec<Vec<f64>> = (0..p).map(|i| m.row(i).to_vec()).collect();
    let rot = jacobi(&mut cols);
    let (s, order) = sorted_norms(&cols);
    let mut u = DenseMatrix::zeros(p, p);
    let mut v = DenseMatrix::zeros(l, p);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &rot[src]);
        v.set_column(dst, &normalized_or_zero(&cols[src], s[dst]));
    }
    Svd { u, s, v }
}

/// `p ≥ l`: pivoted QR, then Jacobi on `Rᵀ`.
fn svd_tall(m: &DenseMatrix) -> Svd {
    let (p, l) = (m.rows(), m.cols());
    let qr = pivoted_qr(m);

    // Columns of Rᵀ are the rows of R.
    let mut cols: Vec<Vec<f64>> = (0..l).map(|i| qr.r.row(i).to_vec()).collect();
    let rot = jacobi(&mut cols);
    let (s, order) = sorted_norms(&cols);

    let mut u = DenseMatrix::zeros(p, l);
    let mut v = DenseMatrix::zeros(l, l);
    for (dst, &src) in order.iter().enumerate() {
        let left = qr.q.matvec(&rot[src]).expect("shapes agree");
        u.set_column(dst, &left);
        let w = normalized_or_zero(&cols[src], s[dst]);
        let mut right = vec![0.0; l];
        for (j, &c) in qr.col_perm.iter().enumerate() {
            right[c] = w[j];
        }
        v.set_column(dst, &right);
    }
    Svd { u, s, v }
}

fn normalized_or_zero(x: &[f64], s: f64) -> Vec<f64> {
    if s > 0.0 {
        x.iter().map(|v| v / s).collect()
    } else {
        vec![0.0; x.len()]
    }
}

fn sorted_norms(cols: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..cols.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    (order.iter().map(|&i| norms[i]).collect(), order)
}

/// One-sided Jacobi: rotates the columns in place until they are mutually
/// orthogonal and returns the accumulated rotation as a list of columns.
fn jacobi(cols: &mut [Vec<f64>]) -> Vec<Vec<f64>> {
    let m = cols.len();
    let n = cols.first().map_or(0, Vec::len);
    let mut rot: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (n.max(1) as f64);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..m {
            for j in i + 1..m {
                let a = dot(&cols[i], &cols[i]);
                let b = dot(&cols[j], &cols[j]);
                if a == 0.0 || b == 0.0 {
                    continue;
                }
                let c = dot(&cols[i], &cols[j]);
                if c.abs() <= tol * a.sqrt() * b.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(cols, i, j, cs, sn);
                rotate_pair(&mut rot, i, j, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    rot
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, cs: f64, sn: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = cs * xi - sn * yj;
        *y = sn * xi + cs * yj;
    }
}

struct PivotedQr {
    /// `p × l`, orthonormal columns, rows in the original order.
    q: DenseMatrix,
    /// `l × l` upper triangular.
    r: DenseMatrix,
    /// Column `j` of `Q R` is column `col_perm[j]` of the input.
    col_perm: Vec<usize>,
}

/// Householder QR with column pivoting, applied after sorting rows by
/// decreasing max-norm (row-wise backward stable for graded rows).
fn pivoted_qr(m: &DenseMatrix) -> PivotedQr {
    let (p, l) = (m.rows(), m.cols());
    let row_norm = |i: usize| m.row(i).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut row_perm: Vec<usize> = (0..p).collect();
    row_perm.sort_by(|&a, &b| row_norm(b).total_cmp(&row_norm(a)).then(a.cmp(&b)));

    // Work column-major: a[j] is column j restricted to sorted rows.
    let mut a: Vec<Vec<f64>> = (0..l)
        .map(|j| row_perm.iter().map(|&i| m.get(i, j)).collect())
        .collect();
    let mut col_perm: Vec<usize> = (0..l).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(l);

    for j in 0..l {
        let pivot = (j..l)
            .max_by(|&x, &y| {
                norm(&a[x][j..])
                    .total_cmp(&norm(&a[y][j..]))
                    .then(y.cmp(&x))
            })
            .unwrap_or(j);
        a.swap(j, pivot);
        col_perm.swap(j, pivot);

        let x = &a[j][j..];
        let xnorm = norm(x);
        let mut v = x.to_vec();
        if xnorm > 0.0 {
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            v[0] -= alpha;
            let vnorm = norm(&v);
            if vnorm > 0.0 {
                v.iter_mut().for_each(|e| *e /= vnorm);
            } else {
                v.iter_mut().for_each(|e| *e = 0.0);
            }
        } else {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
        for col in a.iter_mut().skip(j) {
            apply_reflector(&v, &mut col[j..]);
        }
        reflectors.push(v);
    }

    let mut r = DenseMatrix::zeros(l, l);
    for (jc, col) in a.iter().enumerate() {
        for i in 0..=jc {
            r.set(i, jc, col[i]);
        }
    }

    // Q = H_0 H_1 ... H_{l-1} applied to the first l unit vectors.
    let mut q_sorted: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, v) in reflectors.iter().enumerate().rev() {
        for col in q_sorted.iter_mut() {
            apply_reflector(v, &mut col[j..]);
        }
    }
    let mut q = DenseMatrix::zeros(p, l);
    for (jc, col) in q_sorted.iter().enumerate() {
        for (sorted_i, &orig_i) in row_perm.iter().enumerate() {
            q.set(orig_i, jc, col[sorted_i]);
        }
    }
    PivotedQr { q, r, col_perm }
}

/// `x ← (I − 2vvᵀ) x` for unit `v` (or no-op when `v` is zero).
fn apply_reflector(v: &[f64], x: &mut [f64]) {
    let d = 2.0 * dot(v, x);
    if d != 0.0 {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= d * vi;
        }
    }
}

/// Orthonormal basis spanning the columns of a full-column-rank matrix.
/// Column order follows the pivoting, not the input.
pub fn orthonormal_basis(m: &DenseMatrix) -> Result<DenseMatrix> {
    if m.rows() < m.cols() {
        return Err(Error::Dimension("more columns than rows".into()));
    }
    Ok(pivoted_qr(m).q)
}
