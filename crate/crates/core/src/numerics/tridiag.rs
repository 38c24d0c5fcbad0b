use super::matrix::{canonicalize_columns, DenseMatrix};
use crate::error::{Error, Result};

const MAX_QL_ITERS: usize = 60;

/// Symmetric tridiagonal matrix as produced by Lanczos: `diagonal[i]` are the
/// `α` coefficients, `offdiagonal[i]` the `β` residual norms.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSpectrum {
    diagonal: Vec<f64>,
    offdiagonal: Vec<f64>,
}

impl TridiagonalSpectrum {
    pub fn new(diagonal: Vec<f64>, offdiagonal: Vec<f64>) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::Dimension("empty diagonal".into()));
        }
        if offdiagonal.len() + 1 != diagonal.len() {
            return Err(Error::Dimension(format!(
                "{} off-diagonal entries for a diagonal of length {}",
                offdiagonal.len(),
                diagonal.len()
            )));
        }
        if offdiagonal.iter().any(|&b| b < 0.0) {
            return Err(Error::Validation("negative off-diagonal entry".into()));
        }
        if diagonal.iter().chain(&offdiagonal).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite tridiagonal entry".into()));
        }
        Ok(Self {
            diagonal,
            offdiagonal,
        })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn offdiagonal(&self) -> &[f64] {
        &self.offdiagonal
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.len();
        let mut m = DenseMatrix::from_diagonal(&self.diagonal);
        for (i, &b) in self.offdiagonal.iter().enumerate() {
            m.set(i, i + 1, b);
            m.set(i + 1, i, b);
        }
        debug_assert_eq!(m.rows(), n);
        m
    }
}

#[derive(Debug, Clone)]
pub struct TridiagEigen {
    /// Nonincreasing.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DenseMatrix,
}

/// Eigendecomposition of a symmetric tridiagonal matrix by implicit-shift QL.
pub fn tridiag_eigh(t: &TridiagonalSpectrum) -> Result<TridiagEigen> {
    let n = t.len();
    if n == 0 {
        return Err(Error::Dimension("empty diagonal".into()));
    }
    let mut d = t.diagonal.clone();
    let mut e = t.offdiagonal.clone();
    e.push(0.0);
    // z[k][i]: component k of eigenvector i.
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut row = vec![0.0; n];
            row[k] = 1.0;
            row
        })
        .collect();

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERS {
                return Err(Error::Validation(
                    "tridiagonal QL iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for (k, row) in z.iter().enumerate() {
            vectors.set(k, dst, row[src]);
        }
    }
    canonicalize_columns(&mut vectors);
    Ok(TridiagEigen { values, vectors })
}
