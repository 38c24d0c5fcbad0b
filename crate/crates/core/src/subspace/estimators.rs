use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::history::UpdateHistory;
use super::partition::{BlockPartition, Role};
use super::projector::Projector;
use crate::error::{Error, Result};
use crate::numerics::{
    all_finite, canonicalize_columns, dot, norm, thin_svd, tridiag_eigh, DenseMatrix,
    TridiagonalSpectrum,
};
use crate::problems::HvpOracle;

/// Residual norm below which Lanczos declares an invariant subspace.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// Extra Lanczos iterations beyond `k`.
pub const LANCZOS_EXTRA_ITERS: usize = 20;

#[derive(Debug, Clone)]
pub struct LanczosEstimate {
    /// Top Ritz values, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Matching Ritz vectors as orthonormal columns.
    pub basis: DenseMatrix,
    /// The Krylov space became invariant before `iters` iterations.
    pub breakdown: bool,
    /// Lanczos steps actually taken.
    pub iterations: usize,
}

/// Top-`k` Ritz pairs of `H(θ)` from `iters` Lanczos steps with full
/// reorthogonalization, started from a seeded random unit vector.
pub fn lpe_estimate(
    oracle: &dyn HvpOracle,
    theta: &[f64],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<LanczosEstimate> {
    let p = oracle.dim();
    if k == 0 || iters < k {
        return Err(Error::Validation(format!(
            "need 1 <= k <= iters (k {k}, iters {iters})"
        )));
    }
    if theta.len() != p {
        return Err(Error::Dimension(format!(
            "parameters of length {}, oracle dimension {p}",
            theta.len()
        )));
    }
    let iters = iters.min(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let n0 = norm(&q);
    q.iter_mut().for_each(|x| *x /= n0);

    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut alphas = Vec::with_capacity(iters);
    let mut betas: Vec<f64> = Vec::with_capacity(iters);
    let mut breakdown = false;
    for j in 0..iters {
        let mut w = oracle.hvp_at(theta, &q)?;
        if !all_finite(&w) {
            return Err(Error::Poisoned(format!(
                "Hessian-vector product returned non-finite values at iteration {j}"
            )));
        }
        let a = dot(&q, &w);
        alphas.push(a);
        qs.push(q);
        for (x, qi) in w.iter_mut().zip(&qs[j]) {
            *x -= a * qi;
        }
        if j > 0 {
            let b = betas[j - 1];
            for (x, qi) in w.iter_mut().zip(&qs[j - 1]) {
                *x -= b * qi;
            }
        }
        for _ in 0..2 {
            for prev in &qs {
                let c = dot(prev, &w);
                for (x, pi) in w.iter_mut().zip(prev) {
                    *x -= c * pi;
                }
            }
        }
        let b = norm(&w);
        let scale = alphas
            .iter()
            .chain(&betas)
            .fold(1.0f64, |m, x| m.max(x.abs()));
        if b < BREAKDOWN_TOL * scale {
            breakdown = true;
            break;
        }
        if j + 1 == iters {
            break;
        }
        betas.push(b);
        q = w.into_iter().map(|x| x / b).collect();
    }

    let m = alphas.len();
    let tri = TridiagonalSpectrum::new(alphas, betas[..m - 1].to_vec())?;
    let eig = tridiag_eigh(&tri)?;
    let found = k.min(m);
    let mut basis = DenseMatrix::zeros(p, found);
    for c in 0..found {
        let mut col = vec![0.0; p];
        for (i, qi) in qs.iter().enumerate() {
            let s = eig.vectors.get(i, c);
            col.iter_mut().zip(qi).for_each(|(x, y)| *x += s * y);
        }
        basis.set_column(c, &col);
    }
    canonicalize_columns(&mut basis);
    Ok(LanczosEstimate {
        eigenvalues: eig.values[..found].to_vec(),
        basis,
        breakdown: breakdown || found < k,
        iterations: m,
    })
}

/// Leading `k` left singular vectors of block `b`'s history with every column
/// rescaled to unit norm. `k` is capped at the block size.
pub fn ppe_estimate(history: &UpdateHistory, b: usize, k: usize) -> Result<DenseMatrix> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let block_len = history
        .partition()
        .blocks()
        .get(b)
        .ok_or_else(|| Error::Validation(format!("no block {b}")))?
        .len();
    let k = k.min(block_len);
    let filled = history.filled();
    if filled < k || filled < 2 {
        return Err(Error::NotReady(format!(
            "history holds {filled} vectors, need max({k}, 2)"
        )));
    }
    let columns: Vec<Vec<f64>> = history
        .block_vectors(b)?
        .into_iter()
        .filter_map(|mut c| {
            let n = norm(&c);
            (n > 0.0).then(|| {
                c.iter_mut().for_each(|x| *x /= n);
                c
            })
        })
        .collect();
    if columns.len() < k.max(2) {
        return Err(Error::NotReady(format!(
            "only {} nonzero history vectors, need max({k}, 2)",
            columns.len()
        )));
    }
    Ok(thin_svd(&DenseMatrix::from_columns(&columns)?, k)?.left)
}

/// Per-block PPE assembled into a block-diagonal projector. Blocks with a
/// role in `exclude` or without enough history pass through unchanged.
pub fn bppe_estimate(
    history: &UpdateHistory,
    partition: &BlockPartition,
    k: usize,
    alpha: f64,
    gamma: f64,
    exclude: &[Role],
) -> Result<Projector> {
    if history.partition() != partition {
        return Err(Error::Validation(
            "history layout does not match the partition".into(),
        ));
    }
    let results: Vec<Result<(Option<DenseMatrix>, bool)>> = partition
        .blocks()
        .par_iter()
        .map(|block| {
            if exclude.contains(&block.role) {
                return Ok((None, true));
            }
            match ppe_estimate(history, block.id, k) {
                Ok(u) => Ok((Some(u), false)),
                Err(Error::NotReady(_)) => Ok((None, false)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut bases = Vec::with_capacity(results.len());
    let mut excluded = Vec::with_capacity(results.len());
    for r in results {
        let (u, ex) = r?;
        bases.push(u);
        excluded.push(ex);
    }
    Projector::new(partition.clone(), bases, alpha, gamma, excluded)
}

/// Population variance of the stored updates inside `span(U)` and in its
/// complement, each summed over directions (the trace of the covariance).
///
/// The dominant part uses the signed coordinates `Uᵀv_i`, so sign
/// oscillation along a direction registers as variance.
pub fn projection_variance(history: &UpdateHistory, u: &DenseMatrix) -> Result<(f64, f64)> {
    let vs = history.vectors();
    if vs.len() < 2 {
        return Err(Error::NotReady(format!(
            "variance needs two stored updates, have {}",
            vs.len()
        )));
    }
    if u.rows() != history.partition().dim() {
        return Err(Error::Dimension(format!(
            "basis with {} rows for {}-dimensional updates",
            u.rows(),
            history.partition().dim()
        )));
    }
    let n = vs.len() as f64;
    let mut coords = Vec::with_capacity(vs.len());
    let mut residuals = Vec::with_capacity(vs.len());
    for v in &vs {
        let c = u.t_matvec(v)?;
        let d = u.matvec(&c)?;
        residuals.push(v.iter().zip(&d).map(|(a, b)| a - b).collect::<Vec<f64>>());
        coords.push(c);
    }
    let trace_var = |rows: &[Vec<f64>]| -> f64 {
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
        }
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    };
    Ok((trace_var(&coords), trace_var(&residuals)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticProblem;

    #[test]
    fn lanczos_on_diagonal_quadratic() {
        let q = QuadraticProblem::new(vec![3.0, 2.0, 1.0], None).unwrap();
        let est = lpe_estimate(&q, &[0.0; 3], 2, 10, 1).unwrap();
        assert!((est.eigenvalues[0] - 3.0).abs() < 1e-8);
        assert!((est.eigenvalues[1] - 2.0).abs() < 1e-8);
        assert!((est.basis.get(0, 0).abs() - 1.0).abs() < 1e-8);
        assert!((est.basis.get(1, 1).abs() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lanczos_one_dimensional_breakdown() {
        let q = QuadraticProblem::new(vec![7.0], None).unwrap();
        let est = lpe_estimate(&q, &[0.0], 1, 21, 3).unwrap();
        assert_eq!(est.eigenvalues, vec![7.0]);
        assert_eq!(est.iterations, 1);
        assert!(est.breakdown);
    }

    struct NanOracle;

    impl HvpOracle for NanOracle {
        fn dim(&self) -> usize {
            2
        }
        fn loss_at(&self, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn grad_at(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0; 2]))
        }
        fn hvp_at(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![f64::NAN, 0.0])
        }
    }

    #[test]
    fn lanczos_reports_poisoned_oracle() {
        assert!(matches!(
            lpe_estimate(&NanOracle, &[0.0; 2], 1, 2, 0),
            Err(Error::Poisoned(_))
        ));
    }

    fn history_of(vs: &[Vec<f64>]) -> UpdateHistory {
        let mut h =
            UpdateHistory::new(vs.len(), BlockPartition::single(vs[0].len()).unwrap()).unwrap();
        for v in vs {
            h.push(v).unwrap();
        }
        h
    }

    #[test]
    fn ppe_rank_one() {
        let h = history_of(&[vec![2.0, 0.0, 0.0], vec![5.0, 0.0, 0.0]]);
        let u = ppe_estimate(&h, 0, 1).unwrap();
        assert_eq!(u.column(0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn ppe_not_ready() {
        let h = history_of(&[vec![1.0, 0.0]]);
        assert!(matches!(ppe_estimate(&h, 0, 1), Err(Error::NotReady(_))));
        let h = history_of(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert!(matches!(ppe_estimate(&h, 0, 3), Err(Error::NotReady(_))));
    }

    #[test]
    fn variance_examples() {
        let same = history_of(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let e1 = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(projection_variance(&same, &e1).unwrap(), (0.0, 0.0));
        let alt = history_of(&[
            vec![3.0, 0.0],
            vec![-3.0, 0.0],
            vec![3.0, 0.0],
            vec![-3.0, 0.0],
        ]);
        assert_eq!(projection_variance(&alt, &e1).unwrap(), (9.0, 0.0));
    }
}
