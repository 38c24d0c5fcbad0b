use super::partition::BlockPartition;
use crate::error::{Error, Result};
use crate::numerics::{orthonormal_basis, DenseMatrix};
use crate::quant::QuantizedVector;

/// Orthonormality tolerance for full-precision bases.
pub const BASIS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    Full(DenseMatrix),
    /// Columns at rest in 4-bit form; re-orthonormalized after restoring.
    Quantized {
        rows: usize,
        columns: Vec<QuantizedVector>,
    },
}

impl Basis {
    fn matrix(&self) -> Result<DenseMatrix> {
        match self {
            Basis::Full(u) => Ok(u.clone()),
            Basis::Quantized { rows, columns } => {
                if columns.is_empty() {
                    return Ok(DenseMatrix::zeros(*rows, 0));
                }
                let raw: Vec<Vec<f64>> = columns.iter().map(QuantizedVector::restore).collect();
                orthonormal_basis(&DenseMatrix::from_columns(&raw)?)
            }
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Basis::Full(u) => 8 * u.rows() * u.cols(),
            Basis::Quantized { columns, .. } => columns.iter().map(|c| c.stored_bytes()).sum(),
        }
    }
}

/// Block-diagonal `α P_k + γ P_k^⊥`.
///
/// Each block holds an orthonormal basis `U` of its dominant directions, or
/// nothing, in which case the block passes through unchanged. Excluded blocks
/// always pass through.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    partition: BlockPartition,
    bases: Vec<Option<Basis>>,
    excluded: Vec<bool>,
    alpha: f64,
    gamma: f64,
}

impl Projector {
    /// The identity map (every block passes through).
    pub fn identity(partition: BlockPartition) -> Self {
        let n = partition.len();
        Self {
            partition,
            bases: vec![None; n],
            excluded: vec![false; n],
            alpha: 1.0,
            gamma: 1.0,
        }
    }

    pub fn new(
        partition: BlockPartition,
        bases: Vec<Option<DenseMatrix>>,
        alpha: f64,
        gamma: f64,
        excluded: Vec<bool>,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && gamma >= 0.0 && alpha.is_finite() && gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "scalers must be finite and >= 0 (alpha {alpha}, gamma {gamma})"
            )));
        }
        if bases.len() != partition.len() || excluded.len() != partition.len() {
            return Err(Error::Validation(format!(
                "{} bases / {} exclusion flags for {} blocks",
                bases.len(),
                excluded.len(),
                partition.len()
            )));
        }
        for (u, block) in bases.iter().zip(partition.blocks()) {
            if let Some(u) = u {
                if u.rows() != block.len() {
                    return Err(Error::Dimension(format!(
                        "basis with {} rows for block {:?} of size {}",
                        u.rows(),
                        block.name,
                        block.len()
                    )));
                }
                if u.orthonormality_defect() > BASIS_TOL {
                    return Err(Error::Validation(format!(
                        "basis for block {:?} is not orthonormal",
                        block.name
                    )));
                }
            }
        }
        Ok(Self {
            partition,
            bases: bases.into_iter().map(|b| b.map(Basis::Full)).collect(),
            excluded,
            alpha,
            gamma,
        })
    }

    /// Single-block convenience constructor.
    pub fn from_basis(u: DenseMatrix, alpha: f64, gamma: f64) -> Result<Self> {
        let part = BlockPartition::single(u.rows())?;
        Self::new(part, vec![Some(u)], alpha, gamma, vec![false])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn is_excluded(&self, b: usize) -> bool {
        self.excluded[b]
    }

    /// Basis of block `b` (restored if stored quantized).
    pub fn basis(&self, b: usize) -> Option<DenseMatrix> {
        self.bases
            .get(b)?
            .as_ref()
            .map(|u| u.matrix().expect("stored basis is well formed"))
    }

    /// Number of dominant directions per block (0 for pass-through blocks).
    pub fn ranks(&self) -> Vec<usize> {
        self.bases
            .iter()
            .zip(&self.excluded)
            .map(|(b, &ex)| match (b, ex) {
                (Some(Basis::Full(u)), false) => u.cols(),
                (Some(Basis::Quantized { columns, .. }), false) => columns.len(),
                _ => 0,
            })
            .collect()
    }

    /// Same map with every basis stored as 4-bit columns.
    pub fn quantize(&self, group_size: usize) -> Result<Self> {
        let bases = self
            .bases
            .iter()
            .map(|b| {
                b.as_ref()
                    .map(|basis| {
                        let u = basis.matrix()?;
                        let columns = u
                            .columns()
                            .iter()
                            .map(|c| QuantizedVector::new(c, group_size))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(Basis::Quantized {
                            rows: u.rows(),
                            columns,
                        })
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bases,
            ..self.clone()
        })
    }

    /// Bytes held at rest by the bases.
    pub fn stored_bytes(&self) -> usize {
        self.bases.iter().flatten().map(Basis::bytes).sum()
    }

    /// Applies the projector blockwise without forming any `p × p` matrix.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.partition.check_vector(v)?;
        if self.alpha == 1.0 && self.gamma == 1.0 {
            return Ok(v.to_vec());
        }
        let mut out = v.to_vec();
        for (i, block) in self.partition.blocks().iter().enumerate() {
            if self.excluded[i] {
                continue;
            }
            let Some(basis) = &self.bases[i] else {
                continue;
            };
            let u = basis.matrix()?;
            let slice = &mut out[block.range.clone()];
            let coeffs = u.t_matvec(slice)?;
            let dom = u.matvec(&coeffs)?;
            for (x, d) in slice.iter_mut().zip(&dom) {
                *x = self.alpha * d + self.gamma * (*x - d);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn componentwise_example() {
        let u = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let p = Projector::from_basis(u, 0.5, 4.0).unwrap();
        assert_eq!(p.apply(&[1.0, 1.0]).unwrap(), vec![0.5, 4.0]);
    }

    #[test]
    fn identity_is_bit_exact() {
        let u = DenseMatrix::new(2, 1, vec![0.6, 0.8]).unwrap();
        let p = Projector::from_basis(u, 1.0, 1.0).unwrap();
        let v = [0.1 + 0.2, 1e-300];
        assert_eq!(p.apply(&v).unwrap(), v.to_vec());
    }

    #[test]
    fn rejects_non_orthonormal_bases() {
        let u = DenseMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(Projector::from_basis(u, 0.5, 2.0).is_err());
        let e = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(Projector::from_basis(e, -1.0, 2.0).is_err());
    }

    #[test]
    fn excluded_block_passes_through() {
        let part = BlockPartition::from_sizes(&[2, 2]).unwrap();
        let e1 = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let p = Projector::new(
            part,
            vec![Some(e1.clone()), Some(e1)],
            0.0,
            2.0,
            vec![false, true],
        )
        .unwrap();
        assert_eq!(
            p.apply(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
            vec![0.0, 2.0, 1.0, 1.0]
        );
        assert_eq!(p.ranks(), vec![1, 0]);
    }

    #[test]
    fn quantized_basis_keeps_span() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = DenseMatrix::new(2, 1, vec![s, s]).unwrap();
        let p = Projector::from_basis(u, 0.5, 4.0).unwrap();
        let q = p.quantize(64).unwrap();
        let a = p.apply(&[1.0, -0.5]).unwrap();
        let b = q.apply(&[1.0, -0.5]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-2));
        assert!(q.stored_bytes() < p.stored_bytes());
    }
}
