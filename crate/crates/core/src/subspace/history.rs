use std::collections::VecDeque;

use super::partition::BlockPartition;
use crate::error::{Error, Result};
use crate::numerics::{all_finite, DenseMatrix};
use crate::quant::QuantizedVector;

#[derive(Debug, Clone, PartialEq)]
enum Entry {
    Full(Vec<f64>),
    Quantized(QuantizedVector),
}

impl Entry {
    fn restore(&self) -> Vec<f64> {
        match self {
            Entry::Full(v) => v.clone(),
            Entry::Quantized(q) => q.restore(),
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Entry::Full(v) => 8 * v.len(),
            Entry::Quantized(q) => q.stored_bytes(),
        }
    }
}

/// Sliding window of the last `capacity` update vectors, one FIFO ring per
/// block of the partition (newest last). With quantization enabled each block
/// slice is stored in 4-bit form and restored on read.
#[derive(Debug, Clone)]
pub struct UpdateHistory {
    capacity: usize,
    partition: BlockPartition,
    rings: Vec<VecDeque<Entry>>,
    group_size: Option<usize>,
}

impl UpdateHistory {
    pub fn new(capacity: usize, partition: BlockPartition) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Validation(
                "history capacity must be positive".into(),
            ));
        }
        let rings = vec![VecDeque::with_capacity(capacity); partition.len()];
        Ok(Self {
            capacity,
            partition,
            rings,
            group_size: None,
        })
    }

    /// Same window, stored as 4-bit groups of `group_size`.
    pub fn quantized(
        capacity: usize,
        partition: BlockPartition,
        group_size: usize,
    ) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::Validation("group size must be positive".into()));
        }
        let mut h = Self::new(capacity, partition)?;
        h.group_size = Some(group_size);
        Ok(h)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn filled(&self) -> usize {
        self.rings[0].len()
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn is_quantized(&self) -> bool {
        self.group_size.is_some()
    }

    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        self.partition.check_vector(v)?;
        if !all_finite(v) {
            return Err(Error::Poisoned(
                "non-finite vector pushed to history".into(),
            ));
        }
        for (ring, block) in self.rings.iter_mut().zip(self.partition.blocks()) {
            let slice = &v[block.range.clone()];
            let entry = match self.group_size {
                None => Entry::Full(slice.to_vec()),
                Some(g) => Entry::Quantized(QuantizedVector::new(slice, g)?),
            };
            if ring.len() == self.capacity {
                ring.pop_front();
            }
            ring.push_back(entry);
        }
        Ok(())
    }

    /// Stored slices of block `b`, oldest first.
    pub fn block_vectors(&self, b: usize) -> Result<Vec<Vec<f64>>> {
        let ring = self
            .rings
            .get(b)
            .ok_or_else(|| Error::Validation(format!("no block {b} in history")))?;
        Ok(ring.iter().map(Entry::restore).collect())
    }

    /// Block `b` as a `|I_b| × filled` matrix, oldest column first.
    pub fn block_matrix(&self, b: usize) -> Result<DenseMatrix> {
        DenseMatrix::from_columns(&self.block_vectors(b)?)
    }

    /// Whole stored vectors, oldest first.
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.partition.dim()); self.filled()];
        for ring in &self.rings {
            for (dst, e) in out.iter_mut().zip(ring) {
                dst.extend(e.restore());
            }
        }
        out
    }

    /// Bytes held at rest by the window.
    pub fn stored_bytes(&self) -> usize {
        self.rings.iter().flatten().map(Entry::bytes).sum()
    }

    pub fn clear(&mut self) {
        self.rings.iter_mut().for_each(VecDeque::clear);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_eviction() {
        let mut h = UpdateHistory::new(3, BlockPartition::single(1).unwrap()).unwrap();
        for i in 0..5 {
            h.push(&[i as f64]).unwrap();
        }
        assert_eq!(h.filled(), 3);
        assert_eq!(h.vectors(), vec![vec![2.0], vec![3.0], vec![4.0]]);
    }

    #[test]
    fn blocks_split_vectors() {
        let mut h = UpdateHistory::new(2, BlockPartition::from_sizes(&[2, 1]).unwrap()).unwrap();
        h.push(&[1.0, 2.0, 3.0]).unwrap();
        let m = h.block_matrix(0).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 1));
        assert_eq!(h.block_vectors(1).unwrap(), vec![vec![3.0]]);
        assert!(h.push(&[1.0]).is_err());
        assert!(h.push(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn quantized_storage_is_smaller() {
        let part = BlockPartition::single(256).unwrap();
        let mut full = UpdateHistory::new(4, part.clone()).unwrap();
        let mut quant = UpdateHistory::quantized(4, part, 64).unwrap();
        let v: Vec<f64> = (0..256).map(|i| (i as f64).sin()).collect();
        full.push(&v).unwrap();
        quant.push(&v).unwrap();
        assert_eq!(full.stored_bytes(), 2048);
        assert_eq!(quant.stored_bytes(), 128 + 8 + 8);
        let r = &quant.vectors()[0];
        let err = v
            .iter()
            .zip(r)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 0.15);
    }
}
