use std::ops::Range;

use crate::error::{Error, Result};

/// What a parameter block does in the model; estimators can leave some roles untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Norm,
    AttentionLike,
    MlpLike,
    Embedding,
    Output,
    Other,
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "norm" => Role::Norm,
            "attention_like" => Role::AttentionLike,
            "mlp_like" => Role::MlpLike,
            "embedding" => Role::Embedding,
            "output" => Role::Output,
            "other" => Role::Other,
            _ => return Err(Error::Config(format!("unknown block role {s:?}"))),
        })
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Norm => "norm",
            Role::AttentionLike => "attention_like",
            Role::MlpLike => "mlp_like",
            Role::Embedding => "embedding",
            Role::Output => "output",
            Role::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub name: String,
    pub range: Range<usize>,
    pub role: Role,
}

impl Block {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }
}

/// Ordered, disjoint, covering split of the parameter indices `[0, p)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Block>,
    dim: usize,
}

impl BlockPartition {
    /// Blocks must be nonempty and listed in index order without gaps.
    pub fn new(spec: Vec<(String, Range<usize>, Role)>) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Validation(
                "partition needs at least one block".into(),
            ));
        }
        let mut next = 0;
        let mut blocks = Vec::with_capacity(spec.len());
        for (id, (name, range, role)) in spec.into_iter().enumerate() {
            if range.start != next || range.is_empty() {
                return Err(Error::Validation(format!(
                    "block {name:?} covers {range:?}, expected a nonempty range starting at {next}"
                )));
            }
            next = range.end;
            blocks.push(Block {
                id,
                name,
                range,
                role,
            });
        }
        Ok(Self { blocks, dim: next })
    }

    /// One block spanning everything.
    pub fn single(p: usize) -> Result<Self> {
        Self::new(vec![("all".into(), 0..p, Role::Other)])
    }

    /// Consecutive blocks of the given sizes, all tagged [`Role::Other`].
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let spec = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let r = start..start + s;
                start += s;
                (format!("block{i}"), r, Role::Other)
            })
            .collect();
        Self::new(spec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn with_role(mut self, id: usize, role: Role) -> Result<Self> {
        let b = self
            .blocks
            .get_mut(id)
            .ok_or_else(|| Error::Validation(format!("no block {id}")))?;
        b.role = role;
        Ok(self)
    }

    pub(crate) fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector of length {} for a partition of {} parameters",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }
}
