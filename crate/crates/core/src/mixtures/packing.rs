use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sigma,
    WeightsZ,
    Alpha,
    Beta,
    GammaLatent,
    GammaInf,
    KernelEta,
    KernelRho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    /// Affine logistic onto a bounded interval.
    Logit,
    StickBreaking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub role: Role,
    pub transform: Transform,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Named slices of the unconstrained parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaPacking {
    blocks: Vec<Block>,
    dim: usize,
}

impl ThetaPacking {
    pub fn push(&mut self, name: &str, role: Role, transform: Transform, len: usize) -> Range<usize> {
        let offset = self.dim;
        self.blocks.push(Block {
            name: name.to_string(),
            role,
            transform,
            offset,
            len,
        });
        self.dim += len;
        offset..offset + len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, role: Role) -> Option<&Block> {
        self.blocks.iter().find(|b| b.role == role)
    }

    pub fn range(&self, role: Role) -> Range<usize> {
        self.block(role).map(Block::range).unwrap_or(0..0)
    }

    /// One name per coordinate of θ, e.g. `log_sigma`, `beta[3]`.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            let prefix = match b.transform {
                Transform::Log => "log_",
                Transform::Logit => "logit_",
                Transform::StickBreaking => "sb_",
                Transform::Identity => "",
            };
            if b.len == 1 {
                names.push(format!("{prefix}{}", b.name));
            } else {
                names.extend((0..b.len).map(|i| format!("{prefix}{}[{i}]", b.name)));
            }
        }
        names
    }
}
