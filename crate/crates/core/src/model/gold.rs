use std::collections::BTreeMap;
use std::ops::Range;

use crate::gaussian::{GoldBank, LatentPartition};

use super::ModelError;

/// One gold constraint: a label's bank applied to a range of latent coordinates.
#[derive(Debug, Clone)]
pub struct GoldTerm {
    pub slice: String,
    pub label: String,
    pub bank: GoldBank,
    pub range: Range<usize>,
}

/// The gold Gaussians a model is trained against.
///
/// Without a partition the whole latent vector is matched against the bank
/// of a single label. With a partition every non-common slice is matched
/// against the bank of the label it is named after, restricted to the slice.
#[derive(Debug, Clone)]
pub struct GoldGuide {
    terms: Vec<GoldTerm>,
}

impl GoldGuide {
    pub fn single(label: impl Into<String>, bank: GoldBank) -> Self {
        let label = label.into();
        let dim = bank.dim();
        Self {
            terms: vec![GoldTerm {
                slice: label.clone(),
                label,
                bank,
                range: 0..dim,
            }],
        }
    }

    pub fn partitioned(
        partition: &LatentPartition,
        mut banks: BTreeMap<String, GoldBank>,
    ) -> Result<Self, ModelError> {
        let dim = partition.dim();
        let mut terms = Vec::new();
        for s in partition.constrained() {
            let bank = banks
                .remove(&s.name)
                .ok_or_else(|| ModelError::MissingGold(s.name.clone()))?;
            if bank.dim() != dim {
                return Err(ModelError::Config(format!(
                    "bank for {:?} has dim {}, latent dim is {dim}",
                    s.name,
                    bank.dim()
                )));
            }
            terms.push(GoldTerm {
                slice: s.name.clone(),
                label: s.name.clone(),
                bank,
                range: s.range(),
            });
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[GoldTerm] {
        &self.terms
    }

    pub fn check_dim(&self, latent: usize) -> Result<(), ModelError> {
        for t in &self.terms {
            if t.bank.dim() != latent || t.range.end > latent {
                return Err(ModelError::Config(format!(
                    "gold bank for {:?} has dim {}, latent dim is {latent}",
                    t.label,
                    t.bank.dim()
                )));
            }
        }
        Ok(())
    }
}
