//! Variable classes and freezability.
//!
//! Grouping is by whole variable and by type only: a variable's class comes
//! from the role it plays in its block, never from its values.
//!
//! | class                 | memory | communication |
//! |-----------------------|--------|---------------|
//! | additive vector       | low    | low           |
//! | multiplicative vector | high   | low           |
//! | multiplicative matrix | high   | high          |

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::nn::ModelState;

/// Bytes per parameter in every size and payload computation (f32).
pub const BYTES_PER_PARAM: u64 = 4;

/// Dense variable index, `0..V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarClass {
    AdditiveVector,
    MultiplicativeVector,
    MultiplicativeMatrix,
}

impl VarClass {
    pub const ALL: [VarClass; 3] = [
        VarClass::AdditiveVector,
        VarClass::MultiplicativeVector,
        VarClass::MultiplicativeMatrix,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Low,
    High,
}

/// Position of a variable inside its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Weight,
    Scale,
    Bias,
}

impl Slot {
    pub const ORDER: [Slot; 3] = [Slot::Weight, Slot::Scale, Slot::Bias];

    pub fn class(self) -> VarClass {
        match self {
            Slot::Weight => VarClass::MultiplicativeMatrix,
            Slot::Scale => VarClass::MultiplicativeVector,
            Slot::Bias => VarClass::AdditiveVector,
        }
    }

    fn offset(self) -> u32 {
        match self {
            Slot::Weight => 0,
            Slot::Scale => 1,
            Slot::Bias => 2,
        }
    }
}

/// Id of `slot` in block `block`: blocks own three consecutive ids, W then s then b.
pub fn slot_id(block: usize, slot: Slot) -> VarId {
    VarId(block as u32 * 3 + slot.offset())
}

pub fn locate(id: VarId) -> (usize, Slot) {
    let block = (id.0 / 3) as usize;
    let slot = Slot::ORDER[(id.0 % 3) as usize];
    (block, slot)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDescriptor {
    pub id: VarId,
    pub var_class: VarClass,
    /// `[out, in]` for matrices, `[out]` for vectors.
    pub shape: Vec<usize>,
    pub param_count: usize,
    pub block: usize,
}

impl VariableDescriptor {
    pub fn byte_size(&self) -> u64 {
        self.param_count as u64 * BYTES_PER_PARAM
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezabilityPolicy {
    pub freezable_classes: BTreeSet<VarClass>,
}

impl Default for FreezabilityPolicy {
    /// Multiplicative vectors and matrices; additive vectors are always trained.
    fn default() -> Self {
        Self {
            freezable_classes: [VarClass::MultiplicativeVector, VarClass::MultiplicativeMatrix]
                .into_iter()
                .collect(),
        }
    }
}

impl FreezabilityPolicy {
    pub fn all() -> Self {
        Self {
            freezable_classes: VarClass::ALL.into_iter().collect(),
        }
    }

    pub fn none() -> Self {
        Self {
            freezable_classes: BTreeSet::new(),
        }
    }

    pub fn is_freezable(&self, class: VarClass) -> bool {
        self.freezable_classes.contains(&class)
    }
}

/// Descriptors for a chain of `(in_dim, out_dim)` blocks.
pub(crate) fn describe(dims: impl IntoIterator<Item = (usize, usize)>) -> Vec<VariableDescriptor> {
    let mut out = Vec::new();
    for (block, (in_dim, out_dim)) in dims.into_iter().enumerate() {
        for slot in Slot::ORDER {
            let shape = match slot {
                Slot::Weight => vec![out_dim, in_dim],
                Slot::Scale | Slot::Bias => vec![out_dim],
            };
            out.push(VariableDescriptor {
                id: slot_id(block, slot),
                var_class: slot.class(),
                param_count: shape.iter().product(),
                shape,
                block,
            });
        }
    }
    out
}

pub fn classify(model: &ModelState) -> Vec<VariableDescriptor> {
    describe(model.blocks().iter().map(|b| (b.in_dim(), b.out_dim())))
}

pub fn freezable_ids(descriptors: &[VariableDescriptor], policy: &FreezabilityPolicy) -> Vec<VarId> {
    let mut ids: Vec<VarId> = descriptors
        .iter()
        .filter(|d| policy.is_freezable(d.var_class))
        .map(|d| d.id)
        .collect();
    ids.sort_unstable();
    ids
}

/// `(memory, communication)` tier of a class.
pub fn cost_tier(class: VarClass) -> (Tier, Tier) {
    match class {
        VarClass::AdditiveVector => (Tier::Low, Tier::Low),
        VarClass::MultiplicativeVector => (Tier::High, Tier::Low),
        VarClass::MultiplicativeMatrix => (Tier::High, Tier::High),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, BlockSpec};

    fn two_block() -> ModelState {
        ModelState::init(
            &[
                BlockSpec::new(2, 3, Activation::Relu),
                BlockSpec::new(3, 2, Activation::Identity),
            ],
            7,
        )
        .unwrap()
    }

    #[test]
    fn one_of_each_class_per_block() {
        let d = classify(&two_block());
        assert_eq!(d.len(), 6);
        for class in VarClass::ALL {
            assert_eq!(d.iter().filter(|x| x.var_class == class).count(), 2);
        }
        let ids: Vec<u32> = d.iter().map(|x| x.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn matrix_sizes() {
        let d = classify(&two_block());
        let w1 = &d[slot_id(1, Slot::Weight).index()];
        assert_eq!(w1.shape, vec![2, 3]);
        assert_eq!(w1.param_count, 6);
        assert_eq!(w1.byte_size(), 24);
        for x in &d {
            assert_eq!(x.param_count, x.shape.iter().product::<usize>());
        }
    }

    #[test]
    fn classification_ignores_values() {
        let a = two_block();
        let mut b = a.clone();
        for v in b.values_mut(VarId(0)).unwrap() {
            *v = 123.0;
        }
        assert_eq!(classify(&a), classify(&b));
    }

    #[test]
    fn freezable_sets() {
        let d = classify(&two_block());
        let ids = freezable_ids(&d, &FreezabilityPolicy::default());
        assert_eq!(ids, vec![VarId(0), VarId(1), VarId(3), VarId(4)]);
        assert_eq!(freezable_ids(&d, &FreezabilityPolicy::all()).len(), 6);
        assert!(freezable_ids(&d, &FreezabilityPolicy::none()).is_empty());
    }

    #[test]
    fn tiers() {
        assert_eq!(cost_tier(VarClass::AdditiveVector), (Tier::Low, Tier::Low));
        assert_eq!(cost_tier(VarClass::MultiplicativeVector), (Tier::High, Tier::Low));
        assert_eq!(cost_tier(VarClass::MultiplicativeMatrix), (Tier::High, Tier::High));
    }

    #[test]
    fn locate_inverts_slot_id() {
        for block in 0..5 {
            for slot in Slot::ORDER {
                assert_eq!(locate(slot_id(block, slot)), (block, slot));
            }
        }
    }
}
