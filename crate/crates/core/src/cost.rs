//! Analytic memory and upload accounting for one client round.
//!
//! Memory is modelled, not measured:
//!
//! ```text
//! param_bytes       = 4 × all parameters
//! activation_bytes  = 4 × Σ_trained buffer(v)
//!     buffer(W) = batch × in_dim, buffer(s) = batch × out_dim, buffer(b) = 0
//! workspace_bytes   = 4 × batch × max(out_dim) + ceil(batch × Σ out_dim / 8)
//! peak              = param_bytes + activation_bytes + workspace_bytes
//! ```
//!
//! `param_bytes + workspace_bytes` is the forward-only baseline; the plan only
//! moves the activation term. Upload size is the exact length of the wire frame.

use serde::{Deserialize, Serialize};

use crate::freezing::FreezePlan;
use crate::nn::BlockSpec;
use crate::taxonomy::{VarClass, VariableDescriptor, BYTES_PER_PARAM};
use crate::wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub param_bytes: u64,
    pub activation_buffer_bytes: u64,
    pub workspace_bytes: u64,
    pub peak_memory_bytes: u64,
    pub ctos_bytes: u64,
}

impl CostReport {
    /// Memory needed for forward passes alone.
    pub fn fprop_bytes(&self) -> u64 {
        self.param_bytes + self.workspace_bytes
    }
}

/// Activation floats a trained variable forces the backward pass to keep.
pub fn buffer_floats(desc: &VariableDescriptor, batch_size: usize) -> u64 {
    let b = batch_size as u64;
    match desc.var_class {
        VarClass::AdditiveVector => 0,
        VarClass::MultiplicativeVector => b * desc.shape[0] as u64,
        VarClass::MultiplicativeMatrix => b * desc.shape[1] as u64,
    }
}

pub fn activation_buffer_bytes(plan: &FreezePlan, descriptors: &[VariableDescriptor], batch_size: usize) -> u64 {
    descriptors
        .iter()
        .filter(|d| plan.is_trained(d.id))
        .map(|d| buffer_floats(d, batch_size))
        .sum::<u64>()
        * BYTES_PER_PARAM
}

pub fn param_bytes(descriptors: &[VariableDescriptor]) -> u64 {
    descriptors.iter().map(VariableDescriptor::byte_size).sum()
}

pub fn workspace_bytes(specs: &[BlockSpec], batch_size: usize) -> u64 {
    let b = batch_size as u64;
    let max_out = specs.iter().map(|s| s.out_dim as u64).max().unwrap_or(0);
    let total_out: u64 = specs.iter().map(|s| s.out_dim as u64).sum();
    BYTES_PER_PARAM * b * max_out + (b * total_out).div_ceil(8)
}

pub fn peak_memory(
    plan: &FreezePlan,
    descriptors: &[VariableDescriptor],
    specs: &[BlockSpec],
    batch_size: usize,
) -> u64 {
    param_bytes(descriptors)
        + activation_buffer_bytes(plan, descriptors, batch_size)
        + workspace_bytes(specs, batch_size)
}

/// Client-to-server bytes: the encoded frame length for the plan's trained set.
pub fn ctos_cost(plan: &FreezePlan, descriptors: &[VariableDescriptor]) -> u64 {
    ctos_for(descriptors.iter().filter(|d| plan.is_trained(d.id)))
}

pub(crate) fn ctos_for<'a>(trained: impl IntoIterator<Item = &'a VariableDescriptor>) -> u64 {
    wire::FRAME_OVERHEAD as u64
        + trained
            .into_iter()
            .map(|d| wire::ENTRY_OVERHEAD as u64 + d.byte_size())
            .sum::<u64>()
}

pub fn measure(
    plan: &FreezePlan,
    descriptors: &[VariableDescriptor],
    specs: &[BlockSpec],
    batch_size: usize,
) -> CostReport {
    let param_bytes = param_bytes(descriptors);
    let activation_buffer_bytes = activation_buffer_bytes(plan, descriptors, batch_size);
    let workspace_bytes = workspace_bytes(specs, batch_size);
    CostReport {
        param_bytes,
        activation_buffer_bytes,
        workspace_bytes,
        peak_memory_bytes: param_bytes + activation_buffer_bytes + workspace_bytes,
        ctos_bytes: ctos_cost(plan, descriptors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_specs, Activation};
    use crate::taxonomy::{describe, VarId};
    use std::collections::BTreeSet;

    fn toy() -> (Vec<BlockSpec>, Vec<VariableDescriptor>) {
        let specs = vec![
            BlockSpec::new(2, 3, Activation::Relu),
            BlockSpec::new(3, 2, Activation::Identity),
        ];
        let desc = describe(specs.iter().map(|s| (s.in_dim, s.out_dim)));
        (specs, desc)
    }

    fn plan(desc: &[VariableDescriptor], trained: &[u32]) -> FreezePlan {
        let all: Vec<VarId> = desc.iter().map(|d| d.id).collect();
        FreezePlan::from_trained(0, 0, &all, trained.iter().map(|&i| VarId(i)).collect()).unwrap()
    }

    #[test]
    fn full_training_buffers() {
        let (specs, desc) = toy();
        let r = measure(&plan(&desc, &[0, 1, 2, 3, 4, 5]), &desc, &specs, 4);
        assert_eq!(r.activation_buffer_bytes, 160);
        assert_eq!(r.param_bytes, 4 * (6 + 3 + 3 + 6 + 2 + 2));
        // 4·4·3 + ceil(4·5/8)
        assert_eq!(r.workspace_bytes, 48 + 3);
        assert_eq!(r.peak_memory_bytes, r.fprop_bytes() + 160);
    }

    #[test]
    fn bias_only_is_fprop_baseline() {
        let (specs, desc) = toy();
        let r = measure(&plan(&desc, &[2, 5]), &desc, &specs, 4);
        assert_eq!(r.activation_buffer_bytes, 0);
        assert_eq!(r.peak_memory_bytes, r.fprop_bytes());
        assert_eq!(r.ctos_bytes, 24 + 2 * 8 + 4 * 3 + 4 * 2);
    }

    #[test]
    fn avt_sends_everything() {
        let (_, desc) = toy();
        let p = plan(&desc, &[0, 1, 2, 3, 4, 5]);
        assert_eq!(ctos_cost(&p, &desc), param_bytes(&desc) + 24 + 6 * 8);
        assert_eq!(ctos_cost(&plan(&desc, &[]), &desc), 24);
    }

    #[test]
    fn ninety_percent_frozen_payload() {
        // 10 additive params, freezable params in a 1000-param budget.
        // Ten 10x10 blocks: W = 100 params, s = 10, b = 10.
        let specs = mlp_specs(&[10; 11]);
        let desc = describe(specs.iter().map(|s| (s.in_dim, s.out_dim)));
        // Keep one 100-param W and one bias trained.
        let p = plan(&desc, &[0, 2]);
        assert_eq!(ctos_cost(&p, &desc), (100 + 10) * 4 + 24 + 2 * 8);
    }

    #[test]
    fn removing_classes_changes_the_right_terms() {
        let (specs, desc) = toy();
        let full = measure(&plan(&desc, &[0, 1, 2, 3, 4, 5]), &desc, &specs, 8);
        let no_b = measure(&plan(&desc, &[0, 1, 3, 4, 5]), &desc, &specs, 8);
        assert_eq!(full.activation_buffer_bytes, no_b.activation_buffer_bytes);
        assert_eq!(full.ctos_bytes - no_b.ctos_bytes, 8 + 12);
        let no_w = measure(&plan(&desc, &[1, 2, 3, 4, 5]), &desc, &specs, 8);
        assert!(no_w.activation_buffer_bytes < full.activation_buffer_bytes);
        assert!(no_w.ctos_bytes < full.ctos_bytes);
    }

    #[test]
    fn monotone_in_trained_set() {
        let (specs, desc) = toy();
        let mut trained: BTreeSet<u32> = BTreeSet::new();
        let mut last = measure(&plan(&desc, &[]), &desc, &specs, 4);
        for id in [3, 0, 5, 1, 2, 4] {
            trained.insert(id);
            let ids: Vec<u32> = trained.iter().copied().collect();
            let r = measure(&plan(&desc, &ids), &desc, &specs, 4);
            assert!(r.peak_memory_bytes >= last.peak_memory_bytes);
            assert!(r.ctos_bytes > last.ctos_bytes);
            last = r;
        }
    }
}
