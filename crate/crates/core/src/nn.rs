//! Block-structured classifier with a freeze-aware backward pass.
//!
//! Each block holds one variable of every class:
//!
//! ```text
//! z = W · a_in        (W: out × in, multiplicative matrix)
//! u = s ⊙ z           (s: out,      multiplicative vector)
//! v = u + b           (b: out,      additive vector)
//! a_out = σ(v)
//! ```
//!
//! The last block's output is the logit vector; the loss is the batch mean of
//! softmax cross-entropy.
//!
//! The backward pass retains only the activations the trained variables need:
//! `a_in` for a trained W, `z` for a trained s, nothing for b. Gradients still
//! flow through frozen variables using their values alone. ReLU sign masks are
//! kept for every ReLU block and are not counted in `buffered_floats`.

use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::freezing::FreezePlan;
use crate::rng::{self, Domain};
use crate::taxonomy::{self, locate, Slot, VarId, VariableDescriptor};
use crate::{Error, Result};

/// Central-difference step of [`finite_diff_grad`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl BlockSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// ReLU hidden blocks and an identity output block through `dims`
/// (`[16, 32, 4]` gives 16→32 relu, 32→4 identity).
pub fn mlp_specs(dims: &[usize]) -> Vec<BlockSpec> {
    let n = dims.len().saturating_sub(1);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            BlockSpec::new(w[0], w[1], act)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    spec: BlockSpec,
    /// Row-major, `out_dim × in_dim`.
    weight: Vec<f64>,
    scale: Vec<f64>,
    bias: Vec<f64>,
}

impl Block {
    pub fn spec(&self) -> BlockSpec {
        self.spec
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn slot(&self, slot: Slot) -> &[f64] {
        match slot {
            Slot::Weight => &self.weight,
            Slot::Scale => &self.scale,
            Slot::Bias => &self.bias,
        }
    }

    fn slot_mut(&mut self, slot: Slot) -> &mut [f64] {
        match slot {
            Slot::Weight => &mut self.weight,
            Slot::Scale => &mut self.scale,
            Slot::Bias => &mut self.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    blocks: Vec<Block>,
    descriptors: Vec<VariableDescriptor>,
}

fn validate_specs(specs: &[BlockSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidBlock {
            index: 0,
            reason: "network needs at least one block".into(),
        });
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::InvalidBlock {
                index: i,
                reason: "dimensions must be positive".into(),
            });
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::DimensionMismatch {
                index: i,
                in_dim: s.in_dim,
                prev_out: specs[i - 1].out_dim,
            });
        }
    }
    if specs[specs.len() - 1].activation != Activation::Identity {
        return Err(Error::InvalidBlock {
            index: specs.len() - 1,
            reason: "final block must use the identity activation".into(),
        });
    }
    Ok(())
}

impl ModelState {
    /// W ~ N(0, 1/in_dim), s = 1, b = 0. Deterministic in `seed`.
    pub fn init(specs: &[BlockSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = rng::keyed(Domain::Init, &[seed]);
        let blocks = specs
            .iter()
            .map(|&spec| {
                let std = 1.0 / (spec.in_dim as f64).sqrt();
                let weight = (0..spec.in_dim * spec.out_dim)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        x * std
                    })
                    .collect();
                Block {
                    spec,
                    weight,
                    scale: vec![1.0; spec.out_dim],
                    bias: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        Ok(Self::from_blocks(blocks))
    }

    /// Builds a model from explicit `(spec, W, s, b)` values.
    pub fn from_parts(parts: Vec<BlockParts>) -> Result<Self> {
        let specs: Vec<BlockSpec> = parts.iter().map(|p| p.0).collect();
        validate_specs(&specs)?;
        let mut blocks = Vec::with_capacity(parts.len());
        for (i, (spec, weight, scale, bias)) in parts.into_iter().enumerate() {
            if weight.len() != spec.in_dim * spec.out_dim
                || scale.len() != spec.out_dim
                || bias.len() != spec.out_dim
            {
                return Err(Error::InvalidBlock {
                    index: i,
                    reason: "parameter lengths do not match the block shape".into(),
                });
            }
            blocks.push(Block {
                spec,
                weight,
                scale,
                bias,
            });
        }
        Ok(Self::from_blocks(blocks))
    }

    fn from_blocks(blocks: Vec<Block>) -> Self {
        let descriptors = taxonomy::describe(blocks.iter().map(|b| (b.in_dim(), b.out_dim())));
        Self {
            blocks,
            descriptors,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn specs(&self) -> Vec<BlockSpec> {
        self.blocks.iter().map(Block::spec).collect()
    }

    pub fn descriptors(&self) -> &[VariableDescriptor] {
        &self.descriptors
    }

    pub fn num_variables(&self) -> usize {
        self.descriptors.len()
    }

    pub fn variable_ids(&self) -> Vec<VarId> {
        self.descriptors.iter().map(|d| d.id).collect()
    }

    pub fn param_count(&self) -> usize {
        self.descriptors.iter().map(|d| d.param_count).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.blocks[self.blocks.len() - 1].out_dim()
    }

    pub fn contains(&self, id: VarId) -> bool {
        id.index() < self.descriptors.len()
    }

    pub fn values(&self, id: VarId) -> Result<&[f64]> {
        if !self.contains(id) {
            return Err(Error::UnknownVariable(id));
        }
        let (block, slot) = locate(id);
        Ok(self.blocks[block].slot(slot))
    }

    pub fn values_mut(&mut self, id: VarId) -> Result<&mut [f64]> {
        if !self.contains(id) {
            return Err(Error::UnknownVariable(id));
        }
        let (block, slot) = locate(id);
        Ok(self.blocks[block].slot_mut(slot))
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.blocks.iter().all(|b| {
            b.weight
                .iter()
                .chain(&b.scale)
                .chain(&b.bias)
                .all(|x| x.is_finite())
        });
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("model parameters"))
        }
    }
}

/// Borrowed view of `n` examples: row-major features and their labels.
/// `(spec, weight, scale, bias)` for [`ModelState::from_parts`].
pub type BlockParts = (BlockSpec, Vec<f64>, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize]) -> Self {
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_batch(model: &ModelState, batch: &Batch<'_>) -> Result<()> {
    let n = batch.len();
    let d = model.input_dim();
    if n == 0 {
        return Err(Error::BatchShape("batch is empty".into()));
    }
    if batch.features.len() != n * d {
        return Err(Error::BatchShape(format!(
            "{} feature values for {n} examples of dimension {d}",
            batch.features.len()
        )));
    }
    let k = model.num_classes();
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    if !batch.features.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("input features"));
    }
    model.check_finite()
}

/// Activations kept by one block for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    /// `a_in`, `n × in_dim`; kept when W is trained.
    pub input: Option<Vec<f64>>,
    /// `z = W·a_in`, `n × out_dim`; kept when s is trained.
    pub pre_scale: Option<Vec<f64>>,
    /// `v > 0`, for ReLU blocks only.
    pub relu_mask: Option<Vec<bool>>,
}

impl BlockCache {
    fn buffered_floats(&self) -> u64 {
        let a = self.input.as_ref().map_or(0, Vec::len);
        let z = self.pre_scale.as_ref().map_or(0, Vec::len);
        (a + z) as u64
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    /// `n × K`, row-major.
    pub logits: Vec<f64>,
    pub caches: Vec<BlockCache>,
}

impl ForwardPass {
    pub fn buffered_floats(&self) -> u64 {
        self.caches.iter().map(BlockCache::buffered_floats).sum()
    }
}

/// Mean softmax cross-entropy of `n × k` logits.
fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &label) in logits.chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    total / labels.len() as f64
}

fn run_forward(
    model: &ModelState,
    batch: &Batch<'_>,
    keep_input: impl Fn(usize) -> bool,
    keep_pre_scale: impl Fn(usize) -> bool,
) -> ForwardPass {
    let n = batch.len();
    let mut act = batch.features.to_vec();
    let mut caches = Vec::with_capacity(model.blocks.len());
    for (i, block) in model.blocks.iter().enumerate() {
        let (din, dout) = (block.in_dim(), block.out_dim());
        let mut z = vec![0.0; n * dout];
        for r in 0..n {
            let a_row = &act[r * din..(r + 1) * din];
            for j in 0..dout {
                let w_row = &block.weight[j * din..(j + 1) * din];
                z[r * dout + j] = w_row.iter().zip(a_row).map(|(w, a)| w * a).sum();
            }
        }
        let mut out = vec![0.0; n * dout];
        for r in 0..n {
            for j in 0..dout {
                let idx = r * dout + j;
                out[idx] = block.scale[j] * z[idx] + block.bias[j];
            }
        }
        let relu_mask = match block.spec.activation {
            Activation::Relu => {
                let mask: Vec<bool> = out.iter().map(|&v| v > 0.0).collect();
                for (o, &m) in out.iter_mut().zip(&mask) {
                    if !m {
                        *o = 0.0;
                    }
                }
                Some(mask)
            }
            Activation::Identity => None,
        };
        caches.push(BlockCache {
            input: keep_input(i).then(|| act.clone()),
            pre_scale: keep_pre_scale(i).then_some(z),
            relu_mask,
        });
        act = out;
    }
    let loss = cross_entropy(&act, batch.labels, model.num_classes());
    ForwardPass {
        loss,
        logits: act,
        caches,
    }
}

/// Forward pass keeping every activation any backward pass could need.
pub fn forward(model: &ModelState, batch: &Batch<'_>) -> Result<ForwardPass> {
    check_batch(model, batch)?;
    let pass = run_forward(model, batch, |_| true, |_| true);
    if !pass.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(pass)
}

/// Loss only, nothing retained.
pub fn loss(model: &ModelState, batch: &Batch<'_>) -> Result<f64> {
    check_batch(model, batch)?;
    let pass = run_forward(model, batch, |_| false, |_| false);
    Ok(pass.loss)
}

/// Mean loss and accuracy.
pub fn evaluate(model: &ModelState, batch: &Batch<'_>) -> Result<(f64, f64)> {
    check_batch(model, batch)?;
    let pass = run_forward(model, batch, |_| false, |_| false);
    let k = model.num_classes();
    let correct = pass
        .logits
        .chunks_exact(k)
        .zip(batch.labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok((pass.loss, correct as f64 / batch.len() as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// Trained variables only.
    pub grads: BTreeMap<VarId, Vec<f64>>,
    /// Activation floats retained for the backward pass under the plan.
    pub buffered_floats: u64,
    pub loss: f64,
}

/// Exact gradients of the loss for the plan's trained variables.
pub fn backward(model: &ModelState, batch: &Batch<'_>, plan: &FreezePlan) -> Result<GradientBundle> {
    backward_trained(model, batch, &plan.trained)
}

pub fn backward_trained(
    model: &ModelState,
    batch: &Batch<'_>,
    trained: &BTreeSet<VarId>,
) -> Result<GradientBundle> {
    if let Some(&bad) = trained.iter().find(|id| !model.contains(**id)) {
        return Err(Error::UnknownVariable(bad));
    }
    check_batch(model, batch)?;
    let is_trained = |block: usize, slot: Slot| trained.contains(&taxonomy::slot_id(block, slot));
    let pass = run_forward(
        model,
        batch,
        |i| is_trained(i, Slot::Weight),
        |i| is_trained(i, Slot::Scale),
    );
    if !pass.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let buffered_floats = pass.buffered_floats();

    let n = batch.len();
    let k = model.num_classes();
    let mut grads = BTreeMap::new();
    let Some(lowest) = trained.iter().map(|id| locate(*id).0).min() else {
        return Ok(GradientBundle {
            grads,
            buffered_floats,
            loss: pass.loss,
        });
    };

    // dL/dlogits = (softmax - onehot) / n
    let mut g = pass.logits;
    for (row, &label) in g.chunks_exact_mut(k).zip(batch.labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum * n as f64;
        }
        row[label] -= 1.0 / n as f64;
    }

    for i in (lowest..model.blocks.len()).rev() {
        let block = &model.blocks[i];
        let cache = &pass.caches[i];
        let (din, dout) = (block.in_dim(), block.out_dim());

        if let Some(mask) = &cache.relu_mask {
            for (x, &m) in g.iter_mut().zip(mask) {
                if !m {
                    *x = 0.0;
                }
            }
        }

        if is_trained(i, Slot::Bias) {
            let mut gb = vec![0.0; dout];
            for row in g.chunks_exact(dout) {
                for (acc, x) in gb.iter_mut().zip(row) {
                    *acc += x;
                }
            }
            grads.insert(taxonomy::slot_id(i, Slot::Bias), gb);
        }
        if is_trained(i, Slot::Scale) {
            let z = cache.pre_scale.as_ref().expect("z retained for trained scale");
            let mut gs = vec![0.0; dout];
            for (grow, zrow) in g.chunks_exact(dout).zip(z.chunks_exact(dout)) {
                for j in 0..dout {
                    gs[j] += grow[j] * zrow[j];
                }
            }
            grads.insert(taxonomy::slot_id(i, Slot::Scale), gs);
        }

        // dL/dz
        for row in g.chunks_exact_mut(dout) {
            for (x, s) in row.iter_mut().zip(&block.scale) {
                *x *= s;
            }
        }

        if is_trained(i, Slot::Weight) {
            let a = cache.input.as_ref().expect("a_in retained for trained weight");
            let mut gw = vec![0.0; dout * din];
            for (grow, arow) in g.chunks_exact(dout).zip(a.chunks_exact(din)) {
                for j in 0..dout {
                    let gj = grow[j];
                    let out = &mut gw[j * din..(j + 1) * din];
                    for (acc, x) in out.iter_mut().zip(arow) {
                        *acc += gj * x;
                    }
                }
            }
            grads.insert(taxonomy::slot_id(i, Slot::Weight), gw);
        }

        if i > lowest {
            let mut g_in = vec![0.0; n * din];
            for (grow, irow) in g.chunks_exact(dout).zip(g_in.chunks_exact_mut(din)) {
                for (&gj, w_row) in grow.iter().zip(block.weight.chunks_exact(din)) {
                    for (acc, w) in irow.iter_mut().zip(w_row) {
                        *acc += gj * w;
                    }
                }
            }
            g = g_in;
        }
    }

    Ok(GradientBundle {
        grads,
        buffered_floats,
        loss: pass.loss,
    })
}

/// Central-difference gradient of the loss with respect to one variable,
/// using [`FD_STEP`].
pub fn finite_diff_grad(model: &ModelState, batch: &Batch<'_>, id: VarId) -> Result<Vec<f64>> {
    finite_diff_grad_with_step(model, batch, id, FD_STEP)
}

pub fn finite_diff_grad_with_step(
    model: &ModelState,
    batch: &Batch<'_>,
    id: VarId,
    step: f64,
) -> Result<Vec<f64>> {
    let len = model.values(id)?.len();
    check_batch(model, batch)?;
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(len);
    for e in 0..len {
        let orig = probe.values(id)?[e];
        probe.values_mut(id)?[e] = orig + step;
        let plus = loss(&probe, batch)?;
        probe.values_mut(id)?[e] = orig - step;
        let minus = loss(&probe, batch)?;
        probe.values_mut(id)?[e] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
