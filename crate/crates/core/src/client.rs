//! Simulated client: local SGD on the trained variables of a freeze plan.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostReport};
use crate::data::Dataset;
use crate::freezing::FreezePlan;
use crate::nn::{self, Batch, ModelState};
use crate::rng::{self, Domain};
use crate::taxonomy::VarId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub local_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            local_steps: 5,
            batch_size: 16,
            learning_rate: 0.1,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::config("local_steps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("client_lr", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// What a client uploads: deltas of its trained variables only, as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: u32,
    pub round: u32,
    pub sample_count: u32,
    pub deltas: BTreeMap<VarId, Vec<f32>>,
}

/// A client's round: the upload plus what stays on the device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub update: ClientUpdate,
    pub cost: CostReport,
    /// Mean minibatch loss over the local steps.
    pub train_loss: f64,
    /// Largest activation-buffer count seen across steps.
    pub buffered_floats: u64,
}

/// Runs `cfg.local_steps` SGD steps on `shard` under `plan`.
///
/// Minibatches walk a permutation of the shard keyed by `(seed, round)` and
/// wrap around when exhausted. Only trained variables move.
pub fn local_train(
    snapshot: &ModelState,
    shard: &Dataset,
    plan: &FreezePlan,
    cfg: &ClientConfig,
    seed: u64,
) -> Result<LocalResult> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    if let Some(bad) = plan.trained.iter().chain(&plan.frozen).find(|id| !snapshot.contains(**id)) {
        return Err(Error::UnknownVariable(*bad));
    }

    let mut order: Vec<usize> = (0..shard.len()).collect();
    order.shuffle(&mut rng::keyed(Domain::Minibatch, &[seed, plan.round as u64]));
    let batch_size = cfg.batch_size.min(shard.len());

    let mut model = snapshot.clone();
    let mut features = Vec::with_capacity(batch_size * shard.dim());
    let mut labels = Vec::with_capacity(batch_size);
    let mut cursor = 0;
    let mut loss_sum = 0.0;
    let mut buffered_floats = 0;

    for step in 0..cfg.local_steps {
        features.clear();
        labels.clear();
        for _ in 0..batch_size {
            let i = order[cursor];
            cursor = (cursor + 1) % order.len();
            features.extend_from_slice(shard.row(i));
            labels.push(shard.labels()[i]);
        }
        let diverged = Error::Diverged {
            client: plan.client,
            round: plan.round,
            step,
        };
        let bundle = match nn::backward(&model, &Batch::new(&features, &labels), plan) {
            Ok(b) => b,
            Err(Error::NonFinite(_)) => return Err(diverged),
            Err(e) => return Err(e),
        };
        loss_sum += bundle.loss;
        buffered_floats = buffered_floats.max(bundle.buffered_floats);
        for (id, grad) in &bundle.grads {
            for (w, g) in model.values_mut(*id)?.iter_mut().zip(grad) {
                *w -= cfg.learning_rate * g;
            }
        }
        if bundle
            .grads
            .keys()
            .any(|id| model.values(*id).is_ok_and(|v| !v.iter().all(|x| x.is_finite())))
        {
            return Err(diverged);
        }
    }

    let mut deltas = BTreeMap::new();
    for &id in &plan.trained {
        let after = model.values(id)?;
        let before = snapshot.values(id)?;
        deltas.insert(id, after.iter().zip(before).map(|(a, b)| (a - b) as f32).collect());
    }

    let cost = cost::measure(plan, snapshot.descriptors(), &snapshot.specs(), batch_size);
    Ok(LocalResult {
        update: ClientUpdate {
            client: plan.client as u32,
            round: plan.round,
            sample_count: (cfg.local_steps * batch_size) as u32,
            deltas,
        },
        cost,
        train_loss: loss_sum / cfg.local_steps as f64,
        buffered_floats,
    })
}

/// Cost report for a plan at the configured batch size.
pub fn measure_costs(plan: &FreezePlan, model: &ModelState, cfg: &ClientConfig) -> CostReport {
    cost::measure(plan, model.descriptors(), &model.specs(), cfg.batch_size)
}
