#![allow(dead_code)]

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use pvt_core::data::Dataset;
use pvt_core::nn::{mlp_specs, ModelState};
use pvt_core::VarId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic task used for the trend and escalation checks.
pub const TREND_CONFIG: &str = "\
layers = 16,16,16,16,4
synth.per_class = 1000
synth.test_per_class = 250
synth.separation = 4.0
partition = dirichlet
partition.alpha = 0.2
num_clients = 256
scheme = pcpr
freeze_fraction = 0.9
clients_per_round = 32
local_steps = 5
batch_size = 16
client_lr = 0.05
rounds = 300
target_margin = 1.0
";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random MLP with a block count drawn from `blocks` and widths in `2..=max_width`.
/// Scales and biases are perturbed away from their init values.
pub fn random_model(rng: &mut ChaCha8Rng, blocks: RangeInclusive<usize>, max_width: usize) -> ModelState {
    let blocks = rng.random_range(blocks);
    let dims: Vec<usize> = (0..=blocks).map(|_| rng.random_range(2..=max_width)).collect();
    let mut model = ModelState::init(&mlp_specs(&dims), rng.random()).unwrap();
    for id in model.variable_ids() {
        if id.0 % 3 == 0 {
            continue;
        }
        for v in model.values_mut(id).unwrap() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    model
}

pub fn random_data(rng: &mut ChaCha8Rng, model: &ModelState, n: usize) -> Dataset {
    let dim = model.input_dim();
    let classes = model.num_classes();
    let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(features, labels, dim, classes).unwrap()
}

/// Uniformly random subset of the model's variables.
pub fn random_subset(rng: &mut ChaCha8Rng, model: &ModelState) -> BTreeSet<VarId> {
    model.variable_ids().into_iter().filter(|_| rng.random_bool(0.5)).collect()
}

pub fn shuffled_ids(rng: &mut ChaCha8Rng, model: &ModelState) -> Vec<VarId> {
    let mut ids = model.variable_ids();
    ids.shuffle(rng);
    ids
}

/// Norm-wise relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Rounds-to-target as a sortable number; `u32::MAX` when never reached.
pub fn rounds_or_max(r: Option<u32>) -> u32 {
    r.unwrap_or(u32::MAX)
}
