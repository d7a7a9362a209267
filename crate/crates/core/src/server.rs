//! Server side of a federated round and hyperparameter escalation.
//!
//! Aggregation averages each variable over the clients that trained it,
//! weighted by sample count:
//!
//! ```text
//! delta(v) = Σ_{c ∈ T_v} n_c · Δ_c(v) / Σ_{c ∈ T_v} n_c
//! ```
//!
//! Variables no client trained are left untouched. Sums run in ascending
//! client order, so results do not depend on delivery order.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{self, ClientConfig, ClientUpdate, LocalResult};
use crate::cost;
use crate::data::{Dataset, Partition};
use crate::freezing::{self, FreezePlan, SchemeConfig};
use crate::nn::{BlockSpec, ModelState};
use crate::rng::{self, Domain};
use crate::taxonomy::{self, FreezabilityPolicy, VarId, VariableDescriptor};
use crate::wire;
use crate::{Error, Result};

/// AVT skips the freezing module entirely and trains every variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingMode {
    Pvt,
    Avt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub clients_per_round: usize,
    pub scheme: SchemeConfig,
    pub client: ClientConfig,
    pub server_lr: f64,
    pub policy: FreezabilityPolicy,
    pub mode: TrainingMode,
}

impl RoundConfig {
    pub fn new(clients_per_round: usize, scheme: SchemeConfig, client: ClientConfig) -> Self {
        Self {
            clients_per_round,
            scheme,
            client,
            server_lr: 1.0,
            policy: FreezabilityPolicy::default(),
            mode: TrainingMode::Pvt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients_per_round == 0 {
            return Err(Error::config("clients_per_round", "must be positive"));
        }
        if !(self.server_lr >= 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config("server_lr", "must be a finite non-negative number"));
        }
        self.scheme.validate()?;
        self.client.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateDelta {
    pub deltas: BTreeMap<VarId, Vec<f64>>,
    pub contributors: BTreeMap<VarId, usize>,
}

/// Contributor-only, sample-weighted mean of the updates' deltas.
pub fn aggregate(updates: &[ClientUpdate], descriptors: &[VariableDescriptor]) -> Result<AggregateDelta> {
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client);
    if let Some(first) = order.first() {
        if let Some(other) = order.iter().find(|u| u.round != first.round) {
            return Err(Error::MixedRounds(first.round, other.round));
        }
    }
    for pair in order.windows(2) {
        if pair[0].client == pair[1].client {
            return Err(Error::DuplicateClient(pair[0].client as usize));
        }
    }

    let mut sums: BTreeMap<VarId, Vec<f64>> = BTreeMap::new();
    let mut weights: BTreeMap<VarId, f64> = BTreeMap::new();
    let mut contributors: BTreeMap<VarId, usize> = BTreeMap::new();
    for update in order {
        let n = update.sample_count as f64;
        for (&id, delta) in &update.deltas {
            let desc = descriptors.get(id.index()).ok_or(Error::UnknownVariable(id))?;
            if delta.len() != desc.param_count {
                return Err(Error::ShapeMismatch {
                    id,
                    expected: desc.param_count,
                    actual: delta.len(),
                });
            }
            let acc = sums.entry(id).or_insert_with(|| vec![0.0; delta.len()]);
            for (a, &d) in acc.iter_mut().zip(delta) {
                *a += n * d as f64;
            }
            *weights.entry(id).or_insert(0.0) += n;
            *contributors.entry(id).or_insert(0) += 1;
        }
    }

    let deltas = sums
        .into_iter()
        .filter_map(|(id, mut acc)| {
            let total = weights[&id];
            if total <= 0.0 {
                return None;
            }
            for a in &mut acc {
                *a /= total;
            }
            Some((id, acc))
        })
        .collect::<BTreeMap<_, _>>();
    contributors.retain(|id, _| deltas.contains_key(id));
    Ok(AggregateDelta {
        deltas,
        contributors,
    })
}

/// `old + server_lr × delta` for every variable present in `agg`.
pub fn apply(model: &ModelState, agg: &AggregateDelta, server_lr: f64) -> Result<ModelState> {
    let mut next = model.clone();
    for (&id, delta) in &agg.deltas {
        let values = next.values_mut(id)?;
        if values.len() != delta.len() {
            return Err(Error::ShapeMismatch {
                id,
                expected: values.len(),
                actual: delta.len(),
            });
        }
        for (w, d) in values.iter_mut().zip(delta) {
            *w += server_lr * d;
        }
    }
    Ok(next)
}

/// Per-client local datasets.
#[derive(Debug, Clone)]
pub struct ClientPool {
    shards: Vec<Dataset>,
}

impl ClientPool {
    pub fn new(dataset: &Dataset, partition: &Partition) -> Result<Self> {
        let shards = partition
            .shards
            .iter()
            .map(|idx| dataset.subset(idx))
            .collect::<Result<_>>()?;
        Ok(Self { shards })
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn shard(&self, client: usize) -> &Dataset {
        &self.shards[client]
    }
}

/// Clients participating in `round`, ascending.
pub fn sample_cohort(population: usize, cohort: usize, master_seed: u64, round: u32) -> Result<Vec<usize>> {
    if cohort > population {
        return Err(Error::TooManyClients {
            clients: cohort,
            available: population,
        });
    }
    let mut rng = rng::keyed(Domain::Cohort, &[master_seed, round as u64]);
    let mut chosen = index::sample(&mut rng, population, cohort).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn client_seed(master_seed: u64, round: u32, client: usize) -> u64 {
    rng::mix(Domain::ClientSeed, &[master_seed, round as u64, client as u64])
}

/// Plan for one client in one round.
pub fn plan_for(
    model: &ModelState,
    cfg: &RoundConfig,
    freezable: &[VarId],
    round: u32,
    client: usize,
) -> Result<FreezePlan> {
    match cfg.mode {
        TrainingMode::Avt => Ok(FreezePlan::all_trained(round, client, &model.variable_ids())),
        TrainingMode::Pvt => freezing::make_plan_weighted(&cfg.scheme, freezable, model.descriptors(), round, client),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    /// Sample-weighted mean local loss; NaN when every client failed.
    pub train_loss: f64,
    pub ctos_bytes_mean: f64,
    pub peak_memory_bytes: u64,
    pub coverage_fraction: f64,
    pub completed_clients: usize,
    pub diverged_clients: usize,
}

pub fn run_round(
    model: &ModelState,
    round: u32,
    cfg: &RoundConfig,
    pool: &ClientPool,
    master_seed: u64,
) -> Result<(ModelState, RoundMetrics)> {
    cfg.validate()?;
    let cohort = sample_cohort(pool.len(), cfg.clients_per_round, master_seed, round)?;
    let freezable = taxonomy::freezable_ids(model.descriptors(), &cfg.policy);
    let plans = cohort
        .iter()
        .map(|&c| plan_for(model, cfg, &freezable, round, c))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Result<(LocalResult, Vec<u8>)>> = plans
        .par_iter()
        .map(|plan| {
            let seed = client_seed(master_seed, round, plan.client);
            let result = client::local_train(model, pool.shard(plan.client), plan, &cfg.client, seed)?;
            let frame = wire::encode(&result.update);
            Ok((result, frame))
        })
        .collect();

    let mut updates = Vec::with_capacity(cohort.len());
    let mut done_plans = Vec::with_capacity(cohort.len());
    let mut loss_sum = 0.0;
    let mut samples = 0.0;
    let mut ctos_sum = 0u64;
    let mut peak = 0u64;
    let mut diverged = 0;
    for (plan, outcome) in plans.iter().zip(outcomes) {
        let (result, frame) = match outcome {
            Ok(x) => x,
            Err(Error::Diverged { .. }) => {
                diverged += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        debug_assert_eq!(frame.len() as u64, result.cost.ctos_bytes);
        let update = wire::decode(&frame)?;
        let n = update.sample_count as f64;
        loss_sum += n * result.train_loss;
        samples += n;
        ctos_sum += frame.len() as u64;
        peak = peak.max(result.cost.peak_memory_bytes);
        updates.push(update);
        done_plans.push(plan);
    }

    let agg = aggregate(&updates, model.descriptors())?;
    let next = apply(model, &agg, cfg.server_lr)?;
    let completed = updates.len();
    let metrics = RoundMetrics {
        round,
        train_loss: if completed > 0 { loss_sum / samples } else { f64::NAN },
        ctos_bytes_mean: if completed > 0 {
            ctos_sum as f64 / completed as f64
        } else {
            0.0
        },
        peak_memory_bytes: peak,
        coverage_fraction: if completed > 0 {
            freezing::observed_coverage(done_plans.iter().copied(), &freezable)
        } else {
            0.0
        },
        completed_clients: completed,
        diverged_clients: diverged,
    };
    Ok((next, metrics))
}

/// Freeze fractions tried by [`escalate`], in order.
pub const FRACTION_GRID: [f64; 4] = [0.0, 0.5, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub freeze_fraction: f64,
    pub local_steps: usize,
    pub clients_per_round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub memory_bytes: u64,
    pub ctos_bytes: u64,
    pub max_local_steps: usize,
    pub max_clients: usize,
    /// Largest acceptable `reference - candidate` metric gap.
    pub gap_tolerance: f64,
}

/// Scores a configuration; higher is better (e.g. eval accuracy).
pub trait Evaluator {
    fn evaluate(&mut self, hp: &Hyperparams) -> Result<f64>;
}

impl<F: FnMut(&Hyperparams) -> Result<f64>> Evaluator for F {
    fn evaluate(&mut self, hp: &Hyperparams) -> Result<f64> {
        self(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationStage {
    pub label: String,
    pub params: Hyperparams,
    pub metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub chosen: Hyperparams,
    pub restored: bool,
    pub reference_metric: Option<f64>,
    pub final_metric: Option<f64>,
    pub worst_case_peak_bytes: u64,
    pub worst_case_ctos_bytes: u64,
    pub stages: Vec<EscalationStage>,
}

/// Worst-case `(peak memory, ctos)` over every plan that freezes
/// `frozen_count(fraction, |freezable|)` freezable variables.
pub fn worst_case_costs(
    fraction: f64,
    descriptors: &[VariableDescriptor],
    specs: &[BlockSpec],
    policy: &FreezabilityPolicy,
    batch_size: usize,
) -> (u64, u64) {
    let (freezable, fixed): (Vec<&VariableDescriptor>, Vec<&VariableDescriptor>) =
        descriptors.iter().partition(|d| policy.is_freezable(d.var_class));
    let keep = freezable.len() - freezing::frozen_count(fraction, freezable.len());

    let top_k = |key: &dyn Fn(&VariableDescriptor) -> u64| -> u64 {
        let mut v: Vec<u64> = freezable.iter().map(|d| key(d)).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.into_iter().take(keep).sum()
    };
    let buf = |d: &VariableDescriptor| cost::buffer_floats(d, batch_size) * taxonomy::BYTES_PER_PARAM;
    let wire_size = |d: &VariableDescriptor| wire::ENTRY_OVERHEAD as u64 + d.byte_size();

    let fixed_buf: u64 = fixed.iter().map(|d| buf(d)).sum();
    let peak = cost::param_bytes(descriptors)
        + cost::workspace_bytes(specs, batch_size)
        + fixed_buf
        + top_k(&buf);
    let ctos = cost::ctos_for(fixed.iter().copied()) + top_k(&wire_size);
    (peak, ctos)
}

/// Freeze until the budgets fit, then raise local steps to the device
/// maximum, then double the cohort until the metric is within tolerance of
/// the all-variable reference (or the client cap is hit).
#[allow(clippy::too_many_arguments)]
pub fn escalate(
    base: Hyperparams,
    descriptors: &[VariableDescriptor],
    specs: &[BlockSpec],
    policy: &FreezabilityPolicy,
    batch_size: usize,
    budgets: &Budgets,
    evaluator: &mut dyn Evaluator,
) -> Result<Escalation> {
    let mut stages = Vec::new();
    let fits = |f: f64| {
        let (peak, ctos) = worst_case_costs(f, descriptors, specs, policy, batch_size);
        (peak <= budgets.memory_bytes && ctos <= budgets.ctos_bytes, peak, ctos)
    };
    let (fraction, peak, ctos) = FRACTION_GRID
        .iter()
        .map(|&f| {
            let (ok, peak, ctos) = fits(f);
            (f, ok, peak, ctos)
        })
        .find(|x| x.1)
        .map(|(f, _, p, c)| (f, p, c))
        .ok_or(Error::Infeasible {
            memory_budget: budgets.memory_bytes,
            ctos_budget: budgets.ctos_bytes,
        })?;

    let reference_params = Hyperparams {
        freeze_fraction: 0.0,
        ..base
    };
    if fraction == 0.0 {
        stages.push(EscalationStage {
            label: "avt".into(),
            params: reference_params,
            metric: None,
        });
        return Ok(Escalation {
            chosen: reference_params,
            restored: true,
            reference_metric: None,
            final_metric: None,
            worst_case_peak_bytes: peak,
            worst_case_ctos_bytes: ctos,
            stages,
        });
    }

    let reference = evaluator.evaluate(&reference_params)?;
    stages.push(EscalationStage {
        label: "avt-reference".into(),
        params: reference_params,
        metric: Some(reference),
    });

    let mut hp = Hyperparams {
        freeze_fraction: fraction,
        ..base
    };
    let m = evaluator.evaluate(&hp)?;
    stages.push(EscalationStage {
        label: format!("freeze {fraction}"),
        params: hp,
        metric: Some(m),
    });

    hp.local_steps = budgets.max_local_steps.max(1);
    let mut metric = evaluator.evaluate(&hp)?;
    stages.push(EscalationStage {
        label: format!("{} local steps", hp.local_steps),
        params: hp,
        metric: Some(metric),
    });

    while reference - metric > budgets.gap_tolerance && hp.clients_per_round < budgets.max_clients {
        hp.clients_per_round = (hp.clients_per_round * 2).min(budgets.max_clients);
        metric = evaluator.evaluate(&hp)?;
        stages.push(EscalationStage {
            label: format!("{} clients", hp.clients_per_round),
            params: hp,
            metric: Some(metric),
        });
    }

    Ok(Escalation {
        chosen: hp,
        restored: reference - metric <= budgets.gap_tolerance,
        reference_metric: Some(reference),
        final_metric: Some(metric),
        worst_case_peak_bytes: peak,
        worst_case_ctos_bytes: ctos,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_iid, synth_gaussian};
    use crate::freezing::Scheme;
    use crate::nn::mlp_specs;

    fn upd(client: u32, n: u32, deltas: &[(u32, Vec<f32>)]) -> ClientUpdate {
        ClientUpdate {
            client,
            round: 0,
            sample_count: n,
            deltas: deltas.iter().map(|(i, d)| (VarId(*i), d.clone())).collect(),
        }
    }

    fn scalar_desc(n: usize) -> Vec<VariableDescriptor> {
        // [1,1] blocks: every variable has one parameter
        taxonomy::describe(std::iter::repeat_n((1, 1), n.div_ceil(3)))
    }

    #[test]
    fn disjoint_contributors_apply_at_full_strength() {
        let desc = scalar_desc(3);
        let agg = aggregate(&[upd(1, 10, &[(0, vec![1.0])]), upd(2, 10, &[(1, vec![-0.5])])], &desc).unwrap();
        assert_eq!(agg.deltas[&VarId(0)], vec![1.0]);
        assert_eq!(agg.deltas[&VarId(1)], vec![-0.5]);
        assert!(!agg.deltas.contains_key(&VarId(2)));
        assert_eq!(agg.contributors[&VarId(0)], 1);
    }

    #[test]
    fn weighted_mean_over_contributors() {
        let desc = scalar_desc(3);
        let agg = aggregate(&[upd(1, 10, &[(0, vec![1.0])]), upd(2, 30, &[(0, vec![-1.0])])], &desc).unwrap();
        assert_eq!(agg.deltas[&VarId(0)], vec![-0.5]);
        assert_eq!(agg.contributors[&VarId(0)], 2);
    }

    #[test]
    fn aggregate_errors() {
        let desc = scalar_desc(3);
        assert!(matches!(
            aggregate(&[upd(1, 10, &[(0, vec![1.0, 2.0])])], &desc),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut late = upd(2, 10, &[]);
        late.round = 4;
        assert!(matches!(aggregate(&[upd(1, 10, &[]), late], &desc), Err(Error::MixedRounds(..))));
        assert!(matches!(
            aggregate(&[upd(1, 10, &[]), upd(1, 5, &[])], &desc),
            Err(Error::DuplicateClient(1))
        ));
        assert!(aggregate(&[], &desc).unwrap().deltas.is_empty());
    }

    #[test]
    fn apply_identities() {
        let model = ModelState::init(&mlp_specs(&[2, 3, 2]), 1).unwrap();
        let mut agg = AggregateDelta::default();
        agg.deltas.insert(VarId(0), vec![0.25, -1.5, 3.0, 0.1, 0.2, 0.3]);
        agg.deltas.insert(VarId(5), vec![1e-3, -7.0]);
        assert_eq!(apply(&model, &agg, 0.0).unwrap(), model);
        let moved = apply(&model, &agg, 1.0).unwrap();
        let mut neg = agg.clone();
        for d in neg.deltas.values_mut() {
            for x in d {
                *x = -*x;
            }
        }
        let back = apply(&moved, &neg, 1.0).unwrap();
        for id in model.variable_ids() {
            for (a, b) in model.values(id).unwrap().iter().zip(back.values(id).unwrap()) {
                let ulp = f64::EPSILON * a.abs().max(f64::MIN_POSITIVE);
                assert!((a - b).abs() <= ulp.max(f64::EPSILON * 8.0), "{a} vs {b}");
            }
        }
        // untouched variables are bit-identical
        assert_eq!(model.values(VarId(1)).unwrap(), moved.values(VarId(1)).unwrap());
    }

    fn small_world() -> (ModelState, ClientPool) {
        let data = synth_gaussian(3, 4, 20, 3.0, 2).unwrap();
        let part = partition_iid(&data, 6, 1).unwrap();
        let pool = ClientPool::new(&data, &part).unwrap();
        let model = ModelState::init(&mlp_specs(&[4, 5, 5, 3]), 3).unwrap();
        (model, pool)
    }

    #[test]
    fn round_is_deterministic_and_conserves_untrained() {
        let (model, pool) = small_world();
        let cfg = RoundConfig::new(
            2,
            SchemeConfig::new(Scheme::PerRound, 0.5, 9),
            ClientConfig {
                local_steps: 2,
                batch_size: 4,
                learning_rate: 0.1,
            },
        );
        let (a, ma) = run_round(&model, 3, &cfg, &pool, 9).unwrap();
        let (b, mb) = run_round(&model, 3, &cfg, &pool, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let freezable = taxonomy::freezable_ids(model.descriptors(), &cfg.policy);
        let plan = freezing::make_plan(&cfg.scheme, &freezable, &model.variable_ids(), 3, 0).unwrap();
        for id in &plan.frozen {
            assert_eq!(model.values(*id).unwrap(), a.values(*id).unwrap());
        }
        assert!((ma.coverage_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_client_avt_round_equals_local_model() {
        let (model, pool) = small_world();
        let mut cfg = RoundConfig::new(
            1,
            SchemeConfig::new(Scheme::PerClientPerRound, 0.0, 4),
            ClientConfig {
                local_steps: 3,
                batch_size: 5,
                learning_rate: 0.2,
            },
        );
        cfg.mode = TrainingMode::Avt;
        let (server, _) = run_round(&model, 0, &cfg, &pool, 4).unwrap();
        let client = sample_cohort(pool.len(), 1, 4, 0).unwrap()[0];
        let plan = FreezePlan::all_trained(0, client, &model.variable_ids());
        let local = client::local_train(&model, pool.shard(client), &plan, &cfg.client, client_seed(4, 0, client))
            .unwrap();
        for id in model.variable_ids() {
            let delta = &local.update.deltas[&id];
            for ((s, m), d) in server.values(id).unwrap().iter().zip(model.values(id).unwrap()).zip(delta) {
                assert_eq!(*s, m + *d as f64);
            }
        }
    }

    #[test]
    fn cohort_sampling() {
        let c = sample_cohort(10, 4, 1, 0).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(c, sample_cohort(10, 4, 1, 0).unwrap());
        assert!(sample_cohort(3, 4, 1, 0).is_err());
    }

    fn escalation_model() -> (Vec<BlockSpec>, Vec<VariableDescriptor>) {
        let specs = mlp_specs(&[16, 16, 16, 16, 4]);
        let desc = taxonomy::describe(specs.iter().map(|s| (s.in_dim, s.out_dim)));
        (specs, desc)
    }

    #[test]
    fn loose_budgets_keep_avt() {
        let (specs, desc) = escalation_model();
        let base = Hyperparams {
            freeze_fraction: 0.0,
            local_steps: 1,
            clients_per_round: 8,
        };
        let budgets = Budgets {
            memory_bytes: u64::MAX,
            ctos_bytes: u64::MAX,
            max_local_steps: 20,
            max_clients: 64,
            gap_tolerance: 0.02,
        };
        let mut calls = 0;
        let mut eval = |_: &Hyperparams| {
            calls += 1;
            Ok(1.0)
        };
        let e = escalate(base, &desc, &specs, &FreezabilityPolicy::default(), 16, &budgets, &mut eval).unwrap();
        assert_eq!(e.chosen, base);
        assert_eq!(calls, 0);
    }

    #[test]
    fn infeasible_ctos_budget() {
        let (specs, desc) = escalation_model();
        let bias_only: u64 = 24 + desc
            .iter()
            .filter(|d| d.var_class == taxonomy::VarClass::AdditiveVector)
            .map(|d| 8 + d.byte_size())
            .sum::<u64>();
        let (_, ctos_at_one) = worst_case_costs(1.0, &desc, &specs, &FreezabilityPolicy::default(), 16);
        assert_eq!(ctos_at_one, bias_only);
        let budgets = Budgets {
            memory_bytes: u64::MAX,
            ctos_bytes: bias_only - 1,
            max_local_steps: 5,
            max_clients: 64,
            gap_tolerance: 0.02,
        };
        let base = Hyperparams {
            freeze_fraction: 0.0,
            local_steps: 1,
            clients_per_round: 8,
        };
        let err = escalate(base, &desc, &specs, &FreezabilityPolicy::default(), 16, &budgets, &mut |_: &Hyperparams| {
            Ok(1.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn escalation_sequence() {
        let (specs, desc) = escalation_model();
        let policy = FreezabilityPolicy::default();
        let (_, ctos_09) = worst_case_costs(0.9, &desc, &specs, &policy, 16);
        let (_, ctos_05) = worst_case_costs(0.5, &desc, &specs, &policy, 16);
        assert!(ctos_09 < ctos_05);
        let budgets = Budgets {
            memory_bytes: u64::MAX,
            ctos_bytes: ctos_09,
            max_local_steps: 5,
            max_clients: 64,
            gap_tolerance: 0.02,
        };
        let base = Hyperparams {
            freeze_fraction: 0.0,
            local_steps: 1,
            clients_per_round: 8,
        };
        // Synthetic metric: improves with steps and clients.
        let mut eval = |hp: &Hyperparams| -> Result<f64> {
            if hp.freeze_fraction == 0.0 {
                return Ok(0.95);
            }
            Ok(0.95 - 0.4 / (hp.local_steps as f64 * hp.clients_per_round as f64).sqrt())
        };
        let e = escalate(base, &desc, &specs, &policy, 16, &budgets, &mut eval).unwrap();
        assert_eq!(e.chosen.freeze_fraction, 0.9);
        assert_eq!(e.chosen.local_steps, 5);
        // 0.4/sqrt(5c) <= 0.02  =>  c >= 80, capped at 64
        assert_eq!(e.chosen.clients_per_round, 64);
        assert!(!e.restored);
        let labels: Vec<&str> = e.stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(
            labels,
            vec!["avt-reference", "freeze 0.9", "5 local steps", "16 clients", "32 clients", "64 clients"]
        );

        let budgets = Budgets {
            max_clients: 256,
            ..budgets
        };
        let e = escalate(base, &desc, &specs, &policy, 16, &budgets, &mut eval).unwrap();
        assert_eq!(e.chosen.clients_per_round, 128);
        assert!(e.restored);
    }
}
