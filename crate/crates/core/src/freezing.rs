//! Freeze plans under the fixed, per-round and per-client-per-round schemes.
//!
//! The frozen subset is drawn uniformly without replacement from a ChaCha8
//! stream keyed by `(master_seed)` for fixed, `(master_seed, round)` for
//! per-round and `(master_seed, round, client)` for per-client-per-round, so
//! any plan can be recomputed in isolation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::taxonomy::{VarId, VariableDescriptor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezePlan {
    pub round: u32,
    pub client: usize,
    pub frozen: BTreeSet<VarId>,
    pub trained: BTreeSet<VarId>,
}

impl FreezePlan {
    pub fn all_trained(round: u32, client: usize, all_ids: &[VarId]) -> Self {
        Self {
            round,
            client,
            frozen: BTreeSet::new(),
            trained: all_ids.iter().copied().collect(),
        }
    }

    /// Plan training exactly `trained`; everything else in `all_ids` is frozen.
    pub fn from_trained(
        round: u32,
        client: usize,
        all_ids: &[VarId],
        trained: BTreeSet<VarId>,
    ) -> Result<Self> {
        let all: BTreeSet<VarId> = all_ids.iter().copied().collect();
        if let Some(bad) = trained.difference(&all).next() {
            return Err(Error::UnknownVariable(*bad));
        }
        let frozen = all.difference(&trained).copied().collect();
        Ok(Self {
            round,
            client,
            frozen,
            trained,
        })
    }

    pub fn is_trained(&self, id: VarId) -> bool {
        self.trained.contains(&id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Fixed,
    PerRound,
    PerClientPerRound,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Fixed => "fixed",
            Scheme::PerRound => "pr",
            Scheme::PerClientPerRound => "pcpr",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Scheme::Fixed),
            "pr" | "per-round" | "per_round" => Ok(Scheme::PerRound),
            "pcpr" | "per-client-per-round" | "per_client_per_round" => Ok(Scheme::PerClientPerRound),
            other => Err(format!("unknown scheme `{other}` (expected fixed, pr or pcpr)")),
        }
    }
}

/// How `freeze_fraction` is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeWeighting {
    /// Freeze `round(fraction × |freezable|)` variables.
    #[default]
    VariableCount,
    /// Freeze a random prefix of freezable variables until their parameter
    /// total reaches `fraction` of all freezable parameters.
    ParamCount,
}

impl FromStr for FreezeWeighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "variables" | "variable" | "count" => Ok(FreezeWeighting::VariableCount),
            "parameters" | "params" => Ok(FreezeWeighting::ParamCount),
            other => Err(format!("unknown weighting `{other}` (expected variables or parameters)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub freeze_fraction: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub weighting: FreezeWeighting,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, freeze_fraction: f64, master_seed: u64) -> Self {
        Self {
            scheme,
            freeze_fraction,
            master_seed,
            weighting: FreezeWeighting::VariableCount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return Err(Error::FreezeFraction(self.freeze_fraction));
        }
        Ok(())
    }

    fn stream_key(&self, round: u32, client: usize) -> Vec<u64> {
        match self.scheme {
            Scheme::Fixed => vec![self.master_seed],
            Scheme::PerRound => vec![self.master_seed, round as u64],
            Scheme::PerClientPerRound => vec![self.master_seed, round as u64, client as u64],
        }
    }
}

/// `round(fraction × freezable)`, clamped to `[0, freezable]`.
pub fn frozen_count(freeze_fraction: f64, freezable: usize) -> usize {
    ((freeze_fraction * freezable as f64).round() as usize).min(freezable)
}

/// Freeze plan for one client in one round under [`FreezeWeighting::VariableCount`].
pub fn make_plan(
    config: &SchemeConfig,
    freezable: &[VarId],
    all_ids: &[VarId],
    round: u32,
    client: usize,
) -> Result<FreezePlan> {
    if config.weighting == FreezeWeighting::ParamCount {
        return Err(Error::InvalidPlan(
            "parameter-count weighting needs descriptors; use make_plan_weighted".into(),
        ));
    }
    plan_inner(config, freezable, all_ids, None, round, client)
}

/// Like [`make_plan`], honouring `config.weighting`.
pub fn make_plan_weighted(
    config: &SchemeConfig,
    freezable: &[VarId],
    descriptors: &[VariableDescriptor],
    round: u32,
    client: usize,
) -> Result<FreezePlan> {
    let all: Vec<VarId> = descriptors.iter().map(|d| d.id).collect();
    plan_inner(config, freezable, &all, Some(descriptors), round, client)
}

fn plan_inner(
    config: &SchemeConfig,
    freezable: &[VarId],
    all_ids: &[VarId],
    descriptors: Option<&[VariableDescriptor]>,
    round: u32,
    client: usize,
) -> Result<FreezePlan> {
    config.validate()?;
    let all: BTreeSet<VarId> = all_ids.iter().copied().collect();
    if let Some(bad) = freezable.iter().find(|id| !all.contains(id)) {
        return Err(Error::InvalidPlan(format!("freezable id {bad} is not a model variable")));
    }
    let mut rng = rng::keyed(Domain::Freeze, &config.stream_key(round, client));
    let frozen: BTreeSet<VarId> = match (config.weighting, descriptors) {
        (FreezeWeighting::ParamCount, Some(desc)) => {
            let size = |id: VarId| desc[id.index()].param_count as f64;
            let total: f64 = freezable.iter().map(|&id| size(id)).sum();
            let target = config.freeze_fraction * total;
            let mut order = freezable.to_vec();
            order.shuffle(&mut rng);
            let mut acc = 0.0;
            let mut chosen = BTreeSet::new();
            for id in order {
                if acc >= target {
                    break;
                }
                acc += size(id);
                chosen.insert(id);
            }
            chosen
        }
        _ => {
            let k = frozen_count(config.freeze_fraction, freezable.len());
            index::sample(&mut rng, freezable.len(), k)
                .into_iter()
                .map(|i| freezable[i])
                .collect()
        }
    };
    let trained = all.difference(&frozen).copied().collect();
    Ok(FreezePlan {
        round,
        client,
        frozen,
        trained,
    })
}

/// Expected fraction of freezable variables trained by at least one of
/// `clients_per_round` clients in a round.
///
/// Uses the realised frozen fraction `round(f·n)/n`; it equals `f` whenever
/// `f·n` is an integer.
pub fn expected_coverage(config: &SchemeConfig, freezable_count: usize, clients_per_round: usize) -> f64 {
    if freezable_count == 0 {
        return 1.0;
    }
    let p = frozen_count(config.freeze_fraction, freezable_count) as f64 / freezable_count as f64;
    match config.scheme {
        Scheme::Fixed | Scheme::PerRound => 1.0 - p,
        Scheme::PerClientPerRound => 1.0 - p.powi(clients_per_round as i32),
    }
}

/// Observed coverage of one round's plans.
pub fn observed_coverage<'a>(plans: impl IntoIterator<Item = &'a FreezePlan>, freezable: &[VarId]) -> f64 {
    if freezable.is_empty() {
        return 1.0;
    }
    let mut covered: BTreeSet<VarId> = BTreeSet::new();
    for plan in plans {
        covered.extend(freezable.iter().filter(|id| plan.trained.contains(id)));
    }
    covered.len() as f64 / freezable.len() as f64
}
