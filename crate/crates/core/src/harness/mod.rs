//! Experiment driver: runs, ablations and escalation on top of the server.

pub mod config;
pub mod metrics;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, CsvSchema, Dataset, Partition};
use crate::freezing::Scheme;
use crate::nn::{self, ModelState};
use crate::server::{self, ClientPool, Escalation, Hyperparams, TrainingMode};
use crate::taxonomy;
use crate::{Error, Result};

pub use config::{DataSpec, ExperimentConfig, PartitionSpec};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRow};

/// Train and test data plus the client split.
#[derive(Debug, Clone)]
pub struct World {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub pool: ClientPool,
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<World> {
    let dim = cfg.layers[0];
    let classes = cfg.layers[cfg.layers.len() - 1];
    let (train, test) = match &cfg.data {
        DataSpec::Synthetic {
            per_class,
            test_per_class,
            separation,
        } => {
            // one draw so train and test share class means
            let all = data::synth_gaussian(classes, dim, per_class + test_per_class, *separation, cfg.master_seed)?;
            let block = per_class + test_per_class;
            let train_idx: Vec<usize> = (0..classes).flat_map(|c| c * block..c * block + per_class).collect();
            let test_idx: Vec<usize> = (0..classes)
                .flat_map(|c| c * block + per_class..(c + 1) * block)
                .collect();
            let train = all.subset(&train_idx)?;
            let test = all.subset(&test_idx)?;
            (train, test)
        }
        DataSpec::Csv { train, test } => {
            let schema = CsvSchema { classes: Some(classes) };
            let tr = data::load_csv(train, schema)?;
            let te = match test {
                Some(p) => data::load_csv(p, schema)?,
                None => tr.clone(),
            };
            (tr, te)
        }
    };
    if train.dim() != dim {
        return Err(Error::config(
            "layers",
            format!("input width {dim} does not match data dimension {}", train.dim()),
        ));
    }
    let partition = match cfg.partition {
        PartitionSpec::Iid => data::partition_iid(&train, cfg.num_clients, cfg.master_seed)?,
        PartitionSpec::Dirichlet { alpha } => {
            data::partition_noniid(&train, cfg.num_clients, alpha, cfg.master_seed)?
        }
    };
    let pool = ClientPool::new(&train, &partition)?;
    Ok(World {
        train,
        test,
        partition,
        pool,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub model: ModelState,
}

impl RunOutcome {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("at least one eval point")
    }

    /// First evaluated round whose eval loss is at or below `target`.
    pub fn rounds_to_target(&self, target: f64) -> Option<u32> {
        self.rows.iter().find(|r| r.eval_loss <= target).map(|r| r.round)
    }

    pub fn summary(&self) -> String {
        let r = self.last();
        format!(
            "round {}: eval_loss={:.6} eval_accuracy={:.4} ctos_bytes_mean={:.1} peak_memory_bytes={} coverage={:.4}",
            r.round, r.eval_loss, r.eval_accuracy, r.ctos_bytes_mean, r.peak_memory_bytes, r.coverage_fraction
        )
    }
}

/// Runs the experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    run_in_world(cfg, &world)
}

pub fn run_in_world(cfg: &ExperimentConfig, world: &World) -> Result<RunOutcome> {
    let round_cfg = cfg.round_config();
    round_cfg.validate()?;
    let mut model = ModelState::init(&cfg.block_specs(), cfg.master_seed)?;
    let mut rows = Vec::new();
    let start = Instant::now();
    for r in 0..cfg.rounds {
        let (next, m) = server::run_round(&model, r, &round_cfg, &world.pool, cfg.master_seed)?;
        model = next;
        let round = r + 1;
        if round % cfg.eval_every == 0 || round == cfg.rounds {
            let (eval_loss, eval_accuracy) = match nn::evaluate(&model, &world.test.batch()) {
                Ok(x) => x,
                Err(Error::NonFinite(_)) => (f64::NAN, 0.0),
                Err(e) => return Err(e),
            };
            rows.push(MetricsRow {
                round,
                train_loss: m.train_loss,
                eval_loss,
                eval_accuracy,
                ctos_bytes_mean: m.ctos_bytes_mean,
                peak_memory_bytes: m.peak_memory_bytes,
                coverage_fraction: m.coverage_fraction,
                diverged_clients: m.diverged_clients as u32,
                wall_ms: if cfg.wall_clock {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                },
            });
        }
    }
    Ok(RunOutcome { rows, model })
}

/// Runs the experiment and writes its metrics CSV to `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let outcome = run_experiment(cfg)?;
    write_metrics_csv(&cfg.output, &outcome.rows)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Scheme,
    LocalSteps,
    Clients,
    FreezeFraction,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Scheme => "scheme",
            Axis::LocalSteps => "local_steps",
            Axis::Clients => "clients",
            Axis::FreezeFraction => "freeze_fraction",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "scheme" => Ok(Axis::Scheme),
            "local_steps" | "steps" => Ok(Axis::LocalSteps),
            "clients" | "clients_per_round" => Ok(Axis::Clients),
            "freeze_fraction" | "fraction" => Ok(Axis::FreezeFraction),
            other => Err(format!(
                "unknown axis `{other}` (expected scheme, local_steps, clients or freeze_fraction)"
            )),
        }
    }
}

impl Axis {
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let bad = |e: String| Error::config(self.to_string(), e);
        match self {
            Axis::Scheme => cfg.scheme = value.parse::<Scheme>().map_err(bad)?,
            Axis::LocalSteps => cfg.local_steps = value.parse().map_err(|e| bad(format!("{e}")))?,
            Axis::Clients => cfg.clients_per_round = value.parse().map_err(|e| bad(format!("{e}")))?,
            Axis::FreezeFraction => cfg.freeze_fraction = value.parse().map_err(|e| bad(format!("{e}")))?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub target_loss: f64,
    /// Empty when the target was never reached.
    pub rounds_to_target: Option<u32>,
    pub final_eval_loss: f64,
    pub final_eval_accuracy: f64,
    pub ctos_bytes_mean: f64,
    pub peak_memory_bytes: u64,
}

/// Loss target for convergence counts: `cfg.target_loss`, or the AVT run's
/// final eval loss scaled by `1 + cfg.target_margin`.
pub fn target_loss(cfg: &ExperimentConfig, world: &World) -> Result<f64> {
    if let Some(t) = cfg.target_loss {
        return Ok(t);
    }
    let mut avt = cfg.clone();
    avt.mode = TrainingMode::Avt;
    Ok(target_from_reference(cfg, run_in_world(&avt, world)?.last().eval_loss))
}

/// `cfg.target_loss`, or `reference_loss × (1 + cfg.target_margin)`.
pub fn target_from_reference(cfg: &ExperimentConfig, reference_loss: f64) -> f64 {
    cfg.target_loss
        .unwrap_or(reference_loss * (1.0 + cfg.target_margin))
}

/// One run per value of `axis`, all sharing the base seed and data.
pub fn ablate(base: &ExperimentConfig, axis: Axis, values: &[String]) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "need at least one value"));
    }
    base.validate()?;
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let world = build_world(base)?;
    let target = target_loss(base, &world)?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, value)| {
            let out = run_in_world(cfg, &world)?;
            let last = out.last();
            Ok(AblationRow {
                axis: axis.to_string(),
                value: value.clone(),
                target_loss: target,
                rounds_to_target: out.rounds_to_target(target),
                final_eval_loss: last.eval_loss,
                final_eval_accuracy: last.eval_accuracy,
                ctos_bytes_mean: last.ctos_bytes_mean,
                peak_memory_bytes: last.peak_memory_bytes,
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &std::path::Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for row in rows {
        w.serialize(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl ExperimentConfig {
    pub fn with_hyperparams(&self, hp: &Hyperparams) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.freeze_fraction = hp.freeze_fraction;
        cfg.local_steps = hp.local_steps;
        cfg.clients_per_round = hp.clients_per_round;
        cfg
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            freeze_fraction: self.freeze_fraction,
            local_steps: self.local_steps,
            clients_per_round: self.clients_per_round,
        }
    }
}

/// Escalation with final eval accuracy as the metric. The base config's
/// local steps and cohort are the starting point and the AVT reference.
pub fn escalate(cfg: &ExperimentConfig) -> Result<Escalation> {
    let budgets = cfg
        .budgets
        .ok_or_else(|| Error::config("escalate.ctos_budget", "no escalate.* budgets configured"))?;
    if budgets.max_clients > cfg.num_clients {
        return Err(Error::config("escalate.max_clients", "exceeds num_clients"));
    }
    cfg.validate()?;
    let world = build_world(cfg)?;
    let specs = cfg.block_specs();
    let model = ModelState::init(&specs, cfg.master_seed)?;
    let descriptors = taxonomy::classify(&model);
    let base = Hyperparams {
        freeze_fraction: 0.0,
        ..cfg.hyperparams()
    };
    let mut evaluator = |hp: &Hyperparams| -> Result<f64> {
        let run_cfg = cfg.with_hyperparams(hp);
        Ok(run_in_world(&run_cfg, &world)?.last().eval_accuracy)
    };
    server::escalate(
        base,
        &descriptors,
        &specs,
        &cfg.policy(),
        cfg.batch_size,
        &budgets,
        &mut evaluator,
    )
}

/// `key = value` lines that can be appended to a config.
pub fn format_escalation(e: &Escalation) -> String {
    let mut s = String::new();
    s.push_str(&format!("freeze_fraction = {}\n", e.chosen.freeze_fraction));
    s.push_str(&format!("local_steps = {}\n", e.chosen.local_steps));
    s.push_str(&format!("clients_per_round = {}\n", e.chosen.clients_per_round));
    s.push_str(&format!("# restored = {}\n", e.restored));
    s.push_str(&format!("# worst_case_peak_bytes = {}\n", e.worst_case_peak_bytes));
    s.push_str(&format!("# worst_case_ctos_bytes = {}\n", e.worst_case_ctos_bytes));
    if let Some(m) = e.reference_metric {
        s.push_str(&format!("# reference_accuracy = {m}\n"));
    }
    for stage in &e.stages {
        s.push_str(&format!(
            "# stage {}: fraction={} steps={} clients={} accuracy={}\n",
            stage.label,
            stage.params.freeze_fraction,
            stage.params.local_steps,
            stage.params.clients_per_round,
            stage.metric.map_or("-".to_string(), |m| m.to_string())
        ));
    }
    s
}
