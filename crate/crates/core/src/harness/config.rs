//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//! Required keys: `layers`, `num_clients`, `clients_per_round`, `rounds`.
//! See the README for the full key list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::client::ClientConfig;
use crate::freezing::{FreezeWeighting, Scheme, SchemeConfig};
use crate::nn::{mlp_specs, BlockSpec};
use crate::server::{Budgets, RoundConfig, TrainingMode};
use crate::taxonomy::FreezabilityPolicy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic {
        per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionSpec {
    Iid,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Layer widths, input first, classes last.
    pub layers: Vec<usize>,
    pub data: DataSpec,
    pub partition: PartitionSpec,
    pub num_clients: usize,
    pub mode: TrainingMode,
    pub scheme: Scheme,
    pub freeze_fraction: f64,
    pub freeze_weighting: FreezeWeighting,
    pub freeze_additive: bool,
    pub clients_per_round: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    pub server_lr: f64,
    pub rounds: u32,
    pub eval_every: u32,
    pub master_seed: u64,
    pub output: PathBuf,
    pub target_loss: Option<f64>,
    /// Relative slack over the AVT final loss when `target_loss` is unset.
    pub target_margin: f64,
    pub wall_clock: bool,
    pub budgets: Option<Budgets>,
}

const KEYS: &[&str] = &[
    "layers",
    "data",
    "synth.per_class",
    "synth.test_per_class",
    "synth.separation",
    "csv.train",
    "csv.test",
    "partition",
    "partition.alpha",
    "num_clients",
    "mode",
    "scheme",
    "freeze_fraction",
    "freeze_weighting",
    "freeze_additive",
    "clients_per_round",
    "local_steps",
    "batch_size",
    "client_lr",
    "server_lr",
    "rounds",
    "eval_every",
    "master_seed",
    "output",
    "target_loss",
    "target_margin",
    "wall_clock",
    "escalate.memory_budget",
    "escalate.ctos_budget",
    "escalate.max_local_steps",
    "escalate.max_clients",
    "escalate.gap_tolerance",
];

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).ok_or_else(|| Error::config(key, "missing required field"))?;
        parse_value(key, raw)
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|raw| parse_value(key, raw)).transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.optional(key)?.unwrap_or(default))
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{raw}`: {e}")))
}

fn parse_mode(raw: &str) -> Result<TrainingMode> {
    match raw.to_ascii_lowercase().as_str() {
        "pvt" => Ok(TrainingMode::Pvt),
        "avt" => Ok(TrainingMode::Avt),
        _ => Err(Error::config("mode", format!("`{raw}` is not pvt or avt"))),
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::config(k, "unknown key"));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(k, "given more than once"));
            }
        }
        let f = Fields { map };

        let layers_raw: String = f.required("layers")?;
        let layers = layers_raw
            .split(',')
            .map(|s| parse_value::<usize>("layers", s.trim()))
            .collect::<Result<Vec<_>>>()?;

        let data = match f.or("data", "synthetic".to_string())?.as_str() {
            "synthetic" => DataSpec::Synthetic {
                per_class: f.or("synth.per_class", 200)?,
                test_per_class: f.or("synth.test_per_class", 100)?,
                separation: f.or("synth.separation", 3.0)?,
            },
            "csv" => DataSpec::Csv {
                train: f.required::<PathBuf>("csv.train")?,
                test: f.optional("csv.test")?,
            },
            other => return Err(Error::config("data", format!("`{other}` is not synthetic or csv"))),
        };

        let partition = match f.or("partition", "iid".to_string())?.as_str() {
            "iid" => PartitionSpec::Iid,
            "dirichlet" => PartitionSpec::Dirichlet {
                alpha: f.required("partition.alpha")?,
            },
            other => return Err(Error::config("partition", format!("`{other}` is not iid or dirichlet"))),
        };

        let mode = parse_mode(&f.or("mode", "pvt".to_string())?)?;
        let scheme = f.or("scheme", Scheme::PerClientPerRound)?;
        let freeze_weighting = f.or("freeze_weighting", FreezeWeighting::VariableCount)?;

        let budgets = if f.map.keys().any(|k| k.starts_with("escalate.")) {
            Some(Budgets {
                memory_bytes: f.or("escalate.memory_budget", u64::MAX)?,
                ctos_bytes: f.or("escalate.ctos_budget", u64::MAX)?,
                max_local_steps: f.or("escalate.max_local_steps", 5)?,
                max_clients: f.or("escalate.max_clients", 128)?,
                gap_tolerance: f.or("escalate.gap_tolerance", 0.02)?,
            })
        } else {
            None
        };

        let cfg = ExperimentConfig {
            layers,
            data,
            partition,
            num_clients: f.required("num_clients")?,
            mode,
            scheme,
            freeze_fraction: f.or("freeze_fraction", 0.9)?,
            freeze_weighting,
            freeze_additive: f.or("freeze_additive", false)?,
            clients_per_round: f.required("clients_per_round")?,
            local_steps: f.or("local_steps", 5)?,
            batch_size: f.or("batch_size", 16)?,
            client_lr: f.or("client_lr", 0.1)?,
            server_lr: f.or("server_lr", 1.0)?,
            rounds: f.required("rounds")?,
            eval_every: f.or("eval_every", 1)?,
            master_seed: f.or("master_seed", 0)?,
            output: f.or("output", PathBuf::from("metrics.csv"))?,
            target_loss: f.optional("target_loss")?,
            target_margin: f.or("target_margin", 0.02)?,
            wall_clock: f.or("wall_clock", false)?,
            budgets,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(Error::config("layers", "need at least two positive widths"));
        }
        for (key, v) in [
            ("num_clients", self.num_clients),
            ("clients_per_round", self.clients_per_round),
            ("local_steps", self.local_steps),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be positive"));
        }
        if self.clients_per_round > self.num_clients {
            return Err(Error::config("clients_per_round", "exceeds num_clients"));
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return Err(Error::config("freeze_fraction", "must lie in [0, 1]"));
        }
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite()) {
            return Err(Error::config("client_lr", "must be a finite non-negative number"));
        }
        if !(self.server_lr >= 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config("server_lr", "must be a finite non-negative number"));
        }
        if let DataSpec::Synthetic {
            per_class,
            test_per_class,
            separation,
        } = self.data
        {
            if per_class == 0 || test_per_class == 0 {
                return Err(Error::config("synth.per_class", "must be positive"));
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return Err(Error::config("synth.separation", "must be a finite non-negative number"));
            }
            if self.layers[self.layers.len() - 1] < 2 {
                return Err(Error::config("layers", "synthetic data needs at least two classes"));
            }
        }
        if !(self.target_margin >= 0.0 && self.target_margin.is_finite()) {
            return Err(Error::config("target_margin", "must be a finite non-negative number"));
        }
        if let PartitionSpec::Dirichlet { alpha } = self.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config("partition.alpha", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        mlp_specs(&self.layers)
    }

    pub fn policy(&self) -> FreezabilityPolicy {
        if self.freeze_additive {
            FreezabilityPolicy::all()
        } else {
            FreezabilityPolicy::default()
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        let mut scheme = SchemeConfig::new(self.scheme, self.freeze_fraction, self.master_seed);
        scheme.weighting = self.freeze_weighting;
        RoundConfig {
            clients_per_round: self.clients_per_round,
            scheme,
            client: ClientConfig {
                local_steps: self.local_steps,
                batch_size: self.batch_size,
                learning_rate: self.client_lr,
            },
            server_lr: self.server_lr,
            policy: self.policy(),
            mode: self.mode,
        }
    }
}
