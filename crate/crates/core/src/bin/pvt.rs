use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use pvt_core::harness::{self, Axis, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pvt", version, about = "Federated partial-variable-training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (flat key = value file)
    #[arg(long)]
    config: PathBuf,
    /// Output path, overriding the config's `output`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config's `master_seed`
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV
    Run(Common),
    /// Run one experiment per value of an axis and write a comparison table
    Ablate {
        #[command(flatten)]
        common: Common,
        /// scheme, local_steps, clients or freeze_fraction
        #[arg(long)]
        axis: Axis,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Pick freeze fraction, local steps and cohort size under budgets
    Escalate {
        #[command(flatten)]
        common: Common,
        /// Peak client memory budget in bytes
        #[arg(long)]
        memory_budget: Option<u64>,
        /// Client-to-server bytes per round budget
        #[arg(long)]
        ctos_budget: Option<u64>,
        /// Largest local step count a device allows
        #[arg(long)]
        max_local_steps: Option<usize>,
        /// Largest cohort to try
        #[arg(long)]
        max_clients: Option<usize>,
        /// Accuracy gap to the all-variable reference that counts as restored
        #[arg(long)]
        gap_tolerance: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let outcome = harness::run(&cfg)?;
            println!("{}", outcome.summary());
            println!("metrics written to {}", cfg.output.display());
        }
        Command::Ablate { common, axis, values } => {
            let cfg = common.load()?;
            let rows = harness::ablate(&cfg, axis, &values)?;
            for r in &rows {
                let rounds = r.rounds_to_target.map_or("never".to_string(), |n| n.to_string());
                println!(
                    "{}={}: rounds_to_target={} (target {:.6}) final_eval_loss={:.6} final_eval_accuracy={:.4}",
                    r.axis, r.value, rounds, r.target_loss, r.final_eval_loss, r.final_eval_accuracy
                );
            }
            harness::write_ablation_csv(&cfg.output, &rows)?;
            println!("table written to {}", cfg.output.display());
        }
        Command::Escalate {
            common,
            memory_budget,
            ctos_budget,
            max_local_steps,
            max_clients,
            gap_tolerance,
        } => {
            let mut cfg = common.load()?;
            let mut budgets = cfg.budgets.unwrap_or(pvt_core::server::Budgets {
                memory_bytes: u64::MAX,
                ctos_bytes: u64::MAX,
                max_local_steps: cfg.local_steps,
                max_clients: cfg.num_clients,
                gap_tolerance: 0.02,
            });
            if let Some(v) = memory_budget {
                budgets.memory_bytes = v;
            }
            if let Some(v) = ctos_budget {
                budgets.ctos_bytes = v;
            }
            if let Some(v) = max_local_steps {
                budgets.max_local_steps = v;
            }
            if let Some(v) = max_clients {
                budgets.max_clients = v;
            }
            if let Some(v) = gap_tolerance {
                budgets.gap_tolerance = v;
            }
            cfg.budgets = Some(budgets);
            let result = harness::escalate(&cfg)?;
            let text = harness::format_escalation(&result);
            print!("{text}");
            std::fs::write(&cfg.output, &text)
                .with_context(|| format!("writing {}", cfg.output.display()))?;
        }
    }
    Ok(())
}
