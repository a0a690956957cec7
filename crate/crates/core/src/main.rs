use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use labelfree::agent::{load_checkpoint, ActMode, AgentPolicy};
use labelfree::envs::make_multitask_suite;
use labelfree::rollout::evaluate;
use labelfree::trainer::{plot_bin_usage, plot_scale_analysis, read_metrics, train, EnvScores, RecordKind, TrainConfig};
use labelfree::value_codec::BinSpace;

#[derive(Parser)]
#[command(name = "labelfree", version, about = "Train and inspect sequence actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the environment suite it was trained on.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Act greedily instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
    /// Tabulate critic losses against relative error at several target scales.
    PlotScale {
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        bins: usize,
        #[arg(long, default_value_t = -1e5, allow_hyphen_values = true)]
        low: f64,
        #[arg(long, default_value_t = 1e5)]
        high: f64,
        #[arg(long)]
        no_symlog: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        scales: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,-0.4,-0.3,-0.2,-0.1,0,0.1,0.2,0.3,0.4,0.5")]
        rel_errors: Vec<f64>,
    },
    /// Histogram of the critic's most likely bin over training.
    PlotBins {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Share of replayed environment steps contributed by each environment.
    ReportInflow {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn print_scores(scores: &std::collections::BTreeMap<String, EnvScores>) {
    for (tag, s) in scores {
        let attempts: Vec<String> = s.return_per_attempt.iter().map(|r| format!("{r:.4}")).collect();
        match s.normalized_score {
            Some(n) => println!("{tag:<24} normalized {n:.4}  per attempt [{}]", attempts.join(", ")),
            None => println!("{tag:<24} per attempt [{}]", attempts.join(", ")),
        }
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, workers, out } => {
            let mut cfg = TrainConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let outcome = train(&cfg, Some(&out))?;
            println!("env steps {}, gradient steps {}", outcome.env_steps, outcome.grad_steps);
            if let Some(r) = outcome.records.iter().rev().find(|r| r.kind == RecordKind::Eval) {
                print_scores(&r.eval);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { checkpoint, episodes, seed, greedy } => {
            let ck = load_checkpoint(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let cfg = TrainConfig::from_toml(&ck.echo).context("checkpoint does not carry a training config")?;
            let mut env = make_multitask_suite(&cfg.env)?;
            let policy = AgentPolicy { agent: &ck.agent, mode: if greedy { ActMode::Greedy } else { ActMode::Sample } };
            let report = evaluate(&mut env, &policy, &cfg.rollout, episodes, seed)?;
            print_scores(&report.iter().map(|(t, e)| (t.clone(), EnvScores::from(e))).collect());
        }
        Command::PlotScale { out, bins, low, high, no_symlog, scales, rel_errors } => {
            let space = BinSpace::new(bins, low, high, !no_symlog)?;
            let table = plot_scale_analysis(&space, &scales, &rel_errors)?;
            table.write(&out)?;
            print!("{}", table.to_csv());
        }
        Command::PlotBins { metrics, out } => {
            let usage = plot_bin_usage(&read_metrics(&metrics)?)?;
            usage.write(&out)?;
            println!("{} logging steps written to {}", usage.steps.len(), out.display());
        }
        Command::ReportInflow { metrics } => {
            let records = read_metrics(&metrics)?;
            let Some(last) = records.iter().rev().find(|r| !r.inflow.is_empty()) else {
                bail!("no inflow recorded in {}", metrics.display());
            };
            println!("env steps {}", last.env_steps);
            for (tag, share) in &last.inflow {
                println!("{tag:<24} {:.2}%", share * 100.0);
            }
        }
    }
    Ok(())
}
