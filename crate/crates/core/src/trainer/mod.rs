//! Training loop: collect meta-rollouts, take gradient steps on replayed
//! slices, evaluate, and write metrics and checkpoints.

mod config;
mod learner;
mod metrics;
mod plots;

pub use config::{ModelConfig, TrainConfig};
pub use learner::{Learner, LearnerSettings, StepReport};
pub use metrics::{parse_metrics, read_metrics, EnvScores, MetricsRecord, MetricsWriter, PopArtSnapshot, RecordKind};
pub use plots::{plot_bin_usage, plot_scale_analysis, smooth_prediction, BinUsage, ScaleAnalysis};

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{save_checkpoint, ActMode, Agent, AgentPolicy};
use crate::envs::{make_multitask_suite, mix_seed};
use crate::error::{Error, Result};
use crate::objectives::Dependence;
use crate::replay::{SharedStore, TrajectoryStore};
use crate::rollout::{evaluate, run_meta_rollout, Env, EvalReport, Trajectory};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.lfck";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Seed of the `index`-th training rollout.
pub fn rollout_seed(seed: u64, index: u64) -> u64 {
    mix_seed(mix_seed(seed ^ 0x0001_D0E5_0000_0001).wrapping_add(index))
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    mix_seed(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub records: Vec<MetricsRecord>,
    pub env_steps: u64,
    pub grad_steps: u64,
    /// Gradient steps skipped because a batch held no trainable position.
    pub skipped_steps: u64,
}

/// Running means since the last train record.
#[derive(Default)]
struct Interval {
    n: u64,
    joint: f64,
    actor: f64,
    critic: f64,
    grad_norm: f64,
    filter_rate: f64,
    masked_inputs: u64,
    masked_targets: f64,
    last_bins: Option<Vec<usize>>,
}

impl Interval {
    fn add(&mut self, r: &StepReport) {
        self.n += 1;
        self.joint += r.total;
        self.actor += r.actor;
        self.critic += r.critic;
        self.grad_norm += r.grad_norm;
        self.filter_rate += r.stats.filter_rate;
        self.masked_inputs += r.stats.masked_reward_inputs as u64;
        self.masked_targets += r.stats.masked_reward_in_targets;
        self.last_bins = (!r.stats.bin_argmax.is_empty()).then(|| r.stats.bin_argmax.clone());
    }
}

struct Sink {
    dir: Option<PathBuf>,
    writer: Option<MetricsWriter<BufWriter<File>>>,
    echo: String,
    records: Vec<MetricsRecord>,
}

impl Sink {
    fn emit(&mut self, r: MetricsRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.write(&r)?;
        }
        self.records.push(r);
        Ok(())
    }

    fn checkpoint(&self, agent: &Agent) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                // Write then rename so an interrupted save never clobbers the last good file.
                let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
                save_checkpoint(&tmp, agent, &self.echo)?;
                fs::rename(tmp, dir.join(CHECKPOINT_FILE))?;
                Ok(())
            }
            None => Ok(()),
        }
    }
}

/// Runs one meta-rollout per index, `workers` at a time, each worker with its
/// own copy of the environment suite. Trajectories are appended to the store
/// as workers finish; with one worker the order is the index order.
fn collect(
    config: &TrainConfig,
    agent: &Agent,
    envs: &mut [Box<dyn Env>],
    store: &SharedStore,
    first_index: u64,
) -> Result<u64> {
    let policy = AgentPolicy { agent, mode: ActMode::Sample };
    let run = |env: &mut Box<dyn Env>, index: u64| -> Result<u64> {
        let traj: Trajectory = run_meta_rollout(env.as_mut(), &policy, &config.rollout, rollout_seed(config.seed, index))?;
        let steps = traj.steps() as u64;
        store.write().map_err(|_| Error::Rollout("replay lock poisoned".into()))?.append(traj)?;
        Ok(steps)
    };
    if envs.len() == 1 {
        return run(&mut envs[0], first_index);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = envs
            .iter_mut()
            .enumerate()
            .map(|(w, env)| {
                let run = &run;
                s.spawn(move || run(env, first_index + w as u64))
            })
            .collect();
        let mut total = 0;
        for h in handles {
            total += h.join().map_err(|_| Error::Rollout("rollout worker panicked".into()))??;
        }
        Ok(total)
    })
}

fn eval_record(config: &TrainConfig, agent: &Agent, env: &mut dyn Env, step: u64, env_steps: u64, index: u64) -> Result<MetricsRecord> {
    let mode = if config.greedy_eval { ActMode::Greedy } else { ActMode::Sample };
    let policy = AgentPolicy { agent, mode };
    let report: EvalReport = evaluate(env, &policy, &config.rollout, config.eval_rollouts, stream_seed(config.seed, 0xE0A1 + index))?;
    let mut r = MetricsRecord::empty(RecordKind::Eval, step, env_steps);
    r.eval = report.iter().map(|(tag, e)| (tag.clone(), EnvScores::from(e))).collect::<BTreeMap<_, _>>();
    Ok(r)
}

fn train_record(interval: &Interval, agent: &Agent, store: &SharedStore, step: u64, env_steps: u64, bins: Option<usize>) -> Result<MetricsRecord> {
    let mut r = MetricsRecord::empty(RecordKind::Train, step, env_steps);
    let n = interval.n.max(1) as f64;
    if interval.n > 0 {
        r.joint_loss = Some(interval.joint / n);
        r.actor_loss = Some(interval.actor / n);
        r.critic_loss = Some(interval.critic / n);
        r.grad_norm = Some(interval.grad_norm / n);
        r.filter_rate = Some(interval.filter_rate / n);
    }
    if let (Some(b), Some(last)) = (bins, &interval.last_bins) {
        let mut h = vec![0u64; b];
        for i in last {
            h[*i] += 1;
        }
        r.bin_usage = Some(h);
    }
    if agent.bins().is_none() {
        r.popart = agent.popart.iter().map(|s| PopArtSnapshot { mu: s.mu, sigma: s.sigma }).collect();
    }
    r.inflow = store.read().map_err(|_| Error::Rollout("replay lock poisoned".into()))?.inflow_report();
    r.masked_reward_inputs = interval.masked_inputs;
    r.masked_reward_in_targets = interval.masked_targets;
    Ok(r)
}

/// Trains from scratch. With `out_dir`, writes the config echo, the metrics
/// stream and checkpoints there. On divergence the last good checkpoint is
/// written and the error returned.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let agent_config = config.agent_config()?;
    let bins = agent_config.bins.map(|b| b.num_bins);
    let agent = Agent::new(agent_config, stream_seed(config.seed, 1))?;
    let echo = config.to_toml()?;
    let mut sink = Sink { dir: out_dir.map(Path::to_path_buf), writer: None, echo, records: Vec::new() };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_ECHO_FILE), &sink.echo)?;
        sink.writer = Some(MetricsWriter::create(&dir.join(METRICS_FILE))?);
    }

    let settings = LearnerSettings {
        variant: config.variant,
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        grad_clip_norm: config.grad_clip_norm,
        train_exploration: config.train_exploration,
    };
    let mut learner = Learner::new(agent, config.td.clone(), settings, stream_seed(config.seed, 2))?;
    let store = TrajectoryStore::shared(config.replay_capacity)?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 3));
    let mut envs: Vec<Box<dyn Env>> =
        (0..config.workers).map(|_| make_multitask_suite(&config.env).map(|e| Box::new(e) as Box<dyn Env>)).collect::<Result<_>>()?;
    let mut eval_env = make_multitask_suite(&config.env)?;
    debug_assert_eq!(config.variant.critic == Dependence::Independent, bins.is_some());

    // The agent only changes on successful steps, so whatever it holds when
    // an error surfaces is the last good state.
    let mut run = || -> Result<(u64, u64)> {
        let (mut env_steps, mut rollouts, mut skipped) = (0u64, 0u64, 0u64);
        let mut evals = 0u64;
        let mut last_eval_at = None;
        let mut next_eval = config.eval_interval;
        let mut next_ckpt = config.checkpoint_interval;
        let mut interval = Interval::default();

        while env_steps < config.total_env_steps {
            let n = config.workers as u64;
            env_steps += collect(config, learner.agent(), &mut envs, &store, rollouts)?;
            rollouts += n;

            for _ in 0..config.train_steps_per_rollout * config.workers {
                let batch = {
                    let guard = store.read().map_err(|_| Error::Training("replay lock poisoned".into()))?;
                    guard.sample_slices(config.batch_size, learner.agent().config().train_seq_len(), &mut sample_rng)?
                };
                match learner.step(&batch) {
                    Ok(report) => interval.add(&report),
                    Err(Error::DegenerateBatch(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
                if learner.steps() > 0 && learner.steps().is_multiple_of(config.log_interval) && interval.n > 0 {
                    let r = train_record(&interval, learner.agent(), &store, learner.steps(), env_steps, bins)?;
                    sink.emit(r)?;
                    interval = Interval::default();
                }
            }

            if config.eval_interval > 0 && env_steps >= next_eval {
                let r = eval_record(config, learner.agent(), &mut eval_env, learner.steps(), env_steps, evals)?;
                sink.emit(r)?;
                evals += 1;
                last_eval_at = Some(env_steps);
                while next_eval <= env_steps {
                    next_eval += config.eval_interval;
                }
            }
            if config.checkpoint_interval > 0 && env_steps >= next_ckpt {
                sink.checkpoint(learner.agent())?;
                while next_ckpt <= env_steps {
                    next_ckpt += config.checkpoint_interval;
                }
            }
        }

        if interval.n > 0 {
            let r = train_record(&interval, learner.agent(), &store, learner.steps(), env_steps, bins)?;
            sink.emit(r)?;
        }
        if config.eval_interval > 0 && env_steps > 0 && last_eval_at != Some(env_steps) {
            let r = eval_record(config, learner.agent(), &mut eval_env, learner.steps(), env_steps, evals)?;
            sink.emit(r)?;
        }
        Ok((env_steps, skipped))
    };
    let (env_steps, skipped) = match run() {
        Ok(v) => v,
        Err(e) => {
            sink.checkpoint(learner.agent())?;
            return Err(e);
        }
    };
    sink.checkpoint(learner.agent())?;
    if let Some(w) = sink.writer.take() {
        w.into_inner().flush()?;
    }
    let grad_steps = learner.steps();
    Ok(TrainOutcome { agent: learner.into_agent(), records: sink.records, env_steps, grad_steps, skipped_steps: skipped })
}
