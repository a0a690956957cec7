//! Line-delimited JSON metrics. Records carry no wall-clock data, so a
//! seeded single-worker run reproduces its stream byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::EnvEvaluation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvScores {
    pub rollouts: usize,
    pub return_per_attempt: Vec<f64>,
    /// Absent when the environment has no known optimum.
    pub normalized_per_attempt: Option<Vec<f64>>,
    pub normalized_score: Option<f64>,
}

impl From<&EnvEvaluation> for EnvScores {
    fn from(e: &EnvEvaluation) -> Self {
        let return_per_attempt: Vec<f64> = e.per_attempt.iter().map(|s| s.mean).collect();
        let normalized_per_attempt = e.optimal_per_attempt.map(|o| return_per_attempt.iter().map(|r| r / o).collect());
        Self { rollouts: e.rollouts, return_per_attempt, normalized_per_attempt, normalized_score: e.normalized_score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopArtSnapshot {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    /// Gradient steps taken so far.
    pub step: u64,
    pub env_steps: u64,
    /// Means over the gradient steps since the previous train record.
    pub joint_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub filter_rate: Option<f64>,
    /// Argmax-bin counts over the last batch; absent for a scalar critic.
    pub bin_usage: Option<Vec<u64>>,
    /// One entry per discount; empty for a two-hot critic.
    pub popart: Vec<PopArtSnapshot>,
    pub inflow: BTreeMap<String, f64>,
    pub eval: BTreeMap<String, EnvScores>,
    /// Exploration-attempt positions whose reward reached the encoder input.
    pub masked_reward_inputs: u64,
    /// Sum of |reward| those positions put into TD targets (zero by design).
    pub masked_reward_in_targets: f64,
}

impl MetricsRecord {
    pub fn empty(kind: RecordKind, step: u64, env_steps: u64) -> Self {
        Self {
            kind,
            step,
            env_steps,
            joint_loss: None,
            actor_loss: None,
            critic_loss: None,
            grad_norm: None,
            filter_rate: None,
            bin_usage: None,
            popart: Vec::new(),
            inflow: BTreeMap::new(),
            eval: BTreeMap::new(),
            masked_reward_inputs: 0,
            masked_reward_in_targets: 0.0,
        }
    }
}

/// Appends records to a sink, one JSON object per line.
pub struct MetricsWriter<W: Write> {
    sink: W,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Self {
        Self { sink }
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        self.sink.write_all(line.as_bytes())?;
        self.sink.write_all(b"\n")?;
        self.sink.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

pub fn parse_metrics(reader: impl BufRead) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("metrics line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    parse_metrics(BufReader::new(File::open(path)?))
}
