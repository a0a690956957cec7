use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// One position of a meta-rollout sequence: the observation `o_i` together
/// with what happened on the previous step (`a_{i-1}`, `r_{i-1}`, `d_{i-1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    pub obs: Vec<f32>,
    /// `None` at the first position of a meta-rollout.
    pub prev_action: Option<u16>,
    pub prev_reward: f32,
    /// The previous step ended an inner episode.
    pub prev_done: bool,
    /// The meta-rollout ended (all attempts used) with the previous step.
    pub terminal: bool,
    pub episode_index: u8,
    /// The reward earned by acting at this position counts toward the objective.
    pub objective_mask: bool,
    /// Diagnostic label of the environment that produced the record.
    pub env_tag: Arc<str>,
}

impl TimestepRecord {
    /// The part of a record the learner is allowed to see.
    pub fn view(&self) -> StepView {
        StepView {
            obs: self.obs.clone(),
            prev_action: self.prev_action,
            prev_reward: self.prev_reward,
            prev_done: self.prev_done,
            terminal: self.terminal,
            episode_index: self.episode_index,
            objective_mask: self.objective_mask,
        }
    }
}

/// A [`TimestepRecord`] without its environment label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub obs: Vec<f32>,
    pub prev_action: Option<u16>,
    pub prev_reward: f32,
    pub prev_done: bool,
    pub terminal: bool,
    pub episode_index: u8,
    pub objective_mask: bool,
}

/// A complete meta-rollout.
///
/// `records.len() == steps() + 1`: the last record carries the outcome of
/// the final action.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TimestepRecord>,
}

impl Trajectory {
    pub fn new(records: Vec<TimestepRecord>) -> Self {
        Self { records }
    }

    /// Number of environment steps taken.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.steps() == 0
    }

    pub fn env_tag(&self) -> Arc<str> {
        self.records.first().map_or_else(|| Arc::from(""), |r| Arc::clone(&r.env_tag))
    }

    /// Whether the rollout used up all attempts rather than hitting the horizon.
    pub fn terminated(&self) -> bool {
        self.records.last().is_some_and(|r| r.terminal)
    }

    /// Rewards summed per attempt, indexed by episode.
    pub fn returns_per_attempt(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for pair in self.records.windows(2) {
            let ep = pair[0].episode_index as usize;
            if ep < k {
                out[ep] += f64::from(pair[1].prev_reward);
            }
        }
        out
    }

    /// Sum of rewards that count toward the objective.
    pub fn objective_return(&self) -> f64 {
        self.records
            .windows(2)
            .filter(|p| p[0].objective_mask)
            .map(|p| f64::from(p[1].prev_reward))
            .sum()
    }
}
