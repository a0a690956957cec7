//! The joint loss over a batch of context slices.
//!
//! A training step runs in three stages:
//! 1. [`compute_targets`]: TD targets in scalar space from the target network.
//! 2. [`freeze`]: everything the loss treats as a constant (targets, actor
//!    values, filter weights) read off an online forward pass.
//! 3. [`assemble`]: the differentiable loss on the tape.

use std::sync::Arc;

use rand::RngCore;

use super::{ensemble_pair, filter_rate, td_target, Dependence, PopArtStats, TDConfig, UpdateVariant, LOG_FLOOR};
use crate::agent::{Agent, EncodedBatch, ForwardOut, Heads};
use crate::error::{Error, Result};
use crate::nn::{log_softmax_groups, softmax_groups, Matrix, Tape, Var};
use crate::replay::SliceBatch;

/// One `(h_i, a_i, r_i, h_{i+1})` transition inside a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPosition {
    pub row: usize,
    pub next_row: usize,
    pub action: usize,
    /// Reward as recorded, before objective masking.
    pub reward: f64,
    /// The reward counts toward the objective.
    pub counts: bool,
    pub terminal: bool,
}

impl LossPosition {
    /// Reward entering the TD target.
    pub fn target_reward(&self) -> f64 {
        if self.counts {
            self.reward
        } else {
            0.0
        }
    }
}

/// Transitions of every slice. With `train_exploration` off, positions whose
/// reward is masked are dropped entirely instead of having their reward zeroed.
pub fn loss_positions(batch: &SliceBatch, train_exploration: bool) -> Result<Vec<LossPosition>> {
    let l = batch.seq_len;
    let mut out = Vec::new();
    for (s, slice) in batch.slices.iter().enumerate() {
        for i in slice.pad..l.saturating_sub(1) {
            let (cur, next) = (slice.step(i).expect("valid row"), slice.step(i + 1).expect("valid row"));
            let action = next
                .prev_action
                .ok_or_else(|| Error::Domain("a step inside a slice has no previous action".into()))?;
            if !train_exploration && !cur.objective_mask {
                continue;
            }
            out.push(LossPosition {
                row: s * l + i,
                next_row: s * l + i + 1,
                action: usize::from(action),
                reward: f64::from(next.prev_reward),
                counts: cur.objective_mask,
                terminal: next.terminal,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::DegenerateBatch("no position of the batch can be trained".into()));
    }
    Ok(out)
}

/// Scalar TD targets, `positions x gammas`, from the target network.
pub fn compute_targets(
    agent: &Agent,
    enc: &EncodedBatch,
    positions: &[LossPosition],
    td: &TDConfig,
    rng: &mut dyn RngCore,
) -> Result<Matrix> {
    let (logits, raw) = agent.evaluate(&agent.target, enc, Heads::ALL)?;
    let a_count = agent.config().action_count;
    let policy = softmax_groups(&logits.expect("actor"), a_count);
    let critic = agent.critic_output(raw.expect("critic"));
    let k_count = td.ensemble_size;
    let mut y = Matrix::zeros(positions.len(), td.gammas.len());
    let mut member_values = vec![0.0; k_count];
    for (p, pos) in positions.iter().enumerate() {
        let (i, j) = ensemble_pair(k_count, rng)?;
        let pi = policy.row(pos.next_row);
        for (g, &gamma) in td.gammas.iter().enumerate() {
            for (k, v) in member_values.iter_mut().enumerate() {
                *v = (0..a_count).map(|a| pi[a] * agent.q_value(&critic, pos.next_row, k, g, a)).sum();
            }
            let q_next = member_values[i].min(member_values[j]);
            y.set(p, g, td_target(pos.target_reward(), pos.terminal, gamma, q_next)?);
        }
    }
    Ok(y)
}

/// Updates the per-discount statistics from the batch targets and rescales
/// the critic output layers to match.
pub fn observe_targets(agent: &mut Agent, targets: &Matrix, observe: impl Fn(&PopArtStats, &[f64]) -> PopArtStats) -> Result<()> {
    for g in 0..targets.cols() {
        let column: Vec<f64> = (0..targets.rows()).map(|p| targets.get(p, g)).collect();
        let new = observe(&agent.popart[g], &column);
        agent.popart_update(g, new)?;
    }
    Ok(())
}

/// Constants of one loss evaluation.
#[derive(Debug, Clone)]
pub struct Frozen {
    actor: ActorConst,
    critic: CriticConst,
}

#[derive(Debug, Clone)]
enum ActorConst {
    /// Weights on the policy probabilities: `-Q / P`.
    Dependent(Arc<Matrix>),
    /// Weights on the floored log-probabilities: `-1{A > 0} / P` at the taken action.
    Filtered(Arc<Matrix>),
}

#[derive(Debug, Clone)]
struct CriticConst {
    /// Rows of the `(rows * K * G * A, W)` view holding taken-action cells.
    gather: Vec<usize>,
    /// Two-hot targets or normalized scalar targets, one row per gathered cell.
    targets: Matrix,
    /// Averaging weight of each cell.
    weight: f64,
    twohot: bool,
}

/// Diagnostics of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub positions: usize,
    pub filter_rate: f64,
    pub advantages: Vec<f64>,
    /// Most likely bin of the designated-discount value of each taken action
    /// (two-hot critic only).
    pub bin_argmax: Vec<usize>,
    /// Masked positions whose reward still reached the encoder as an input.
    pub masked_reward_inputs: usize,
    /// Sum of |reward| that masked positions contributed to TD targets.
    pub masked_reward_in_targets: f64,
}

/// Reads the online outputs off the tape and fixes every loss constant.
pub fn freeze(
    agent: &Agent,
    tape: &Tape,
    out: &ForwardOut,
    enc: &EncodedBatch,
    positions: &[LossPosition],
    targets: &Matrix,
    variant: UpdateVariant,
    td: &TDConfig,
) -> Result<(Frozen, BatchStats)> {
    let cfg = agent.config();
    let (a_count, k_count, g_count) = (cfg.action_count, cfg.ensemble_size, cfg.gamma_count);
    if g_count != td.gammas.len() || k_count != td.ensemble_size {
        return Err(Error::Config("agent heads do not match the TD configuration".into()));
    }
    let critic_twohot = agent.bins().is_some();
    if critic_twohot != (variant.critic == Dependence::Independent) {
        return Err(Error::Config(format!("agent critic does not match update variant {}", variant.label())));
    }
    let rows = enc.rows();
    let n = positions.len() as f64;
    let logits = tape.value(out.logits.expect("actor head"));
    let raw = tape.value(out.critic.expect("critic head")).clone();
    let policy = softmax_groups(logits, a_count);
    let critic = agent.critic_output(raw);
    let fg = td.filter_gamma();

    // Ensemble-mean values at the designated discount, scalar space.
    let mut advantages = Vec::with_capacity(positions.len());
    let mut actor_w = Matrix::zeros(rows, a_count);
    let mut bin_argmax = Vec::new();
    for pos in positions {
        let q: Vec<f64> = (0..a_count)
            .map(|a| (0..k_count).map(|k| agent.q_value(&critic, pos.row, k, fg, a)).sum::<f64>() / k_count as f64)
            .collect();
        let pi = policy.row(pos.row);
        let baseline: f64 = pi.iter().zip(&q).map(|(p, v)| p * v).sum();
        let adv = q[pos.action] - baseline;
        advantages.push(adv);
        match variant.actor {
            Dependence::Dependent => {
                for a in 0..a_count {
                    // Scalar critics are optimized in normalized space.
                    let value = if critic_twohot {
                        q[a]
                    } else {
                        let s = &agent.popart[fg];
                        s.normalize(q[a])
                    };
                    actor_w.set(pos.row, a, -value / n);
                }
            }
            Dependence::Independent => {
                if adv > 0.0 {
                    actor_w.set(pos.row, pos.action, -1.0 / n);
                }
            }
        }
        if critic_twohot {
            let w = critic.width;
            let mut mean = vec![0.0; w];
            for k in 0..k_count {
                let off = cfg.cell_offset(k, fg, pos.action);
                for (m, v) in mean.iter_mut().zip(&critic.values.row(pos.row)[off..off + w]) {
                    *m += v;
                }
            }
            bin_argmax.push(crate::agent::argmax(&mean));
        }
    }
    let actor = match variant.actor {
        Dependence::Dependent => ActorConst::Dependent(Arc::new(actor_w)),
        Dependence::Independent => ActorConst::Filtered(Arc::new(actor_w)),
    };

    let width = cfg.cell_width();
    let mut gather = Vec::with_capacity(positions.len() * k_count * g_count);
    let mut critic_targets = Matrix::zeros(positions.len() * k_count * g_count, width);
    let mut cell = 0;
    for (p, pos) in positions.iter().enumerate() {
        for k in 0..k_count {
            for g in 0..g_count {
                gather.push(((pos.row * k_count + k) * g_count + g) * a_count + pos.action);
                let y = targets.get(p, g);
                match agent.bins() {
                    Some(bins) => bins.encode_into(y, critic_targets.row_mut(cell)),
                    None => critic_targets.set(cell, 0, agent.popart[g].normalize(y)),
                }
                cell += 1;
            }
        }
    }
    let critic = CriticConst {
        gather,
        targets: critic_targets,
        weight: 1.0 / (n * (k_count * g_count) as f64),
        twohot: critic_twohot,
    };

    let reward_col = cfg.obs_dim + cfg.action_count + 1;
    let masked: Vec<&LossPosition> = positions.iter().filter(|p| !p.counts).collect();
    let stats = BatchStats {
        positions: positions.len(),
        filter_rate: filter_rate(&advantages)?,
        advantages,
        bin_argmax,
        masked_reward_inputs: masked.iter().filter(|p| p.reward != 0.0 && enc.features.get(p.next_row, reward_col) != 0.0).count(),
        masked_reward_in_targets: masked.iter().map(|p| p.target_reward().abs()).sum(),
    };
    Ok((Frozen { actor, critic }, stats))
}

/// Differentiable loss pieces; `total = actor + lambda * critic`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub actor: Var,
    pub critic: Var,
}

pub fn assemble(tape: &mut Tape, out: &ForwardOut, frozen: &Frozen, lambda: f64, action_count: usize) -> LossVars {
    let logits = out.logits.expect("actor head");
    let actor = match &frozen.actor {
        ActorConst::Dependent(w) => {
            let probs = tape.softmax(logits, action_count);
            let weighted = tape.mul_const(probs, Arc::clone(w));
            tape.sum_all(weighted)
        }
        ActorConst::Filtered(w) => {
            let logp = tape.log_softmax(logits, action_count);
            let logp = tape.clamp_min(logp, LOG_FLOOR);
            let weighted = tape.mul_const(logp, Arc::clone(w));
            tape.sum_all(weighted)
        }
    };
    let c = &frozen.critic;
    let raw = out.critic.expect("critic head");
    let (rows, cols) = tape.value(raw).shape();
    let width = c.targets.cols();
    let cells = tape.reshape(raw, rows * cols / width, width);
    let taken = tape.gather_rows(cells, c.gather.clone());
    let critic = if c.twohot {
        let logp = tape.log_softmax(taken, width);
        let logp = tape.clamp_min(logp, LOG_FLOOR);
        let w = c.targets.map(|t| -t * c.weight);
        let ce = tape.mul_const(logp, Arc::new(w));
        tape.sum_all(ce)
    } else {
        let neg = c.targets.map(|t| -t);
        let diff = tape.add_const(taken, &neg);
        let sq = tape.mul(diff, diff);
        let sum = tape.sum_all(sq);
        tape.scale(sum, c.weight)
    };
    let weighted = tape.scale(critic, lambda);
    let total = tape.add(actor, weighted);
    LossVars { total, actor, critic }
}

/// `log_softmax` values of the actor at each position, for diagnostics.
pub fn taken_log_probs(tape: &Tape, out: &ForwardOut, positions: &[LossPosition], action_count: usize) -> Vec<f64> {
    let logp = log_softmax_groups(tape.value(out.logits.expect("actor head")), action_count);
    positions.iter().map(|p| logp.get(p.row, p.action).max(LOG_FLOOR)).collect()
}
