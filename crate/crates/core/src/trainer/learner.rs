use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, Heads};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW, Tape};
use crate::objectives::batch::{assemble, compute_targets, freeze, loss_positions, observe_targets, BatchStats};
use crate::objectives::{popart_observe, Dependence, TDConfig, UpdateVariant};
use crate::replay::SliceBatch;

/// Optimizer settings of a [`Learner`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSettings {
    pub variant: UpdateVariant,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub train_exploration: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub total: f64,
    pub actor: f64,
    pub critic: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub stats: BatchStats,
}

/// Sole writer of the agent's parameters.
#[derive(Debug, Clone)]
pub struct Learner {
    agent: Agent,
    opt: AdamW,
    td: TDConfig,
    settings: LearnerSettings,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Learner {
    pub fn new(agent: Agent, td: TDConfig, settings: LearnerSettings, seed: u64) -> Result<Self> {
        td.validate()?;
        let cfg = agent.config();
        if cfg.gamma_count != td.gammas.len() || cfg.ensemble_size != td.ensemble_size {
            return Err(Error::Config("agent heads do not match the TD configuration".into()));
        }
        if cfg.bins.is_some() != (settings.variant.critic == Dependence::Independent) {
            return Err(Error::Config(format!("agent critic does not match update variant {}", settings.variant.label())));
        }
        let opt = AdamW::new(&agent.online, settings.learning_rate, settings.weight_decay);
        Ok(Self { agent, opt, td, settings, rng: ChaCha8Rng::seed_from_u64(seed), steps: 0 })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn into_agent(self) -> Agent {
        self.agent
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One gradient step. On a non-finite loss or gradient the agent is left
    /// exactly as it was before the call.
    pub fn step(&mut self, batch: &SliceBatch) -> Result<StepReport> {
        let backup = self.agent.clone();
        match self.try_step(batch) {
            Ok(r) => {
                self.steps += 1;
                Ok(r)
            }
            Err(e) => {
                self.agent = backup;
                Err(e)
            }
        }
    }

    fn try_step(&mut self, batch: &SliceBatch) -> Result<StepReport> {
        let variant = self.settings.variant;
        let positions = loss_positions(batch, self.settings.train_exploration)?;
        let enc = self.agent.encode_batch(batch)?;
        let targets = compute_targets(&self.agent, &enc, &positions, &self.td, &mut self.rng)?;
        if variant.critic == Dependence::Dependent {
            let (beta, eps) = (self.td.popart_beta, self.td.popart_eps);
            observe_targets(&mut self.agent, &targets, |s, y| {
                popart_observe(&crate::objectives::PopArtStats { beta, eps, ..*s }, y)
            })?;
        }
        let mut tape = Tape::new();
        let out = self.agent.forward(&mut tape, &self.agent.online, true, &enc, Heads::ALL)?;
        let (frozen, stats) = freeze(&self.agent, &tape, &out, &enc, &positions, &targets, variant, &self.td)?;
        let loss = assemble(&mut tape, &out, &frozen, self.td.lambda, self.agent.config().action_count);
        let (total, actor, critic) = (tape.scalar(loss.total), tape.scalar(loss.actor), tape.scalar(loss.critic));
        if !total.is_finite() {
            return Err(Error::Training(format!("loss is {total} (actor {actor}, critic {critic})")));
        }
        let grads = tape.backward(loss.total);
        let mut grads = tape.param_grads(&grads);
        let grad_norm = clip_grad_norm(&mut grads, self.settings.grad_clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Training(format!("gradient norm is {grad_norm}")));
        }
        self.opt.step(&mut self.agent.online, &grads);
        self.agent.target_sync(self.td.polyak_tau)?;
        Ok(StepReport { total, actor, critic, grad_norm, stats })
    }
}
