//! Sequence policy: a timestep encoder, a causal core over the context
//! window, an actor head and an ensemble of multi-discount critic heads.
//! The target network is a full copy of the parameters.

mod checkpoint;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_weight, softmax_groups, Matrix, ParamSet, Tape, Var};
use crate::objectives::{popart_preserve, PopArtStats};
use crate::replay::SliceBatch;
use crate::rollout::{Policy, StepView};
use crate::value_codec::{symlog, BinSpace};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

const LN_EPS: f64 = 1e-5;
const LEAK: f64 = 0.01;
const HEAD_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreKind {
    Transformer,
    Gru,
}

/// How the previous reward enters the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardInput {
    Raw,
    Symlog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsConfig {
    pub num_bins: usize,
    pub low: f64,
    pub high: f64,
    pub symlog: bool,
}

impl Default for BinsConfig {
    fn default() -> Self {
        Self { num_bins: 128, low: -1e5, high: 1e5, symlog: true }
    }
}

impl BinsConfig {
    pub fn build(&self) -> Result<BinSpace> {
        BinSpace::new(self.num_bins, self.low, self.high, self.symlog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    /// Hidden widths of the timestep encoder; its output width is `embed_dim`.
    pub encoder_widths: Vec<usize>,
    pub embed_dim: usize,
    pub core: CoreKind,
    pub core_depth: usize,
    pub core_heads: usize,
    /// Feed-forward width inside each attention block.
    pub ff_dim: usize,
    pub context_len: usize,
    pub actor_head_widths: Vec<usize>,
    pub critic_head_widths: Vec<usize>,
    /// Present for a two-hot critic, absent for a scalar one.
    pub bins: Option<BinsConfig>,
    pub ensemble_size: usize,
    pub gamma_count: usize,
    pub reward_input: RewardInput,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("obs_dim", self.obs_dim),
            ("action_count", self.action_count),
            ("embed_dim", self.embed_dim),
            ("core_depth", self.core_depth),
            ("core_heads", self.core_heads),
            ("ff_dim", self.ff_dim),
            ("context_len", self.context_len),
            ("ensemble_size", self.ensemble_size),
            ("gamma_count", self.gamma_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.action_count >= usize::from(u16::MAX) {
            return Err(Error::Config("too many actions".into()));
        }
        if self.actor_head_widths.iter().chain(&self.critic_head_widths).chain(&self.encoder_widths).any(|w| *w == 0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if self.core == CoreKind::Transformer && self.embed_dim % self.core_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.core_heads
            )));
        }
        if let Some(b) = &self.bins {
            b.build()?;
        }
        Ok(())
    }

    /// Values per critic cell: bins for a two-hot critic, 1 for a scalar one.
    pub fn cell_width(&self) -> usize {
        self.bins.map_or(1, |b| b.num_bins)
    }

    /// `K * G * A` critic cells.
    pub fn critic_cells(&self) -> usize {
        self.ensemble_size * self.gamma_count * self.action_count
    }

    /// Training slices carry one row past the context so the last trained
    /// position still has a next step to bootstrap from.
    pub fn train_seq_len(&self) -> usize {
        self.context_len + 1
    }

    /// Column of cell `(k, g, a)` in the critic output.
    pub fn cell_offset(&self, k: usize, g: usize, a: usize) -> usize {
        ((k * self.gamma_count + g) * self.action_count + a) * self.cell_width()
    }

    /// Encoder input: observation, previous action with a null slot, reward, done.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.action_count + 1 + 2
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    qkv: Linear,
    proj: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct GruLayer {
    x: Linear,
    h: Linear,
}

#[derive(Debug, Clone)]
enum CoreLayout {
    Transformer { blocks: Vec<Block>, out: Norm },
    Gru { layers: Vec<GruLayer> },
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Linear>,
    enc_norm: Norm,
    core: CoreLayout,
    actor: Vec<Linear>,
    critics: Vec<Vec<Linear>>,
}

struct Builder {
    params: ParamSet,
    rng: ChaCha8Rng,
}

impl Builder {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let w = self.params.push(format!("{name}.w"), init_weight(&mut self.rng, fan_in, fan_out, gain));
        let b = self.params.push(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Linear { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.params.push(format!("{name}.g"), Matrix::filled(1, dim, 1.0));
        let b = self.params.push(format!("{name}.b"), Matrix::zeros(1, dim));
        Norm { g, b }
    }

    fn mlp(&mut self, name: &str, input: usize, widths: &[usize], out: usize, out_gain: f64) -> Vec<Linear> {
        let mut layers = Vec::new();
        let mut prev = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(self.linear(&format!("{name}.{i}"), prev, w, 2f64.sqrt()));
            prev = w;
        }
        layers.push(self.linear(&format!("{name}.out"), prev, out, out_gain));
        layers
    }
}

fn build(config: &AgentConfig, seed: u64) -> (Layout, ParamSet) {
    let mut b = Builder { params: ParamSet::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let e = config.embed_dim;
    let encoder = b.mlp("enc", config.input_dim(), &config.encoder_widths, e, 1.0);
    let enc_norm = b.norm("enc.norm", e);
    let core = match config.core {
        CoreKind::Transformer => {
            let residual_gain = 1.0 / (2.0 * config.core_depth as f64).sqrt();
            let blocks = (0..config.core_depth)
                .map(|d| Block {
                    ln1: b.norm(&format!("core.{d}.ln1"), e),
                    qkv: b.linear(&format!("core.{d}.qkv"), e, 3 * e, 1.0),
                    proj: b.linear(&format!("core.{d}.proj"), e, e, residual_gain),
                    ln2: b.norm(&format!("core.{d}.ln2"), e),
                    ff1: b.linear(&format!("core.{d}.ff1"), e, config.ff_dim, 2f64.sqrt()),
                    ff2: b.linear(&format!("core.{d}.ff2"), config.ff_dim, e, residual_gain),
                })
                .collect();
            let out = b.norm("core.out", e);
            CoreLayout::Transformer { blocks, out }
        }
        CoreKind::Gru => {
            let layers = (0..config.core_depth)
                .map(|d| GruLayer {
                    x: b.linear(&format!("core.{d}.x"), e, 3 * e, 1.0),
                    h: b.linear(&format!("core.{d}.h"), e, 3 * e, 1.0),
                })
                .collect();
            CoreLayout::Gru { layers }
        }
    };
    let actor = b.mlp("actor", e, &config.actor_head_widths, config.action_count, HEAD_GAIN);
    let per_member = config.gamma_count * config.action_count * config.cell_width();
    let critics = (0..config.ensemble_size)
        .map(|k| b.mlp(&format!("critic.{k}"), e, &config.critic_head_widths, per_member, HEAD_GAIN))
        .collect();
    (Layout { encoder, enc_norm, core, actor, critics }, b.params)
}

/// Encoder inputs for a batch, one row per (slice, position).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub features: Matrix,
    pub seq_len: usize,
    pub valid: Vec<bool>,
    /// Position of each row counted from the first valid row of its slice.
    pub positions: Vec<usize>,
}

impl EncodedBatch {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }
}

/// Which heads to evaluate in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub actor: bool,
    pub critic: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { actor: true, critic: true };
    pub const ACTOR: Heads = Heads { actor: true, critic: false };
    pub const CRITIC: Heads = Heads { actor: false, critic: true };
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    pub hidden: Var,
    /// `(rows, A)` action logits.
    pub logits: Option<Var>,
    /// `(rows, K * G * A * W)` raw critic outputs.
    pub critic: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Network parameters plus their frozen target copy.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    bins: Option<BinSpace>,
    layout: Layout,
    pub online: ParamSet,
    pub target: ParamSet,
    /// One set of statistics per discount; identity for a two-hot critic.
    pub popart: Vec<PopArtStats>,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        Self::with_popart(config, seed, PopArtStats::new(3e-4, 1e-4))
    }

    pub fn with_popart(config: AgentConfig, seed: u64, popart: PopArtStats) -> Result<Self> {
        config.validate()?;
        let bins = config.bins.map(|b| b.build()).transpose()?;
        let (layout, online) = build(&config, seed);
        let target = online.clone();
        let popart = vec![popart; config.gamma_count];
        Ok(Self { config, bins, layout, online, target, popart })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn bins(&self) -> Option<&BinSpace> {
        self.bins.as_ref()
    }

    /// Blends the target toward the online parameters.
    pub fn target_sync(&mut self, tau: f64) -> Result<()> {
        self.target.blend_from(&self.online, tau)
    }

    /// Builds encoder inputs for a batch. Padding rows are zero.
    pub fn encode_batch(&self, batch: &SliceBatch) -> Result<EncodedBatch> {
        let c = &self.config;
        let l = batch.seq_len;
        let rows = batch.rows();
        let mut features = Matrix::zeros(rows, c.input_dim());
        let mut valid = vec![false; rows];
        let mut positions = vec![0; rows];
        for (s, slice) in batch.slices.iter().enumerate() {
            if slice.len() != l {
                return Err(Error::Config(format!("slice of length {} in a batch of length {l}", slice.len())));
            }
            for i in slice.pad..l {
                let row = s * l + i;
                let step = &slice.steps[i - slice.pad];
                self.encode_step(step, features.row_mut(row))?;
                valid[row] = true;
                positions[row] = i - slice.pad;
            }
        }
        Ok(EncodedBatch { features, seq_len: l, valid, positions })
    }

    fn encode_step(&self, step: &StepView, out: &mut [f64]) -> Result<()> {
        let c = &self.config;
        if step.obs.len() != c.obs_dim {
            return Err(Error::Config(format!(
                "observation has {} features, agent expects {}",
                step.obs.len(),
                c.obs_dim
            )));
        }
        for (o, v) in out.iter_mut().zip(&step.obs) {
            *o = f64::from(*v);
        }
        let action_slot = match step.prev_action {
            Some(a) if usize::from(a) < c.action_count => usize::from(a),
            Some(a) => return Err(Error::Config(format!("previous action {a} out of range"))),
            None => c.action_count,
        };
        out[c.obs_dim + action_slot] = 1.0;
        let r = f64::from(step.prev_reward);
        out[c.obs_dim + c.action_count + 1] = match c.reward_input {
            RewardInput::Raw => r,
            RewardInput::Symlog => symlog(r)?,
        };
        out[c.obs_dim + c.action_count + 2] = if step.prev_done { 1.0 } else { 0.0 };
        Ok(())
    }

    /// Registers every parameter of `params` on the tape.
    pub fn bind(&self, tape: &mut Tape, params: &ParamSet, trainable: bool) -> Vec<Var> {
        (0..params.len()).map(|id| tape.param(id, params.get(id), trainable)).collect()
    }

    fn linear(tape: &mut Tape, p: &[Var], l: Linear, x: Var) -> Var {
        let h = tape.matmul(x, p[l.w]);
        tape.add_row(h, p[l.b])
    }

    fn norm(tape: &mut Tape, p: &[Var], n: Norm, x: Var) -> Var {
        tape.layer_norm(x, p[n.g], p[n.b], LN_EPS)
    }

    fn mlp(tape: &mut Tape, p: &[Var], layers: &[Linear], mut x: Var) -> Var {
        let (last, hidden) = layers.split_last().expect("heads have an output layer");
        for l in hidden {
            x = Self::linear(tape, p, *l, x);
            x = tape.leaky_relu(x, LEAK);
        }
        Self::linear(tape, p, *last, x)
    }

    /// One embedding per row.
    pub fn encode_timesteps(&self, tape: &mut Tape, p: &[Var], batch: &EncodedBatch) -> Var {
        let x = tape.constant(batch.features.clone());
        let h = Self::mlp(tape, p, &self.layout.encoder, x);
        Self::norm(tape, p, self.layout.enc_norm, h)
    }

    /// Causal core over embeddings laid out as consecutive sequences.
    pub fn sequence_forward(&self, tape: &mut Tape, p: &[Var], emb: Var, batch: &EncodedBatch) -> Result<Var> {
        let l = batch.seq_len;
        if l > self.config.train_seq_len() {
            return Err(Error::Domain(format!(
                "sequence of length {l} exceeds context length {} plus the bootstrap row; slice it first",
                self.config.context_len
            )));
        }
        if l == 0 || batch.rows() % l != 0 {
            return Err(Error::Domain("rows do not divide into sequences".into()));
        }
        match &self.layout.core {
            CoreLayout::Transformer { blocks, out } => {
                let pe = sinusoidal(&batch.positions, self.config.embed_dim);
                let mut x = tape.add_const(emb, &pe);
                for blk in blocks {
                    let n = Self::norm(tape, p, blk.ln1, x);
                    let qkv = Self::linear(tape, p, blk.qkv, n);
                    let a = tape.causal_attention(qkv, l, self.config.core_heads, &batch.valid);
                    let a = Self::linear(tape, p, blk.proj, a);
                    x = tape.add(x, a);
                    let n = Self::norm(tape, p, blk.ln2, x);
                    let f = Self::linear(tape, p, blk.ff1, n);
                    let f = tape.leaky_relu(f, LEAK);
                    let f = Self::linear(tape, p, blk.ff2, f);
                    x = tape.add(x, f);
                }
                Ok(Self::norm(tape, p, *out, x))
            }
            CoreLayout::Gru { layers } => Ok(self.gru(tape, p, layers, emb, batch)),
        }
    }

    fn gru(&self, tape: &mut Tape, p: &[Var], layers: &[GruLayer], mut x: Var, batch: &EncodedBatch) -> Var {
        let l = batch.seq_len;
        let n = batch.rows() / l;
        let e = self.config.embed_dim;
        for layer in layers {
            let xs = Self::linear(tape, p, layer.x, x);
            let mut h = tape.constant(Matrix::zeros(n, e));
            let mut outs = Vec::with_capacity(l);
            for t in 0..l {
                let rows: Vec<usize> = (0..n).map(|s| s * l + t).collect();
                let keep = Matrix::from_vec(n, 1, rows.iter().map(|&r| if batch.valid[r] { 1.0 } else { 0.0 }).collect());
                let xt = tape.gather_rows(xs, rows);
                let ht = Self::linear(tape, p, layer.h, h);
                let xzr = tape.slice_cols(xt, 0, 2 * e);
                let hzr = tape.slice_cols(ht, 0, 2 * e);
                let zr = tape.add(xzr, hzr);
                let zr = tape.sigmoid(zr);
                let z = tape.slice_cols(zr, 0, e);
                let r = tape.slice_cols(zr, e, 2 * e);
                let xn = tape.slice_cols(xt, 2 * e, 3 * e);
                let hn = tape.slice_cols(ht, 2 * e, 3 * e);
                let rh = tape.mul(r, hn);
                let cand = tape.add(xn, rh);
                let cand = tape.tanh(cand);
                // h' = cand + z * (h - cand), held at h on padding rows.
                let diff = tape.sub(h, cand);
                let zd = tape.mul(z, diff);
                let next = tape.add(cand, zd);
                let delta = tape.sub(next, h);
                let delta = tape.mul_const(delta, std::sync::Arc::new(broadcast_cols(&keep, e)));
                h = tape.add(h, delta);
                outs.push(h);
            }
            let stacked = tape.concat_rows(&outs);
            // Rows are time-major; restore slice-major order.
            let order: Vec<usize> = (0..n).flat_map(|s| (0..l).map(move |t| t * n + s)).collect();
            x = tape.gather_rows(stacked, order);
        }
        x
    }

    /// Runs the encoder, core and requested heads.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, trainable: bool, batch: &EncodedBatch, heads: Heads) -> Result<ForwardOut> {
        let p = self.bind(tape, params, trainable);
        let emb = self.encode_timesteps(tape, &p, batch);
        let hidden = self.sequence_forward(tape, &p, emb, batch)?;
        let logits = heads.actor.then(|| Self::mlp(tape, &p, &self.layout.actor, hidden));
        let critic = heads.critic.then(|| {
            let members: Vec<Var> = self.layout.critics.iter().map(|c| Self::mlp(tape, &p, c, hidden)).collect();
            if members.len() == 1 {
                members[0]
            } else {
                tape.concat_cols(&members)
            }
        });
        Ok(ForwardOut { hidden, logits, critic })
    }

    /// Inference-only forward pass returning `(logits, critic)` values.
    pub fn evaluate(&self, params: &ParamSet, batch: &EncodedBatch, heads: Heads) -> Result<(Option<Matrix>, Option<Matrix>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, params, false, batch, heads)?;
        Ok((out.logits.map(|v| tape.value(v).clone()), out.critic.map(|v| tape.value(v).clone())))
    }

    /// Post-processed critic output: bin probabilities or raw scalars.
    pub fn critic_output(&self, raw: Matrix) -> CriticOutput {
        let w = self.config.cell_width();
        let values = if self.bins.is_some() { softmax_groups(&raw, w) } else { raw };
        CriticOutput { values, width: w }
    }

    /// Scalar value of cell `(k, g, a)` at `row`: decoded bins, or a
    /// denormalized scalar.
    pub fn q_value(&self, out: &CriticOutput, row: usize, k: usize, g: usize, a: usize) -> f64 {
        let off = self.config.cell_offset(k, g, a);
        let cell = &out.values.row(row)[off..off + out.width];
        match &self.bins {
            Some(bins) => bins.decode_unchecked(cell),
            None => self.popart[g].denormalize(cell[0]),
        }
    }

    /// Replaces the statistics for discount `g`, rescaling the final critic
    /// layers of both networks so denormalized outputs do not move.
    pub fn popart_update(&mut self, g: usize, new: PopArtStats) -> Result<()> {
        if self.bins.is_some() {
            return Err(Error::NotApplicable("a two-hot critic has no output normalization".into()));
        }
        let old = self.popart[g];
        let (ws, bs) = popart_preserve(&old, &new);
        let a = self.config.action_count;
        for member in &self.layout.critics {
            let last = *member.last().expect("critic output layer");
            for params in [&mut self.online, &mut self.target] {
                let w = params.get_mut(last.w);
                for r in 0..w.rows() {
                    for v in &mut w.row_mut(r)[g * a..(g + 1) * a] {
                        *v *= ws;
                    }
                }
                let b = params.get_mut(last.b);
                for v in &mut b.row_mut(0)[g * a..(g + 1) * a] {
                    *v = *v * ws + bs;
                }
            }
        }
        self.popart[g] = new;
        Ok(())
    }

    /// Picks an action from the last `context_len` steps of `context`.
    pub fn act(&self, context: &[StepView], mode: ActMode, rng: &mut dyn RngCore) -> Result<usize> {
        if context.is_empty() {
            return Err(Error::Domain("cannot act without context".into()));
        }
        let start = context.len().saturating_sub(self.config.context_len);
        let batch = SliceBatch::single(context[start..].to_vec());
        let enc = self.encode_batch(&batch)?;
        let (logits, _) = self.evaluate(&self.online, &enc, Heads::ACTOR)?;
        let logits = logits.expect("actor head requested");
        let probs = actor_distribution(logits.row(logits.rows() - 1), None)?;
        Ok(match mode {
            ActMode::Greedy => argmax(&probs),
            ActMode::Sample => sample_categorical(&probs, rng),
        })
    }
}

/// Critic head output with cells of `width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticOutput {
    pub values: Matrix,
    pub width: usize,
}

/// Rollout policy backed by an agent.
pub struct AgentPolicy<'a> {
    pub agent: &'a Agent,
    pub mode: ActMode,
}

impl Policy for AgentPolicy<'_> {
    fn act(&self, context: &[StepView], rng: &mut dyn RngCore) -> Result<usize> {
        self.agent.act(context, self.mode, rng)
    }
}

/// Softmax over logits with invalid actions removed.
pub fn actor_distribution(logits: &[f64], valid: Option<&[bool]>) -> Result<Vec<f64>> {
    let ok = |i: usize| valid.is_none_or(|v| v[i]);
    if let Some(v) = valid {
        if v.len() != logits.len() {
            return Err(Error::Domain("validity mask does not match action count".into()));
        }
    }
    let max = (0..logits.len()).filter(|&i| ok(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Domain("every action is masked".into()));
    }
    let mut p: Vec<f64> = (0..logits.len()).map(|i| if ok(i) { (logits[i] - max).exp() } else { 0.0 }).collect();
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    Ok(p)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Fixed sinusoidal position features.
pub fn sinusoidal(positions: &[usize], dim: usize) -> Matrix {
    let mut m = Matrix::zeros(positions.len(), dim);
    for (r, &pos) in positions.iter().enumerate() {
        let row = m.row_mut(r);
        for j in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            row[j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    m
}

fn broadcast_cols(col: &Matrix, width: usize) -> Matrix {
    let mut m = Matrix::zeros(col.rows(), width);
    for r in 0..col.rows() {
        m.row_mut(r).fill(col.get(r, 0));
    }
    m
}
