//! Meta-rollouts: `k` attempts at one task variant played back to back.

mod format;
mod record;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use format::{read_trajectory, write_trajectory, NULL_ACTION, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};
pub(crate) use format::{read_u16, read_u32, read_u64};
pub use record::{StepView, TimestepRecord, Trajectory};

use crate::error::{Error, Result};

/// Static facts about an environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub name: String,
    pub obs_dim: usize,
    pub action_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Environment interface used by rollouts.
///
/// `reset` selects a variant deterministically from `variant_seed`; all
/// randomness during an episode comes from the generator passed to `step`.
pub trait Env: Send {
    fn descriptor(&self) -> EnvDescriptor;

    fn reset(&mut self, variant_seed: u64) -> Vec<f64>;

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition>;

    /// Best achievable expected return of one episode of the current variant.
    fn optimal_return(&self) -> Option<f64> {
        None
    }

    /// Diagnostic label of whatever is currently being played.
    fn tag(&self) -> String {
        self.descriptor().name
    }
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn descriptor(&self) -> EnvDescriptor {
        (**self).descriptor()
    }
    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        (**self).reset(variant_seed)
    }
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        (**self).step(action, rng)
    }
    fn optimal_return(&self) -> Option<f64> {
        (**self).optimal_return()
    }
    fn tag(&self) -> String {
        (**self).tag()
    }
}

/// Anything that can pick an action from the running context.
pub trait Policy {
    fn act(&self, context: &[StepView], rng: &mut dyn RngCore) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Every attempt counts.
    KEpisode,
    /// Earlier attempts are free exploration; only the last one counts.
    KShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRolloutSpec {
    pub k: usize,
    pub mode: ScoringMode,
    /// Maximum number of environment steps over all attempts.
    pub horizon: usize,
    #[serde(default)]
    pub include_episode_index: bool,
}

impl MetaRolloutSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > usize::from(u8::MAX) {
            return Err(Error::Config("k must fit in a byte".into()));
        }
        if self.horizon < self.k {
            return Err(Error::Config(format!(
                "horizon {} cannot fit {} attempts",
                self.horizon, self.k
            )));
        }
        Ok(())
    }

    pub fn objective_mask(&self, episode_index: usize) -> bool {
        match self.mode {
            ScoringMode::KEpisode => true,
            ScoringMode::KShot => episode_index + 1 == self.k,
        }
    }

    /// Observation width seen by the agent for an environment of width `env_obs_dim`.
    pub fn agent_obs_dim(&self, env_obs_dim: usize) -> usize {
        env_obs_dim + usize::from(self.include_episode_index)
    }
}

/// Appends `episode_index / k` to the observation when `include_episode_index` is set.
pub fn second_attempt_cue(obs: &[f64], episode_index: usize, spec: &MetaRolloutSpec) -> Vec<f64> {
    let mut out = obs.to_vec();
    if spec.include_episode_index {
        out.push(episode_index as f64 / spec.k as f64);
    }
    out
}

/// Derives the variant seed used by a rollout seeded with `seed`.
pub fn variant_seed_for(seed: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed).next_u64()
}

/// Plays `spec.k` attempts of one variant, keeping the whole history as context.
pub fn run_meta_rollout(env: &mut dyn Env, policy: &dyn Policy, spec: &MetaRolloutSpec, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant_seed = rng.next_u64();
    let action_count = env.descriptor().action_count;
    let first = env.reset(variant_seed);
    let tag: Arc<str> = Arc::from(env.tag().as_str());
    let make = |obs: &[f64], ep: usize| -> Vec<f32> {
        second_attempt_cue(obs, ep, spec).into_iter().map(|v| v as f32).collect()
    };

    let mut records = vec![TimestepRecord {
        obs: make(&first, 0),
        prev_action: None,
        prev_reward: 0.0,
        prev_done: false,
        terminal: false,
        episode_index: 0,
        objective_mask: spec.objective_mask(0),
        env_tag: Arc::clone(&tag),
    }];
    let mut views = vec![records[0].view()];
    let mut steps = 0;
    let mut episode = 0;
    while steps < spec.horizon {
        let action = policy.act(&views, &mut rng)?;
        if action >= action_count {
            return Err(Error::Rollout(format!("policy chose action {action} of {action_count}")));
        }
        let tr = env.step(action, &mut rng)?;
        // Records keep rewards as f32.
        if !(tr.reward as f32).is_finite() {
            return Err(Error::Rollout(format!("environment produced reward {}", tr.reward)));
        }
        steps += 1;
        let last_attempt = episode + 1 == spec.k;
        let (obs, next_episode, terminal) = if tr.done && !last_attempt {
            (env.reset(variant_seed), episode + 1, false)
        } else {
            (tr.obs, episode, tr.done && last_attempt)
        };
        let rec = TimestepRecord {
            obs: make(&obs, next_episode),
            prev_action: Some(action as u16),
            prev_reward: tr.reward as f32,
            prev_done: tr.done,
            terminal,
            episode_index: next_episode as u8,
            objective_mask: spec.objective_mask(next_episode),
            env_tag: Arc::clone(&tag),
        };
        views.push(rec.view());
        records.push(rec);
        if terminal {
            break;
        }
        episode = next_episode;
    }
    Ok(Trajectory::new(records))
}

/// Mean, min and max of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Evaluation results for one environment label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEvaluation {
    pub rollouts: usize,
    /// Return of each attempt (length `k`).
    pub per_attempt: Vec<Summary>,
    /// Total over attempts for k-episode scoring, final attempt for k-shot.
    pub score: Summary,
    /// Mean score divided by the optimal score, when the optimum is known.
    pub normalized_score: Option<f64>,
    /// Mean best achievable return of a single attempt.
    pub optimal_per_attempt: Option<f64>,
}

pub type EvalReport = BTreeMap<String, EnvEvaluation>;

/// Runs `n_rollouts` meta-rollouts with seeds `seed, seed + 1, ...` and
/// groups returns by environment label.
pub fn evaluate(
    env: &mut dyn Env,
    policy: &dyn Policy,
    spec: &MetaRolloutSpec,
    n_rollouts: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_rollouts == 0 {
        return Err(Error::Domain("evaluation needs at least one rollout".into()));
    }
    struct Acc {
        attempts: Vec<Vec<f64>>,
        scores: Vec<f64>,
        optimal: Vec<f64>,
    }
    let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
    for i in 0..n_rollouts {
        let traj = run_meta_rollout(env, policy, spec, seed.wrapping_add(i as u64))?;
        let returns = traj.returns_per_attempt(spec.k);
        let score = match spec.mode {
            ScoringMode::KEpisode => returns.iter().sum(),
            ScoringMode::KShot => returns[spec.k - 1],
        };
        let optimal = env.optimal_return();
        let acc = groups.entry(traj.env_tag().to_string()).or_insert_with(|| Acc {
            attempts: vec![Vec::new(); spec.k],
            scores: Vec::new(),
            optimal: Vec::new(),
        });
        for (a, r) in acc.attempts.iter_mut().zip(&returns) {
            a.push(*r);
        }
        acc.scores.push(score);
        if let Some(o) = optimal {
            acc.optimal.push(o);
        }
    }
    Ok(groups
        .into_iter()
        .map(|(tag, acc)| {
            let score = Summary::of(&acc.scores);
            let optimal_per_attempt = (acc.optimal.len() == acc.scores.len() && !acc.optimal.is_empty())
                .then(|| acc.optimal.iter().sum::<f64>() / acc.optimal.len() as f64);
            let normalized_score = optimal_per_attempt.map(|o| match spec.mode {
                ScoringMode::KEpisode => score.mean / (o * spec.k as f64),
                ScoringMode::KShot => score.mean / o,
            });
            let eval = EnvEvaluation {
                rollouts: acc.scores.len(),
                per_attempt: acc.attempts.iter().map(|a| Summary::of(a)).collect(),
                score,
                normalized_score,
                optimal_per_attempt,
            };
            (tag, eval)
        })
        .collect())
}

/// Pads an environment into a shared observation/action space.
///
/// Observations are zero-padded to `obs_dim` and followed by one feature that
/// is 1 when the previous action was valid. Actions outside the native range
/// are replaced by a uniformly random valid action.
pub struct Padded<E> {
    inner: E,
    native: EnvDescriptor,
    obs_dim: usize,
    action_count: usize,
}

pub fn pad_wrapper<E: Env>(inner: E, obs_dim: usize, action_count: usize) -> Result<Padded<E>> {
    let native = inner.descriptor();
    if native.obs_dim > obs_dim || native.action_count > action_count {
        return Err(Error::Config(format!(
            "{} has dims ({}, {}) which exceed the unified ({obs_dim}, {action_count})",
            native.name, native.obs_dim, native.action_count
        )));
    }
    if native.action_count == 0 {
        return Err(Error::Config(format!("{} has no actions", native.name)));
    }
    Ok(Padded { inner, native, obs_dim, action_count })
}

impl<E> Padded<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn native(&self) -> &EnvDescriptor {
        &self.native
    }

    fn pad(&self, obs: &[f64], valid: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim + 1);
        out.extend_from_slice(obs);
        out.resize(self.obs_dim, 0.0);
        out.push(if valid { 1.0 } else { 0.0 });
        out
    }
}

impl<E: Env> Env for Padded<E> {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor { name: self.native.name.clone(), obs_dim: self.obs_dim + 1, action_count: self.action_count }
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        let obs = self.inner.reset(variant_seed);
        self.pad(&obs, true)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        let valid = action < self.native.action_count;
        let executed = if valid { action } else { rng.random_range(0..self.native.action_count) };
        let tr = self.inner.step(executed, rng)?;
        Ok(Transition { obs: self.pad(&tr.obs, valid), ..tr })
    }

    fn optimal_return(&self) -> Option<f64> {
        self.inner.optimal_return()
    }

    fn tag(&self) -> String {
        self.inner.tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-armed bandit, 2 pulls per episode, reward = arm index.
    struct Counter {
        t: usize,
        seen_seeds: Vec<u64>,
    }

    impl Env for Counter {
        fn descriptor(&self) -> EnvDescriptor {
            EnvDescriptor { name: "counter".into(), obs_dim: 3, action_count: 2 }
        }
        fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
            self.t = 0;
            self.seen_seeds.push(variant_seed);
            vec![0.0, 1.0, 2.0]
        }
        fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Transition> {
            self.t += 1;
            Ok(Transition { obs: vec![self.t as f64; 3], reward: action as f64, done: self.t == 2 })
        }
        fn optimal_return(&self) -> Option<f64> {
            Some(2.0)
        }
    }

    struct Fixed(usize);
    impl Policy for Fixed {
        fn act(&self, _: &[StepView], _: &mut dyn RngCore) -> Result<usize> {
            Ok(self.0)
        }
    }

    struct Random;
    impl Policy for Random {
        fn act(&self, _: &[StepView], rng: &mut dyn RngCore) -> Result<usize> {
            Ok(rng.random_range(0..2))
        }
    }

    fn spec(k: usize, mode: ScoringMode) -> MetaRolloutSpec {
        MetaRolloutSpec { k, mode, horizon: 100, include_episode_index: false }
    }

    fn counter() -> Counter {
        Counter { t: 0, seen_seeds: Vec::new() }
    }

    #[test]
    fn single_attempt_is_plain_episode() {
        let mut env = counter();
        let t = run_meta_rollout(&mut env, &Fixed(1), &spec(1, ScoringMode::KShot), 0).unwrap();
        assert_eq!(t.steps(), 2);
        assert!(t.records.iter().all(|r| r.objective_mask));
        assert!(t.terminated());
        assert_eq!(t.records[0].prev_action, None);
        assert_eq!(t.returns_per_attempt(1), vec![2.0]);
    }

    #[test]
    fn k_shot_masks_exploration_attempts() {
        let mut env = counter();
        let t = run_meta_rollout(&mut env, &Fixed(1), &spec(2, ScoringMode::KShot), 3).unwrap();
        assert_eq!(t.steps(), 4);
        let eps: Vec<u8> = t.records.iter().map(|r| r.episode_index).collect();
        assert_eq!(eps, vec![0, 0, 1, 1, 1]);
        let masks: Vec<bool> = t.records.iter().map(|r| r.objective_mask).collect();
        assert_eq!(masks, vec![false, false, true, true, true]);
        // The inner episode boundary is visible to the agent but does not end the rollout.
        assert!(t.records[2].prev_done && !t.records[2].terminal);
        assert!(t.records[4].prev_done && t.records[4].terminal);
        assert_eq!(t.objective_return(), 2.0);
        // Same variant for both attempts.
        assert_eq!(env.seen_seeds.len(), 2);
        assert_eq!(env.seen_seeds[0], env.seen_seeds[1]);
    }

    #[test]
    fn variant_seeds_differ_across_rollouts() {
        let mut env = counter();
        run_meta_rollout(&mut env, &Fixed(0), &spec(1, ScoringMode::KEpisode), 1).unwrap();
        run_meta_rollout(&mut env, &Fixed(0), &spec(1, ScoringMode::KEpisode), 2).unwrap();
        assert_ne!(env.seen_seeds[0], env.seen_seeds[1]);
    }

    #[test]
    fn horizon_truncates() {
        let mut env = counter();
        let s = MetaRolloutSpec { k: 3, mode: ScoringMode::KEpisode, horizon: 3, include_episode_index: false };
        let t = run_meta_rollout(&mut env, &Fixed(0), &s, 0).unwrap();
        assert_eq!(t.steps(), 3);
        assert!(!t.terminated());
    }

    #[test]
    fn seeded_rollouts_are_reproducible() {
        let s = spec(3, ScoringMode::KEpisode);
        let a = run_meta_rollout(&mut counter(), &Random, &s, 42).unwrap();
        let b = run_meta_rollout(&mut counter(), &Random, &s, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn episode_cue_feature() {
        let s2 = MetaRolloutSpec { k: 2, mode: ScoringMode::KEpisode, horizon: 10, include_episode_index: true };
        assert_eq!(second_attempt_cue(&[1.0], 0, &s2), vec![1.0, 0.0]);
        assert_eq!(second_attempt_cue(&[1.0], 1, &s2), vec![1.0, 0.5]);
        let off = MetaRolloutSpec { include_episode_index: false, ..s2.clone() };
        assert_eq!(second_attempt_cue(&[1.0], 1, &off), vec![1.0]);

        let t = run_meta_rollout(&mut counter(), &Fixed(0), &s2, 0).unwrap();
        assert_eq!(t.records[0].obs.len(), 4);
        assert_eq!(t.records[0].obs[3], 0.0);
        assert_eq!(t.records[2].obs[3], 0.5);
    }

    #[test]
    fn spec_validation() {
        assert!(MetaRolloutSpec { k: 0, ..spec(1, ScoringMode::KShot) }.validate().is_err());
        assert!(MetaRolloutSpec { horizon: 1, ..spec(2, ScoringMode::KShot) }.validate().is_err());
        assert!(spec(2, ScoringMode::KShot).validate().is_ok());
    }

    #[test]
    fn evaluate_reports_per_attempt() {
        let mut env = counter();
        let s = spec(3, ScoringMode::KEpisode);
        let report = evaluate(&mut env, &Fixed(1), &s, 4, 0).unwrap();
        let e = &report["counter"];
        assert_eq!(e.per_attempt.len(), 3);
        assert_eq!(e.rollouts, 4);
        assert_eq!(e.score.mean, 6.0);
        assert_eq!(e.score.min, e.score.max);
        assert_eq!(e.normalized_score, Some(1.0));
        assert!(evaluate(&mut env, &Fixed(1), &s, 0, 0).is_err());

        let shot = evaluate(&mut env, &Fixed(1), &spec(3, ScoringMode::KShot), 2, 0).unwrap();
        assert_eq!(shot["counter"].score.mean, 2.0);
    }

    #[test]
    fn padding_layout_and_invalid_actions() {
        let mut env = pad_wrapper(counter(), 26, 4).unwrap();
        assert_eq!(env.descriptor().obs_dim, 27);
        let obs = env.reset(0);
        assert_eq!(obs.len(), 27);
        assert_eq!(&obs[..3], &[0.0, 1.0, 2.0]);
        assert!(obs[3..26].iter().all(|&v| v == 0.0));
        assert_eq!(obs[26], 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ok = env.step(1, &mut rng).unwrap();
        assert_eq!(ok.obs[26], 1.0);
        assert_eq!(ok.reward, 1.0);

        let mut counts = [0usize; 2];
        for _ in 0..2000 {
            env.reset(0);
            let tr = env.step(3, &mut rng).unwrap();
            assert_eq!(tr.obs[26], 0.0);
            counts[tr.reward as usize] += 1;
        }
        assert!(counts[0] > 900 && counts[1] > 900, "{counts:?}");
        assert!(pad_wrapper(counter(), 2, 4).is_err());
        assert!(pad_wrapper(counter(), 3, 1).is_err());
    }
}
