//! Small seeded environments with known optima.
//!
//! - [`MultiScaleBandit`]: tasks whose returns live on very different scales.
//! - [`MemoryCorridor`]: a cue must be recalled many steps later.
//! - [`GoalRoom`]: a hidden goal must be found and then revisited.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{pad_wrapper, Env, EnvDescriptor, Transition};

/// SplitMix64 finalizer, used to derive independent streams from one seed.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// Bandit with rewards `scale * (mean[arm] + noise)`.
///
/// Observation: `[t / episode_len]`. Variants are all identical.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleBandit {
    name: String,
    arm_means: Vec<f64>,
    scale: f64,
    episode_len: usize,
    noise_std: f64,
    t: usize,
}

impl MultiScaleBandit {
    pub fn new(name: impl Into<String>, arm_means: Vec<f64>, scale: f64, episode_len: usize, noise_std: f64) -> Result<Self> {
        if arm_means.len() < 2 {
            return Err(Error::Config("a bandit needs at least two arms".into()));
        }
        if arm_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("arm means must be finite".into()));
        }
        let best = arm_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if arm_means.iter().filter(|&&m| m == best).count() != 1 {
            return Err(Error::Config("exactly one arm must be optimal".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("bandit scale must be positive, got {scale}")));
        }
        if episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        Ok(Self { name: name.into(), arm_means, scale, episode_len, noise_std, t: 0 })
    }

    pub fn arm_means(&self) -> &[f64] {
        &self.arm_means
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.arm_means.iter().enumerate() {
            if *m > self.arm_means[best] {
                best = i;
            }
        }
        best
    }
}

impl Env for MultiScaleBandit {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor { name: self.name.clone(), obs_dim: 1, action_count: self.arm_means.len() }
    }

    fn reset(&mut self, _variant_seed: u64) -> Vec<f64> {
        self.t = 0;
        vec![0.0]
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        let mean = *self
            .arm_means
            .get(action)
            .ok_or_else(|| Error::Rollout(format!("arm {action} does not exist")))?;
        if self.t >= self.episode_len {
            return Err(Error::Rollout("stepped a finished episode".into()));
        }
        self.t += 1;
        let noise = if self.noise_std > 0.0 { self.noise_std * gaussian(rng) } else { 0.0 };
        Ok(Transition {
            obs: vec![self.t as f64 / self.episode_len as f64],
            reward: self.scale * (mean + noise),
            done: self.t == self.episode_len,
        })
    }

    fn optimal_return(&self) -> Option<f64> {
        Some(self.episode_len as f64 * self.scale * self.arm_means[self.best_arm()])
    }
}

/// A cue in `{left, right}` is shown on the first step only; after `length`
/// uninformative steps the agent must choose the cued side.
///
/// Observation: `[cue, at_choice, t / length]` with cue in `{-1, 0, +1}`.
/// Actions: 0 = left, 1 = right. Reward 1 for the correct choice.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryCorridor {
    length: usize,
    cue_right: bool,
    t: usize,
}

impl MemoryCorridor {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("corridor length must be positive".into()));
        }
        Ok(Self { length, cue_right: false, t: 0 })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn cue_right(&self) -> bool {
        self.cue_right
    }

    fn obs(&self) -> Vec<f64> {
        let cue = match (self.t, self.cue_right) {
            (0, true) => 1.0,
            (0, false) => -1.0,
            _ => 0.0,
        };
        let at_choice = if self.t == self.length { 1.0 } else { 0.0 };
        vec![cue, at_choice, self.t as f64 / self.length as f64]
    }
}

impl Env for MemoryCorridor {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor { name: format!("memory_corridor_{}", self.length), obs_dim: 3, action_count: 2 }
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        self.cue_right = mix_seed(variant_seed) & 1 == 1;
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Transition> {
        if action > 1 {
            return Err(Error::Rollout(format!("corridor action {action} does not exist")));
        }
        if self.t > self.length {
            return Err(Error::Rollout("stepped a finished episode".into()));
        }
        if self.t < self.length {
            self.t += 1;
            return Ok(Transition { obs: self.obs(), reward: 0.0, done: false });
        }
        let correct = (action == 1) == self.cue_right;
        self.t += 1;
        Ok(Transition { obs: vec![0.0, 0.0, 1.0], reward: if correct { 1.0 } else { 0.0 }, done: true })
    }

    fn optimal_return(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Square grid with a hidden goal. Every step that ends on the goal pays 1.
///
/// Observation: `[x, y]` scaled to `[0, 1]`. Actions: up, down, left, right, stay.
/// The agent starts in the center; the goal (never the start) is chosen by the variant.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalRoom {
    size: usize,
    episode_len: usize,
    goal: (usize, usize),
    pos: (usize, usize),
    t: usize,
}

impl GoalRoom {
    pub const ACTIONS: usize = 5;

    pub fn new(size: usize, episode_len: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config("goal room needs size >= 2".into()));
        }
        if episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        let start = (size / 2, size / 2);
        Ok(Self { size, episode_len, goal: (0, 0), pos: start, t: 0 })
    }

    pub fn start(&self) -> (usize, usize) {
        (self.size / 2, self.size / 2)
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    /// All goal cells a variant can pick.
    pub fn goal_cells(&self) -> Vec<(usize, usize)> {
        let start = self.start();
        (0..self.size)
            .flat_map(|x| (0..self.size).map(move |y| (x, y)))
            .filter(|&c| c != start)
            .collect()
    }

    pub fn set_goal(&mut self, goal: (usize, usize)) {
        self.goal = goal;
    }

    fn obs(&self) -> Vec<f64> {
        let s = (self.size - 1) as f64;
        vec![self.pos.0 as f64 / s, self.pos.1 as f64 / s]
    }

    /// Return of walking straight to the goal and staying there.
    pub fn informed_return(&self) -> f64 {
        let start = self.start();
        let dist = start.0.abs_diff(self.goal.0) + start.1.abs_diff(self.goal.1);
        (self.episode_len + 1).saturating_sub(dist) as f64
    }
}

impl Env for GoalRoom {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor { name: format!("goal_room_{}", self.size), obs_dim: 2, action_count: Self::ACTIONS }
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        let cells = self.goal_cells();
        self.goal = cells[(mix_seed(variant_seed) % cells.len() as u64) as usize];
        self.pos = self.start();
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Transition> {
        if self.t >= self.episode_len {
            return Err(Error::Rollout("stepped a finished episode".into()));
        }
        let (x, y) = self.pos;
        let last = self.size - 1;
        self.pos = match action {
            0 => (x, (y + 1).min(last)),
            1 => (x, y.saturating_sub(1)),
            2 => (x.saturating_sub(1), y),
            3 => ((x + 1).min(last), y),
            4 => (x, y),
            _ => return Err(Error::Rollout(format!("goal room action {action} does not exist"))),
        };
        self.t += 1;
        Ok(Transition {
            obs: self.obs(),
            reward: if self.pos == self.goal { 1.0 } else { 0.0 },
            done: self.t == self.episode_len,
        })
    }

    fn optimal_return(&self) -> Option<f64> {
        Some(self.informed_return())
    }
}

/// Multiplies every reward by a positive constant.
#[derive(Debug, Clone)]
pub struct Rescaled<E> {
    inner: E,
    factor: f64,
}

pub fn rescale_wrapper<E: Env>(inner: E, factor: f64) -> Result<Rescaled<E>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Config(format!("reward scale must be positive, got {factor}")));
    }
    Ok(Rescaled { inner, factor })
}

impl<E> Rescaled<E> {
    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

impl<E: Env> Env for Rescaled<E> {
    fn descriptor(&self) -> EnvDescriptor {
        self.inner.descriptor()
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        self.inner.reset(variant_seed)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        let tr = self.inner.step(action, rng)?;
        Ok(Transition { reward: tr.reward * self.factor, ..tr })
    }

    fn optimal_return(&self) -> Option<f64> {
        self.inner.optimal_return().map(|r| r * self.factor)
    }

    fn tag(&self) -> String {
        self.inner.tag()
    }
}

/// Member environment description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemberConfig {
    Bandit {
        #[serde(default)]
        name: Option<String>,
        arm_means: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
        episode_len: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default)]
        reward_scale: Option<f64>,
    },
    MemoryCorridor {
        length: usize,
        #[serde(default)]
        reward_scale: Option<f64>,
    },
    GoalRoom {
        size: usize,
        episode_len: usize,
        #[serde(default)]
        reward_scale: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

impl MemberConfig {
    pub fn build(&self) -> Result<Box<dyn Env>> {
        let (env, reward_scale): (Box<dyn Env>, Option<f64>) = match self {
            MemberConfig::Bandit { name, arm_means, scale, episode_len, noise_std, reward_scale } => {
                let name = name.clone().unwrap_or_else(|| format!("bandit_x{scale}"));
                (Box::new(MultiScaleBandit::new(name, arm_means.clone(), *scale, *episode_len, *noise_std)?), *reward_scale)
            }
            MemberConfig::MemoryCorridor { length, reward_scale } => (Box::new(MemoryCorridor::new(*length)?), *reward_scale),
            MemberConfig::GoalRoom { size, episode_len, reward_scale } => {
                (Box::new(GoalRoom::new(*size, *episode_len)?), *reward_scale)
            }
        };
        match reward_scale {
            Some(c) => Ok(Box::new(rescale_wrapper(env, c)?)),
            None => Ok(env),
        }
    }
}

/// Environment suite: which members, and the shared space they are padded to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// Defaults to the widest member.
    #[serde(default)]
    pub unified_obs_dim: Option<usize>,
    #[serde(default)]
    pub unified_action_count: Option<usize>,
    pub members: Vec<MemberConfig>,
}

/// Samples a member uniformly on every reset, then a variant of it.
pub struct MultiTaskSuite {
    members: Vec<Box<dyn Env>>,
    current: usize,
    descriptor: EnvDescriptor,
}

impl MultiTaskSuite {
    pub fn members(&self) -> &[Box<dyn Env>] {
        &self.members
    }

    pub fn current_member(&self) -> usize {
        self.current
    }

    /// Which member a reset with `variant_seed` plays.
    pub fn member_for(&self, variant_seed: u64) -> usize {
        (mix_seed(variant_seed) % self.members.len() as u64) as usize
    }
}

/// Builds a suite, padding every member into the unified space.
pub fn make_multitask_suite(config: &SuiteConfig) -> Result<MultiTaskSuite> {
    let raw: Vec<Box<dyn Env>> = config.members.iter().map(MemberConfig::build).collect::<Result<_>>()?;
    suite_from_envs(raw, config.unified_obs_dim, config.unified_action_count)
}

pub fn suite_from_envs(
    raw: Vec<Box<dyn Env>>,
    unified_obs_dim: Option<usize>,
    unified_action_count: Option<usize>,
) -> Result<MultiTaskSuite> {
    if raw.is_empty() {
        return Err(Error::Config("an environment suite needs at least one member".into()));
    }
    let obs_dim = unified_obs_dim.unwrap_or_else(|| raw.iter().map(|e| e.descriptor().obs_dim).max().unwrap_or(0));
    let action_count =
        unified_action_count.unwrap_or_else(|| raw.iter().map(|e| e.descriptor().action_count).max().unwrap_or(0));
    let members: Vec<Box<dyn Env>> = raw
        .into_iter()
        .map(|e| pad_wrapper(e, obs_dim, action_count).map(|p| Box::new(p) as Box<dyn Env>))
        .collect::<Result<_>>()?;
    let descriptor = EnvDescriptor { name: "suite".into(), obs_dim: obs_dim + 1, action_count };
    Ok(MultiTaskSuite { members, current: 0, descriptor })
}

impl Env for MultiTaskSuite {
    fn descriptor(&self) -> EnvDescriptor {
        self.descriptor.clone()
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        self.current = self.member_for(variant_seed);
        self.members[self.current].reset(mix_seed(variant_seed ^ 0xA5A5_A5A5_A5A5_A5A5))
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        self.members[self.current].step(action, rng)
    }

    fn optimal_return(&self) -> Option<f64> {
        self.members[self.current].optimal_return()
    }

    fn tag(&self) -> String {
        self.members[self.current].tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{run_meta_rollout, MetaRolloutSpec, Policy, ScoringMode, StepView};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Best achievable return by exhaustive search over action sequences,
    /// memoized on (observation, steps left). Valid for deterministic envs
    /// whose observation plus variant determine the state.
    fn exhaustive_best<E: Env + Clone>(env: &E, first_obs: &[f64], horizon: usize) -> f64 {
        fn key(obs: &[f64], left: usize) -> (Vec<u64>, usize) {
            (obs.iter().map(|v| v.to_bits()).collect(), left)
        }
        fn go<E: Env + Clone>(env: &E, obs: &[f64], left: usize, memo: &mut HashMap<(Vec<u64>, usize), f64>) -> f64 {
            if left == 0 {
                return 0.0;
            }
            if let Some(v) = memo.get(&key(obs, left)) {
                return *v;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut best = f64::NEG_INFINITY;
            for a in 0..env.descriptor().action_count {
                let mut e = env.clone();
                let tr = e.step(a, &mut rng).unwrap();
                let rest = if tr.done { 0.0 } else { go(&e, &tr.obs, left - 1, memo) };
                best = best.max(tr.reward + rest);
            }
            memo.insert(key(obs, left), best);
            best
        }
        go(env, first_obs, horizon, &mut HashMap::new())
    }

    #[test]
    fn bandit_optimum_matches_brute_force() {
        let mut b = MultiScaleBandit::new("b", vec![0.2, 0.9, 0.5], 10.0, 7, 0.0).unwrap();
        let obs = b.reset(0);
        let best = exhaustive_best(&b, &obs, 7);
        assert!((best - b.optimal_return().unwrap()).abs() < 1e-9);
        assert!((best - 63.0).abs() < 1e-9);
        assert!(MultiScaleBandit::new("b", vec![1.0, 1.0], 1.0, 3, 0.1).is_err());
    }

    #[test]
    fn corridor_optimum_matches_brute_force() {
        let mut c = MemoryCorridor::new(6).unwrap();
        for seed in 0..4 {
            let obs = c.reset(seed);
            assert_eq!(exhaustive_best(&c, &obs, 10), 1.0);
        }
    }

    #[test]
    fn goal_room_optimum_matches_brute_force() {
        let mut g = GoalRoom::new(5, 10).unwrap();
        for seed in 0..30 {
            let obs = g.reset(seed);
            let best = exhaustive_best(&g, &obs, 10);
            assert_eq!(best, g.optimal_return().unwrap(), "goal {:?}", g.goal());
        }
    }

    /// Any memoryless policy sees the same observation at the choice point for
    /// both cues, so it is right exactly half the time over the two variants.
    #[test]
    fn memoryless_corridor_policies_score_one_half() {
        let length = 5;
        let mut c = MemoryCorridor::new(length).unwrap();
        let seeds: Vec<u64> = {
            let mut left = None;
            let mut right = None;
            for s in 0.. {
                c.reset(s);
                if c.cue_right() {
                    right.get_or_insert(s);
                } else {
                    left.get_or_insert(s);
                }
                if left.is_some() && right.is_some() {
                    break;
                }
            }
            vec![left.unwrap(), right.unwrap()]
        };
        // Deterministic memoryless policies: the choice-point action is all that matters.
        for choice in 0..2 {
            let mut total = 0.0;
            for &s in &seeds {
                c.reset(s);
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                loop {
                    let tr = c.step(choice, &mut rng).unwrap();
                    total += tr.reward;
                    if tr.done {
                        break;
                    }
                }
            }
            assert_eq!(total / 2.0, 0.5);
        }
    }

    /// Knowing the goal beats the best goal-blind search in every 5x5 room.
    ///
    /// A goal-blind agent follows a fixed path until it first hits the goal,
    /// visiting at most `t` distinct non-start cells in `t` moves; its expected
    /// return is therefore at most `sum_t min(1, t / cells) ` per step after
    /// discovery, which upper-bounds every goal-blind policy.
    #[test]
    fn goal_room_informed_beats_goal_blind() {
        for episode_len in [6usize, 10, 16, 24] {
            let mut g = GoalRoom::new(5, episode_len).unwrap();
            let cells = g.goal_cells();
            let informed: f64 = cells
                .iter()
                .map(|&c| {
                    g.set_goal(c);
                    g.informed_return()
                })
                .sum::<f64>()
                / cells.len() as f64;
            let n = cells.len() as f64;
            // P(goal discovered by step t) <= t / n; once found, stay there.
            let blind_bound: f64 = (1..=episode_len).map(|t| (t as f64 / n).min(1.0)).sum();
            assert!(informed > blind_bound, "len {episode_len}: {informed} vs {blind_bound}");
        }
    }

    #[test]
    fn rescale_examples() {
        let b = MultiScaleBandit::new("b", vec![0.5, 0.25], 1.0, 3, 0.0).unwrap();
        let mut same = rescale_wrapper(b.clone(), 1.0).unwrap();
        let mut big = rescale_wrapper(b, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        same.reset(0);
        big.reset(0);
        assert_eq!(same.step(0, &mut rng).unwrap().reward, 0.5);
        assert_eq!(big.step(0, &mut rng).unwrap().reward, 50.0);
        assert_eq!(big.optimal_return(), Some(150.0));
        assert!(rescale_wrapper(MemoryCorridor::new(2).unwrap(), 0.0).is_err());
        assert!(rescale_wrapper(MemoryCorridor::new(2).unwrap(), -1.0).is_err());
    }

    #[test]
    fn rescaling_preserves_optimal_policy() {
        for c in [0.1, 1.0, 10.0, 1000.0] {
            let base = MultiScaleBandit::new("b", vec![0.3, 0.7, 0.1], 1.0, 4, 0.0).unwrap();
            let mut wrapped = rescale_wrapper(base.clone(), c).unwrap();
            let obs = wrapped.reset(0);
            let mut best_arm = 0;
            let mut best = f64::NEG_INFINITY;
            for a in 0..3 {
                let mut e = wrapped.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let r = e.step(a, &mut rng).unwrap().reward;
                if r > best {
                    best = r;
                    best_arm = a;
                }
            }
            assert_eq!(best_arm, base.best_arm());
            assert!((exhaustive_best(&wrapped, &obs, 4) - c * 2.8).abs() < 1e-9 * c);
        }
    }

    fn four_bandits() -> SuiteConfig {
        let members = [0.1, 1.0, 10.0, 1000.0]
            .iter()
            .enumerate()
            .map(|(i, &scale)| {
                let mut arm_means = vec![0.5; 4];
                arm_means[i] = 1.0;
                MemberConfig::Bandit { name: None, arm_means, scale, episode_len: 10, noise_std: 0.1, reward_scale: None }
            })
            .collect();
        SuiteConfig { unified_obs_dim: None, unified_action_count: None, members }
    }

    #[test]
    fn suite_construction() {
        let suite = make_multitask_suite(&four_bandits()).unwrap();
        assert_eq!(suite.members().len(), 4);
        for m in suite.members() {
            assert_eq!(m.descriptor().obs_dim, 2);
            assert_eq!(m.descriptor().action_count, 4);
        }
        let names: Vec<String> = suite.members().iter().map(|m| m.tag()).collect();
        assert_eq!(names, vec!["bandit_x0.1", "bandit_x1", "bandit_x10", "bandit_x1000"]);
        assert!(make_multitask_suite(&SuiteConfig { unified_obs_dim: None, unified_action_count: None, members: vec![] })
            .is_err());
    }

    #[test]
    fn suite_member_frequencies_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut suite = make_multitask_suite(&four_bandits()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0f64; 4];
        let n = 10_000;
        for _ in 0..n {
            suite.reset(rng.random());
            counts[suite.current_member()] += 1.0;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}, counts {counts:?}");
    }

    struct Sampler;
    impl Policy for Sampler {
        fn act(&self, _: &[StepView], rng: &mut dyn RngCore) -> Result<usize> {
            Ok(rng.random_range(0..5))
        }
    }

    #[test]
    fn single_member_suite_matches_padded_member() {
        let cfg = SuiteConfig {
            unified_obs_dim: None,
            unified_action_count: None,
            members: vec![MemberConfig::GoalRoom { size: 4, episode_len: 6, reward_scale: None }],
        };
        let mut suite = make_multitask_suite(&cfg).unwrap();
        let spec = MetaRolloutSpec { k: 2, mode: ScoringMode::KEpisode, horizon: 20, include_episode_index: false };
        for seed in 0..5 {
            let a = run_meta_rollout(&mut suite, &Sampler, &spec, seed).unwrap();
            // Reproduce the suite's seed derivation on a directly padded member.
            let mut direct = pad_wrapper(GoalRoom::new(4, 6).unwrap(), 2, 5).unwrap();
            let vs = crate::rollout::variant_seed_for(seed);
            direct.reset(mix_seed(vs ^ 0xA5A5_A5A5_A5A5_A5A5));
            let goal_suite = {
                let traj_rewards: Vec<f32> = a.records.iter().map(|r| r.prev_reward).collect();
                traj_rewards
            };
            let b = {
                struct Direct<'a>(&'a mut dyn Env);
                impl Env for Direct<'_> {
                    fn descriptor(&self) -> EnvDescriptor {
                        self.0.descriptor()
                    }
                    fn reset(&mut self, v: u64) -> Vec<f64> {
                        self.0.reset(mix_seed(v ^ 0xA5A5_A5A5_A5A5_A5A5))
                    }
                    fn step(&mut self, a: usize, rng: &mut dyn RngCore) -> Result<Transition> {
                        self.0.step(a, rng)
                    }
                    fn tag(&self) -> String {
                        self.0.tag()
                    }
                }
                run_meta_rollout(&mut Direct(&mut direct), &Sampler, &spec, seed).unwrap()
            };
            assert_eq!(a, b);
            assert_eq!(goal_suite.len(), a.records.len());
        }
    }
}
