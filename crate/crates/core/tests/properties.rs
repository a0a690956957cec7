use std::sync::{Arc, Mutex};

use labelfree::objectives::{
    actor_loss_filtered_bc, advantage, critic_loss_mse, critic_loss_twohot, popart_observe, popart_preserve, td_target,
    PopArtStats,
};
use labelfree::replay::TrajectoryStore;
use labelfree::rollout::{run_meta_rollout, Env, EnvDescriptor, MetaRolloutSpec, Policy, ScoringMode, StepView, Transition};
use labelfree::value_codec::BinSpace;
use labelfree::Result;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Episodes of random length that log every variant seed they are reset with.
struct Recorder {
    resets: Arc<Mutex<Vec<u64>>>,
    left: usize,
    max_len: usize,
}

impl Env for Recorder {
    fn descriptor(&self) -> EnvDescriptor {
        EnvDescriptor { name: "recorder".into(), obs_dim: 1, action_count: 3 }
    }

    fn reset(&mut self, variant_seed: u64) -> Vec<f64> {
        self.resets.lock().unwrap().push(variant_seed);
        self.left = 1 + (variant_seed as usize % self.max_len);
        vec![0.0]
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<Transition> {
        self.left -= 1;
        Ok(Transition { obs: vec![action as f64], reward: rng.random_range(-1.0..1.0), done: self.left == 0 })
    }
}

struct Random;
impl Policy for Random {
    fn act(&self, _: &[StepView], rng: &mut dyn RngCore) -> Result<usize> {
        Ok(rng.random_range(0..3))
    }
}

fn q_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mse_scales_quadratically(q in -1e3f64..1e3, y in -1e3f64..1e3, c in 1e-3f64..1e3) {
        let base = critic_loss_mse(q, y);
        let scaled = critic_loss_mse(c * q, c * y);
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (c * c * base).max(1e-12));
    }

    #[test]
    fn twohot_loss_is_scale_resistant(e in 0.05f64..0.2) {
        let bins = BinSpace::new(128, -1e5, 1e5, true).unwrap();
        let losses: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|y: &f64| {
                let pred = labelfree::trainer::smooth_prediction(&bins, y * (1.0 + e));
                critic_loss_twohot(&pred, *y, &bins).unwrap()
            })
            .collect();
        let hi = losses.iter().cloned().fold(f64::MIN, f64::max);
        let lo = losses.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(hi / lo <= 3.0, "{losses:?}");
    }

    #[test]
    fn filter_ignores_positive_q_scaling(q in q_values(), c in 1e-4f64..1e4, pick in 0usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pi: Vec<f64> = q.iter().map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= z);
        let a = pick % q.len();
        let qc: Vec<f64> = q.iter().map(|v| v * c).collect();
        let adv = advantage(q[a], &q, &pi).unwrap();
        let adv_c = advantage(qc[a], &qc, &pi).unwrap();
        // Rounding can flip a sign only when the advantage is zero to within an ulp.
        prop_assume!(adv.abs() > 1e-9 * q.iter().map(|v| v.abs()).fold(0.0, f64::max));
        prop_assert_eq!(actor_loss_filtered_bc(adv, pi[a].ln()), actor_loss_filtered_bc(adv_c, pi[a].ln()));
    }

    #[test]
    fn popart_preserves_denormalized_outputs(
        raw in -5.0f64..5.0,
        batches in prop::collection::vec(prop::collection::vec((-1.0f64..5.0, any::<bool>()), 1..8), 1..40),
    ) {
        let mut stats = PopArtStats::new(0.05, 1e-4);
        let (mut w, mut b) = (raw, 0.0);
        let before = stats.denormalize(w + b);
        for batch in batches {
            let targets: Vec<f64> = batch.iter().map(|(e, neg)| if *neg { -(10f64.powf(*e)) } else { 10f64.powf(*e) }).collect();
            let new = popart_observe(&stats, &targets);
            let (scale, shift) = popart_preserve(&stats, &new);
            w *= scale;
            b = b * scale + shift;
            stats = new;
            prop_assert!(stats.sigma >= stats.eps);
        }
        let after = stats.denormalize(w + b);
        prop_assert!((after - before).abs() <= 1e-6 * before.abs().max(1.0), "{before} vs {after}");
    }

    #[test]
    fn td_target_is_affine_in_next_value(r in -1e3f64..1e3, gamma in 0.01f64..0.999, q1 in -1e3f64..1e3, q2 in -1e3f64..1e3) {
        let d = td_target(r, false, gamma, q2).unwrap() - td_target(r, false, gamma, q1).unwrap();
        prop_assert!((d - gamma * (q2 - q1)).abs() <= 1e-9 * (1.0 + (q2 - q1).abs()));
        prop_assert_eq!(td_target(r, true, gamma, q1).unwrap(), r);
    }

    #[test]
    fn rollouts_respect_horizon_and_replay_one_variant(
        k in 1usize..4,
        extra in 0usize..30,
        max_len in 1usize..8,
        shot in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let resets = Arc::new(Mutex::new(Vec::new()));
        let mut env = Recorder { resets: Arc::clone(&resets), left: 0, max_len };
        let mode = if shot { ScoringMode::KShot } else { ScoringMode::KEpisode };
        let spec = MetaRolloutSpec { k, mode, horizon: k + extra, include_episode_index: false };
        let t = run_meta_rollout(&mut env, &Random, &spec, seed).unwrap();
        prop_assert!(t.steps() <= spec.horizon);
        let seen = resets.lock().unwrap().clone();
        prop_assert!(seen.len() <= k);
        prop_assert!(seen.iter().all(|s| *s == seen[0]));
        for r in &t.records {
            prop_assert_eq!(r.objective_mask, !shot || usize::from(r.episode_index) == k - 1);
        }
    }

    #[test]
    fn replay_bounds_capacity_and_keeps_slices_whole(
        lengths in prop::collection::vec(1usize..12, 1..30),
        capacity in 12usize..80,
        seq_len in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut store = TrajectoryStore::new(capacity).unwrap();
        for (i, len) in lengths.iter().enumerate() {
            let spec = MetaRolloutSpec { k: 1, mode: ScoringMode::KEpisode, horizon: *len, include_episode_index: false };
            let mut env = Recorder { resets: Arc::new(Mutex::new(Vec::new())), left: 0, max_len: 100 };
            let mut t = run_meta_rollout(&mut env, &Random, &spec, seed ^ i as u64).unwrap();
            // Tag every record with its trajectory through the observation.
            for r in &mut t.records {
                r.obs = vec![i as f32];
            }
            store.append(t).unwrap();
            prop_assert!(store.stored_steps() <= capacity);
        }
        let batch = store.sample_slices(6, seq_len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for s in &batch.slices {
            let ids: Vec<f32> = (s.pad..batch.seq_len).map(|i| s.step(i).unwrap().obs[0]).collect();
            prop_assert!(ids.iter().all(|v| *v == ids[0]));
        }
    }
}

#[test]
fn variant_seeds_differ_across_rollouts() {
    let resets = Arc::new(Mutex::new(Vec::new()));
    let mut env = Recorder { resets: Arc::clone(&resets), left: 0, max_len: 5 };
    let spec = MetaRolloutSpec { k: 2, mode: ScoringMode::KEpisode, horizon: 20, include_episode_index: false };
    let mut firsts = Vec::new();
    for seed in 0..200 {
        resets.lock().unwrap().clear();
        run_meta_rollout(&mut env, &Random, &spec, seed).unwrap();
        firsts.push(resets.lock().unwrap()[0]);
    }
    firsts.sort_unstable();
    firsts.dedup();
    assert_eq!(firsts.len(), 200);
}
