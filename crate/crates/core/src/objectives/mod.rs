//! Loss terms, TD targets and value normalization.
//!
//! The scalar functions here define each term; [`batch`] assembles the same
//! terms over a [`SliceBatch`](crate::replay::SliceBatch) on an autodiff tape.

pub mod batch;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value_codec::{validate_probs, BinSpace};

/// `ln(1e-12)`: floor applied to every log-probability.
pub const LOG_FLOOR: f64 = -27.631_021_115_928_547;

/// Floored natural log.
pub fn floored_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// Loss magnitude follows the scale of returns (regression, `-Q` actor).
    Dependent,
    /// Loss magnitude is decoupled from return scale (two-hot, filtered imitation).
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateVariant {
    pub actor: Dependence,
    pub critic: Dependence,
}

impl UpdateVariant {
    pub const DEP_DEP: Self = Self { actor: Dependence::Dependent, critic: Dependence::Dependent };
    pub const IND_IND: Self = Self { actor: Dependence::Independent, critic: Dependence::Independent };
    pub const DEP_IND: Self = Self { actor: Dependence::Dependent, critic: Dependence::Independent };
    pub const IND_DEP: Self = Self { actor: Dependence::Independent, critic: Dependence::Dependent };

    pub fn label(&self) -> String {
        let short = |d: Dependence| match d {
            Dependence::Dependent => "dep",
            Dependence::Independent => "ind",
        };
        format!("{}/{}", short(self.actor), short(self.critic))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TDConfig {
    pub gammas: Vec<f64>,
    pub ensemble_size: usize,
    pub polyak_tau: f64,
    pub lambda: f64,
    /// Defaults to the largest discount.
    pub filter_gamma_index: Option<usize>,
    pub popart_beta: f64,
    pub popart_eps: f64,
}

impl Default for TDConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.1, 0.9, 0.95, 0.97, 0.99, 0.995, 0.999],
            ensemble_size: 4,
            polyak_tau: 0.003,
            lambda: 10.0,
            filter_gamma_index: None,
            popart_beta: 3e-4,
            popart_eps: 1e-4,
        }
    }
}

impl TDConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::Config("at least one discount is required".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(Error::Config(format!("discount {g} is outside (0, 1)")));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if !(self.polyak_tau > 0.0 && self.polyak_tau <= 1.0) {
            return Err(Error::Config(format!("target blend rate {} is outside (0, 1]", self.polyak_tau)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("critic weight {} must be positive", self.lambda)));
        }
        if let Some(i) = self.filter_gamma_index {
            if i >= self.gammas.len() {
                return Err(Error::Config(format!("filter discount index {i} out of range")));
            }
        }
        if !(self.popart_beta > 0.0 && self.popart_beta <= 1.0) {
            return Err(Error::Config("popart rate must be in (0, 1]".into()));
        }
        if !(self.popart_eps > 0.0) {
            return Err(Error::Config("popart floor must be positive".into()));
        }
        Ok(())
    }

    /// Index of the discount used by the actor.
    pub fn filter_gamma(&self) -> usize {
        self.filter_gamma_index.unwrap_or_else(|| {
            let mut best = 0;
            for (i, g) in self.gammas.iter().enumerate() {
                if *g > self.gammas[best] {
                    best = i;
                }
            }
            best
        })
    }
}

/// `r + (1 - d) * gamma * q_next`.
pub fn td_target(r: f64, terminal: bool, gamma: f64, q_next: f64) -> Result<f64> {
    let check = |v: f64, what: &str| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Training(format!("{what} is {v} (r={r}, gamma={gamma}, q_next={q_next}, terminal={terminal})")))
        }
    };
    check(r, "reward")?;
    check(gamma, "discount")?;
    if terminal {
        return Ok(r);
    }
    check(q_next, "bootstrap value")?;
    check(r + gamma * q_next, "TD target")
}

pub fn critic_loss_mse(q_pred: f64, y: f64) -> f64 {
    (q_pred - y) * (q_pred - y)
}

/// Cross-entropy between the two-hot encoding of `y` and `bin_probs`.
pub fn critic_loss_twohot(bin_probs: &[f64], y: f64, bins: &BinSpace) -> Result<f64> {
    validate_probs(bin_probs, bins.num_bins())?;
    let target = bins.encode_twohot(y)?;
    Ok(-target.iter().zip(bin_probs).filter(|(t, _)| **t > 0.0).map(|(t, p)| t * floored_ln(*p)).sum::<f64>())
}

fn expectation(policy: &[f64], q: &[f64]) -> Result<f64> {
    if policy.len() != q.len() || policy.is_empty() {
        return Err(Error::Domain(format!(
            "policy has {} actions but values have {}",
            policy.len(),
            q.len()
        )));
    }
    Ok(policy.iter().zip(q).map(|(p, v)| p * v).sum())
}

/// `-sum_a pi(a) Q(a)`, the values treated as constants.
pub fn actor_loss_dependent(policy: &[f64], q_per_action: &[f64]) -> Result<f64> {
    Ok(-expectation(policy, q_per_action)?)
}

/// `q_taken - sum_a pi(a) Q(a)`.
pub fn advantage(q_taken: f64, q_per_action: &[f64], policy: &[f64]) -> Result<f64> {
    Ok(q_taken - expectation(policy, q_per_action)?)
}

/// `-1{A > 0} log pi(a_taken)`.
pub fn actor_loss_filtered_bc(advantage: f64, log_prob_taken: f64) -> f64 {
    if advantage > 0.0 {
        -log_prob_taken.max(LOG_FLOOR)
    } else {
        0.0
    }
}

/// Mean of `actor + lambda * critic` over unmasked positions.
pub fn joint_loss(actor: &[f64], critic: &[f64], mask: &[bool], lambda: f64) -> Result<f64> {
    if actor.len() != critic.len() || actor.len() != mask.len() {
        return Err(Error::Domain("loss terms and mask must align".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((a, c), m) in actor.iter().zip(critic).zip(mask) {
        if *m {
            sum += a + lambda * c;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateBatch("every position is masked".into()));
    }
    Ok(sum / n as f64)
}

/// Running target statistics for adaptive value normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopArtStats {
    pub mu: f64,
    /// Running second moment; `sigma` derives from it.
    pub nu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub eps: f64,
}

impl PopArtStats {
    pub fn new(beta: f64, eps: f64) -> Self {
        Self { mu: 0.0, nu: 1.0, sigma: 1.0, beta, eps }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }

    pub fn denormalize(&self, raw: f64) -> f64 {
        self.sigma * raw + self.mu
    }
}

/// Moves the statistics toward the batch moments. Returns the updated copy;
/// the caller rescales the output layer with [`popart_preserve`].
pub fn popart_observe(stats: &PopArtStats, targets: &[f64]) -> PopArtStats {
    if targets.is_empty() {
        return *stats;
    }
    let n = targets.len() as f64;
    let m1 = targets.iter().sum::<f64>() / n;
    let m2 = targets.iter().map(|y| y * y).sum::<f64>() / n;
    let b = stats.beta;
    let mu = (1.0 - b) * stats.mu + b * m1;
    let nu = (1.0 - b) * stats.nu + b * m2;
    let sigma = (nu - mu * mu).max(0.0).sqrt().max(stats.eps);
    PopArtStats { mu, nu, sigma, ..*stats }
}

/// Affine map `(w, b) -> (w', b')` that keeps `sigma * (w x + b) + mu` fixed
/// when the statistics change from `old` to `new`.
pub fn popart_preserve(old: &PopArtStats, new: &PopArtStats) -> (f64, f64) {
    let w_scale = old.sigma / new.sigma;
    let b_shift = (old.mu - new.mu) / new.sigma;
    (w_scale, b_shift)
}

/// Minimum over a random pair of ensemble members, or the only value when `K = 1`.
pub fn ensemble_reduce_target(candidates: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
    let (i, j) = ensemble_pair(candidates.len(), rng)?;
    Ok(candidates[i].min(candidates[j]))
}

/// Two distinct member indices (or `(0, 0)` when `K = 1`).
pub fn ensemble_pair(k: usize, rng: &mut dyn RngCore) -> Result<(usize, usize)> {
    match k {
        0 => Err(Error::Config("ensemble is empty".into())),
        1 => Ok((0, 0)),
        _ => {
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            Ok((i, j))
        }
    }
}

/// Fraction of strictly positive advantages.
pub fn filter_rate(advantages: &[f64]) -> Result<f64> {
    if advantages.is_empty() {
        return Err(Error::DegenerateBatch("filter rate of an empty batch".into()));
    }
    Ok(advantages.iter().filter(|a| **a > 0.0).count() as f64 / advantages.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn td_target_examples() {
        assert!(close(td_target(1.0, false, 0.9, 2.0).unwrap(), 2.8, 1e-12));
        assert_eq!(td_target(5.0, true, 0.99, 100.0).unwrap(), 5.0);
        assert_eq!(td_target(5.0, true, 0.99, f64::NAN).unwrap(), 5.0);
        assert_eq!(td_target(0.0, false, 0.999, 0.0).unwrap(), 0.0);
        assert!(matches!(td_target(f64::NAN, false, 0.9, 0.0), Err(Error::Training(_))));
        assert!(td_target(0.0, false, 0.9, f64::INFINITY).is_err());
    }

    #[test]
    fn mse_examples() {
        assert!(close(critic_loss_mse(1.1, 1.0), 0.01, 1e-9));
        assert!(close(critic_loss_mse(1100.0, 1000.0), 10000.0, 1e-12));
        let small = critic_loss_mse(1.1, 1.0);
        let big = critic_loss_mse(1100.0, 1000.0);
        assert!(close(big / small, 1e6, 1e-9));
    }

    #[test]
    fn twohot_examples() {
        let bins = BinSpace::new(128, -1e5, 1e5, true).unwrap();
        let y = bins.inverse_transform(bins.centers()[70]);
        let p = bins.encode_twohot(y).unwrap();
        assert_eq!(critic_loss_twohot(&p, y, &bins).unwrap(), 0.0);
        let uniform = vec![1.0 / 128.0; 128];
        for y in [-3.0, 0.0, 42.0, 9e4] {
            assert!(close(critic_loss_twohot(&uniform, y, &bins).unwrap(), (128f64).ln(), 1e-9));
        }
        assert!(critic_loss_twohot(&[0.5, 0.5], 1.0, &bins).is_err());
        let mut bad = uniform.clone();
        bad[0] += 0.1;
        assert!(critic_loss_twohot(&bad, 1.0, &bins).is_err());
    }

    #[test]
    fn actor_examples() {
        assert_eq!(actor_loss_dependent(&[0.0, 1.0], &[7.0, 3.0]).unwrap(), -3.0);
        assert_eq!(actor_loss_dependent(&[0.5, 0.5], &[1.0, 3.0]).unwrap(), -2.0);
        assert!(actor_loss_dependent(&[1.0], &[1.0, 2.0]).is_err());
        let pi = [0.2, 0.3, 0.5];
        let q = [1.0, -2.0, 4.0];
        let shifted: Vec<f64> = q.iter().map(|v| v + 10.0).collect();
        assert!(close(
            actor_loss_dependent(&pi, &shifted).unwrap(),
            actor_loss_dependent(&pi, &q).unwrap() - 10.0,
            1e-12
        ));
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(2.0, &[1.0, 3.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(advantage(5.0, &[1.0, 3.0], &[0.5, 0.5]).unwrap(), 3.0);
        assert!(advantage(5.0, &[1.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn filtered_bc_examples() {
        assert!(close(actor_loss_filtered_bc(2.5, -0.1), 0.1, 1e-12));
        assert_eq!(actor_loss_filtered_bc(0.0, -5.0), 0.0);
        assert_eq!(actor_loss_filtered_bc(-1.0, -5.0), 0.0);
        let logps = [-0.1, -2.0, -0.7];
        let mean_nll = -logps.iter().sum::<f64>() / 3.0;
        let filtered = logps.iter().map(|l| actor_loss_filtered_bc(1.0, *l)).sum::<f64>() / 3.0;
        assert_eq!(filtered, mean_nll);
    }

    #[test]
    fn joint_examples() {
        assert_eq!(joint_loss(&[1.0, 1.0], &[2.0, 2.0], &[true, true], 0.5).unwrap(), 2.0);
        assert_eq!(joint_loss(&[1.0, 1.0], &[2.0, 2.0], &[true, false], 0.5).unwrap(), 2.0);
        assert_eq!(joint_loss(&[1.0, 3.0], &[2.0, 2.0], &[true, true], 0.0).unwrap(), 2.0);
        assert!(matches!(joint_loss(&[1.0], &[1.0], &[false], 1.0), Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn popart_tracks_constant_stream() {
        let beta = 0.01;
        let c = 7.0;
        let mut s = PopArtStats::new(beta, 1e-4);
        for t in 1..=500 {
            s = popart_observe(&s, &[c, c, c]);
            // Closed form of the recursion mu_t = (1 - b) mu_{t-1} + b c from 0.
            let expected = c * (1.0 - (1.0 - beta).powi(t));
            assert!((s.mu - expected).abs() < 1e-9 * c, "step {t}");
            assert!(s.sigma >= s.eps);
        }
        assert_eq!(popart_observe(&s, &[]), s);
        // A long constant stream collapses the variance to the floor.
        let mut s = PopArtStats::new(0.5, 1e-3);
        for _ in 0..200 {
            s = popart_observe(&s, &[3.0]);
        }
        assert_eq!(s.sigma, 1e-3);
    }

    #[test]
    fn popart_preserve_keeps_outputs() {
        let old = PopArtStats { mu: 3.0, nu: 25.0, sigma: 4.0, beta: 0.1, eps: 1e-4 };
        let new = popart_observe(&old, &[100.0, -50.0, 1e4]);
        let (ws, bs) = popart_preserve(&old, &new);
        for (w, b, x) in [(0.3, -0.2, 1.5), (2.0, 0.0, -3.0)] {
            let before = old.denormalize(w * x + b);
            let after = new.denormalize(w * ws * x + b * ws + bs);
            assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
        }
    }

    #[test]
    fn ensemble_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ensemble_reduce_target(&[4.0], &mut rng).unwrap(), 4.0);
        assert_eq!(ensemble_reduce_target(&[3.0, 5.0], &mut rng).unwrap(), 3.0);
        assert_eq!(ensemble_reduce_target(&[2.2; 4], &mut rng).unwrap(), 2.2);
        assert!(matches!(ensemble_reduce_target(&[], &mut rng), Err(Error::Config(_))));
        for _ in 0..100 {
            let (i, j) = ensemble_pair(4, &mut rng).unwrap();
            assert!(i != j && i < 4 && j < 4);
        }
    }

    #[test]
    fn filter_rate_examples() {
        assert_eq!(filter_rate(&[1.0, -1.0, 2.0, -2.0]).unwrap(), 0.5);
        assert_eq!(filter_rate(&[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(filter_rate(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(filter_rate(&[]).is_err());
    }

    #[test]
    fn td_config_defaults_and_validation() {
        let c = TDConfig::default();
        c.validate().unwrap();
        assert_eq!(c.filter_gamma(), 6);
        assert_eq!(c.ensemble_size, 4);
        assert_eq!(c.polyak_tau, 0.003);
        let mut bad = c.clone();
        bad.gammas.push(1.0);
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.filter_gamma_index = Some(7);
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.polyak_tau = 0.0;
        assert!(bad.validate().is_err());
    }
}
