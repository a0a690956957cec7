//! Scalar returns <-> classification labels.
//!
//! A [`BinSpace`] places `B` evenly spaced bin centers between the
//! (optionally symlog-warped) return limits. Targets are encoded as "two-hot"
//! vectors whose expectation over the centers recovers the transformed target,
//! and predictions are decoded by taking that expectation and undoing the
//! transform.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Tolerance on the total mass of a probability vector accepted by [`BinSpace::decode`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Fraction of a bin width within which a target counts as sitting on a center.
const CENTER_SNAP: f64 = 1e-9;

/// `sign(y) * ln(|y| + 1)`.
pub fn symlog(y: f64) -> Result<f64> {
    ensure_finite(y, "symlog input")?;
    Ok(symlog_unchecked(y))
}

/// `sign(b) * (exp(|b|) - 1)`, the inverse of [`symlog`].
pub fn symexp(b: f64) -> Result<f64> {
    ensure_finite(b, "symexp input")?;
    Ok(symexp_unchecked(b))
}

#[inline]
pub(crate) fn symlog_unchecked(y: f64) -> f64 {
    y.signum() * y.abs().ln_1p()
}

#[inline]
pub(crate) fn symexp_unchecked(b: f64) -> f64 {
    b.signum() * b.abs().exp_m1()
}

/// Label space for the classification critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpace {
    num_bins: usize,
    r_low: f64,
    r_high: f64,
    use_symlog: bool,
    centers: Vec<f64>,
}

impl BinSpace {
    pub fn new(num_bins: usize, r_low: f64, r_high: f64, use_symlog: bool) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {num_bins}")));
        }
        if !(r_low.is_finite() && r_high.is_finite()) || r_low >= r_high {
            return Err(Error::Config(format!(
                "bin limits must be finite with r_low < r_high, got ({r_low}, {r_high})"
            )));
        }
        let t = |v: f64| if use_symlog { symlog_unchecked(v) } else { v };
        let (lo, hi) = (t(r_low), t(r_high));
        let last = (num_bins - 1) as f64;
        let mut centers: Vec<f64> = (0..num_bins)
            .map(|i| lo + (hi - lo) * (i as f64) / last)
            .collect();
        // Pin the endpoints exactly so clamped targets are one-hot.
        centers[0] = lo;
        centers[num_bins - 1] = hi;
        Ok(Self { num_bins, r_low, r_high, use_symlog, centers })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn r_low(&self) -> f64 {
        self.r_low
    }

    pub fn r_high(&self) -> f64 {
        self.r_high
    }

    pub fn use_symlog(&self) -> bool {
        self.use_symlog
    }

    /// Bin centers in transformed space.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Maps a raw return into the space the centers live in.
    #[inline]
    pub fn transform(&self, y: f64) -> f64 {
        if self.use_symlog {
            symlog_unchecked(y)
        } else {
            y
        }
    }

    #[inline]
    pub fn inverse_transform(&self, b: f64) -> f64 {
        if self.use_symlog {
            symexp_unchecked(b)
        } else {
            b
        }
    }

    /// Two-hot label for `y`. Out-of-range targets clamp to the nearest limit.
    pub fn encode_twohot(&self, y: f64) -> Result<Vec<f64>> {
        ensure_finite(y, "two-hot target")?;
        let mut out = vec![0.0; self.num_bins];
        self.encode_into(y, &mut out);
        Ok(out)
    }

    /// Writes the two-hot label of a finite `y` into `out` (length `B`).
    pub fn encode_into(&self, y: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_bins);
        out.fill(0.0);
        let (lower, upper_weight) = self.locate(y);
        if upper_weight == 0.0 {
            out[lower] = 1.0;
        } else {
            out[lower] = 1.0 - upper_weight;
            out[lower + 1] = upper_weight;
        }
    }

    /// Returns the lower bin index and the weight that goes to `lower + 1`.
    fn locate(&self, y: f64) -> (usize, f64) {
        let c = &self.centers;
        let last = self.num_bins - 1;
        let t = self.transform(y);
        if t <= c[0] {
            return (0, 0.0);
        }
        if t >= c[last] {
            return (last, 0.0);
        }
        let width = (c[last] - c[0]) / last as f64;
        let mut i = (((t - c[0]) / width).floor() as usize).min(last - 1);
        // Correct for rounding in the index estimate.
        while i > 0 && t < c[i] {
            i -= 1;
        }
        while i + 1 < last && t >= c[i + 1] {
            i += 1;
        }
        // Targets within rounding distance of a center are treated as exactly on it.
        let snap = width * CENTER_SNAP;
        if t - c[i] <= snap {
            return (i, 0.0);
        }
        if c[i + 1] - t <= snap {
            return (i + 1, 0.0);
        }
        let w = (t - c[i]) / (c[i + 1] - c[i]);
        (i, w)
    }

    /// Expected transformed value under `probs`, without validation.
    #[inline]
    pub fn expectation(&self, probs: &[f64]) -> f64 {
        probs.iter().zip(&self.centers).map(|(p, c)| p * c).sum()
    }

    /// Scalar value of a bin distribution, without validation.
    #[inline]
    pub fn decode_unchecked(&self, probs: &[f64]) -> f64 {
        self.inverse_transform(self.expectation(probs))
    }

    /// Scalar value of a bin distribution.
    pub fn decode(&self, probs: &[f64]) -> Result<f64> {
        validate_probs(probs, self.num_bins)?;
        Ok(self.decode_unchecked(probs))
    }

    /// Index of the bin whose center is nearest to the transformed `y`.
    pub fn nearest_bin(&self, y: f64) -> usize {
        let (lower, w) = self.locate(y);
        if w > 0.5 {
            lower + 1
        } else {
            lower
        }
    }
}

/// Checks that `probs` is a length-`n` probability vector.
pub fn validate_probs(probs: &[f64], n: usize) -> Result<()> {
    if probs.len() != n {
        return Err(Error::Domain(format!(
            "probability vector has length {}, expected {n}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Domain(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(())
}
