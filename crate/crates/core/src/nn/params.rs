use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Named parameter arrays.
///
/// Values sit behind `Arc`s so that rollout workers can hold a cheap snapshot
/// while the learner mutates its own copy (copy-on-write through
/// [`ParamSet::get_mut`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arc<Matrix>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Arc<Matrix> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Matrix {
        Arc::make_mut(&mut self.values[id])
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter sets have different layouts".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?} vs {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * online`, elementwise.
    pub fn blend_from(&mut self, online: &ParamSet, tau: f64) -> Result<()> {
        self.check_compatible(online)?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("blend rate must lie in [0, 1], got {tau}")));
        }
        if tau == 0.0 {
            return Ok(());
        }
        for i in 0..self.values.len() {
            if tau == 1.0 {
                self.values[i] = Arc::clone(&online.values[i]);
                continue;
            }
            if Arc::ptr_eq(&self.values[i], &online.values[i]) {
                continue;
            }
            let src = Arc::clone(&online.values[i]);
            let dst = Arc::make_mut(&mut self.values[i]);
            for (t, o) in dst.data_mut().iter_mut().zip(src.data()) {
                *t = (1.0 - tau) * *t + tau * o;
            }
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Scaled Gaussian initialization for a `fan_in x fan_out` weight.
pub fn init_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Matrix {
    let std = gain / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}
