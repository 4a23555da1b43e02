//! Sparsity plus temporal-smoothness penalty on the per-head scales.
//!
//! `R = sum_h |alpha_h(t)| + beta * sum_h (alpha_h(t) - alpha_h(t-1))^2`,
//! evaluated once per step. The gradient drops the look-ahead term that
//! depends on `alpha(t+1)`, which is not known when the step is taken.

use crate::error::{Error, Result};

/// Per-head history of the scale, one value per training step.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTrace {
    values: Vec<f64>,
}

impl Default for AlphaTrace {
    fn default() -> Self {
        AlphaTrace { values: vec![1.0] }
    }
}

impl AlphaTrace {
    /// Trace holding only the initial value `alpha(0) = 1`.
    pub fn new() -> Self {
        Self::default()
    }

    /// Trace from explicit values. Must be non-empty.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("alpha trace needs at least alpha(0)"));
        }
        Ok(AlphaTrace { values })
    }

    pub fn push(&mut self, alpha: f64) {
        self.values.push(alpha);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("trace is never empty")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: usize) -> Result<f64> {
        self.values.get(t).copied().ok_or_else(|| {
            Error::invalid(format!("step {t} beyond trace of length {}", self.values.len()))
        })
    }

    /// `alpha(t) - alpha(t-1)`, and `0` at `t = 0`.
    pub fn temporal_gradient(&self, t: usize) -> Result<f64> {
        let now = self.at(t)?;
        if t == 0 {
            return Ok(0.0);
        }
        Ok(now - self.values[t - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            lambda: 0.01,
            beta: 0.1,
        }
    }
}

impl RegConfig {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be a finite non-negative number, got {lambda}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be a finite non-negative number, got {beta}")));
        }
        Ok(RegConfig { lambda, beta })
    }
}

/// Value of the penalty at one step, split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegValue {
    /// `l1 + beta * tv`. Not yet multiplied by `lambda`.
    pub total: f64,
    pub l1: f64,
    pub tv: f64,
}

pub fn regularizer_value(traces: &[AlphaTrace], t: usize, cfg: &RegConfig) -> Result<RegValue> {
    if let Some(first) = traces.first() {
        if traces.iter().any(|tr| tr.len() != first.len()) {
            return Err(Error::invalid("alpha traces have inconsistent lengths"));
        }
    }
    let mut l1 = 0.0;
    let mut tv = 0.0;
    for tr in traces {
        l1 += tr.at(t)?.abs();
        tv += tr.temporal_gradient(t)?.powi(2);
    }
    Ok(RegValue {
        total: l1 + cfg.beta * tv,
        l1,
        tv,
    })
}

/// Subgradient sign with `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda * (sign(alpha(t)) + 2 beta (alpha(t) - alpha(t-1)))`.
pub fn penalty_gradient(trace: &AlphaTrace, t: usize, cfg: &RegConfig) -> Result<f64> {
    let alpha = trace.at(t)?;
    let step = trace.temporal_gradient(t)?;
    Ok(cfg.lambda * (sign(alpha) + 2.0 * cfg.beta * step))
}

/// Full meta-gradient for one head's scale: task part plus penalty part.
pub fn alpha_gradient(task_grad_alpha: f64, trace: &AlphaTrace, t: usize, cfg: &RegConfig) -> Result<f64> {
    Ok(task_grad_alpha + penalty_gradient(trace, t, cfg)?)
}
