//! The training loop: rank sync, forward/backward, meta-loss, clipped and
//! projected scale updates, then plain SGD on the factors. Also hosts the two
//! monitors that check the run against its stability and convergence bounds.

use std::fmt;
use std::str::FromStr;

use crate::adapter::DEFAULT_ALPHA_MAX;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::ModelState;
use crate::regularizer::{alpha_gradient, regularizer_value, AlphaTrace, RegConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Scales are learned and ranks follow them.
    Adaptive,
    /// Scales frozen at 1; every head keeps rank `r0`. Plain fixed-rank LoRA.
    Uniform,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Adaptive => "adaptive",
            Mode::Uniform => "uniform",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "uniform" => Ok(Mode::Uniform),
            other => Err(format!("expected `adaptive` or `uniform`, got `{other}`")),
        }
    }
}

/// Synthetic additive spikes on the task gradient of every scale. Used to
/// stress the clipping path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSpike {
    pub every: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub r0: usize,
    pub lambda: f64,
    pub beta: f64,
    pub eta_theta: f64,
    pub eta_alpha: f64,
    /// Scale gradients are clipped to `[-clip_c, clip_c]`.
    pub clip_c: f64,
    pub steps: usize,
    pub seed: u64,
    pub alpha_max: f64,
    pub mode: Mode,
    /// Ranks are re-synchronized to the scales every this many steps.
    pub resize_every: usize,
    /// Keep `B` fixed and train `A` only.
    pub freeze_b: bool,
    pub spike: Option<GradientSpike>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            r0: 16,
            lambda: 0.01,
            beta: 0.1,
            eta_theta: 1e-4,
            eta_alpha: 5e-5,
            clip_c: 10.0,
            steps: 3000,
            seed: 0,
            alpha_max: DEFAULT_ALPHA_MAX,
            mode: Mode::Adaptive,
            resize_every: 1,
            freeze_b: false,
            spike: None,
        }
    }
}

impl TrainerConfig {
    pub fn reg(&self) -> RegConfig {
        RegConfig {
            lambda: self.lambda,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        RegConfig::new(self.lambda, self.beta)?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.r0 == 0 {
            return Err(Error::invalid("r0 must be >= 1"));
        }
        if !positive(self.eta_theta) {
            return Err(Error::invalid("eta_theta must be > 0"));
        }
        if !(self.eta_alpha >= 0.0 && self.eta_alpha.is_finite()) {
            return Err(Error::invalid("eta_alpha must be >= 0"));
        }
        if !positive(self.clip_c) {
            return Err(Error::invalid("clip_c must be > 0"));
        }
        if !positive(self.alpha_max) {
            return Err(Error::invalid("alpha_max must be > 0"));
        }
        if self.resize_every == 0 {
            return Err(Error::invalid("resize_every must be >= 1"));
        }
        Ok(())
    }

    /// Largest per-step change of any scale the update rule allows.
    pub fn stability_bound(&self) -> f64 {
        self.clip_c * self.eta_alpha
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub task_loss: f64,
    pub meta_loss: f64,
    pub l1: f64,
    pub tv: f64,
    /// Scales used in this step's forward pass, flat over (layer, head).
    pub alphas: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Sup norm of the full meta-gradient over trained parameters.
    pub grad_norm: f64,
    /// Squared Euclidean norm of the same gradient.
    pub grad_norm_sq: f64,
    pub params: usize,
}

pub struct Trainer {
    cfg: TrainerConfig,
    state: ModelState,
    traces: Vec<AlphaTrace>,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, state: ModelState) -> Result<Self> {
        cfg.validate()?;
        if state.adapters.iter().any(|a| a.r0() != cfg.r0) {
            return Err(Error::invalid("adapters were built with a different base rank"));
        }
        let traces = state
            .adapters
            .iter()
            .map(|a| AlphaTrace::from_values(vec![a.alpha()]))
            .collect::<Result<_>>()?;
        Ok(Trainer { cfg, state, traces, step: 0 })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn traces(&self) -> &[AlphaTrace] {
        &self.traces
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One full iteration on the batch `(x, y)`.
    pub fn train_step(&mut self, x: &Matrix, y: &Matrix) -> Result<StepRecord> {
        let t = self.step;
        let adaptive = self.cfg.mode == Mode::Adaptive;

        if adaptive && t % self.cfg.resize_every == 0 {
            let seed = rng::derive_seed(self.cfg.seed, &[t as u64]);
            for ad in &mut self.state.adapters {
                ad.sync_rank(seed)?;
            }
        }

        let alphas: Vec<f64> = self.state.adapters.iter().map(|a| a.alpha()).collect();
        let ranks: Vec<usize> = self.state.adapters.iter().map(|a| a.rank()).collect();
        let params = self.state.param_count();

        let grads = self.state.backward(x, y)?;
        if !grads.loss.is_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: format!("task loss is {}", grads.loss),
            });
        }
        let reg_cfg = self.cfg.reg();
        let reg = regularizer_value(&self.traces, t, &reg_cfg)?;
        let meta_loss = grads.loss + self.cfg.lambda * reg.total;

        let mut sup = 0.0_f64;
        let mut sq = 0.0_f64;
        let mut accumulate = |m: &Matrix| {
            for v in m.data() {
                sup = sup.max(v.abs());
                sq += v * v;
            }
        };
        for g in &grads.heads {
            if !self.cfg.freeze_b {
                accumulate(&g.grad_b);
            }
            accumulate(&g.grad_a);
        }

        let mut alpha_grads = Vec::with_capacity(grads.heads.len());
        if adaptive {
            for (i, g) in grads.heads.iter().enumerate() {
                let mut task = g.grad_alpha;
                if let Some(spike) = self.cfg.spike {
                    if spike.every > 0 && t % spike.every == 0 {
                        let sign = if (t / spike.every + i) % 2 == 0 { 1.0 } else { -1.0 };
                        task += sign * spike.magnitude;
                    }
                }
                let meta = alpha_gradient(task, &self.traces[i], t, &reg_cfg)?;
                sup = sup.max(meta.abs());
                sq += meta * meta;
                alpha_grads.push(meta);
            }
        }
        if !sup.is_finite() || !sq.is_finite() {
            return Err(Error::Diverged {
                step: t,
                reason: "non-finite gradient".into(),
            });
        }

        for (i, ad) in self.state.adapters.iter_mut().enumerate() {
            if adaptive {
                let g = alpha_grads[i].clamp(-self.cfg.clip_c, self.cfg.clip_c);
                ad.update_alpha(ad.alpha() - self.cfg.eta_alpha * g, self.cfg.alpha_max);
            }
            self.traces[i].push(ad.alpha());

            let g = &grads.heads[i];
            let (b, a) = ad.factors_mut();
            if !self.cfg.freeze_b {
                b.add_scaled(-self.cfg.eta_theta, &g.grad_b)?;
            }
            a.add_scaled(-self.cfg.eta_theta, &g.grad_a)?;
        }

        self.step += 1;
        Ok(StepRecord {
            step: t,
            task_loss: grads.loss,
            meta_loss,
            l1: reg.l1,
            tv: reg.tv,
            alphas,
            ranks,
            grad_norm: sup,
            grad_norm_sq: sq,
            params,
        })
    }

    /// Runs the configured number of steps, handing each record to `sink`.
    pub fn run(
        &mut self,
        x: &Matrix,
        y: &Matrix,
        mut sink: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let rec = self.train_step(x, y)?;
            sink(&rec)?;
            records.push(rec);
        }
        Ok(records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub max_delta: f64,
    pub bound: f64,
    pub transitions: usize,
}

/// Checks `|alpha(t+1) - alpha(t)| <= clip_c * eta_alpha` for every head and
/// consecutive pair of records.
///
/// The comparison allows two ulps of the scale's magnitude for the rounding
/// in `alpha - eta * g`.
pub fn stability_monitor(records: &[StepRecord], clip_c: f64, eta_alpha: f64) -> Result<StabilityReport> {
    if records.len() < 2 {
        return Err(Error::invalid("stability check needs at least two records"));
    }
    let bound = clip_c * eta_alpha;
    let mut max_delta = 0.0_f64;
    let mut transitions = 0;
    for pair in records.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if prev.alphas.len() != next.alphas.len() {
            return Err(Error::invalid("records disagree on the number of heads"));
        }
        for (h, (a, b)) in prev.alphas.iter().zip(&next.alphas).enumerate() {
            let delta = (b - a).abs();
            let slack = 2.0 * f64::EPSILON * a.abs().max(b.abs());
            if delta > bound + slack {
                return Err(Error::InvariantBreach(format!(
                    "head {h} moved by {delta:e} between steps {} and {}, bound {bound:e}",
                    prev.step, next.step
                )));
            }
            max_delta = max_delta.max(delta);
            transitions += 1;
        }
    }
    Ok(StabilityReport {
        max_delta,
        bound,
        transitions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `m(T) = min_t |g_t|^2` over the whole run.
    pub min_sq_norm: f64,
    pub steps: usize,
    /// Mean of `m(t) * t` over the fitting window.
    pub fitted_c: f64,
    /// Largest `m(t) * t` over the remainder.
    pub worst_tail: f64,
    pub passed: bool,
}

/// Empirical `min_{t <= T} |g_t|^2 <= C / T` check on a stream of squared
/// gradient norms. `C` is fitted as the mean of `m(t) * t` over the first
/// `split` fraction; the check passes when `m(t) * t <= 3 C` for every later `t`.
pub fn convergence_check(sq_norms: &[f64], split: f64) -> Result<ConvergenceReport> {
    if sq_norms.is_empty() {
        return Err(Error::invalid("convergence check needs at least one record"));
    }
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::invalid("split must lie in (0, 1]"));
    }
    let steps = sq_norms.len();
    let fit_len = ((split * steps as f64).round() as usize).clamp(1, steps);

    let mut running = f64::INFINITY;
    let scaled: Vec<f64> = sq_norms
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            running = running.min(g);
            running * (i + 1) as f64
        })
        .collect();

    let fitted_c = scaled[..fit_len].iter().sum::<f64>() / fit_len as f64;
    let worst_tail = scaled[fit_len..].iter().fold(0.0_f64, |m, &v| m.max(v));
    Ok(ConvergenceReport {
        min_sq_norm: running,
        steps,
        fitted_c,
        worst_tail,
        passed: worst_tail <= 3.0 * fitted_c,
    })
}

pub fn convergence_monitor(records: &[StepRecord], split: f64) -> Result<ConvergenceReport> {
    let norms: Vec<f64> = records.iter().map(|r| r.grad_norm_sq).collect();
    convergence_check(&norms, split)
}
