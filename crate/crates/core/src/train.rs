//! Residual losses and the three-phase curriculum trainer.
//!
//! Per sample, `L1 = |V(T, x) - g(x)|` (only for samples at `t = T`) and
//! `L2 = |∂_t V + min(0, H(t, x, ∇_x V))|`. The optimised objective is
//! `mean(L) + λ_max · max(L)` with `L = 1(t = T)·L1 + λ·L2`.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{HamiltonianTape, SystemSpec};
use crate::valuenet::{Seed, Trace, ValueNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Weight of the PDE residual term.
    pub lambda: f64,
    /// Weight of the PDE residual term while pretraining.
    pub lambda_pretrain: f64,
    /// Weight of the PDE residual term while finetuning (defaults to `lambda`).
    pub lambda_finetune: Option<f64>,
    pub lambda_max_pretrain: f64,
    pub lambda_max_curriculum: f64,
    pub lambda_max_finetune: f64,
    /// Finetuning counts an epoch towards patience when `max L2 < lambda_eps·ε2`.
    pub lambda_eps: f64,
    pub patience: usize,
    /// Curriculum step; `None` means a tenth of the horizon.
    pub time_step: Option<f64>,
    pub learning_rate: f64,
    /// Multiply the learning rate by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// Share of each batch drawn near the latest counterexample.
    pub cex_fraction: f64,
    /// Half-width of the counterexample box as a fraction of each side.
    pub cex_radius: f64,
    /// Share of curriculum and finetune batches pinned at `t = T`.
    pub terminal_fraction: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_epochs: usize,
    /// Record every n-th epoch in the log (phase changes are always kept).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2048,
            lambda: 1.0,
            lambda_pretrain: 0.0,
            lambda_finetune: None,
            lambda_max_pretrain: 0.10,
            lambda_max_curriculum: 0.10,
            lambda_max_finetune: 0.30,
            lambda_eps: 0.95,
            patience: 1000,
            time_step: None,
            learning_rate: 1e-4,
            lr_decay: 1.0,
            lr_decay_every: 0,
            seed: 0,
            cex_fraction: 0.10,
            cex_radius: 0.10,
            terminal_fraction: 0.0,
            eps1: 0.015,
            eps2: 0.285,
            max_epochs: 100_000,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if let Some(l) = self.lambda_finetune {
            if !(l >= 0.0) {
                return bad("lambda_finetune must be >= 0");
            }
        }
        if !(self.lambda_eps > 0.0 && self.lambda_eps < 1.0) {
            return bad("lambda_eps must lie in (0, 1)");
        }
        if let Some(dt) = self.time_step {
            if !(dt > 0.0) {
                return bad("time_step must be positive");
            }
        }
        for (name, f) in [("cex_fraction", self.cex_fraction), ("terminal_fraction", self.terminal_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.cex_fraction + self.terminal_fraction > 1.0 {
            return bad("cex_fraction + terminal_fraction must not exceed 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.eps1.is_nan() || self.eps2.is_nan() || self.eps1 <= 0.0 || self.eps2 <= 0.0 {
            return bad("eps1 and eps2 must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Phase {
    Pretraining,
    Curriculum { t_current: f64 },
    Finetune { patience: usize },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Pretraining => "pretraining",
            Phase::Curriculum { .. } => "curriculum",
            Phase::Finetune { .. } => "finetune",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
}

/// A point near which extra samples are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Violates the terminal condition: samples are drawn on `t = T` only.
    #[serde(default)]
    pub boundary: bool,
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Draw one batch.
///
/// States are uniform over the domain. Times are `T` in pretraining, and
/// uniform over `[t_current, T]` (curriculum) or `[t0, T]` (finetune)
/// otherwise, apart from `round(terminal_fraction·N)` samples pinned at `T`.
/// With a counterexample, the first `round(cex_fraction·N)` samples come
/// from the box of relative radius `cex_radius` around it, clipped to the
/// domain.
pub fn sample_batch(
    cfg: &TrainConfig,
    phase: Phase,
    spec: &SystemSpec,
    cex: Option<&Counterexample>,
    rng: &mut impl Rng,
) -> Vec<Sample> {
    let n = cfg.batch_size;
    let (t0, t1) = (spec.t0, spec.t1);
    let t_lo = match phase {
        Phase::Pretraining => t1,
        Phase::Curriculum { t_current } => t_current.clamp(t0, t1),
        Phase::Finetune { .. } => t0,
    };
    let domain = spec.domain();
    let uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut out = Vec::with_capacity(n);
    let n_cex = cex.map_or(0, |_| count(cfg.cex_fraction, n));
    let n_terminal = if t_lo < t1 { count(cfg.terminal_fraction, n).min(n - n_cex) } else { 0 };
    if let Some(c) = cex {
        let rt = cfg.cex_radius * (t1 - t0);
        for _ in 0..n_cex {
            let lo = (c.t - rt).max(t0);
            let hi = (c.t + rt).min(t1);
            let t = if phase == Phase::Pretraining || c.boundary { t1 } else { uniform(rng, lo, hi) };
            let x = domain
                .dims()
                .iter()
                .zip(&c.x)
                .map(|(d, &xi)| {
                    let r = cfg.cex_radius * d.width();
                    uniform(rng, (xi - r).max(d.lo), (xi + r).min(d.hi))
                })
                .collect();
            out.push(Sample { t, x });
        }
    }
    for k in n_cex..n {
        let t = if k < n_cex + n_terminal { t1 } else { uniform(rng, t_lo, t1) };
        let x = domain.dims().iter().map(|d| uniform(rng, d.lo, d.hi)).collect();
        out.push(Sample { t, x });
    }
    out
}

/// Per-sample residual terms and the quantities needed for their gradients.
#[derive(Clone, Debug, Default)]
pub struct LossTerms {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    /// Signed PDE residual `∂_t V + min(0, H)`.
    pub r2: Vec<f64>,
    /// Signed boundary residual `V - g` (0 where `t != T`).
    pub r1: Vec<f64>,
    /// Whether the sample carries the boundary term.
    pub terminal: Vec<bool>,
}

/// Evaluates losses and their parameter gradients for one system.
pub struct LossEvaluator<'a> {
    spec: &'a SystemSpec,
    hamiltonian: HamiltonianTape,
    vars: Vec<f64>,
    scratch: Vec<f64>,
    dh_dp: Vec<f64>,
    traces: Vec<Trace>,
    /// `H < 0` per sample, and `∂H/∂p` per sample (flattened).
    active: Vec<bool>,
    dh: Vec<f64>,
}

impl<'a> LossEvaluator<'a> {
    pub fn new(spec: &'a SystemSpec) -> Result<Self> {
        Ok(Self {
            spec,
            hamiltonian: spec.hamiltonian_tape()?,
            vars: Vec::new(),
            scratch: Vec::new(),
            dh_dp: vec![0.0; spec.state_dim()],
            traces: Vec::new(),
            active: Vec::new(),
            dh: Vec::new(),
        })
    }

    pub fn loss_terms(&mut self, net: &ValueNet, batch: &[Sample]) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let m = self.spec.state_dim();
        let n = batch.len();
        self.traces.resize_with(n, Trace::default);
        self.active.clear();
        self.dh.clear();
        let mut terms = LossTerms::default();
        for (s, trace) in batch.iter().zip(self.traces.iter_mut()) {
            let out = net.eval(s.t, &s.x, trace)?;
            let h = self.hamiltonian.eval(s.t, &s.x, &out.dx, &mut self.vars, &mut self.scratch, &mut self.dh_dp)?;
            let r2 = out.dt + h.min(0.0);
            let terminal = s.t == self.spec.t1;
            let r1 = if terminal { out.value - self.spec.eval_target(&s.x)? } else { 0.0 };
            terms.r1.push(r1);
            terms.l1.push(r1.abs());
            terms.r2.push(r2);
            terms.l2.push(r2.abs());
            terms.terminal.push(terminal);
            // min(0, H) takes the constant branch at H = 0
            self.active.push(h < 0.0);
            self.dh.extend_from_slice(&self.dh_dp);
        }
        debug_assert_eq!(self.dh.len(), n * m);
        Ok(terms)
    }

    /// Gradient of `Σ_i w_i · (1(t_i = T)·L1_i + λ·L2_i)` for the batch last
    /// passed to [`LossEvaluator::loss_terms`].
    pub fn gradient(&self, net: &ValueNet, terms: &LossTerms, weights: &[f64], lambda: f64) -> Vec<f64> {
        let m = self.spec.state_dim();
        let mut grad = vec![0.0; net.num_params()];
        let sign = |v: f64| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        let mut seed = Seed { value: 0.0, tangent: vec![0.0; 1 + m] };
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            seed.value = if terms.terminal[i] { w * sign(terms.r1[i]) } else { 0.0 };
            let s2 = w * lambda * sign(terms.r2[i]);
            seed.tangent[0] = s2;
            for j in 0..m {
                seed.tangent[1 + j] = if self.active[i] { s2 * self.dh[i * m + j] } else { 0.0 };
            }
            net.backprop(&self.traces[i], &seed, &mut grad);
        }
        grad
    }
}

impl LossEvaluator<'_> {
    /// Total loss of a batch and its parameter gradient.
    pub fn objective(&mut self, net: &ValueNet, batch: &[Sample], lambda: f64, lambda_max: f64) -> Result<(f64, Vec<f64>, LossTerms)> {
        let terms = self.loss_terms(net, batch)?;
        let combined = combined_losses(&terms, lambda);
        let weights = objective_weights(&combined, lambda_max);
        let grad = self.gradient(net, &terms, &weights, lambda);
        let total = total_loss(&terms.l1, &terms.l2, lambda, lambda_max);
        Ok((total, grad, terms))
    }
}

fn combined_losses(terms: &LossTerms, lambda: f64) -> Vec<f64> {
    terms.l1.iter().zip(&terms.l2).map(|(a, b)| a + lambda * b).collect()
}

/// Per-sample `L1` and `L2` for a batch.
pub fn loss_terms(net: &ValueNet, spec: &SystemSpec, batch: &[Sample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let terms = LossEvaluator::new(spec)?.loss_terms(net, batch)?;
    Ok((terms.l1, terms.l2))
}

/// `mean(L) + λ_max · max(L)` with `L_i = L1_i + λ·L2_i`.
pub fn total_loss(l1: &[f64], l2: &[f64], lambda: f64, lambda_max: f64) -> f64 {
    if l1.is_empty() {
        return 0.0;
    }
    let combined = l1.iter().zip(l2).map(|(a, b)| a + lambda * b);
    let (sum, max) = combined.fold((0.0, f64::NEG_INFINITY), |(s, m), v| (s + v, f64::max(m, v)));
    sum / l1.len() as f64 + lambda_max * max
}

/// Weights `∂total/∂L_i`: `1/N` everywhere plus `λ_max` on the first argmax.
fn objective_weights(combined: &[f64], lambda_max: f64) -> Vec<f64> {
    let n = combined.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut arg = 0;
    for (i, v) in combined.iter().enumerate() {
        if *v > combined[arg] {
            arg = i;
        }
    }
    w[arg] += lambda_max;
    w
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub phase: String,
    pub t_current: f64,
    pub mean_l1: f64,
    pub max_l1: f64,
    pub mean_l2: f64,
    pub max_l2: f64,
    pub total_loss: f64,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,phase,t_current,mean_L1,max_L1,mean_L2,max_L2,total_loss,wall_seconds";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.phase,
            self.t_current,
            self.mean_l1,
            self.max_l1,
            self.mean_l2,
            self.max_l2,
            self.total_loss,
            self.wall_seconds
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    /// Finetune patience exceeded.
    Converged,
    /// Epoch budget ran out first.
    BudgetExhausted,
}

/// Stateful trainer; keeps optimiser state and RNG across calls so CEGIS
/// can resume finetuning.
pub struct Trainer<'a> {
    spec: &'a SystemSpec,
    pub cfg: TrainConfig,
    pub net: ValueNet,
    phase: Phase,
    epoch: usize,
    adam: Adam,
    rng: ChaCha8Rng,
    evaluator: LossEvaluator<'a>,
    counterexample: Option<Counterexample>,
    log: Vec<LogRow>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &'a SystemSpec, cfg: TrainConfig, net: ValueNet) -> Result<Self> {
        cfg.validate()?;
        if net.config().state_dim != spec.state_dim() {
            return Err(Error::DimensionMismatch { expected: spec.state_dim(), got: net.config().state_dim });
        }
        let adam = Adam::new(net.num_params());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            spec,
            evaluator: LossEvaluator::new(spec)?,
            cfg,
            net,
            phase: Phase::Pretraining,
            epoch: 0,
            adam,
            rng,
            counterexample: None,
            log: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn set_thresholds(&mut self, eps1: f64, eps2: f64) {
        self.cfg.eps1 = eps1;
        self.cfg.eps2 = eps2;
    }

    pub fn set_counterexample(&mut self, cex: Option<Counterexample>) {
        self.counterexample = cex;
    }

    /// Jump to finetuning with patience reset to zero.
    pub fn enter_finetune(&mut self) {
        self.phase = Phase::Finetune { patience: 0 };
    }

    fn time_step(&self) -> f64 {
        self.cfg.time_step.unwrap_or((self.spec.t1 - self.spec.t0) / 10.0)
    }

    fn lambda_max(&self) -> f64 {
        match self.phase {
            Phase::Pretraining => self.cfg.lambda_max_pretrain,
            Phase::Curriculum { .. } => self.cfg.lambda_max_curriculum,
            Phase::Finetune { .. } => self.cfg.lambda_max_finetune,
        }
    }

    fn learning_rate(&self) -> f64 {
        if self.cfg.lr_decay_every == 0 {
            return self.cfg.learning_rate;
        }
        let k = (self.epoch / self.cfg.lr_decay_every) as i32;
        self.cfg.learning_rate * self.cfg.lr_decay.powi(k)
    }

    /// One epoch; returns whether finetune patience was exceeded.
    pub fn step(&mut self) -> Result<bool> {
        let batch = sample_batch(&self.cfg, self.phase, self.spec, self.counterexample.as_ref(), &mut self.rng);
        let lambda = match self.phase {
            Phase::Pretraining => self.cfg.lambda_pretrain,
            Phase::Curriculum { .. } => self.cfg.lambda,
            Phase::Finetune { .. } => self.cfg.lambda_finetune.unwrap_or(self.cfg.lambda),
        };
        let lambda_max = self.lambda_max();
        let (total, grad, terms) = self.evaluator.objective(&self.net, &batch, lambda, lambda_max)?;
        let lr = self.learning_rate();
        self.adam.update(self.net.params_mut(), &grad, lr);

        let n_term = terms.terminal.iter().filter(|&&b| b).count();
        let (mean_l1, max_l1) = if n_term == 0 {
            (0.0, 0.0)
        } else {
            let it = terms.l1.iter().zip(&terms.terminal).filter(|(_, &b)| b).map(|(v, _)| *v);
            let (s, m) = it.fold((0.0, 0.0f64), |(s, m), v| (s + v, m.max(v)));
            (s / n_term as f64, m)
        };
        let max_l2 = terms.l2.iter().copied().fold(0.0, f64::max);
        let mean_l2 = terms.l2.iter().sum::<f64>() / terms.l2.len() as f64;

        let before = self.phase;
        let mut done = false;
        match self.phase {
            Phase::Pretraining => {
                if max_l1 < self.cfg.eps1 {
                    self.phase = Phase::Curriculum { t_current: self.spec.t1 };
                }
            }
            Phase::Curriculum { t_current } => {
                if max_l2 < self.cfg.eps2 {
                    let next = t_current - self.time_step();
                    let tol = 1e-12 * (self.spec.t1 - self.spec.t0).abs().max(1.0);
                    self.phase = if next <= self.spec.t0 + tol {
                        Phase::Finetune { patience: 0 }
                    } else {
                        Phase::Curriculum { t_current: next }
                    };
                }
            }
            Phase::Finetune { patience } => {
                if max_l2 < self.cfg.lambda_eps * self.cfg.eps2 {
                    let p = patience + 1;
                    self.phase = Phase::Finetune { patience: p };
                    done = p > self.cfg.patience;
                }
            }
        }
        let t_current = match before {
            Phase::Pretraining => self.spec.t1,
            Phase::Curriculum { t_current } => t_current,
            Phase::Finetune { .. } => self.spec.t0,
        };
        let changed = std::mem::discriminant(&before) != std::mem::discriminant(&self.phase);
        if changed || done || self.cfg.log_every <= 1 || self.epoch % self.cfg.log_every == 0 {
            self.log.push(LogRow {
                epoch: self.epoch,
                phase: before.name().to_string(),
                t_current,
                mean_l1,
                max_l1,
                mean_l2,
                max_l2,
                total_loss: total,
                wall_seconds: self.started.elapsed().as_secs_f64(),
            });
        }
        self.epoch += 1;
        Ok(done)
    }

    /// Train for at most `max_epochs` more epochs.
    pub fn run(&mut self, max_epochs: usize) -> Result<TrainStatus> {
        for _ in 0..max_epochs {
            if self.step()? {
                return Ok(TrainStatus::Converged);
            }
        }
        Ok(TrainStatus::BudgetExhausted)
    }

    /// Empirical gate on a fresh batch over the full horizon: returns
    /// `(max L1 at t = T, max L2)`.
    pub fn empirical_max(&mut self, n: usize) -> Result<(f64, f64)> {
        let mut cfg = self.cfg.clone();
        cfg.batch_size = n;
        cfg.terminal_fraction = 0.0;
        let batch = sample_batch(&cfg, Phase::Finetune { patience: 0 }, self.spec, None, &mut self.rng);
        let terms = self.evaluator.loss_terms(&self.net, &batch)?;
        let boundary: Vec<Sample> = batch.iter().map(|s| Sample { t: self.spec.t1, x: s.x.clone() }).collect();
        let bterms = self.evaluator.loss_terms(&self.net, &boundary)?;
        let max_l1 = bterms.l1.iter().copied().fold(0.0, f64::max);
        let max_l2 = terms.l2.iter().copied().fold(0.0, f64::max);
        Ok((max_l1, max_l2))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: ValueNet,
    pub log: Vec<LogRow>,
    pub status: TrainStatus,
    pub final_phase: Phase,
    pub epochs: usize,
}

/// Run pretraining, curriculum and finetuning until finetune patience is
/// exceeded or `cfg.max_epochs` is used up.
pub fn run_curriculum(net: ValueNet, spec: &SystemSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(spec, cfg.clone(), net)?;
    let status = trainer.run(cfg.max_epochs)?;
    Ok(TrainOutcome {
        final_phase: trainer.phase,
        epochs: trainer.epoch,
        log: std::mem::take(&mut trainer.log),
        net: trainer.net,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(&[0.0, 0.0], &[0.0, 0.0], 1.0, 0.1), 0.0);
        let v = 0.37;
        assert!((total_loss(&[v], &[0.0], 1.0, 0.10) - 1.1 * v).abs() < 1e-15);
        // combined values {0, 2}: mean 1, max 2
        assert!((total_loss(&[0.0, 1.0], &[0.0, 1.0], 1.0, 0.30) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn objective_weights_sum() {
        let w = objective_weights(&[0.1, 0.5, 0.5, 0.2], 0.3);
        assert_eq!(w[1], 0.25 + 0.3);
        assert_eq!(w[2], 0.25);
        assert!((w.iter().sum::<f64>() - 1.3).abs() < 1e-15);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut adam = Adam::new(2);
        let mut p = [1.0, -1.0];
        adam.update(&mut p, &[2.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { lambda_eps: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { cex_fraction: 1.5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { time_step: Some(0.0), ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { lambda_finetune: Some(-0.1), ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
