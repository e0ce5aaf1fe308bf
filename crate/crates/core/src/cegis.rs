//! Counterexample-guided loop alternating finetuning and certification.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certify::{certify_network, CertResult, CertifierConfig, Verdict, Witness};
use crate::error::{Error, Result};
use crate::system::SystemSpec;
use crate::train::{Counterexample, TrainConfig, TrainStatus, Trainer};
use crate::valuenet::ValueNet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CegisConfig {
    pub initial_epsilon: f64,
    /// `ε1 = eps1_fraction·ε`, `ε2 = (1 - eps1_fraction)·ε`.
    pub eps1_fraction: f64,
    pub shrink: f64,
    pub max_iterations: usize,
    /// Run the full curriculum before the first certification.
    pub initial_training: bool,
    /// Epoch budget of each finetuning round.
    pub finetune_epochs: usize,
    /// Samples used for the empirical gate.
    pub gate_samples: usize,
    /// Factor applied to the certifier budget and timeout after a budget row.
    pub budget_growth: f64,
    pub seed: u64,
}

impl Default for CegisConfig {
    fn default() -> Self {
        Self {
            initial_epsilon: 0.30,
            eps1_fraction: 0.05,
            shrink: 0.9,
            max_iterations: 5,
            initial_training: true,
            finetune_epochs: 20_000,
            gate_samples: 20_000,
            budget_growth: 2.0,
            seed: 0,
        }
    }
}

impl CegisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("cegis.{m}")));
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.eps1_fraction > 0.0 && self.eps1_fraction < 1.0) {
            return bad("eps1_fraction must lie in (0, 1)");
        }
        if !(self.initial_epsilon > 0.0) {
            return bad("initial_epsilon must be positive");
        }
        if self.gate_samples == 0 {
            return bad("gate_samples must be >= 1");
        }
        if !(self.budget_growth >= 1.0) {
            return bad("budget_growth must be >= 1");
        }
        Ok(())
    }

    pub fn split(&self, eps: f64) -> (f64, f64) {
        (self.eps1_fraction * eps, (1.0 - self.eps1_fraction) * eps)
    }
}

/// Anything that can judge a network at given thresholds.
pub trait Certifier {
    fn certify(&mut self, net: &ValueNet, eps1: f64, eps2: f64) -> Result<CertResult>;

    /// Called after a budget-exhausted verdict.
    fn relax(&mut self, _factor: f64) {}
}

/// The interval branch-and-prune certifier.
pub struct IntervalCertifier<'a> {
    pub spec: &'a SystemSpec,
    pub cfg: CertifierConfig,
}

impl Certifier for IntervalCertifier<'_> {
    fn certify(&mut self, net: &ValueNet, eps1: f64, eps2: f64) -> Result<CertResult> {
        certify_network(net, self.spec, eps1, eps2, &self.cfg)
    }

    fn relax(&mut self, factor: f64) {
        self.cfg.budget = (self.cfg.budget as f64 * factor).min(u64::MAX as f64) as u64;
        self.cfg.timeout_seconds *= factor;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowResult {
    Certified,
    CounterexampleFound,
    Budget,
}

impl fmt::Display for RowResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowResult::Certified => "Certified",
            RowResult::CounterexampleFound => "Counterexample found",
            RowResult::Budget => "Budget",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegisRow {
    pub iter: usize,
    pub epsilon: f64,
    /// `None` when the model already met the empirical gate.
    pub train_s: Option<f64>,
    pub verify_s: f64,
    pub result: RowResult,
    /// Counterexample the preceding finetune sampled around.
    pub trained_near: Option<Counterexample>,
    pub certificate: CertResult,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// Finetuning ran out of epochs before meeting the empirical gate.
    FinetuneBudget,
    /// The initial curriculum did not finish.
    TrainingBudget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegisReport {
    pub rows: Vec<CegisRow>,
    pub best_epsilon: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub stop_reason: StopReason,
    pub total_seconds: f64,
}

pub const REPORT_HEADER: &str = "iter,epsilon,train_s,verify_s,result";

/// `ε` values are printed with 12 significant digits so `0.9^k·0.3` reads
/// as in the schedule (0.27, 0.243, ...).
pub fn format_epsilon(eps: f64) -> String {
    let s = format!("{:.12}", eps);
    let s = s.trim_end_matches('0');
    let s = s.strip_suffix('.').unwrap_or(s);
    if s.contains('.') && s.split('.').nth(1).map_or(0, |d| d.len()) == 1 {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

impl CegisReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let train = r.train_s.map_or("-".to_string(), |v| format!("{v:.2}"));
            s.push_str(&format!("{},{},{},{:.2},{}\n", r.iter, format_epsilon(r.epsilon), train, r.verify_s, r.result));
        }
        s
    }

    pub fn certified_epsilons(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.result == RowResult::Certified).map(|r| r.epsilon).collect()
    }

    pub fn witnesses(&self) -> Vec<&Witness> {
        self.rows.iter().filter_map(|r| r.certificate.witness()).collect()
    }
}

pub struct CegisOutcome {
    pub report: CegisReport,
    pub net: ValueNet,
    pub best: Option<ValueNet>,
    /// Every certified network with its `(ε1, ε2)`.
    pub certified: Vec<(f64, f64, ValueNet)>,
    /// The network each report row was checked against, in row order.
    pub candidates: Vec<ValueNet>,
}

/// Alternate finetuning and certification, shrinking `ε` after each
/// certificate.
///
/// With `out_dir`, every certified network is written as
/// `certified_<iter>.json` and the best one as `best.json`.
pub fn run_cegis(
    spec: &SystemSpec,
    net: ValueNet,
    train_cfg: &TrainConfig,
    certifier: &mut dyn Certifier,
    cfg: &CegisConfig,
    out_dir: Option<&Path>,
) -> Result<CegisOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut eps = cfg.initial_epsilon;
    let (e1, e2) = cfg.split(eps);
    let mut tcfg = train_cfg.clone();
    tcfg.eps1 = e1;
    tcfg.eps2 = e2;
    tcfg.seed = train_cfg.seed ^ cfg.seed;
    let mut trainer = Trainer::new(spec, tcfg, net)?;
    let mut rows = Vec::new();
    let mut best: Option<(f64, ValueNet, Option<PathBuf>)> = None;
    let mut certified = Vec::new();
    let mut candidates = Vec::new();
    let mut cex: Option<Counterexample> = None;
    let mut stop_reason = StopReason::MaxIterations;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for iter in 1..=cfg.max_iterations {
        let (eps1, eps2) = cfg.split(eps);
        trainer.set_thresholds(eps1, eps2);
        let mut train_s = None;
        let trained_near = cex.clone();
        if iter == 1 && cfg.initial_training {
            let t = Instant::now();
            let status = trainer.run(train_cfg.max_epochs)?;
            train_s = Some(t.elapsed().as_secs_f64());
            if status == TrainStatus::BudgetExhausted {
                stop_reason = StopReason::TrainingBudget;
                break;
            }
        } else {
            let (_, max_l2) = trainer.empirical_max(cfg.gate_samples)?;
            let gate = max_l2 < trainer.cfg.lambda_eps * eps2;
            if cex.is_some() || !gate {
                let t = Instant::now();
                trainer.set_counterexample(cex.take());
                trainer.enter_finetune();
                let status = trainer.run(cfg.finetune_epochs)?;
                train_s = Some(t.elapsed().as_secs_f64());
                if status == TrainStatus::BudgetExhausted {
                    stop_reason = StopReason::FinetuneBudget;
                    break;
                }
            }
        }

        let certificate = certifier.certify(&trainer.net, eps1, eps2)?;
        let verify_s = certificate.seconds;
        let mut checkpoint = None;
        let result = match &certificate.verdict {
            Verdict::Unsat => {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("certified_{iter}.json"));
                    trainer.net.save(&path, certified_metadata(eps1, eps2, iter))?;
                    checkpoint = Some(path);
                }
                certified.push((eps1, eps2, trainer.net.clone()));
                best = Some((eps, trainer.net.clone(), checkpoint.clone()));
                RowResult::Certified
            }
            Verdict::DeltaSat(w) => {
                cex = Some(Counterexample { t: w.t, x: w.x.clone(), boundary: w.query.is_boundary() });
                RowResult::CounterexampleFound
            }
            Verdict::BudgetExhausted(_) => {
                certifier.relax(cfg.budget_growth);
                RowResult::Budget
            }
        };
        candidates.push(trainer.net.clone());
        rows.push(CegisRow { iter, epsilon: eps, train_s, verify_s, result, trained_near, certificate, checkpoint });
        if result == RowResult::Certified {
            eps *= cfg.shrink;
        }
    }

    let mut best_checkpoint = None;
    if let (Some(dir), Some((e, net, _))) = (out_dir, &best) {
        let (eps1, eps2) = cfg.split(*e);
        let path = dir.join("best.json");
        net.save(&path, certified_metadata(eps1, eps2, 0))?;
        best_checkpoint = Some(path);
    }
    let report = CegisReport {
        rows,
        best_epsilon: best.as_ref().map(|b| b.0),
        best_checkpoint,
        stop_reason,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(CegisOutcome { report, net: trainer.net, best: best.map(|b| b.1), certified, candidates })
}

fn certified_metadata(eps1: f64, eps2: f64, iter: usize) -> serde_json::Map<String, serde_json::Value> {
    let mut m = serde_json::Map::new();
    m.insert("epsilon1".into(), eps1.into());
    m.insert("epsilon2".into(), eps2.into());
    if iter > 0 {
        m.insert("cegis_iteration".into(), iter.into());
    }
    m
}
