//! Command-line driver.
//!
//! Exit codes: 0 success or certified, 1 counterexample or violation,
//! 2 usage or configuration error, 3 budget exhausted.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cegis::{run_cegis, CegisConfig, IntervalCertifier, StopReason};
use crate::certify::{build_queries, network_residuals, run_queries, write_smtlib, CertifierConfig, Verdict};
use crate::error::{Error, Result};
use crate::oracle::{for_each_reachable, levelset_solve, LevelSetOptions, SamplingOptions};
use crate::reach::{classify_value, epsilon_total, export_grid, grid_csv, summarize_grid, CertifiedValue, Class};
use crate::system::SystemSpec;
use crate::train::{log_csv, run_curriculum, TrainConfig, TrainStatus};
use crate::valuenet::{NetConfig, ValueNet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub omega: f64,
    pub degree: u32,
    pub seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        let c = NetConfig::new(1);
        Self { hidden: c.hidden, omega: c.omega, degree: c.degree, seed: c.seed }
    }
}

impl NetSection {
    pub fn for_system(&self, spec: &SystemSpec) -> NetConfig {
        NetConfig {
            state_dim: spec.state_dim(),
            hidden: self.hidden.clone(),
            omega: self.omega,
            degree: self.degree,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub trajectories: usize,
    pub sampling: SamplingOptions,
    pub levelset: LevelSetOptions,
    /// Allowance for the grid solver's own error in the value comparison.
    pub grid_tolerance: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            trajectories: 10_000,
            sampling: SamplingOptions::default(),
            levelset: LevelSetOptions::default(),
            grid_tolerance: 0.1,
        }
    }
}

/// Run configuration. `system` and `out` are relative to the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub certify: CertifierConfig,
    #[serde(default)]
    pub cegis: CegisConfig,
    #[serde(default)]
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.system.is_relative() {
            cfg.system = base.join(&cfg.system);
        }
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(base.join(out));
            }
        }
        cfg.train.validate()?;
        cfg.certify.validate()?;
        cfg.cegis.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load_system(&self) -> Result<SystemSpec> {
        SystemSpec::load(&self.system)
    }
}

#[derive(Parser, Debug)]
#[command(name = "certreach", version, about = "Certified neural Hamilton-Jacobi reachability")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed mixed into every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct EpsArgs {
    /// Residual budget, split as ε1 = frac·ε and ε2 = (1 - frac)·ε.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Share of ε assigned to the boundary residual.
    #[arg(long = "eps1-frac", default_value_t = 0.05)]
    pub eps1_frac: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a value network with the three-phase curriculum.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Certify a checkpoint at a given ε.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long, env = "CERTREACH_WORKERS")]
        workers: Option<usize>,
    },
    /// Alternate finetuning and certification.
    Cegis {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of training from scratch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long, env = "CERTREACH_WORKERS")]
        workers: Option<usize>,
    },
    /// Write the value grid and set classes at one time.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        eps: EpsArgs,
        /// Value-function time (defaults to t0).
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
    },
    /// Compare a certified checkpoint with the trajectory and grid oracles.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        eps: EpsArgs,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

struct Context {
    cfg: RunConfig,
    spec: SystemSpec,
    out: PathBuf,
    seed: u64,
}

fn context(common: &Common) -> Result<Context> {
    let cfg = RunConfig::load(&common.config)?;
    let spec = cfg.load_system()?;
    let out = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(Context { cfg, spec, out, seed })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn manifest(command: &str, ctx: &Context, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": ctx.seed,
        "system": ctx.spec.source(),
        "config": ctx.cfg,
        "details": extra,
    })
}

/// `(ε1, ε2)` from `--eps`, or from checkpoint metadata, or from the CEGIS
/// start value.
fn thresholds(eps: &EpsArgs, meta: Option<&serde_json::Map<String, serde_json::Value>>, fallback: f64) -> Result<(f64, f64)> {
    if !(eps.eps1_frac > 0.0 && eps.eps1_frac < 1.0) {
        return Err(Error::Config(format!("--eps1-frac must lie in (0, 1), got {}", eps.eps1_frac)));
    }
    let split = |e: f64| (eps.eps1_frac * e, (1.0 - eps.eps1_frac) * e);
    if let Some(e) = eps.eps {
        if !(e > 0.0) {
            return Err(Error::Config(format!("--eps must be positive, got {e}")));
        }
        return Ok(split(e));
    }
    if let Some(m) = meta {
        if let (Some(a), Some(b)) = (m.get("epsilon1").and_then(|v| v.as_f64()), m.get("epsilon2").and_then(|v| v.as_f64())) {
            return Ok((a, b));
        }
    }
    Ok(split(fallback))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train { common } => cmd_train(&common),
        Command::Certify { common, checkpoint, eps, workers } => cmd_certify(&common, &checkpoint, &eps, workers),
        Command::Cegis { common, checkpoint, eps, workers } => cmd_cegis(&common, checkpoint.as_deref(), &eps, workers),
        Command::Export { common, checkpoint, eps, t, resolution } => cmd_export(&common, &checkpoint, &eps, t, resolution),
        Command::Compare { common, checkpoint, eps, t, trajectories, resolution } => {
            cmd_compare(&common, &checkpoint, &eps, t, trajectories, resolution)
        }
    }
}

fn initial_net(ctx: &Context) -> Result<ValueNet> {
    let mut nc = ctx.cfg.net.for_system(&ctx.spec);
    nc.seed ^= ctx.seed;
    ValueNet::new(nc)
}

fn load_checkpoint(path: &Path, spec: &SystemSpec) -> Result<(ValueNet, serde_json::Map<String, serde_json::Value>)> {
    let (net, meta) = ValueNet::load_with_metadata(path)?;
    if net.config().state_dim != spec.state_dim() {
        return Err(Error::CheckpointMismatch(format!(
            "{}: network has {} states, system has {}",
            path.display(),
            net.config().state_dim,
            spec.state_dim()
        )));
    }
    Ok((net, meta))
}

pub fn cmd_train(common: &Common) -> Result<i32> {
    let ctx = context(common)?;
    let mut tcfg = ctx.cfg.train.clone();
    tcfg.seed ^= ctx.seed;
    let net = initial_net(&ctx)?;
    let outcome = run_curriculum(net, &ctx.spec, &tcfg)?;
    let ckpt = ctx.out.join("checkpoint.json");
    let mut meta = serde_json::Map::new();
    meta.insert("epochs".into(), outcome.epochs.into());
    meta.insert("status".into(), serde_json::to_value(outcome.status)?);
    outcome.net.save(&ckpt, meta)?;
    write(&ctx.out.join("train_log.csv"), &log_csv(&outcome.log))?;
    let details = serde_json::json!({
        "checkpoint": ckpt,
        "log": ctx.out.join("train_log.csv"),
        "epochs": outcome.epochs,
        "status": outcome.status,
        "final_phase": outcome.final_phase.name(),
    });
    write_json(&ctx.out.join("manifest.json"), &manifest("train", &ctx, details))?;
    println!("{:?} after {} epochs, checkpoint {}", outcome.status, outcome.epochs, ckpt.display());
    Ok(match outcome.status {
        TrainStatus::Converged => EXIT_OK,
        TrainStatus::BudgetExhausted => EXIT_BUDGET,
    })
}

pub fn cmd_certify(common: &Common, checkpoint: &Path, eps: &EpsArgs, workers: Option<usize>) -> Result<i32> {
    let ctx = context(common)?;
    let (net, meta) = load_checkpoint(checkpoint, &ctx.spec)?;
    let (eps1, eps2) = thresholds(eps, Some(&meta), ctx.cfg.cegis.initial_epsilon)?;
    let mut ccfg = ctx.cfg.certify.clone();
    if let Some(w) = workers {
        ccfg.workers = w;
    }
    let residuals = network_residuals(&net, &ctx.spec)?;
    let queries = build_queries(&residuals, &ctx.spec, eps1, eps2)?;
    let smt = write_smtlib(&queries, &ctx.out.join("smt"))?;
    let result = run_queries(&queries, &ccfg)?;
    let report = result.to_json(&ccfg, eps1, eps2);
    write_json(&ctx.out.join("certificate.json"), &report)?;
    let details = serde_json::json!({ "checkpoint": checkpoint, "epsilon1": eps1, "epsilon2": eps2, "smtlib": smt });
    write_json(&ctx.out.join("manifest.json"), &manifest("certify", &ctx, details))?;
    match &result.verdict {
        Verdict::Unsat => {
            println!("certified: |R1| <= {eps1}, |R2| <= {eps2} ({} boxes, {:.1}s)", result.boxes, result.seconds);
            Ok(EXIT_OK)
        }
        Verdict::DeltaSat(w) => {
            println!("counterexample for {} at t = {}, x = {:?}: residual {} vs {}", w.query, w.t, w.x, w.value, w.threshold);
            Ok(EXIT_VIOLATION)
        }
        Verdict::BudgetExhausted(f) => {
            println!("budget exhausted with {} open boxes", f.open_boxes);
            Ok(EXIT_BUDGET)
        }
    }
}

pub fn cmd_cegis(common: &Common, checkpoint: Option<&Path>, eps: &EpsArgs, workers: Option<usize>) -> Result<i32> {
    let ctx = context(common)?;
    let mut ccfg = ctx.cfg.cegis.clone();
    ccfg.seed ^= ctx.seed;
    if let Some(e) = eps.eps {
        ccfg.initial_epsilon = e;
    }
    ccfg.eps1_fraction = eps.eps1_frac;
    ccfg.validate()?;
    let mut certify = ctx.cfg.certify.clone();
    if let Some(w) = workers {
        certify.workers = w;
    }
    let net = match checkpoint {
        Some(p) => {
            ccfg.initial_training = false;
            load_checkpoint(p, &ctx.spec)?.0
        }
        None => initial_net(&ctx)?,
    };
    let mut certifier = IntervalCertifier { spec: &ctx.spec, cfg: certify };
    let outcome = run_cegis(&ctx.spec, net, &ctx.cfg.train, &mut certifier, &ccfg, Some(&ctx.out))?;
    let report = &outcome.report;
    write(&ctx.out.join("report.csv"), &report.csv())?;
    write_json(&ctx.out.join("report.json"), &serde_json::to_value(report)?)?;
    outcome.net.save(ctx.out.join("final.json"), serde_json::Map::new())?;
    let details = serde_json::json!({
        "cegis": ccfg,
        "initial_checkpoint": checkpoint,
        "best_epsilon": report.best_epsilon,
        "best_checkpoint": report.best_checkpoint,
        "stop_reason": report.stop_reason,
    });
    write_json(&ctx.out.join("manifest.json"), &manifest("cegis", &ctx, details))?;
    print!("{}", report.csv());
    Ok(match (report.best_epsilon, report.stop_reason) {
        (Some(_), _) => EXIT_OK,
        (None, StopReason::TrainingBudget) | (None, StopReason::FinetuneBudget) => EXIT_BUDGET,
        (None, StopReason::MaxIterations) => EXIT_VIOLATION,
    })
}

fn certified_value(ctx: &Context, checkpoint: &Path, eps: &EpsArgs) -> Result<CertifiedValue> {
    let (net, meta) = load_checkpoint(checkpoint, &ctx.spec)?;
    let (eps1, eps2) = thresholds(eps, Some(&meta), ctx.cfg.cegis.initial_epsilon)?;
    let mut cv = CertifiedValue::new(net, &ctx.spec, eps1, eps2)?;
    cv.checkpoint = Some(checkpoint.to_path_buf());
    Ok(cv)
}

pub fn cmd_export(common: &Common, checkpoint: &Path, eps: &EpsArgs, t: Option<f64>, resolution: usize) -> Result<i32> {
    let ctx = context(common)?;
    let cv = certified_value(&ctx, checkpoint, eps)?;
    let t = t.unwrap_or(ctx.spec.t0);
    let rows = export_grid(&cv, t, resolution)?;
    write(&ctx.out.join("grid.csv"), &grid_csv(&rows, &ctx.spec.source().states))?;
    let summary = summarize_grid(&cv, t, &rows)?;
    write_json(&ctx.out.join("grid_summary.json"), &serde_json::to_value(&summary)?)?;
    let details = serde_json::json!({ "checkpoint": checkpoint, "t": t, "resolution": resolution, "epsilon1": cv.eps1, "epsilon2": cv.eps2 });
    write_json(&ctx.out.join("manifest.json"), &manifest("export", &ctx, details))?;
    println!("{} grid points at t = {t}: {} inner, {} band, {} outside", summary.points, summary.in_under, summary.in_over_only, summary.outside);
    Ok(EXIT_OK)
}

/// Containment and value-agreement statistics against the oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trajectories: usize,
    pub states_checked: usize,
    pub states_outside_domain: usize,
    /// Visited states classified as certainly unreachable.
    pub violations: usize,
    pub t: f64,
    pub epsilon: f64,
    pub grid_points: usize,
    pub max_value_gap: f64,
    pub value_gap_bound: f64,
    pub grid_residual_mean: f64,
}

pub fn compare(cv: &CertifiedValue, spec: &SystemSpec, section: &CompareSection, t: f64, resolution: usize, seed: u64) -> Result<Comparison> {
    let mut checked = 0;
    let mut outside_domain = 0;
    let mut violations = 0;
    let mut err = None;
    if section.trajectories > 0 {
        for_each_reachable(spec, section.trajectories, seed, &section.sampling, |elapsed, x| {
            if err.is_some() {
                return;
            }
            if !cv.domain.contains(x) {
                outside_domain += 1;
                return;
            }
            let time = spec.value_time(elapsed);
            match (epsilon_total(cv, time), cv.net.forward(time, x)) {
                (Ok(eps), Ok(v)) => {
                    checked += 1;
                    if classify_value(v, eps) == Class::Outside {
                        violations += 1;
                    }
                }
                (Err(e), _) | (_, Err(e)) => err = Some(e),
            }
        })?;
    }
    if let Some(e) = err {
        return Err(e);
    }
    let sol = levelset_solve(spec, &section.levelset)?;
    let k = sol.nearest_snapshot(t);
    let rows = export_grid(cv, t, resolution)?;
    let gap = rows.iter().map(|r| (r.value - sol.interpolate(k, &r.x)).abs()).fold(0.0, f64::max);
    let eps = epsilon_total(cv, t)?;
    Ok(Comparison {
        trajectories: section.trajectories,
        states_checked: checked,
        states_outside_domain: outside_domain,
        violations,
        t,
        epsilon: eps,
        grid_points: rows.len(),
        max_value_gap: gap,
        value_gap_bound: eps + section.grid_tolerance,
        grid_residual_mean: sol.residual_mean,
    })
}

pub fn cmd_compare(
    common: &Common,
    checkpoint: &Path,
    eps: &EpsArgs,
    t: Option<f64>,
    trajectories: Option<usize>,
    resolution: usize,
) -> Result<i32> {
    let ctx = context(common)?;
    let cv = certified_value(&ctx, checkpoint, eps)?;
    let mut section = ctx.cfg.compare.clone();
    if let Some(n) = trajectories {
        section.trajectories = n;
    }
    let t = t.unwrap_or(ctx.spec.t0);
    let cmp = compare(&cv, &ctx.spec, &section, t, resolution, ctx.seed)?;
    write_json(&ctx.out.join("compare.json"), &serde_json::to_value(&cmp)?)?;
    let details = serde_json::json!({ "checkpoint": checkpoint, "t": t, "resolution": resolution, "compare": section });
    write_json(&ctx.out.join("manifest.json"), &manifest("compare", &ctx, details))?;
    println!(
        "{} states checked, {} violations; max |V - V_grid| = {:.4} (bound {:.4})",
        cmp.states_checked, cmp.violations, cmp.max_value_gap, cmp.value_gap_bound
    );
    Ok(if cmp.violations > 0 || cmp.max_value_gap > cmp.value_gap_bound { EXIT_VIOLATION } else { EXIT_OK })
}
