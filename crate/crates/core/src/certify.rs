//! Interval branch-and-prune certification of the residual bounds.
//!
//! The check `|R1| <= ε1` on `X` and `|R2| <= ε2` on `[t0, T] × X` is split
//! into four one-sided queries. Each query is refuted box by box: a box is
//! dropped once an enclosure of the residual shows it cannot violate, a
//! midpoint that strictly violates is returned as a witness, and boxes below
//! the width floor are settled by the δ rule.
//!
//! Enclosures intersect the natural interval extension with the mean-value
//! form `R(c) + ∇R(B)·(B - c)`, where `∇R(B)` is the interval extension of
//! the symbolic residual gradient.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{to_smtlib, ExprId, ExprPool, Interval, IntervalBox, Relation, Tape};
use crate::system::{build_residuals, ResidualPair, SystemSpec};
use crate::valuenet::ValueNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryLabel {
    #[serde(rename = "R1+")]
    R1Pos,
    #[serde(rename = "R1-")]
    R1Neg,
    #[serde(rename = "R2+")]
    R2Pos,
    #[serde(rename = "R2-")]
    R2Neg,
}

impl QueryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryLabel::R1Pos => "R1+",
            QueryLabel::R1Neg => "R1-",
            QueryLabel::R2Pos => "R2+",
            QueryLabel::R2Neg => "R2-",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            QueryLabel::R1Pos => "r1_pos",
            QueryLabel::R1Neg => "r1_neg",
            QueryLabel::R2Pos => "r2_pos",
            QueryLabel::R2Neg => "r2_neg",
        }
    }

    pub fn is_boundary(self) -> bool {
        matches!(self, QueryLabel::R1Pos | QueryLabel::R1Neg)
    }
}

impl fmt::Display for QueryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-sided question "is there a point in `domain` with
/// `residual relation ±epsilon`?".
#[derive(Clone, Debug)]
pub struct Query {
    pub label: QueryLabel,
    pub relation: Relation,
    pub epsilon: f64,
    pub domain: IntervalBox,
    /// Pool variable behind each box dimension.
    pub vars: Vec<usize>,
    pub residual: ExprId,
    pool: Arc<ExprPool>,
    /// Values for pool variables not covered by the box.
    fixed: Vec<f64>,
    value_tape: Tape,
    /// Residual followed by its partial derivatives along the box dimensions.
    enclosure_tape: Tape,
    horizon: f64,
}

impl Query {
    /// Build a query over `domain`; `gradient[i]` is `∂residual/∂vars[i]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: QueryLabel,
        relation: Relation,
        epsilon: f64,
        pool: Arc<ExprPool>,
        residual: ExprId,
        gradient: &[ExprId],
        vars: Vec<usize>,
        domain: IntervalBox,
        fixed: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("query threshold must be positive, got {epsilon}")));
        }
        if vars.len() != domain.dim() || gradient.len() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: vars.len().max(gradient.len()) });
        }
        let free = pool.free_vars(residual);
        if let Some(&v) = free.iter().find(|v| !vars.contains(v)) {
            if v >= fixed.len() {
                return Err(Error::UnboundVariable { index: v, len: fixed.len() });
            }
        }
        let value_tape = Tape::compile(&pool, &[residual]);
        let mut roots = vec![residual];
        roots.extend_from_slice(gradient);
        let enclosure_tape = Tape::compile(&pool, &roots);
        let width = value_tape.num_vars().max(enclosure_tape.num_vars()).max(fixed.len());
        let mut fixed = fixed;
        fixed.resize(width, 0.0);
        Ok(Self {
            label,
            relation,
            epsilon,
            domain,
            vars,
            residual,
            pool,
            fixed,
            value_tape,
            enclosure_tape,
            horizon,
        })
    }

    /// Signed threshold: `+ε` for `>`, `-ε` for `<`.
    pub fn bound(&self) -> f64 {
        match self.relation {
            Relation::Greater => self.epsilon,
            Relation::Less => -self.epsilon,
        }
    }

    pub fn pool(&self) -> &ExprPool {
        &self.pool
    }

    /// Residual value at a point of the query box.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        let mut vars = self.fixed.clone();
        for (&v, &p) in self.vars.iter().zip(point) {
            vars[v] = p;
        }
        let mut scratch = Vec::new();
        self.value_tape.eval_point_into(&vars, &mut scratch)?;
        Ok(self.value_tape.output(&scratch, 0))
    }

    /// Split a box point into `(t, x)`.
    pub fn split_point(&self, point: &[f64]) -> (f64, Vec<f64>) {
        if self.label.is_boundary() {
            (self.horizon, point.to_vec())
        } else {
            (point[0], point[1..].to_vec())
        }
    }

    pub fn to_smtlib(&self) -> String {
        to_smtlib(&self.pool, self.residual, self.relation, self.bound(), &self.vars, &self.domain)
    }

    /// Number of tape slots evaluated per box.
    pub fn tape_len(&self) -> usize {
        self.enclosure_tape.len()
    }
}

/// The four one-sided queries `R1 > ε1`, `R1 < -ε1` on `X` and `R2 > ε2`,
/// `R2 < -ε2` on `[t0, T] × X`.
pub fn build_queries(residuals: &ResidualPair, spec: &SystemSpec, eps1: f64, eps2: f64) -> Result<Vec<Query>> {
    let m = spec.state_dim();
    let pool = Arc::new(residuals.pool.clone());
    let mut fixed = vec![0.0; pool.num_vars()];
    fixed[0] = spec.t1;
    let x_vars: Vec<usize> = (1..=m).collect();
    let tx_vars: Vec<usize> = (0..=m).collect();
    let mut out = Vec::with_capacity(4);
    for (label, rel) in [(QueryLabel::R1Pos, Relation::Greater), (QueryLabel::R1Neg, Relation::Less)] {
        out.push(Query::new(
            label,
            rel,
            eps1,
            pool.clone(),
            residuals.r1,
            &residuals.r1_grad,
            x_vars.clone(),
            spec.domain().clone(),
            fixed.clone(),
            spec.t1,
        )?);
    }
    for (label, rel) in [(QueryLabel::R2Pos, Relation::Greater), (QueryLabel::R2Neg, Relation::Less)] {
        out.push(Query::new(
            label,
            rel,
            eps2,
            pool.clone(),
            residuals.r2,
            &residuals.r2_grad,
            tx_vars.clone(),
            spec.space_time_box(),
            fixed.clone(),
            spec.t1,
        )?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifierConfig {
    pub delta: f64,
    /// Overrides the width floor derived from `delta`.
    pub width_floor: Option<f64>,
    /// Maximum boxes processed per query.
    pub budget: u64,
    pub timeout_seconds: f64,
    pub workers: usize,
}

impl Default for CertifierConfig {
    fn default() -> Self {
        Self { delta: 1e-4, width_floor: None, budget: 200_000_000, timeout_seconds: 3600.0, workers: 1 }
    }
}

impl CertifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config("certify.delta must be positive".into()));
        }
        if self.budget == 0 {
            return Err(Error::Config("certify.budget must be >= 1".into()));
        }
        if let Some(w) = self.width_floor {
            if !(w > 0.0) {
                return Err(Error::Config("certify.width_floor must be positive".into()));
            }
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("certify.timeout_seconds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub query: QueryLabel,
    pub t: f64,
    pub x: Vec<f64>,
    /// Residual at the witness.
    pub value: f64,
    /// Signed threshold of the violated query.
    pub threshold: f64,
    /// Whether the witness violates strictly (otherwise it is δ-near).
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Boxes still open when the budget ran out.
    pub open_boxes: usize,
    /// Their share of the query box volume.
    pub open_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Unsat,
    DeltaSat(Witness),
    BudgetExhausted(Frontier),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Unsat => "unsat",
            Verdict::DeltaSat(_) => "delta_sat",
            Verdict::BudgetExhausted(_) => "budget_exhausted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Unsat,
    DeltaSat,
    BudgetExhausted,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub label: QueryLabel,
    pub threshold: f64,
    pub status: QueryStatus,
    pub boxes: u64,
    pub seconds: f64,
    pub max_depth: usize,
    pub width_floor: f64,
    /// L1 norm of the gradient enclosure over the whole query box.
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub boxes: u64,
    pub seconds: f64,
    pub queries: Vec<QueryReport>,
}

impl CertResult {
    pub fn is_unsat(&self) -> bool {
        self.verdict == Verdict::Unsat
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            Verdict::DeltaSat(w) => Some(w),
            _ => None,
        }
    }

    /// Report with the certifier configuration and thresholds echoed.
    pub fn to_json(&self, cfg: &CertifierConfig, eps1: f64, eps2: f64) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("serialisable");
        let obj = v.as_object_mut().expect("object");
        obj.insert("epsilon1".into(), eps1.into());
        obj.insert("epsilon2".into(), eps2.into());
        obj.insert("config".into(), serde_json::to_value(cfg).expect("serialisable"));
        v
    }
}

enum Outcome {
    Unsat,
    DeltaSat(Witness),
    Budget,
}

/// Resumable depth-first search for one query.
struct Search<'q> {
    q: &'q Query,
    delta: f64,
    budget: u64,
    floor: f64,
    lipschitz: f64,
    stack: Vec<(IntervalBox, usize)>,
    root_widths: Vec<f64>,
    boxes: u64,
    max_depth: usize,
    seconds: f64,
    ivars: Vec<Interval>,
    pvars: Vec<f64>,
    iscratch: Vec<Interval>,
    pscratch: Vec<f64>,
    done: Option<Outcome>,
}

impl<'q> Search<'q> {
    fn new(q: &'q Query, cfg: &CertifierConfig) -> Result<Self> {
        let ivars: Vec<Interval> = q.fixed.iter().map(|&v| Interval::point(v)).collect();
        let mut s = Self {
            q,
            delta: cfg.delta,
            budget: cfg.budget,
            floor: 0.0,
            lipschitz: f64::INFINITY,
            stack: vec![(q.domain.clone(), 0)],
            root_widths: q.domain.dims().iter().map(|d| d.width()).collect(),
            boxes: 0,
            max_depth: 0,
            seconds: 0.0,
            ivars,
            pvars: q.fixed.clone(),
            iscratch: Vec::new(),
            pscratch: Vec::new(),
            done: None,
        };
        let start = Instant::now();
        // a root enclosure failure leaves the floor at zero: no Lipschitz pruning
        if let Ok(grad) = s.gradient_enclosure(&q.domain) {
            let l: f64 = grad.iter().map(|g| g.mag()).sum();
            if l.is_finite() {
                s.lipschitz = l;
                s.floor = cfg.delta / (1.0 + l);
            }
        }
        if let Some(w) = cfg.width_floor {
            s.floor = w;
        }
        s.seconds += start.elapsed().as_secs_f64();
        Ok(s)
    }

    fn load_box(&mut self, b: &IntervalBox) {
        for (&v, d) in self.q.vars.iter().zip(b.dims()) {
            self.ivars[v] = *d;
        }
    }

    fn gradient_enclosure(&mut self, b: &IntervalBox) -> Result<Vec<Interval>> {
        self.load_box(b);
        self.q.enclosure_tape.eval_interval_into(&self.ivars, &mut self.iscratch)?;
        Ok((1..=b.dim()).map(|k| self.q.enclosure_tape.output(&self.iscratch, k)).collect())
    }

    /// `(enclosure over b, enclosure at the midpoint, float value at the midpoint, midpoint)`.
    fn evaluate(&mut self, b: &IntervalBox) -> Result<(Interval, Interval, f64, Vec<f64>)> {
        let q = self.q;
        let mid = b.midpoint();
        for (&v, &c) in q.vars.iter().zip(&mid) {
            self.ivars[v] = Interval::point(c);
            self.pvars[v] = c;
        }
        q.value_tape.eval_interval_into(&self.ivars, &mut self.iscratch)?;
        let centre = q.value_tape.output(&self.iscratch, 0);
        q.value_tape.eval_point_into(&self.pvars, &mut self.pscratch)?;
        let value = q.value_tape.output(&self.pscratch, 0);

        self.load_box(b);
        let natural = match q.enclosure_tape.eval_interval_into(&self.ivars, &mut self.iscratch) {
            Ok(()) => q.enclosure_tape.output(&self.iscratch, 0),
            Err(Error::NonFiniteEnclosure { .. }) => {
                return Ok((Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }, centre, value, mid))
            }
            Err(e) => return Err(e),
        };
        let mut mv = centre;
        for (k, (d, &c)) in b.dims().iter().zip(&mid).enumerate() {
            let g = q.enclosure_tape.output(&self.iscratch, k + 1);
            mv = mv.add(g.mul(d.sub(Interval::point(c))));
        }
        let enclosure = if mv.is_finite() { natural.intersect(&mv).unwrap_or(natural) } else { natural };
        Ok((enclosure, centre, value, mid))
    }

    fn witness(&self, mid: &[f64], value: f64, strict: bool) -> Witness {
        let (t, x) = self.q.split_point(mid);
        Witness { query: self.q.label, t, x, value, threshold: self.q.bound(), strict }
    }

    fn bisect_axis(&self, b: &IntervalBox) -> usize {
        let mut best = 0;
        let mut best_w = -1.0;
        for (k, (d, &root)) in b.dims().iter().zip(&self.root_widths).enumerate() {
            let w = if root > 0.0 { d.width() / root } else { 0.0 };
            if w > best_w {
                best = k;
                best_w = w;
            }
        }
        best
    }

    /// Process up to `n` boxes.
    fn step(&mut self, n: usize) -> Result<()> {
        if self.done.is_some() {
            return Ok(());
        }
        let start = Instant::now();
        let q = self.q;
        let bound = q.bound();
        for _ in 0..n {
            let Some((b, depth)) = self.stack.pop() else {
                self.done = Some(Outcome::Unsat);
                break;
            };
            if self.boxes >= self.budget {
                self.stack.push((b, depth));
                self.done = Some(Outcome::Budget);
                break;
            }
            self.boxes += 1;
            self.max_depth = self.max_depth.max(depth);
            let (enc, centre, value, mid) = self.evaluate(&b)?;
            let safe = match q.relation {
                Relation::Greater => enc.hi <= bound,
                Relation::Less => enc.lo >= bound,
            };
            if safe {
                continue;
            }
            if q.relation.holds(value, bound) {
                self.done = Some(Outcome::DeltaSat(self.witness(&mid, value, true)));
                break;
            }
            let width = b.max_width();
            if width < self.floor {
                // distance of the exact midpoint value beyond the δ-weakened threshold
                let (near, slack) = match q.relation {
                    Relation::Greater => (centre.hi >= bound - self.delta, bound - centre.hi),
                    Relation::Less => (centre.lo <= bound + self.delta, centre.lo - bound),
                };
                if near {
                    self.done = Some(Outcome::DeltaSat(self.witness(&mid, value, false)));
                    break;
                }
                if self.lipschitz * width * 0.5 < slack {
                    continue;
                }
            }
            let axis = self.bisect_axis(&b);
            if b.dims()[axis].width() == 0.0 {
                // nothing left to split; cannot be settled
                self.stack.push((b, depth));
                self.done = Some(Outcome::Budget);
                break;
            }
            let (lo, hi) = b.bisect(axis);
            self.stack.push((hi, depth + 1));
            self.stack.push((lo, depth + 1));
        }
        self.seconds += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn frontier(&self) -> Frontier {
        let open_volume = self
            .stack
            .iter()
            .map(|(b, _)| {
                b.dims()
                    .iter()
                    .zip(&self.root_widths)
                    .filter(|(_, &r)| r > 0.0)
                    .map(|(d, r)| d.width() / r)
                    .product::<f64>()
            })
            .sum();
        Frontier { open_boxes: self.stack.len(), open_volume }
    }

    fn report(&self, status: QueryStatus) -> QueryReport {
        QueryReport {
            label: self.q.label,
            threshold: self.q.bound(),
            status,
            boxes: self.boxes,
            seconds: self.seconds,
            max_depth: self.max_depth,
            width_floor: self.floor,
            lipschitz: self.lipschitz,
        }
    }
}

/// Refute a single query.
pub fn branch_and_prune(q: &Query, cfg: &CertifierConfig) -> Result<CertResult> {
    run_queries(std::slice::from_ref(q), cfg)
}

const CHUNK: usize = 512;

/// Run queries until one yields a witness or all are settled.
pub fn run_queries(queries: &[Query], cfg: &CertifierConfig) -> Result<CertResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut searches = queries.iter().map(|q| Search::new(q, cfg)).collect::<Result<Vec<_>>>()?;
    if cfg.workers <= 1 || searches.len() <= 1 {
        // deterministic round robin
        'outer: loop {
            let mut open = false;
            for s in searches.iter_mut() {
                s.step(CHUNK)?;
                match s.done {
                    Some(Outcome::DeltaSat(_)) => break 'outer,
                    None => open = true,
                    _ => {}
                }
            }
            if !open || start.elapsed().as_secs_f64() > cfg.timeout_seconds {
                break;
            }
        }
    } else {
        let cancel = AtomicBool::new(false);
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = searches
                .iter_mut()
                .map(|s| {
                    let cancel = &cancel;
                    scope.spawn(move || -> Result<()> {
                        while s.done.is_none() && !cancel.load(Ordering::Relaxed) {
                            if start.elapsed().as_secs_f64() > cfg.timeout_seconds {
                                break;
                            }
                            if let Err(e) = s.step(CHUNK) {
                                cancel.store(true, Ordering::Relaxed);
                                return Err(e);
                            }
                            if matches!(s.done, Some(Outcome::DeltaSat(_))) {
                                cancel.store(true, Ordering::Relaxed);
                            }
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("certifier worker panicked")).collect()
        });
        for r in results {
            r?;
        }
    }

    let mut witness = None;
    let mut exhausted = None;
    let mut reports = Vec::with_capacity(searches.len());
    for s in &searches {
        let status = match &s.done {
            Some(Outcome::Unsat) => QueryStatus::Unsat,
            Some(Outcome::DeltaSat(w)) => {
                witness.get_or_insert_with(|| w.clone());
                QueryStatus::DeltaSat
            }
            Some(Outcome::Budget) => {
                exhausted.get_or_insert_with(|| s.frontier());
                QueryStatus::BudgetExhausted
            }
            None => {
                exhausted.get_or_insert_with(|| s.frontier());
                QueryStatus::Cancelled
            }
        };
        reports.push(s.report(status));
    }
    let verdict = if let Some(w) = witness {
        Verdict::DeltaSat(w)
    } else if let Some(f) = exhausted {
        // unfinished searches without a witness anywhere mean the timeout hit
        Verdict::BudgetExhausted(f)
    } else {
        Verdict::Unsat
    };
    Ok(CertResult {
        verdict,
        boxes: searches.iter().map(|s| s.boxes).sum(),
        seconds: start.elapsed().as_secs_f64(),
        queries: reports,
    })
}

/// Residual pair of a network over the system's pool.
pub fn network_residuals(net: &ValueNet, spec: &SystemSpec) -> Result<ResidualPair> {
    if net.config().state_dim != spec.state_dim() {
        return Err(Error::CheckpointMismatch(format!(
            "network has {} states, system has {}",
            net.config().state_dim,
            spec.state_dim()
        )));
    }
    let mut pool = spec.pool().clone();
    let v = net.to_expr(&mut pool)?;
    build_residuals(spec, pool, v)
}

/// Certify `|R1| <= eps1` and `|R2| <= eps2` for a network.
pub fn certify_network(net: &ValueNet, spec: &SystemSpec, eps1: f64, eps2: f64, cfg: &CertifierConfig) -> Result<CertResult> {
    let residuals = network_residuals(net, spec)?;
    let queries = build_queries(&residuals, spec, eps1, eps2)?;
    run_queries(&queries, cfg)
}

/// Write one SMT-LIB2 script per query into `dir`.
pub fn write_smtlib(queries: &[Query], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    queries
        .iter()
        .map(|q| {
            let path = dir.join(format!("{}.smt2", q.label.file_stem()));
            std::fs::write(&path, q.to_smtlib()).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
