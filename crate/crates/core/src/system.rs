//! Control system declarations, the Hamiltonian and the HJ residuals.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_infix, ExprId, ExprPool, Interval, IntervalBox, Tape};

/// Which optimisation the control input performs in the Hamiltonian. The
/// disturbance always plays the opposite role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReachMode {
    /// States that can reach the target within the horizon.
    BackwardTube,
    /// States reachable from the target (initial set), obtained by solving
    /// the backward problem for the time-reversed dynamics `-f`.
    ForwardSet,
}

/// On-disk declaration of a system (the `[system]` table of a TOML file).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    pub states: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub disturbances: Vec<String>,
    pub dynamics: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub domain: Vec<[f64; 2]>,
    #[serde(default)]
    pub control_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub disturbance_box: Vec<[f64; 2]>,
    #[serde(default = "default_mode")]
    pub mode: ReachMode,
    #[serde(default = "default_objective")]
    pub control: Objective,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

fn default_mode() -> ReachMode {
    ReachMode::BackwardTube
}

fn default_objective() -> Objective {
    Objective::Max
}

#[derive(Deserialize)]
struct SystemDocument {
    system: SystemFile,
}

/// A control system `ẋ = f(t, x, u, d)` with target function `g(x)`.
///
/// Pool variables are laid out as `t, x_1..x_m, u_1..u_k, d_1..d_l`, so
/// index 0 is time and `1..=m` are the states.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub name: String,
    pool: ExprPool,
    state_dim: usize,
    control_dim: usize,
    disturbance_dim: usize,
    pub t0: f64,
    pub t1: f64,
    control_box: Vec<Interval>,
    disturbance_box: Vec<Interval>,
    dynamics: Vec<ExprId>,
    target: ExprId,
    domain: IntervalBox,
    pub mode: ReachMode,
    pub control_objective: Objective,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    source: SystemFile,
}

fn to_intervals(bounds: &[[f64; 2]], what: &str) -> Result<Vec<Interval>> {
    bounds
        .iter()
        .map(|b| {
            Interval::new(b[0], b[1])
                .map_err(|_| Error::InvalidSystem(format!("{what} bound [{}, {}]", b[0], b[1])))
        })
        .collect()
}

impl SystemSpec {
    pub fn from_file(file: SystemFile) -> Result<Self> {
        let m = file.states.len();
        if m == 0 {
            return Err(Error::InvalidSystem("at least one state is required".into()));
        }
        if !(file.t0.is_finite() && file.horizon.is_finite()) || file.horizon < file.t0 {
            return Err(Error::InvalidSystem(format!(
                "horizon {} precedes t0 {}",
                file.horizon, file.t0
            )));
        }
        if file.dynamics.len() != m {
            return Err(Error::InvalidSystem(format!(
                "{} dynamics components for {m} states",
                file.dynamics.len()
            )));
        }
        if file.domain.len() != m {
            return Err(Error::InvalidSystem(format!("domain has {} axes, expected {m}", file.domain.len())));
        }
        if file.control_box.len() != file.controls.len() {
            return Err(Error::InvalidSystem("control_box must list one interval per control".into()));
        }
        if file.disturbance_box.len() != file.disturbances.len() {
            return Err(Error::InvalidSystem(
                "disturbance_box must list one interval per disturbance".into(),
            ));
        }
        let mut names = vec!["t".to_string()];
        names.extend(file.states.iter().cloned());
        names.extend(file.controls.iter().cloned());
        names.extend(file.disturbances.iter().cloned());
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidSystem("variable names must be distinct (t is reserved)".into()));
        }
        let mut pool = ExprPool::with_vars(&names);
        let dynamics = file
            .dynamics
            .iter()
            .map(|s| parse_infix(&mut pool, s))
            .collect::<Result<Vec<_>>>()?;
        let target = parse_infix(&mut pool, &file.target)?;
        if pool.free_vars(target).iter().any(|&v| v == 0 || v > m) {
            return Err(Error::InvalidSystem("target may depend only on the state".into()));
        }
        let domain = IntervalBox::new(to_intervals(&file.domain, "domain")?)?;
        let control_box = to_intervals(&file.control_box, "control")?;
        let disturbance_box = to_intervals(&file.disturbance_box, "disturbance")?;
        Ok(Self {
            name: file.name.clone(),
            pool,
            state_dim: m,
            control_dim: file.controls.len(),
            disturbance_dim: file.disturbances.len(),
            t0: file.t0,
            t1: file.horizon,
            control_box,
            disturbance_box,
            dynamics,
            target,
            domain,
            mode: file.mode,
            control_objective: file.control,
            c1: file.c1,
            c2: file.c2,
            source: file,
        })
    }

    /// Parse a TOML document with a `[system]` table.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: SystemDocument = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(doc.system)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn source(&self) -> &SystemFile {
        &self.source
    }

    pub fn pool(&self) -> &ExprPool {
        &self.pool
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_dim
    }

    pub fn dynamics(&self) -> &[ExprId] {
        &self.dynamics
    }

    pub fn target(&self) -> ExprId {
        self.target
    }

    pub fn domain(&self) -> &IntervalBox {
        &self.domain
    }

    pub fn control_box(&self) -> &[Interval] {
        &self.control_box
    }

    pub fn disturbance_box(&self) -> &[Interval] {
        &self.disturbance_box
    }

    pub fn time_var(&self) -> usize {
        0
    }

    pub fn state_var(&self, i: usize) -> usize {
        1 + i
    }

    pub fn control_var(&self, j: usize) -> usize {
        1 + self.state_dim + j
    }

    pub fn disturbance_var(&self, k: usize) -> usize {
        1 + self.state_dim + self.control_dim + k
    }

    /// Number of pool variables used by the dynamics: `t, x, u, d`.
    pub fn num_model_vars(&self) -> usize {
        1 + self.state_dim + self.control_dim + self.disturbance_dim
    }

    /// Space-time box `[t0, T] × X` in `(t, x)` order.
    pub fn space_time_box(&self) -> IntervalBox {
        let mut dims = vec![Interval { lo: self.t0, hi: self.t1 }];
        dims.extend_from_slice(self.domain.dims());
        IntervalBox::new(dims).expect("validated on construction")
    }

    /// Map elapsed time of a trajectory started in the target set to the
    /// time argument of the value function.
    pub fn value_time(&self, elapsed: f64) -> f64 {
        self.t1 - elapsed
    }

    pub fn eval_target(&self, x: &[f64]) -> Result<f64> {
        let mut vars = vec![0.0; 1 + self.state_dim];
        vars[1..].copy_from_slice(x);
        self.pool.eval_point(self.target, &vars)
    }

    /// Dynamics used by the value function: `f` for backward tubes, `-f` for
    /// forward sets.
    fn value_dynamics(&self, pool: &mut ExprPool) -> Vec<ExprId> {
        match self.mode {
            ReachMode::BackwardTube => self.dynamics.clone(),
            ReachMode::ForwardSet => self.dynamics.iter().map(|&f| pool.neg(f)).collect(),
        }
    }

    /// Extend `pool` (a clone of [`SystemSpec::pool`]) with co-state
    /// variables `p_<state>` and return them.
    pub fn declare_costates(&self, pool: &mut ExprPool) -> Vec<ExprId> {
        self.source.states.iter().map(|s| pool.declare_var(&format!("p_{s}"))).collect()
    }

    /// Compiled `[H, ∂H/∂p_1, .., ∂H/∂p_m]` over variables
    /// `t, x, u, d, p` (co-states after the model variables).
    pub fn hamiltonian_tape(&self) -> Result<HamiltonianTape> {
        let mut pool = self.pool.clone();
        let p = self.declare_costates(&mut pool);
        let h = build_hamiltonian(self, &mut pool, &p)?;
        let first_p = self.num_model_vars();
        let mut roots = vec![h];
        for i in 0..self.state_dim {
            let d = pool.differentiate(h, first_p + i);
            roots.push(d);
        }
        Ok(HamiltonianTape { tape: Tape::compile(&pool, &roots), state_dim: self.state_dim, first_p })
    }
}

/// Numeric Hamiltonian and its co-state gradient.
#[derive(Clone, Debug)]
pub struct HamiltonianTape {
    tape: Tape,
    state_dim: usize,
    first_p: usize,
}

impl HamiltonianTape {
    /// Evaluate at `(t, x, p)`; returns `H` and writes `∂H/∂p` into `dh_dp`.
    pub fn eval(
        &self,
        t: f64,
        x: &[f64],
        p: &[f64],
        vars: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
        dh_dp: &mut [f64],
    ) -> Result<f64> {
        vars.clear();
        vars.resize(self.first_p + self.state_dim, 0.0);
        vars[0] = t;
        vars[1..=self.state_dim].copy_from_slice(x);
        vars[self.first_p..].copy_from_slice(p);
        self.tape.eval_point_into(vars, scratch)?;
        for (i, d) in dh_dp.iter_mut().enumerate() {
            *d = self.tape.output(scratch, i + 1);
        }
        Ok(self.tape.output(scratch, 0))
    }

    /// Interval bounds on `∂H/∂p_i` over a `(t, x)` box and a co-state box.
    pub fn gradient_bounds(&self, tx: &IntervalBox, p: &[Interval]) -> Result<Vec<Interval>> {
        let mut vars = vec![Interval::point(0.0); self.first_p + self.state_dim];
        vars[..tx.dim()].copy_from_slice(tx.dims());
        vars[self.first_p..].copy_from_slice(p);
        let out = self.tape.eval_interval(&vars)?;
        Ok(out[1..].to_vec())
    }
}

/// `max_u min_d f·p` (or the opposite orientation) in closed form.
///
/// The dynamics must be affine in `(u, d)` jointly. Writing
/// `f·p = a·p + Σ_j b_j u_j + Σ_k c_k d_k`, the optimum over a box with
/// center `c` and half-width `r` is `b·c ± r|b|` per input.
pub fn build_hamiltonian(spec: &SystemSpec, pool: &mut ExprPool, p: &[ExprId]) -> Result<ExprId> {
    let m = spec.state_dim;
    if p.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: p.len() });
    }
    let dynamics = spec.value_dynamics(pool);
    let inputs: Vec<usize> = (0..spec.control_dim)
        .map(|j| spec.control_var(j))
        .chain((0..spec.disturbance_dim).map(|k| spec.disturbance_var(k)))
        .collect();

    let zero = pool.zero();
    let drift_subst: HashMap<usize, ExprId> = inputs.iter().map(|&v| (v, zero)).collect();
    let mut drift_terms = Vec::with_capacity(m);
    // coefficient of each input in f·p
    let mut coeffs = vec![Vec::with_capacity(m); inputs.len()];
    for (i, &f) in dynamics.iter().enumerate() {
        for (slot, &v) in inputs.iter().enumerate() {
            let b = pool.differentiate(f, v);
            let vars = pool.free_vars(b);
            if inputs.iter().any(|w| vars.contains(w)) {
                return Err(Error::UnsupportedSystem(format!(
                    "dynamics component {} is not affine in `{}`",
                    i + 1,
                    pool.var_names()[v]
                )));
            }
            let term = pool.mul(b, p[i]);
            coeffs[slot].push(term);
        }
        let a = pool.substitute(f, &drift_subst);
        let term = pool.mul(a, p[i]);
        drift_terms.push(term);
    }
    let mut h = pool.sum(drift_terms);
    for (slot, terms) in coeffs.into_iter().enumerate() {
        let b = pool.sum(terms);
        if b == zero {
            continue;
        }
        let (range, maximise) = if slot < spec.control_dim {
            (spec.control_box[slot], spec.control_objective == Objective::Max)
        } else {
            (spec.disturbance_box[slot - spec.control_dim], spec.control_objective == Objective::Min)
        };
        let center = 0.5 * (range.lo + range.hi);
        let half = 0.5 * (range.hi - range.lo);
        let c = pool.constant(center);
        let lin = pool.mul(b, c);
        h = pool.add(h, lin);
        if half > 0.0 {
            let r = pool.constant(half);
            let ab = pool.abs(b);
            let spread = pool.mul(r, ab);
            h = if maximise { pool.add(h, spread) } else { pool.sub(h, spread) };
        }
    }
    Ok(h)
}

/// Boundary residual `R1(x) = V(T, x) - g(x)` and PDE residual
/// `R2(t, x) = ∂_t V + min(0, H(t, x, ∇_x V))`, with their gradients.
#[derive(Clone, Debug)]
pub struct ResidualPair {
    pub pool: ExprPool,
    pub value: ExprId,
    pub r1: ExprId,
    pub r2: ExprId,
    /// `∂R1/∂x_i`.
    pub r1_grad: Vec<ExprId>,
    /// `∂R2/∂t, ∂R2/∂x_i`.
    pub r2_grad: Vec<ExprId>,
    pub state_dim: usize,
}

/// Build both residuals for a value expression over `(t, x)` living in
/// `pool` (which must extend the system's pool).
pub fn build_residuals(spec: &SystemSpec, mut pool: ExprPool, value: ExprId) -> Result<ResidualPair> {
    let m = spec.state_dim;
    if pool.free_vars(value).iter().any(|&v| v > m) {
        return Err(Error::InvalidSystem("value expression may only depend on (t, x)".into()));
    }
    let horizon = pool.constant(spec.t1);
    let terminal = pool.substitute(value, &HashMap::from([(0, horizon)]));
    let r1 = pool.sub(terminal, spec.target);
    let dt = pool.differentiate(value, 0);
    let p: Vec<ExprId> = (1..=m).map(|i| pool.differentiate(value, i)).collect();
    let h = build_hamiltonian(spec, &mut pool, &p)?;
    let zero = pool.zero();
    let frozen = pool.min(zero, h);
    let r2 = pool.add(dt, frozen);
    let r1_grad = (1..=m).map(|i| pool.differentiate(r1, i)).collect();
    let r2_grad = (0..=m).map(|i| pool.differentiate(r2, i)).collect();
    Ok(ResidualPair { pool, value, r1, r2, r1_grad, r2_grad, state_dim: m })
}
