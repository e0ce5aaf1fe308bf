//! Independent reference solutions: trajectory simulation, sampled
//! reachable sets, and a grid level-set solver for the HJ equation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Interval, IntervalBox, Tape};
use crate::reach::axis_points;
use crate::system::{HamiltonianTape, ReachMode, SystemSpec};

/// Piecewise-constant inputs: `u[k]` and `d[k]` hold on `[starts[k], starts[k+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSignal {
    pub starts: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl InputSignal {
    pub fn constant(u: Vec<f64>, d: Vec<f64>) -> Self {
        Self { starts: vec![f64::NEG_INFINITY], u: vec![u], d: vec![d] }
    }

    fn piece(&self, s: f64) -> usize {
        match self.starts.iter().rposition(|&t| t <= s) {
            Some(k) => k,
            None => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control applied on each step (one fewer than states).
    pub controls: Vec<Vec<f64>>,
    /// Stopped early after leaving the safety box.
    pub truncated: bool,
}

impl Trajectory {
    pub fn to_csv(&self, state_names: &[String]) -> String {
        let mut s = String::from("t");
        for n in state_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            s.push_str(&t.to_string());
            for v in x {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// Compiled right-hand side `f(t, x, u, d)`.
pub struct Dynamics {
    tape: Tape,
    m: usize,
    k: usize,
    l: usize,
    vars: Vec<f64>,
    scratch: Vec<f64>,
}

impl Dynamics {
    pub fn new(spec: &SystemSpec) -> Self {
        let tape = Tape::compile(spec.pool(), spec.dynamics());
        Self {
            tape,
            m: spec.state_dim(),
            k: spec.control_dim(),
            l: spec.disturbance_dim(),
            vars: vec![0.0; spec.num_model_vars()],
            scratch: Vec::new(),
        }
    }

    pub fn eval(&mut self, t: f64, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.m;
        self.vars[0] = t;
        self.vars[1..=m].copy_from_slice(x);
        self.vars[1 + m..1 + m + self.k].copy_from_slice(u);
        self.vars[1 + m + self.k..1 + m + self.k + self.l].copy_from_slice(d);
        self.tape.eval_point_into(&self.vars, &mut self.scratch)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.tape.output(&self.scratch, i);
        }
        Ok(())
    }

    /// One classical RK4 step with inputs held fixed.
    pub fn rk4(&mut self, t: f64, x: &[f64], u: &[f64], d: &[f64], h: f64) -> Result<Vec<f64>> {
        let m = self.m;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut y = vec![0.0; m];
        self.eval(t, x, u, d, &mut k1)?;
        for i in 0..m {
            y[i] = x[i] + 0.5 * h * k1[i];
        }
        self.eval(t + 0.5 * h, &y, u, d, &mut k2)?;
        for i in 0..m {
            y[i] = x[i] + 0.5 * h * k2[i];
        }
        self.eval(t + 0.5 * h, &y, u, d, &mut k3)?;
        for i in 0..m {
            y[i] = x[i] + h * k3[i];
        }
        self.eval(t + h, &y, u, d, &mut k4)?;
        Ok((0..m).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub h: f64,
    /// Integration length starting at `t0`.
    pub duration: f64,
    /// Stop once the state leaves this box.
    pub safety: Option<IntervalBox>,
}

/// Integrate the system dynamics from `x0` at time `t0` with fixed-step RK4.
pub fn simulate(spec: &SystemSpec, x0: &[f64], signal: &InputSignal, opts: &SimOptions) -> Result<Trajectory> {
    let m = spec.state_dim();
    if x0.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x0.len() });
    }
    if !(opts.h > 0.0) || !(opts.duration >= 0.0) {
        return Err(Error::Config("simulation step must be positive and duration non-negative".into()));
    }
    let mut dynamics = Dynamics::new(spec);
    let steps = (opts.duration / opts.h).round() as usize;
    let mut traj = Trajectory { times: vec![spec.t0], states: vec![x0.to_vec()], controls: Vec::new(), truncated: false };
    let mut x = x0.to_vec();
    for n in 0..steps {
        let elapsed = n as f64 * opts.h;
        let k = signal.piece(elapsed + 0.5 * opts.h);
        let (u, d) = (&signal.u[k], &signal.d[k]);
        x = dynamics.rk4(spec.t0 + elapsed, &x, u, d, opts.h)?;
        if x.iter().any(|v| !v.is_finite()) {
            traj.truncated = true;
            break;
        }
        traj.times.push(spec.t0 + (n + 1) as f64 * opts.h);
        traj.states.push(x.clone());
        traj.controls.push(u.clone());
        if let Some(b) = &opts.safety {
            if !b.contains(&x) {
                traj.truncated = true;
                break;
            }
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingOptions {
    pub h: f64,
    /// Number of equal pieces the horizon is cut into for bang-bang inputs.
    pub switches: usize,
    /// Keep every n-th visited state.
    pub record_every: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { h: 1e-3, switches: 8, record_every: 1 }
    }
}

/// A state visited `elapsed` time units after leaving the initial set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachPoint {
    pub elapsed: f64,
    pub x: Vec<f64>,
}

fn sample_initial(spec: &SystemSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    for _ in 0..1_000_000 {
        let x: Vec<f64> = spec.domain().dims().iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
        if spec.eval_target(&x)? <= 0.0 {
            return Ok(x);
        }
    }
    Err(Error::InvalidSystem("could not sample the initial set {g <= 0} inside the domain".into()))
}

fn vertex(b: &[Interval], rng: &mut ChaCha8Rng) -> Vec<f64> {
    b.iter().map(|iv| if rng.gen::<bool>() { iv.hi } else { iv.lo }).collect()
}

/// Visit states of `n` random bang-bang trajectories started uniformly in
/// `{g <= 0}` and run forward for the horizon length.
pub fn for_each_reachable(
    spec: &SystemSpec,
    n: usize,
    seed: u64,
    opts: &SamplingOptions,
    mut visit: impl FnMut(f64, &[f64]),
) -> Result<()> {
    if spec.mode != ReachMode::ForwardSet {
        return Err(Error::UnsupportedSystem("sampled reachable sets need forward-set mode".into()));
    }
    if opts.switches == 0 || opts.record_every == 0 || !(opts.h > 0.0) {
        return Err(Error::Config("sampling needs h > 0, switches >= 1 and record_every >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = spec.t1 - spec.t0;
    let steps = (horizon / opts.h).round() as usize;
    let mut dynamics = Dynamics::new(spec);
    for _ in 0..n {
        let mut x = sample_initial(spec, &mut rng)?;
        let pieces: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.switches)
            .map(|_| (vertex(spec.control_box(), &mut rng), vertex(spec.disturbance_box(), &mut rng)))
            .collect();
        visit(0.0, &x);
        for s in 0..steps {
            let elapsed = s as f64 * opts.h;
            let k = (((elapsed + 0.5 * opts.h) / horizon * opts.switches as f64) as usize).min(opts.switches - 1);
            let (u, d) = &pieces[k];
            x = dynamics.rk4(spec.t0 + elapsed, &x, u, d, opts.h)?;
            if (s + 1) % opts.record_every == 0 {
                visit((s + 1) as f64 * opts.h, &x);
            }
        }
    }
    Ok(())
}

/// Collect [`for_each_reachable`] into a point cloud.
pub fn sampled_reachable(spec: &SystemSpec, n: usize, seed: u64, opts: &SamplingOptions) -> Result<Vec<ReachPoint>> {
    let mut cloud = Vec::new();
    for_each_reachable(spec, n, seed, opts, |elapsed, x| cloud.push(ReachPoint { elapsed, x: x.to_vec() }))?;
    Ok(cloud)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSetOptions {
    /// Grid points per axis across the system domain.
    pub resolution: usize,
    /// Requested time step; rounded down to divide the horizon evenly.
    pub dt: f64,
    /// Extra margin added on every side of the domain, rounded up to whole cells.
    pub pad: f64,
    /// Keep a snapshot every n steps (the terminal and final slices are always kept).
    pub store_every: usize,
}

impl Default for LevelSetOptions {
    fn default() -> Self {
        Self { resolution: 101, dt: 2e-3, pad: 0.0, store_every: 10 }
    }
}

/// Value function on a tensor grid at a sequence of (decreasing) times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSolution {
    pub axes: Vec<Vec<f64>>,
    /// Value-function times of the snapshots, starting at `T`.
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub dt: f64,
    pub steps: usize,
    /// Dissipation coefficient per axis.
    pub alpha: Vec<f64>,
    /// Mean and max of `|D_t V + min(0, H)|` by central differences on the
    /// interior of the final step.
    pub residual_mean: f64,
    pub residual_max: f64,
}

impl LevelSetSolution {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].len();
        }
        s
    }

    /// Multilinear interpolation of snapshot `k` at `x` (clamped to the grid).
    pub fn interpolate(&self, k: usize, x: &[f64]) -> f64 {
        let strides = self.strides();
        let values = &self.snapshots[k];
        let mut base = 0;
        let mut fracs = Vec::with_capacity(x.len());
        for (a, (&xi, axis)) in x.iter().zip(&self.axes).enumerate() {
            let n = axis.len();
            if n == 1 {
                fracs.push((0, 0.0));
                continue;
            }
            let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
            let s = ((xi - axis[0]) / h).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            base += i * strides[a];
            fracs.push((strides[a], s - i as f64));
        }
        let dims = x.len();
        let mut total = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = base;
            for (a, &(stride, f)) in fracs.iter().enumerate() {
                if corner >> a & 1 == 1 {
                    w *= f;
                    idx += stride;
                } else {
                    w *= 1.0 - f;
                }
            }
            if w != 0.0 {
                total += w * values[idx];
            }
        }
        total
    }

    /// Index of the stored snapshot closest to time `t`.
    pub fn nearest_snapshot(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    pub fn final_index(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(|a| if a.len() > 1 { a[1] - a[0] } else { 0.0 }).collect()
    }
}

/// March `V(t - dt) = V(t) + dt · min(0, Ĥ)` from `V(T) = g` down to `t0`,
/// with the Lax–Friedrichs flux `Ĥ = H(t, x, p̄) + Σ α_i (p⁺_i - p⁻_i) / 2`.
pub fn levelset_solve(spec: &SystemSpec, opts: &LevelSetOptions) -> Result<LevelSetSolution> {
    let m = spec.state_dim();
    if opts.resolution < 2 || opts.store_every == 0 || !(opts.dt > 0.0) || !(opts.pad >= 0.0) {
        return Err(Error::Config("level set solver needs resolution >= 2, dt > 0, pad >= 0".into()));
    }
    let mut axes = Vec::with_capacity(m);
    for d in spec.domain().dims() {
        let h = d.width() / (opts.resolution - 1) as f64;
        let extra = if h > 0.0 { (opts.pad / h).ceil() as usize } else { 0 };
        let mut axis = axis_points(d.lo, d.hi, opts.resolution);
        if extra > 0 {
            let mut full: Vec<f64> = (1..=extra).rev().map(|k| d.lo - h * k as f64).collect();
            full.append(&mut axis);
            full.extend((1..=extra).map(|k| d.hi + h * k as f64));
            axis = full;
        }
        axes.push(axis);
    }
    let spacing: Vec<f64> = axes.iter().map(|a| a[1] - a[0]).collect();
    let hamiltonian = spec.hamiltonian_tape()?;

    // dissipation from an enclosure of ∂H/∂p over the grid and all co-states
    let mut tx = vec![Interval { lo: spec.t0, hi: spec.t1 }];
    tx.extend(axes.iter().map(|a| Interval { lo: a[0], hi: a[a.len() - 1] }));
    let p_all = vec![Interval { lo: -1e6, hi: 1e6 }; m];
    let alpha: Vec<f64> = hamiltonian
        .gradient_bounds(&IntervalBox::new(tx)?, &p_all)?
        .iter()
        .map(|g| g.mag())
        .collect();
    let rate: f64 = alpha.iter().zip(&spacing).map(|(a, h)| a / h).sum();
    let horizon = spec.t1 - spec.t0;
    let steps = if horizon > 0.0 { (horizon / opts.dt).ceil().max(1.0) as usize } else { 0 };
    let dt = if steps > 0 { horizon / steps as f64 } else { 0.0 };
    if rate * dt > 1.0 {
        return Err(Error::Cfl { dt, required: 1.0 / rate });
    }

    let sizes: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let total: usize = sizes.iter().product();
    let mut strides = vec![1; m];
    for i in (0..m.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    let point = |idx: usize, x: &mut [f64]| {
        let mut r = idx;
        for i in 0..m {
            x[i] = axes[i][r / strides[i]];
            r %= strides[i];
        }
    };
    let mut x = vec![0.0; m];
    let mut v = Vec::with_capacity(total);
    for idx in 0..total {
        point(idx, &mut x);
        v.push(spec.eval_target(&x)?);
    }

    let mut times = vec![spec.t1];
    let mut snapshots = vec![v.clone()];
    let mut next = vec![0.0; total];
    let mut work = Workspace::new(m);
    for n in 0..steps {
        let t = spec.t1 - n as f64 * dt;
        for idx in 0..total {
            point(idx, &mut x);
            let h = work.numerical_hamiltonian(&hamiltonian, t, &x, &v, idx, &sizes, &strides, &spacing, &alpha)?;
            next[idx] = v[idx] + dt * h.min(0.0);
        }
        std::mem::swap(&mut v, &mut next);
        if (n + 1) % opts.store_every == 0 || n + 1 == steps {
            times.push(spec.t1 - (n + 1) as f64 * dt);
            snapshots.push(v.clone());
        }
    }

    // a-posteriori check on the last step
    let (mut res_sum, mut res_max, mut count) = (0.0, 0.0f64, 0usize);
    if steps > 0 {
        let prev = &next;
        let t = spec.t0;
        for idx in 0..total {
            let interior = (0..m).all(|i| {
                let c = idx / strides[i] % sizes[i];
                c > 0 && c + 1 < sizes[i]
            });
            if !interior {
                continue;
            }
            point(idx, &mut x);
            let p: Vec<f64> =
                (0..m).map(|i| (v[idx + strides[i]] - v[idx - strides[i]]) / (2.0 * spacing[i])).collect();
            let h = work.hamiltonian(&hamiltonian, t, &x, &p)?;
            let r = ((prev[idx] - v[idx]) / dt + h.min(0.0)).abs();
            res_sum += r;
            res_max = res_max.max(r);
            count += 1;
        }
    }
    Ok(LevelSetSolution {
        axes,
        times,
        snapshots,
        dt,
        steps,
        alpha,
        residual_mean: if count > 0 { res_sum / count as f64 } else { 0.0 },
        residual_max: res_max,
    })
}

struct Workspace {
    p: Vec<f64>,
    vars: Vec<f64>,
    scratch: Vec<f64>,
    dh: Vec<f64>,
}

impl Workspace {
    fn new(m: usize) -> Self {
        Self { p: vec![0.0; m], vars: Vec::new(), scratch: Vec::new(), dh: vec![0.0; m] }
    }

    fn hamiltonian(&mut self, tape: &HamiltonianTape, t: f64, x: &[f64], p: &[f64]) -> Result<f64> {
        tape.eval(t, x, p, &mut self.vars, &mut self.scratch, &mut self.dh)
    }

    #[allow(clippy::too_many_arguments)]
    fn numerical_hamiltonian(
        &mut self,
        tape: &HamiltonianTape,
        t: f64,
        x: &[f64],
        v: &[f64],
        idx: usize,
        sizes: &[usize],
        strides: &[usize],
        spacing: &[f64],
        alpha: &[f64],
    ) -> Result<f64> {
        let mut dissipation = 0.0;
        for i in 0..sizes.len() {
            let c = idx / strides[i] % sizes[i];
            let s = strides[i];
            let h = spacing[i];
            // one-sided differences at the edges (linear extrapolation)
            let minus = if c > 0 { (v[idx] - v[idx - s]) / h } else { (v[idx + s] - v[idx]) / h };
            let plus = if c + 1 < sizes[i] { (v[idx + s] - v[idx]) / h } else { minus };
            let minus = if c > 0 { minus } else { plus };
            self.p[i] = 0.5 * (minus + plus);
            dissipation += alpha[i] * 0.5 * (plus - minus);
        }
        let p = std::mem::take(&mut self.p);
        let h = self.hamiltonian(tape, t, x, &p);
        self.p = p;
        Ok(h? + dissipation)
    }
}
