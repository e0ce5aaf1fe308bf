//! Sine-activated value network `V(t, x)` with a polynomial input layer.
//!
//! Inputs `y = (t, x_1, .., x_m)` are expanded to pure powers
//! `(y, y², .., y^q)` (no cross terms), passed through sine layers and a
//! linear read-out. The first sine layer multiplies its pre-activation by
//! `omega`.
//!
//! Training needs `∂V/∂t` and `∂V/∂x` as well as parameter gradients of
//! losses built from them, so [`ValueNet::eval`] propagates input tangents
//! forward and [`ValueNet::backprop`] runs reverse mode through both the
//! primal and the tangent computation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{powi_point, ExprId, ExprPool};

const CHECKPOINT_FORMAT: &str = "certreach-valuenet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub state_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

fn default_omega() -> f64 {
    30.0
}

fn default_degree() -> u32 {
    2
}

impl NetConfig {
    pub fn new(state_dim: usize) -> Self {
        Self { state_dim, hidden: default_hidden(), omega: default_omega(), degree: default_degree(), seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::Config("net.state_dim must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("net.hidden needs at least one layer, widths >= 1".into()));
        }
        if self.degree == 0 {
            return Err(Error::Config("net.degree must be >= 1".into()));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::Config("net.omega must be positive".into()));
        }
        Ok(())
    }

    /// Number of raw inputs `1 + m`.
    pub fn input_dim(&self) -> usize {
        1 + self.state_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim() * self.degree as usize
    }

    /// `(fan_in, fan_out)` of every affine map, read-out last.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.feature_dim();
        for &w in &self.hidden {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, 1));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Gradient seeds for one sample: `∂loss/∂V`, `∂loss/∂(∂V/∂t)` and
/// `∂loss/∂(∂V/∂x_i)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Seed {
    pub value: f64,
    /// Length `1 + m`: time first, then the states.
    pub tangent: Vec<f64>,
}

/// Value and input gradient at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    pub value: f64,
    pub dt: f64,
    pub dx: Vec<f64>,
}

/// Intermediate values of one evaluation, consumed by [`ValueNet::backprop`].
#[derive(Clone, Debug, Default)]
pub struct Trace {
    features: Vec<f64>,
    /// `dirs × features`, row per input direction.
    feature_tangents: Vec<f64>,
    /// per sine layer: activations after the sine
    acts: Vec<Vec<f64>>,
    /// per sine layer: pre-activations (after the omega scale)
    pre: Vec<Vec<f64>>,
    /// per sine layer: `dirs × width` tangents of the pre-activation
    pre_tan: Vec<Vec<f64>>,
    /// per sine layer: `dirs × width` tangents of the activation
    act_tan: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    config: NetConfig,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Probe {
    t: f64,
    x: Vec<f64>,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: NetConfig,
    params: Vec<f64>,
    probe: Probe,
    #[serde(default)]
    metadata: serde_json::Map<String, serde_json::Value>,
}

impl ValueNet {
    /// Seeded initialisation: first affine map uniform in `±1/fan_in`,
    /// later maps uniform in `±sqrt(6/fan_in)/omega`.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::with_capacity(config.num_params());
        for (k, (fan_in, fan_out)) in config.layer_shapes().into_iter().enumerate() {
            let bound = if k == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / config.omega
            };
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let params = vec![0.0; config.num_params()];
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return Err(Error::DimensionMismatch { expected: config.num_params(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.state_dim {
            return Err(Error::DimensionMismatch { expected: self.config.state_dim, got: x.len() });
        }
        Ok(())
    }

    /// `V(t, x)`.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let cfg = &self.config;
        let n_in = cfg.input_dim();
        let mut h: Vec<f64> = Vec::with_capacity(cfg.feature_dim());
        for j in 1..=cfg.degree {
            h.push(powi_point(t, j));
            h.extend(x.iter().map(|&xi| powi_point(xi, j)));
        }
        debug_assert_eq!(h.len(), n_in * cfg.degree as usize);
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in cfg.layer_shapes().into_iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let readout = layer == cfg.hidden.len();
            let mut next = Vec::with_capacity(fan_out);
            for k in 0..fan_out {
                let mut s = 0.0;
                for (wk, hk) in w[k * fan_in..(k + 1) * fan_in].iter().zip(&h) {
                    s += wk * hk;
                }
                s += b[k];
                if readout {
                    next.push(s);
                } else {
                    let a = if layer == 0 { cfg.omega * s } else { s };
                    next.push(a.sin());
                }
            }
            h = next;
        }
        Ok(h[0])
    }

    /// Value plus input gradient, recording a trace for [`ValueNet::backprop`].
    pub fn eval(&self, t: f64, x: &[f64], trace: &mut Trace) -> Result<NetOutput> {
        self.check_dim(x)?;
        let cfg = &self.config;
        let n_in = cfg.input_dim();
        let nf = cfg.feature_dim();
        let depth = cfg.hidden.len();

        trace.features.clear();
        trace.feature_tangents.clear();
        trace.feature_tangents.resize(n_in * nf, 0.0);
        let y: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).collect();
        for j in 1..=cfg.degree {
            for (i, &yi) in y.iter().enumerate() {
                let col = (j as usize - 1) * n_in + i;
                trace.features.push(powi_point(yi, j));
                let d = if j == 1 { 1.0 } else { f64::from(j) * powi_point(yi, j - 1) };
                trace.feature_tangents[i * nf + col] = d;
            }
        }
        trace.acts.resize(depth, Vec::new());
        trace.pre.resize(depth, Vec::new());
        trace.pre_tan.resize(depth, Vec::new());
        trace.act_tan.resize(depth, Vec::new());

        let shapes = cfg.layer_shapes();
        let mut offset = 0;
        for layer in 0..depth {
            let (fan_in, fan_out) = shapes[layer];
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let scale = if layer == 0 { cfg.omega } else { 1.0 };
            let (prev, prev_tan): (&[f64], &[f64]) = if layer == 0 {
                (&trace.features, &trace.feature_tangents)
            } else {
                (&trace.acts[layer - 1], &trace.act_tan[layer - 1])
            };
            let mut pre = vec![0.0; fan_out];
            let mut act = vec![0.0; fan_out];
            let mut pre_tan = vec![0.0; n_in * fan_out];
            let mut act_tan = vec![0.0; n_in * fan_out];
            for k in 0..fan_out {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                let mut s = 0.0;
                for (wk, hk) in row.iter().zip(prev) {
                    s += wk * hk;
                }
                s += b[k];
                let a = if layer == 0 { scale * s } else { s };
                pre[k] = a;
                act[k] = a.sin();
                let c = a.cos();
                for d in 0..n_in {
                    let pt = &prev_tan[d * fan_in..(d + 1) * fan_in];
                    let mut st = 0.0;
                    for (wk, tk) in row.iter().zip(pt) {
                        st += wk * tk;
                    }
                    let at = scale * st;
                    pre_tan[d * fan_out + k] = at;
                    act_tan[d * fan_out + k] = c * at;
                }
            }
            trace.pre[layer] = pre;
            trace.acts[layer] = act;
            trace.pre_tan[layer] = pre_tan;
            trace.act_tan[layer] = act_tan;
        }

        let (fan_in, _) = shapes[depth];
        let w = &self.params[offset..offset + fan_in];
        let b = self.params[offset + fan_in];
        let last = &trace.acts[depth - 1];
        let last_tan = &trace.act_tan[depth - 1];
        let mut value = 0.0;
        for (wk, hk) in w.iter().zip(last) {
            value += wk * hk;
        }
        value += b;
        let mut grads = vec![0.0; n_in];
        for (d, g) in grads.iter_mut().enumerate() {
            let mut s = 0.0;
            for (wk, tk) in w.iter().zip(&last_tan[d * fan_in..(d + 1) * fan_in]) {
                s += wk * tk;
            }
            *g = s;
        }
        Ok(NetOutput { value, dt: grads[0], dx: grads[1..].to_vec() })
    }

    /// `(∂V/∂t, ∂V/∂x)` at one point.
    pub fn input_gradients(&self, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let out = self.eval(t, x, &mut Trace::default())?;
        Ok((out.dt, out.dx))
    }

    /// Accumulate into `grad` the parameter gradient of
    /// `seed.value·V + Σ_d seed.tangent[d]·∂V/∂y_d` for the traced sample.
    pub fn backprop(&self, trace: &Trace, seed: &Seed, grad: &mut [f64]) {
        let cfg = &self.config;
        let n_in = cfg.input_dim();
        let depth = cfg.hidden.len();
        let shapes = cfg.layer_shapes();
        debug_assert_eq!(seed.tangent.len(), n_in);
        debug_assert_eq!(grad.len(), self.params.len());

        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }

        // read-out
        let (fan_in, _) = shapes[depth];
        let ro = offsets[depth];
        let last = &trace.acts[depth - 1];
        let last_tan = &trace.act_tan[depth - 1];
        for k in 0..fan_in {
            let mut g = seed.value * last[k];
            for d in 0..n_in {
                g += seed.tangent[d] * last_tan[d * fan_in + k];
            }
            grad[ro + k] += g;
        }
        grad[ro + fan_in] += seed.value;
        let w_out = &self.params[ro..ro + fan_in];
        let mut adj_act: Vec<f64> = w_out.iter().map(|w| seed.value * w).collect();
        let mut adj_act_tan = vec![0.0; n_in * fan_in];
        for d in 0..n_in {
            for k in 0..fan_in {
                adj_act_tan[d * fan_in + k] = seed.tangent[d] * w_out[k];
            }
        }

        for layer in (0..depth).rev() {
            let (fan_in, fan_out) = shapes[layer];
            let o = offsets[layer];
            let scale = if layer == 0 { cfg.omega } else { 1.0 };
            let pre = &trace.pre[layer];
            let pre_tan = &trace.pre_tan[layer];
            let (prev, prev_tan): (&[f64], &[f64]) = if layer == 0 {
                (&trace.features, &trace.feature_tangents)
            } else {
                (&trace.acts[layer - 1], &trace.act_tan[layer - 1])
            };
            let mut adj_pre = vec![0.0; fan_out];
            let mut adj_pre_tan = vec![0.0; n_in * fan_out];
            for k in 0..fan_out {
                let (s, c) = pre[k].sin_cos();
                let mut a = adj_act[k] * c;
                for d in 0..n_in {
                    let at = adj_act_tan[d * fan_out + k];
                    adj_pre_tan[d * fan_out + k] = at * c;
                    a -= at * pre_tan[d * fan_out + k] * s;
                }
                adj_pre[k] = a;
            }
            let need_prev = layer > 0;
            let mut adj_prev = vec![0.0; if need_prev { fan_in } else { 0 }];
            let mut adj_prev_tan = vec![0.0; if need_prev { n_in * fan_in } else { 0 }];
            for k in 0..fan_out {
                let ga = scale * adj_pre[k];
                let wrow = o + k * fan_in;
                for j in 0..fan_in {
                    let mut g = ga * prev[j];
                    for d in 0..n_in {
                        g += scale * adj_pre_tan[d * fan_out + k] * prev_tan[d * fan_in + j];
                    }
                    grad[wrow + j] += g;
                }
                grad[o + fan_in * fan_out + k] += ga;
                if need_prev {
                    for j in 0..fan_in {
                        let wkj = self.params[wrow + j];
                        adj_prev[j] += ga * wkj;
                        for d in 0..n_in {
                            adj_prev_tan[d * fan_in + j] += scale * adj_pre_tan[d * fan_out + k] * wkj;
                        }
                    }
                }
            }
            adj_act = adj_prev;
            adj_act_tan = adj_prev_tan;
        }
    }

    /// Parameter gradient of `Σ_i seed_i · (V, ∇V)(t_i, x_i)`.
    pub fn parameter_gradients(&self, samples: &[(f64, Vec<f64>)], seeds: &[Seed]) -> Result<Vec<f64>> {
        if samples.len() != seeds.len() {
            return Err(Error::DimensionMismatch { expected: samples.len(), got: seeds.len() });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut trace = Trace::default();
        for ((t, x), seed) in samples.iter().zip(seeds) {
            if seed.tangent.len() != self.config.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.config.input_dim(),
                    got: seed.tangent.len(),
                });
            }
            self.eval(*t, x, &mut trace)?;
            self.backprop(&trace, seed, &mut grad);
        }
        Ok(grad)
    }

    /// Exact symbolic closure over pool variables `t` (index 0) and
    /// `x_i` (index `1 + i`), using the same operation order as
    /// [`ValueNet::forward`].
    pub fn to_expr(&self, pool: &mut ExprPool) -> Result<ExprId> {
        let cfg = &self.config;
        if pool.num_vars() < cfg.input_dim() {
            return Err(Error::DimensionMismatch { expected: cfg.input_dim(), got: pool.num_vars() });
        }
        let inputs: Vec<ExprId> = (0..cfg.input_dim()).map(|i| pool.var(i)).collect::<Result<_>>()?;
        let mut h = Vec::with_capacity(cfg.feature_dim());
        for j in 1..=cfg.degree {
            for &v in &inputs {
                h.push(pool.powi(v, j));
            }
        }
        let omega = pool.constant(cfg.omega);
        let mut offset = 0;
        for (layer, (fan_in, fan_out)) in cfg.layer_shapes().into_iter().enumerate() {
            let readout = layer == cfg.hidden.len();
            let mut next = Vec::with_capacity(fan_out);
            for k in 0..fan_out {
                let mut s = pool.zero();
                for j in 0..fan_in {
                    let w = pool.constant(self.params[offset + k * fan_in + j]);
                    let term = pool.mul(w, h[j]);
                    s = pool.add(s, term);
                }
                let b = pool.constant(self.params[offset + fan_in * fan_out + k]);
                s = pool.add(s, b);
                if readout {
                    next.push(s);
                } else {
                    let a = if layer == 0 { pool.mul(omega, s) } else { s };
                    next.push(pool.sin(a));
                }
            }
            offset += fan_in * fan_out + fan_out;
            h = next;
        }
        Ok(h[0])
    }

    fn probe_point(&self) -> (f64, Vec<f64>) {
        let x = (0..self.config.state_dim).map(|i| 0.1 * (i + 1) as f64).collect();
        (0.5, x)
    }

    pub fn to_checkpoint_json(&self, metadata: serde_json::Map<String, serde_json::Value>) -> Result<String> {
        let (t, x) = self.probe_point();
        let value = self.forward(t, &x)?;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.clone(),
            probe: Probe { t, x, value },
            metadata,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parse a checkpoint and verify its stored probe value to 1e-12.
    pub fn from_checkpoint_json(text: &str) -> Result<(Self, serde_json::Map<String, serde_json::Value>)> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointMismatch(format!("unknown format `{}`", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!("unsupported version {}", file.version)));
        }
        let net = Self::from_params(file.config, file.params)?;
        let value = net.forward(file.probe.t, &file.probe.x)?;
        if (value - file.probe.value).abs() > 1e-12 {
            return Err(Error::CheckpointMismatch(format!(
                "probe value {} does not reproduce stored {}",
                value, file.probe.value
            )));
        }
        Ok((net, file.metadata))
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_checkpoint_json(metadata)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_metadata(path)?.0)
    }

    pub fn load_with_metadata(
        path: impl AsRef<Path>,
    ) -> Result<(Self, serde_json::Map<String, serde_json::Value>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}
