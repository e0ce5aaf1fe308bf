//! Reachable-set approximations from a certified value network.
//!
//! With `|R1| <= ε1` and `|R2| <= ε2` certified, the true value satisfies
//! `|V* - V_θ| <= ε(t) = ε1 + ε2·(T - t)`, so `{V_θ <= -ε}` is inside the
//! reachable set and `{V_θ <= ε}` contains it.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::IntervalBox;
use crate::system::SystemSpec;
use crate::valuenet::ValueNet;

#[derive(Clone, Debug)]
pub struct CertifiedValue {
    pub net: ValueNet,
    pub eps1: f64,
    pub eps2: f64,
    pub t0: f64,
    pub t1: f64,
    pub domain: IntervalBox,
    pub checkpoint: Option<PathBuf>,
}

impl CertifiedValue {
    pub fn new(net: ValueNet, spec: &SystemSpec, eps1: f64, eps2: f64) -> Result<Self> {
        if !(eps1 >= 0.0 && eps2 >= 0.0) {
            return Err(Error::Config(format!("certified bounds must be non-negative, got ({eps1}, {eps2})")));
        }
        if net.config().state_dim != spec.state_dim() {
            return Err(Error::CheckpointMismatch(format!(
                "network has {} states, system has {}",
                net.config().state_dim,
                spec.state_dim()
            )));
        }
        Ok(Self { net, eps1, eps2, t0: spec.t0, t1: spec.t1, domain: spec.domain().clone(), checkpoint: None })
    }

    /// Load a checkpoint; bounds default to the `epsilon1`/`epsilon2` metadata.
    pub fn load(path: impl AsRef<Path>, spec: &SystemSpec, eps: Option<(f64, f64)>) -> Result<Self> {
        let path = path.as_ref();
        let (net, meta) = ValueNet::load_with_metadata(path)?;
        let (eps1, eps2) = match eps {
            Some(e) => e,
            None => {
                let get = |k: &str| {
                    meta.get(k).and_then(|v| v.as_f64()).ok_or_else(|| {
                        Error::CheckpointMismatch(format!("{}: no certified `{k}` in metadata", path.display()))
                    })
                };
                (get("epsilon1")?, get("epsilon2")?)
            }
        };
        let mut cv = Self::new(net, spec, eps1, eps2)?;
        cv.checkpoint = Some(path.to_path_buf());
        Ok(cv)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= self.t0 && t <= self.t1) {
            return Err(Error::OutsideHorizon { t, t0: self.t0, t1: self.t1 });
        }
        Ok(())
    }
}

/// `ε1 + ε2·(T - t)`.
pub fn epsilon_total(cv: &CertifiedValue, t: f64) -> Result<f64> {
    cv.check_time(t)?;
    Ok(cv.eps1 + cv.eps2 * (cv.t1 - t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    /// `V_θ <= -ε`: certainly reachable.
    InUnder,
    /// `-ε < V_θ <= ε`: undecided band.
    InOverOnly,
    /// `V_θ > ε`: certainly not reachable.
    Outside,
}

impl Class {
    pub fn as_str(self) -> &'static str {
        match self {
            Class::InUnder => "in_under",
            Class::InOverOnly => "in_over_only",
            Class::Outside => "outside",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_value(value: f64, eps: f64) -> Class {
    if value <= -eps {
        Class::InUnder
    } else if value > eps {
        Class::Outside
    } else {
        Class::InOverOnly
    }
}

/// Class of `(t, x)`, where `t` is the value-function time.
pub fn classify(cv: &CertifiedValue, t: f64, x: &[f64]) -> Result<Class> {
    let eps = epsilon_total(cv, t)?;
    if x.len() != cv.domain.dim() {
        return Err(Error::DimensionMismatch { expected: cv.domain.dim(), got: x.len() });
    }
    if !cv.domain.contains(x) {
        return Err(Error::OutsideDomain);
    }
    Ok(classify_value(cv.net.forward(t, x)?, eps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x: Vec<f64>,
    pub value: f64,
    pub class: Class,
}

/// Grid coordinates along one axis; a single point sits at the centre.
pub fn axis_points(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    (0..resolution).map(|k| if k + 1 == resolution { hi } else { lo + step * k as f64 }).collect()
}

/// All points of a uniform grid over `domain`, first axis slowest.
pub fn grid_points(domain: &IntervalBox, resolution: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = domain.dims().iter().map(|d| axis_points(d.lo, d.hi, resolution)).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

pub fn export_grid(cv: &CertifiedValue, t: f64, resolution: usize) -> Result<Vec<GridRow>> {
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be >= 1".into()));
    }
    let eps = epsilon_total(cv, t)?;
    grid_points(&cv.domain, resolution)
        .into_iter()
        .map(|x| {
            let value = cv.net.forward(t, &x)?;
            Ok(GridRow { class: classify_value(value, eps), value, x })
        })
        .collect()
}

pub fn grid_csv(rows: &[GridRow], state_names: &[String]) -> String {
    let mut s = String::new();
    for n in state_names {
        s.push_str(n);
        s.push(',');
    }
    s.push_str("value,class\n");
    for r in rows {
        for v in &r.x {
            s.push_str(&format!("{v},"));
        }
        s.push_str(&format!("{},{}\n", r.value, r.class));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub t: f64,
    pub epsilon: f64,
    pub points: usize,
    pub in_under: usize,
    pub in_over_only: usize,
    pub outside: usize,
    /// Areas estimated by counting grid points.
    pub under_area: f64,
    pub over_area: f64,
}

pub fn summarize_grid(cv: &CertifiedValue, t: f64, rows: &[GridRow]) -> Result<GridSummary> {
    let eps = epsilon_total(cv, t)?;
    let count = |c: Class| rows.iter().filter(|r| r.class == c).count();
    let volume: f64 = cv.domain.dims().iter().map(|d| d.width()).product();
    let per_point = if rows.is_empty() { 0.0 } else { volume / rows.len() as f64 };
    let (in_under, in_over_only, outside) = (count(Class::InUnder), count(Class::InOverOnly), count(Class::Outside));
    Ok(GridSummary {
        t,
        epsilon: eps,
        points: rows.len(),
        in_under,
        in_over_only,
        outside,
        under_area: in_under as f64 * per_point,
        over_area: (in_under + in_over_only) as f64 * per_point,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen; negative means a violation.
    pub worst_slack: f64,
}

/// Check `V(t, x) <= V(t + σ, x) + ε2·σ + ε1 + 2·ε2·(T - t - σ)` at each
/// `(t, x, σ)`.
pub fn monotonicity_diagnostic(cv: &CertifiedValue, samples: &[(f64, Vec<f64>, f64)]) -> Result<MonotonicityReport> {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (t, x, sigma) in samples {
        let (t, sigma) = (*t, *sigma);
        if !(sigma >= 0.0) || t + sigma > cv.t1 {
            return Err(Error::OutsideHorizon { t: t + sigma, t0: cv.t0, t1: cv.t1 });
        }
        cv.check_time(t)?;
        let lhs = cv.net.forward(t, x)?;
        let rhs = cv.net.forward(t + sigma, x)? + cv.eps2 * sigma + cv.eps1 + 2.0 * cv.eps2 * (cv.t1 - t - sigma);
        let slack = rhs - lhs;
        if slack < 0.0 {
            violations += 1;
        }
        worst = worst.min(slack);
    }
    Ok(MonotonicityReport { samples: samples.len(), violations, worst_slack: worst })
}

/// Seeded `(t, x, σ)` triples with `t + σ <= T`.
pub fn monotonicity_samples(cv: &CertifiedValue, n: usize, seed: u64) -> Vec<(f64, Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(cv.t0..=cv.t1);
            let sigma = rng.gen_range(0.0..=(cv.t1 - t));
            let x = cv.domain.dims().iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
            (t, x, sigma)
        })
        .collect()
}
