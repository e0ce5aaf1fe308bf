//! Closed intervals over `f64` with outward rounding.
//!
//! Every primitive widens its result by one ulp in each direction so the
//! exact real result (and the round-to-nearest float result) is enclosed.
//! Transcendental enclosures take the libm value and widen by 4 ulps.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRANSCENDENTAL_ULPS: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

fn down_n(mut x: f64, n: u32) -> f64 {
    for _ in 0..n {
        x = x.next_down();
    }
    x
}

fn up_n(mut x: f64, n: u32) -> f64 {
    for _ in 0..n {
        x = x.next_up();
    }
    x
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * self.lo + 0.5 * self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    /// Intersection, or `None` when disjoint.
    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn neg(self) -> Self {
        Self { lo: -self.hi, hi: -self.lo }
    }

    pub fn add(self, rhs: Self) -> Self {
        Self { lo: down(self.lo + rhs.lo), hi: up(self.hi + rhs.hi) }
    }

    pub fn sub(self, rhs: Self) -> Self {
        Self { lo: down(self.lo - rhs.hi), hi: up(self.hi - rhs.lo) }
    }

    pub fn mul(self, rhs: Self) -> Self {
        let p = [self.lo * rhs.lo, self.lo * rhs.hi, self.hi * rhs.lo, self.hi * rhs.hi];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { lo: down(lo), hi: up(hi) }
    }

    /// Division; `None` when the divisor contains zero.
    pub fn div(self, rhs: Self) -> Option<Self> {
        if rhs.contains_zero() {
            return None;
        }
        let q = [self.lo / rhs.lo, self.lo / rhs.hi, self.hi / rhs.lo, self.hi / rhs.hi];
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { lo: down(lo), hi: up(hi) })
    }

    pub fn abs(self) -> Self {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Self { lo: 0.0, hi: self.mag() }
        }
    }

    pub fn min(self, rhs: Self) -> Self {
        Self { lo: self.lo.min(rhs.lo), hi: self.hi.min(rhs.hi) }
    }

    pub fn max(self, rhs: Self) -> Self {
        Self { lo: self.lo.max(rhs.lo), hi: self.hi.max(rhs.hi) }
    }

    /// Integer power. Uses the same multiplication chain as [`powi_point`]
    /// so point results stay inside the enclosure.
    pub fn powi(self, n: u32) -> Self {
        if n == 0 {
            return Self::point(1.0);
        }
        if n % 2 == 0 {
            let a = self.abs();
            let lo = pow_chain(Self::point(a.lo), n).lo.max(0.0);
            let hi = pow_chain(Self::point(a.hi), n).hi;
            Self { lo, hi }
        } else {
            // odd powers are monotone
            let lo = pow_chain(Self::point(self.lo), n).lo;
            let hi = pow_chain(Self::point(self.hi), n).hi;
            Self { lo, hi }
        }
    }

    pub fn exp(self) -> Self {
        let lo = down_n(self.lo.exp(), TRANSCENDENTAL_ULPS).max(0.0);
        let hi = up_n(self.hi.exp(), TRANSCENDENTAL_ULPS);
        Self { lo, hi }
    }

    pub fn sin(self) -> Self {
        periodic_enclosure(self, f64::sin, FRAC_PI_2, -FRAC_PI_2)
    }

    pub fn cos(self) -> Self {
        periodic_enclosure(self, f64::cos, 0.0, PI)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Binary exponentiation over intervals with outward rounding.
fn pow_chain(base: Interval, mut n: u32) -> Interval {
    let mut acc = Interval::point(1.0);
    let mut b = base;
    let mut first = true;
    while n > 0 {
        if n & 1 == 1 {
            acc = if first { b } else { acc.mul(b) };
            first = false;
        }
        n >>= 1;
        if n > 0 {
            b = b.mul(b);
        }
    }
    acc
}

/// Point evaluation of `x^n` with the multiplication order of [`pow_chain`].
pub fn powi_point(x: f64, mut n: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = x;
    let mut first = true;
    while n > 0 {
        if n & 1 == 1 {
            acc = if first { b } else { acc * b };
            first = false;
        }
        n >>= 1;
        if n > 0 {
            b *= b;
        }
    }
    acc
}

/// Does `[lo, hi]` contain `phase + 2kπ` for some integer k? Errs toward yes.
fn hits_phase(x: Interval, phase: f64) -> bool {
    let k = ((x.lo - phase) / TAU).floor();
    for dk in -1..=2 {
        let c = phase + (k + f64::from(dk)) * TAU;
        let tol = 1e-12 * c.abs().max(1.0);
        if c >= x.lo - tol && c <= x.hi + tol {
            return true;
        }
    }
    false
}

fn periodic_enclosure(x: Interval, f: fn(f64) -> f64, max_at: f64, min_at: f64) -> Interval {
    if x.width() >= TAU || !x.is_finite() {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let a = f(x.lo);
    let b = f(x.hi);
    let hi = if hits_phase(x, max_at) { 1.0 } else { up_n(a.max(b), TRANSCENDENTAL_ULPS).min(1.0) };
    let lo = if hits_phase(x, min_at) { -1.0 } else { down_n(a.min(b), TRANSCENDENTAL_ULPS).max(-1.0) };
    Interval { lo, hi }
}

/// Per-variable closed intervals in variable-table order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Result<Self> {
        for d in &dims {
            Interval::new(d.lo, d.hi)?;
        }
        Ok(Self { dims })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let dims = bounds.iter().map(|&(lo, hi)| Interval::new(lo, hi)).collect::<Result<_>>()?;
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims.len() && self.dims.iter().zip(p).all(|(d, &x)| d.contains(x))
    }

    pub fn max_width(&self) -> f64 {
        self.dims.iter().map(Interval::width).fold(0.0, f64::max)
    }

    /// Split along `axis` at the midpoint.
    pub fn bisect(&self, axis: usize) -> (Self, Self) {
        let d = self.dims[axis];
        let m = d.mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[axis] = Interval { lo: d.lo, hi: m };
        right.dims[axis] = Interval { lo: m, hi: d.hi };
        (left, right)
    }

    pub fn push(&mut self, d: Interval) {
        self.dims.push(d);
    }
}

impl std::ops::Index<usize> for IntervalBox {
    type Output = Interval;

    fn index(&self, i: usize) -> &Interval {
        &self.dims[i]
    }
}
