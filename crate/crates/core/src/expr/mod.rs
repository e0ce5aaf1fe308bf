//! Symbolic expression graphs shared by training, certification and export.
//!
//! Nodes live in an [`ExprPool`] and are hash-consed: building the same node
//! twice returns the same [`ExprId`]. Children always have smaller ids than
//! their parents, so id order is a topological order of the graph.

mod interval;
mod parse;
mod smtlib;
mod tape;

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

pub use interval::{powi_point, Interval, IntervalBox};
pub use parse::parse_infix;
pub use smtlib::{to_smtlib, Relation};
pub use tape::Tape;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(u32);

impl ExprId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Copy, Debug)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, ExprId),
    Binary(BinaryOp, ExprId, ExprId),
    Powi(ExprId, u32),
    /// `if lhs <= rhs { then } else { other }`. Produced by differentiating
    /// `min`, `max` and `abs`.
    IfLe { lhs: ExprId, rhs: ExprId, then: ExprId, other: ExprId },
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        use Node::*;
        match (self, other) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits(),
            (Var(a), Var(b)) => a == b,
            (Unary(o, a), Unary(p, b)) => o == p && a == b,
            (Binary(o, a, b), Binary(p, c, d)) => o == p && a == c && b == d,
            (Powi(a, n), Powi(b, m)) => a == b && n == m,
            (
                IfLe { lhs: a, rhs: b, then: c, other: d },
                IfLe { lhs: e, rhs: f, then: g, other: h },
            ) => a == e && b == f && c == g && d == h,
            _ => false,
        }
    }
}

impl Eq for Node {}

impl Hash for Node {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Node::Const(c) => c.to_bits().hash(state),
            Node::Var(i) => i.hash(state),
            Node::Unary(o, a) => (o, a).hash(state),
            Node::Binary(o, a, b) => (o, a, b).hash(state),
            Node::Powi(a, n) => (a, n).hash(state),
            Node::IfLe { lhs, rhs, then, other } => (lhs, rhs, then, other).hash(state),
        }
    }
}

impl Node {
    pub fn children(&self) -> impl Iterator<Item = ExprId> {
        let (arr, n): ([ExprId; 4], usize) = match *self {
            Node::Const(_) | Node::Var(_) => ([ExprId(0); 4], 0),
            Node::Unary(_, a) | Node::Powi(a, _) => ([a, a, a, a], 1),
            Node::Binary(_, a, b) => ([a, b, a, b], 2),
            Node::IfLe { lhs, rhs, then, other } => ([lhs, rhs, then, other], 4),
        };
        arr.into_iter().take(n)
    }
}

/// Owner of expression nodes and the variable table.
#[derive(Clone, Debug)]
pub struct ExprPool {
    vars: Vec<String>,
    nodes: Vec<Node>,
    index: HashMap<Node, ExprId>,
    dedup: bool,
}

impl Default for ExprPool {
    fn default() -> Self {
        Self::new()
    }
}

impl ExprPool {
    pub fn new() -> Self {
        Self { vars: Vec::new(), nodes: Vec::new(), index: HashMap::new(), dedup: true }
    }

    /// A pool that never shares structurally identical nodes. Only useful
    /// for checking that sharing does not change results.
    pub fn without_sharing() -> Self {
        Self { dedup: false, ..Self::new() }
    }

    pub fn with_vars<S: AsRef<str>>(names: &[S]) -> Self {
        let mut pool = Self::new();
        for n in names {
            pool.declare_var(n.as_ref());
        }
        pool
    }

    /// Declare a variable (or return the existing one with that name).
    pub fn declare_var(&mut self, name: &str) -> ExprId {
        let idx = match self.var_index(name) {
            Some(i) => i,
            None => {
                self.vars.push(name.to_string());
                self.vars.len() - 1
            }
        };
        self.intern(Node::Var(idx))
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn var_names(&self) -> &[String] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var(&mut self, index: usize) -> Result<ExprId> {
        if index >= self.vars.len() {
            return Err(Error::UnboundVariable { index, len: self.vars.len() });
        }
        Ok(self.intern(Node::Var(index)))
    }

    pub fn node(&self, id: ExprId) -> Node {
        self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn intern(&mut self, node: Node) -> ExprId {
        if self.dedup {
            if let Some(&id) = self.index.get(&node) {
                return id;
            }
        }
        let id = ExprId(u32::try_from(self.nodes.len()).expect("expression pool overflow"));
        self.nodes.push(node);
        if self.dedup {
            self.index.insert(node, id);
        }
        id
    }

    fn as_const(&self, id: ExprId) -> Option<f64> {
        match self.node(id) {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, id: ExprId, value: f64) -> bool {
        self.as_const(id) == Some(value)
    }

    pub fn constant(&mut self, c: f64) -> ExprId {
        // -0.0 and 0.0 are the same real
        let c = if c == 0.0 { 0.0 } else { c };
        self.intern(Node::Const(c))
    }

    pub fn zero(&mut self) -> ExprId {
        self.constant(0.0)
    }

    pub fn one(&mut self) -> ExprId {
        self.constant(1.0)
    }

    pub fn neg(&mut self, a: ExprId) -> ExprId {
        match self.node(a) {
            Node::Const(c) => self.constant(-c),
            Node::Unary(UnaryOp::Neg, inner) => inner,
            _ => self.intern(Node::Unary(UnaryOp::Neg, a)),
        }
    }

    pub fn sin(&mut self, a: ExprId) -> ExprId {
        if self.is_const(a, 0.0) {
            return a;
        }
        self.intern(Node::Unary(UnaryOp::Sin, a))
    }

    pub fn cos(&mut self, a: ExprId) -> ExprId {
        if self.is_const(a, 0.0) {
            return self.one();
        }
        self.intern(Node::Unary(UnaryOp::Cos, a))
    }

    pub fn exp(&mut self, a: ExprId) -> ExprId {
        if self.is_const(a, 0.0) {
            return self.one();
        }
        self.intern(Node::Unary(UnaryOp::Exp, a))
    }

    pub fn abs(&mut self, a: ExprId) -> ExprId {
        if let Some(c) = self.as_const(a) {
            return self.constant(c.abs());
        }
        self.intern(Node::Unary(UnaryOp::Abs, a))
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if self.is_const(a, 0.0) {
            return b;
        }
        if self.is_const(b, 0.0) {
            return a;
        }
        self.intern(Node::Binary(BinaryOp::Add, a, b))
    }

    pub fn sub(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if a == b {
            return self.zero();
        }
        if self.is_const(b, 0.0) {
            return a;
        }
        if self.is_const(a, 0.0) {
            return self.neg(b);
        }
        self.intern(Node::Binary(BinaryOp::Sub, a, b))
    }

    pub fn mul(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if self.is_const(a, 0.0) || self.is_const(b, 0.0) {
            return self.zero();
        }
        if self.is_const(a, 1.0) {
            return b;
        }
        if self.is_const(b, 1.0) {
            return a;
        }
        if self.is_const(a, -1.0) {
            return self.neg(b);
        }
        if self.is_const(b, -1.0) {
            return self.neg(a);
        }
        self.intern(Node::Binary(BinaryOp::Mul, a, b))
    }

    pub fn div(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if self.is_const(b, 1.0) {
            return a;
        }
        if self.is_const(a, 0.0) {
            return a;
        }
        self.intern(Node::Binary(BinaryOp::Div, a, b))
    }

    pub fn min(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if a == b {
            return a;
        }
        self.intern(Node::Binary(BinaryOp::Min, a, b))
    }

    pub fn max(&mut self, a: ExprId, b: ExprId) -> ExprId {
        if a == b {
            return a;
        }
        self.intern(Node::Binary(BinaryOp::Max, a, b))
    }

    pub fn powi(&mut self, a: ExprId, n: u32) -> ExprId {
        match n {
            0 => self.one(),
            1 => a,
            _ => self.intern(Node::Powi(a, n)),
        }
    }

    pub fn if_le(&mut self, lhs: ExprId, rhs: ExprId, then: ExprId, other: ExprId) -> ExprId {
        if then == other {
            return then;
        }
        self.intern(Node::IfLe { lhs, rhs, then, other })
    }

    pub fn sum(&mut self, terms: impl IntoIterator<Item = ExprId>) -> ExprId {
        let mut acc = self.zero();
        for t in terms {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Ids reachable from `roots`, in ascending (topological) order.
    pub fn reachable(&self, roots: &[ExprId]) -> Vec<ExprId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<ExprId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.index()], true) {
                continue;
            }
            stack.extend(self.node(id).children());
        }
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| ExprId(i as u32))
            .collect()
    }

    /// Number of distinct nodes in the graph rooted at `e`.
    pub fn node_count(&self, e: ExprId) -> usize {
        self.reachable(&[e]).len()
    }

    /// Sorted indices of variables appearing in `e`.
    pub fn free_vars(&self, e: ExprId) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .reachable(&[e])
            .into_iter()
            .filter_map(|id| match self.node(id) {
                Node::Var(i) => Some(i),
                _ => None,
            })
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    pub fn depends_on(&self, e: ExprId, var: usize) -> bool {
        self.free_vars(e).contains(&var)
    }

    pub fn eval_point(&self, e: ExprId, assignment: &[f64]) -> Result<f64> {
        Ok(Tape::compile(self, &[e]).eval_point(assignment)?[0])
    }

    pub fn eval_interval(&self, e: ExprId, domain: &IntervalBox) -> Result<Interval> {
        Ok(Tape::compile(self, &[e]).eval_interval(domain.dims())?[0])
    }

    /// Symbolic partial derivative `∂e/∂var`.
    ///
    /// `min`, `max` and `abs` differentiate to an [`Node::IfLe`] that picks
    /// the left operand's derivative at ties.
    pub fn differentiate(&mut self, e: ExprId, var: usize) -> ExprId {
        let order = self.reachable(&[e]);
        let mut deriv: HashMap<ExprId, ExprId> = HashMap::with_capacity(order.len());
        let zero = self.zero();
        for id in order {
            let d = match self.node(id) {
                Node::Const(_) => zero,
                Node::Var(i) => {
                    if i == var {
                        self.one()
                    } else {
                        zero
                    }
                }
                Node::Unary(op, a) => {
                    let da = deriv[&a];
                    if da == zero {
                        zero
                    } else {
                        match op {
                            UnaryOp::Neg => self.neg(da),
                            UnaryOp::Sin => {
                                let c = self.cos(a);
                                self.mul(c, da)
                            }
                            UnaryOp::Cos => {
                                let s = self.sin(a);
                                let m = self.mul(s, da);
                                self.neg(m)
                            }
                            UnaryOp::Exp => self.mul(id, da),
                            UnaryOp::Abs => {
                                let nda = self.neg(da);
                                self.if_le(zero, a, da, nda)
                            }
                        }
                    }
                }
                Node::Binary(op, a, b) => {
                    let (da, db) = (deriv[&a], deriv[&b]);
                    if da == zero && db == zero {
                        zero
                    } else {
                        match op {
                            BinaryOp::Add => self.add(da, db),
                            BinaryOp::Sub => self.sub(da, db),
                            BinaryOp::Mul => {
                                let l = self.mul(da, b);
                                let r = self.mul(a, db);
                                self.add(l, r)
                            }
                            BinaryOp::Div => {
                                let l = self.div(da, b);
                                let num = self.mul(a, db);
                                let den = self.powi(b, 2);
                                let r = self.div(num, den);
                                self.sub(l, r)
                            }
                            BinaryOp::Min => self.if_le(a, b, da, db),
                            BinaryOp::Max => self.if_le(b, a, da, db),
                        }
                    }
                }
                Node::Powi(a, n) => {
                    let da = deriv[&a];
                    if da == zero || n == 0 {
                        zero
                    } else {
                        let c = self.constant(f64::from(n));
                        let p = self.powi(a, n - 1);
                        let cp = self.mul(c, p);
                        self.mul(cp, da)
                    }
                }
                Node::IfLe { lhs, rhs, then, other } => {
                    let (dt, dother) = (deriv[&then], deriv[&other]);
                    self.if_le(lhs, rhs, dt, dother)
                }
            };
            deriv.insert(id, d);
        }
        deriv[&e]
    }

    /// Replace variables by expressions. Variables missing from `map` stay.
    pub fn substitute(&mut self, e: ExprId, map: &HashMap<usize, ExprId>) -> ExprId {
        let order = self.reachable(&[e]);
        let mut out: HashMap<ExprId, ExprId> = HashMap::with_capacity(order.len());
        for id in order {
            let r = match self.node(id) {
                Node::Const(_) => id,
                Node::Var(i) => map.get(&i).copied().unwrap_or(id),
                Node::Unary(op, a) => {
                    let a = out[&a];
                    match op {
                        UnaryOp::Neg => self.neg(a),
                        UnaryOp::Sin => self.sin(a),
                        UnaryOp::Cos => self.cos(a),
                        UnaryOp::Exp => self.exp(a),
                        UnaryOp::Abs => self.abs(a),
                    }
                }
                Node::Binary(op, a, b) => {
                    let (a, b) = (out[&a], out[&b]);
                    match op {
                        BinaryOp::Add => self.add(a, b),
                        BinaryOp::Sub => self.sub(a, b),
                        BinaryOp::Mul => self.mul(a, b),
                        BinaryOp::Div => self.div(a, b),
                        BinaryOp::Min => self.min(a, b),
                        BinaryOp::Max => self.max(a, b),
                    }
                }
                Node::Powi(a, n) => {
                    let a = out[&a];
                    self.powi(a, n)
                }
                Node::IfLe { lhs, rhs, then, other } => {
                    let (l, r, t, o) = (out[&lhs], out[&rhs], out[&then], out[&other]);
                    self.if_le(l, r, t, o)
                }
            };
            out.insert(id, r);
        }
        out[&e]
    }

    /// Borrow-friendly display adapter.
    pub fn display(&self, e: ExprId) -> DisplayExpr<'_> {
        DisplayExpr { pool: self, root: e }
    }
}

pub struct DisplayExpr<'a> {
    pool: &'a ExprPool,
    root: ExprId,
}

impl DisplayExpr<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, id: ExprId) -> fmt::Result {
        let p = self.pool;
        match p.node(id) {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "{}", p.vars[i]),
            Node::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Neg => "-",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Abs => "abs",
                };
                write!(f, "{name}(")?;
                self.write(f, a)?;
                write!(f, ")")
            }
            Node::Binary(op, a, b) => {
                let (name, infix) = match op {
                    BinaryOp::Add => ("+", true),
                    BinaryOp::Sub => ("-", true),
                    BinaryOp::Mul => ("*", true),
                    BinaryOp::Div => ("/", true),
                    BinaryOp::Min => ("min", false),
                    BinaryOp::Max => ("max", false),
                };
                if infix {
                    write!(f, "(")?;
                    self.write(f, a)?;
                    write!(f, " {name} ")?;
                    self.write(f, b)?;
                    write!(f, ")")
                } else {
                    write!(f, "{name}(")?;
                    self.write(f, a)?;
                    write!(f, ", ")?;
                    self.write(f, b)?;
                    write!(f, ")")
                }
            }
            Node::Powi(a, n) => {
                write!(f, "(")?;
                self.write(f, a)?;
                write!(f, ")^{n}")
            }
            Node::IfLe { lhs, rhs, then, other } => {
                write!(f, "ifle(")?;
                self.write(f, lhs)?;
                write!(f, ", ")?;
                self.write(f, rhs)?;
                write!(f, ", ")?;
                self.write(f, then)?;
                write!(f, ", ")?;
                self.write(f, other)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.root)
    }
}
