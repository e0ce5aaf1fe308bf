//! Straight-line evaluation programs compiled from expression graphs.

use super::interval::{powi_point, Interval};
use super::{BinaryOp, ExprId, ExprPool, Node, UnaryOp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
    Powi(u32, u32),
    IfLe(u32, u32, u32, u32),
}

/// A compiled multi-output expression. Each reachable node becomes one slot,
/// evaluated once per call regardless of how many parents share it.
#[derive(Clone, Debug)]
pub struct Tape {
    instrs: Vec<Instr>,
    node_ids: Vec<usize>,
    outputs: Vec<usize>,
    num_vars: usize,
}

impl Tape {
    pub fn compile(pool: &ExprPool, roots: &[ExprId]) -> Self {
        let order = pool.reachable(roots);
        let mut slot = vec![u32::MAX; pool.len()];
        let mut instrs = Vec::with_capacity(order.len());
        let mut num_vars = 0;
        for (k, &id) in order.iter().enumerate() {
            slot[id.index()] = k as u32;
            let s = |c: ExprId| slot[c.index()];
            let ins = match pool.node(id) {
                Node::Const(c) => Instr::Const(c),
                Node::Var(i) => {
                    num_vars = num_vars.max(i + 1);
                    Instr::Var(i)
                }
                Node::Unary(op, a) => Instr::Unary(op, s(a)),
                Node::Binary(op, a, b) => Instr::Binary(op, s(a), s(b)),
                Node::Powi(a, n) => Instr::Powi(s(a), n),
                Node::IfLe { lhs, rhs, then, other } => {
                    Instr::IfLe(s(lhs), s(rhs), s(then), s(other))
                }
            };
            instrs.push(ins);
        }
        let outputs = roots.iter().map(|r| slot[r.index()] as usize).collect();
        let node_ids = order.iter().map(|id| id.index()).collect();
        Self { instrs, node_ids, outputs, num_vars }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// One more than the largest variable index read by the tape.
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn check_vars(&self, len: usize) -> Result<()> {
        if len < self.num_vars {
            return Err(Error::UnboundVariable { index: self.num_vars - 1, len });
        }
        Ok(())
    }

    pub fn eval_point(&self, vars: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Vec::new();
        self.eval_point_into(vars, &mut scratch)?;
        Ok(self.outputs.iter().map(|&o| scratch[o]).collect())
    }

    /// Evaluate into a reusable buffer; read results with [`Tape::output`].
    pub fn eval_point_into(&self, vars: &[f64], v: &mut Vec<f64>) -> Result<()> {
        self.check_vars(vars.len())?;
        v.clear();
        v.reserve(self.instrs.len());
        for (k, ins) in self.instrs.iter().enumerate() {
            let x = match *ins {
                Instr::Const(c) => c,
                Instr::Var(i) => vars[i],
                Instr::Unary(op, a) => {
                    let a = v[a as usize];
                    match op {
                        UnaryOp::Neg => -a,
                        UnaryOp::Sin => a.sin(),
                        UnaryOp::Cos => a.cos(),
                        UnaryOp::Exp => a.exp(),
                        UnaryOp::Abs => a.abs(),
                    }
                }
                Instr::Binary(op, a, b) => {
                    let (a, b) = (v[a as usize], v[b as usize]);
                    match op {
                        BinaryOp::Add => a + b,
                        BinaryOp::Sub => a - b,
                        BinaryOp::Mul => a * b,
                        BinaryOp::Div => {
                            if b == 0.0 {
                                return Err(Error::DivisionByZero { node: self.node_ids[k] });
                            }
                            a / b
                        }
                        BinaryOp::Min => a.min(b),
                        BinaryOp::Max => a.max(b),
                    }
                }
                Instr::Powi(a, n) => powi_point(v[a as usize], n),
                Instr::IfLe(l, r, t, o) => {
                    if v[l as usize] <= v[r as usize] {
                        v[t as usize]
                    } else {
                        v[o as usize]
                    }
                }
            };
            v.push(x);
        }
        Ok(())
    }

    pub fn output<T: Copy>(&self, scratch: &[T], k: usize) -> T {
        scratch[self.outputs[k]]
    }

    pub fn eval_interval(&self, vars: &[Interval]) -> Result<Vec<Interval>> {
        let mut scratch = Vec::new();
        self.eval_interval_into(vars, &mut scratch)?;
        Ok(self.outputs.iter().map(|&o| scratch[o]).collect())
    }

    pub fn eval_interval_into(&self, vars: &[Interval], v: &mut Vec<Interval>) -> Result<()> {
        self.check_vars(vars.len())?;
        v.clear();
        v.reserve(self.instrs.len());
        for (k, ins) in self.instrs.iter().enumerate() {
            let x = match *ins {
                Instr::Const(c) => Interval::point(c),
                Instr::Var(i) => vars[i],
                Instr::Unary(op, a) => {
                    let a = v[a as usize];
                    match op {
                        UnaryOp::Neg => a.neg(),
                        UnaryOp::Sin => a.sin(),
                        UnaryOp::Cos => a.cos(),
                        UnaryOp::Exp => a.exp(),
                        UnaryOp::Abs => a.abs(),
                    }
                }
                Instr::Binary(op, a, b) => {
                    let (a, b) = (v[a as usize], v[b as usize]);
                    match op {
                        BinaryOp::Add => a.add(b),
                        BinaryOp::Sub => a.sub(b),
                        BinaryOp::Mul => a.mul(b),
                        BinaryOp::Div => a
                            .div(b)
                            .ok_or(Error::DivisionByZero { node: self.node_ids[k] })?,
                        BinaryOp::Min => a.min(b),
                        BinaryOp::Max => a.max(b),
                    }
                }
                Instr::Powi(a, n) => v[a as usize].powi(n),
                Instr::IfLe(l, r, t, o) => {
                    let (l, r) = (v[l as usize], v[r as usize]);
                    if l.hi <= r.lo {
                        v[t as usize]
                    } else if l.lo > r.hi {
                        v[o as usize]
                    } else {
                        v[t as usize].hull(&v[o as usize])
                    }
                }
            };
            if !x.is_finite() {
                return Err(Error::NonFiniteEnclosure { node: self.node_ids[k] });
            }
            v.push(x);
        }
        Ok(())
    }
}
