//! SMT-LIB2 (QF_NRA) export of threshold queries.
//!
//! Nodes used more than once are bound with nested `let`s so the script
//! stays linear in the size of the shared graph.

use std::collections::HashMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{BinaryOp, ExprId, ExprPool, IntervalBox, Node, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Greater,
    Less,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Greater => ">",
            Relation::Less => "<",
        }
    }

    /// Does `value` satisfy `value relation threshold`?
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::Greater => value > threshold,
            Relation::Less => value < threshold,
        }
    }
}

pub(crate) fn real_literal(x: f64) -> String {
    let mag = format!("{}", x.abs());
    let mag = if mag.contains('.') { mag } else { format!("{mag}.0") };
    if x < 0.0 {
        format!("(- {mag})")
    } else {
        mag
    }
}

fn symbol(name: &str) -> String {
    let plain = name.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
        && !name.starts_with(|c: char| c.is_ascii_digit());
    if plain {
        name.to_string()
    } else {
        format!("|{name}|")
    }
}

/// Emit a complete script asserting `e relation threshold` over `domain`.
///
/// `vars[i]` is the pool variable constrained by `domain[i]`.
pub fn to_smtlib(
    pool: &ExprPool,
    e: ExprId,
    relation: Relation,
    threshold: f64,
    vars: &[usize],
    domain: &IntervalBox,
) -> String {
    let order = pool.reachable(&[e]);
    let mut uses: HashMap<ExprId, usize> = HashMap::new();
    for &id in &order {
        for c in pool.node(id).children() {
            *uses.entry(c).or_default() += 1;
        }
    }
    let mut repr: HashMap<ExprId, String> = HashMap::with_capacity(order.len());
    let mut lets: Vec<(String, String)> = Vec::new();
    for &id in &order {
        let r = |c: ExprId| repr[&c].clone();
        let text = match pool.node(id) {
            Node::Const(c) => real_literal(c),
            Node::Var(i) => symbol(&pool.var_names()[i]),
            Node::Unary(op, a) => {
                let a = r(a);
                match op {
                    UnaryOp::Neg => format!("(- {a})"),
                    UnaryOp::Sin => format!("(sin {a})"),
                    UnaryOp::Cos => format!("(cos {a})"),
                    UnaryOp::Exp => format!("(exp {a})"),
                    UnaryOp::Abs => format!("(ite (>= {a} 0.0) {a} (- {a}))"),
                }
            }
            Node::Binary(op, a, b) => {
                let (a, b) = (r(a), r(b));
                match op {
                    BinaryOp::Add => format!("(+ {a} {b})"),
                    BinaryOp::Sub => format!("(- {a} {b})"),
                    BinaryOp::Mul => format!("(* {a} {b})"),
                    BinaryOp::Div => format!("(/ {a} {b})"),
                    BinaryOp::Min => format!("(ite (<= {a} {b}) {a} {b})"),
                    BinaryOp::Max => format!("(ite (>= {a} {b}) {a} {b})"),
                }
            }
            Node::Powi(a, n) => {
                let a = r(a);
                let factors = vec![a; n as usize].join(" ");
                format!("(* {factors})")
            }
            Node::IfLe { lhs, rhs, then, other } => {
                format!("(ite (<= {} {}) {} {})", r(lhs), r(rhs), r(then), r(other))
            }
        };
        let shared = uses.get(&id).copied().unwrap_or(0) >= 2;
        let leaf = matches!(pool.node(id), Node::Const(_) | Node::Var(_));
        if shared && !leaf {
            let name = format!("n{}", id.index());
            lets.push((name.clone(), text));
            repr.insert(id, name);
        } else {
            repr.insert(id, text);
        }
    }

    let mut out = String::new();
    writeln!(out, "(set-logic QF_NRA)").unwrap();
    for &v in vars {
        writeln!(out, "(declare-fun {} () Real)", symbol(&pool.var_names()[v])).unwrap();
    }
    for (&v, d) in vars.iter().zip(domain.dims()) {
        let name = symbol(&pool.var_names()[v]);
        writeln!(out, "(assert (<= {} {name}))", real_literal(d.lo)).unwrap();
        writeln!(out, "(assert (<= {name} {}))", real_literal(d.hi)).unwrap();
    }
    let mut body = format!("({} {} {})", relation.symbol(), repr[&e], real_literal(threshold));
    for (name, text) in lets.iter().rev() {
        body = format!("(let (({name} {text})) {body})");
    }
    writeln!(out, "(assert {body})").unwrap();
    writeln!(out, "(check-sat)").unwrap();
    writeln!(out, "(exit)").unwrap();
    out
}
