//! Random checked transition functions, trace elements and repair instances.
//!
//! Shared by the core property tests and the acceptance harness (which pulls
//! this file in with `#[path]`), so it depends only on `rsm_core`, `rand` and
//! `rand_chacha`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm_core::corrections::{Correction, CorrectionKind};
use rsm_core::lang::{check, BinOp, UnOp};
use rsm_core::trace::{Trace, TraceElement};
use rsm_core::{Bindings, Expr, Label, ParameterMap, Shape, Stmt, TransitionFn, Value};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const STATES: [&str; 4] = ["S0", "S1", "S2", "S3"];
pub const PARAMS: [&str; 4] = ["p0", "p1", "p2", "p3"];

fn decls() -> TransitionFn {
    TransitionFn {
        name: "gen".into(),
        states: STATES.iter().map(|s| Label::new(s)).collect(),
        inputs: vec![
            ("x0".into(), Shape::Real),
            ("x1".into(), Shape::Real),
            ("b0".into(), Shape::Bool),
            ("v0".into(), Shape::Vec2),
        ],
        vars: vec![("k0".into(), Shape::Real), ("f0".into(), Shape::Bool)],
        params: PARAMS.iter().map(|s| s.to_string()).collect(),
        body: Stmt::Return(Label::new("S0")),
    }
}

fn small(r: &mut Rng) -> f64 {
    // mostly short decimals, so folded constants stay readable
    match r.random_range(0..4) {
        0 => r.random_range(-5.0..5.0),
        _ => (r.random_range(-20..=20) as f64) * 0.25,
    }
}

fn pick<'a, T>(r: &mut Rng, xs: &'a [T]) -> &'a T {
    &xs[r.random_range(0..xs.len())]
}

fn state_label(r: &mut Rng) -> Label {
    Label::new(pick(r, &STATES))
}

/// Free-form generator: every construct of the language, any nesting.
struct Free<'r> {
    r: &'r mut Rng,
    scopes: Vec<Vec<(String, Shape)>>,
    fresh: usize,
}

impl Free<'_> {
    fn local(&mut self, sh: Shape) -> Option<Expr> {
        let cands: Vec<&String> = self
            .scopes
            .iter()
            .flatten()
            .filter(|(_, s)| *s == sh)
            .map(|(n, _)| n)
            .collect();
        if cands.is_empty() {
            return None;
        }
        let n = cands[self.r.random_range(0..cands.len())].clone();
        Some(Expr::Local(n))
    }

    fn leaf_real(&mut self) -> Expr {
        match self.r.random_range(0..7) {
            0 | 1 => Expr::real(small(self.r)),
            2 => Expr::input(if self.r.random_bool(0.5) { "x0" } else { "x1" }),
            3 => Expr::var("k0"),
            4 | 5 => Expr::param(pick(self.r, &PARAMS)),
            _ => self.local(Shape::Real).unwrap_or_else(|| Expr::param("p0")),
        }
    }

    fn real(&mut self, d: u32) -> Expr {
        if d == 0 || self.r.random_bool(0.3) {
            return self.leaf_real();
        }
        match self.r.random_range(0..13) {
            0 => Expr::binary(BinOp::Add, self.real(d - 1), self.real(d - 1)),
            1 => Expr::binary(BinOp::Sub, self.real(d - 1), self.real(d - 1)),
            2 | 3 => Expr::binary(BinOp::Mul, self.real(d - 1), self.real(d - 1)),
            4 => Expr::binary(BinOp::Div, self.real(d - 1), self.real(d - 1)),
            5 => Expr::unary(UnOp::Neg, self.real(d - 1)),
            6 => Expr::unary(UnOp::Sin, self.real(d - 1)),
            7 => Expr::unary(UnOp::Cos, self.real(d - 1)),
            8 => Expr::unary(UnOp::Abs, self.real(d - 1)),
            9 => Expr::unary(UnOp::Sqrt, self.real(d - 1)),
            10 => Expr::unary(UnOp::Norm, self.vec(d - 1)),
            11 => Expr::binary(BinOp::Dot, self.vec(d - 1), self.vec(d - 1)),
            // keep angle_mod away from anything that might overflow
            _ => Expr::unary(UnOp::AngleMod, self.leaf_real()),
        }
    }

    fn vec(&mut self, d: u32) -> Expr {
        if d == 0 || self.r.random_bool(0.3) {
            return match self.r.random_range(0..3) {
                0 => Expr::input("v0"),
                1 => Expr::Const(Value::Vec2([small(self.r), small(self.r)])),
                _ => self.local(Shape::Vec2).unwrap_or_else(|| Expr::input("v0")),
            };
        }
        match self.r.random_range(0..5) {
            0 => Expr::Vec2(Box::new(self.real(d - 1)), Box::new(self.real(d - 1))),
            1 => Expr::binary(BinOp::Add, self.vec(d - 1), self.vec(d - 1)),
            2 => Expr::binary(BinOp::Sub, self.vec(d - 1), self.vec(d - 1)),
            3 => Expr::binary(BinOp::Mul, self.real(d - 1), self.vec(d - 1)),
            _ => Expr::unary(UnOp::Neg, self.vec(d - 1)),
        }
    }

    fn boolean(&mut self, d: u32) -> Expr {
        if d == 0 || self.r.random_bool(0.2) {
            return match self.r.random_range(0..5) {
                0 => Expr::input("b0"),
                1 => Expr::var("f0"),
                2 => Expr::boolean(self.r.random_bool(0.5)),
                3 => self.local(Shape::Bool).unwrap_or_else(|| Expr::var("f0")),
                _ => {
                    let l = Expr::label(pick(self.r, &STATES));
                    let op = if self.r.random_bool(0.7) { BinOp::Eq } else { BinOp::Ne };
                    Expr::binary(op, Expr::State, l)
                }
            };
        }
        match self.r.random_range(0..8) {
            0..=3 => {
                let op = *pick(
                    self.r,
                    &[BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge, BinOp::Eq, BinOp::Ne],
                );
                Expr::binary(op, self.real(d - 1), self.real(d - 1))
            }
            4 => Expr::not(self.boolean(d - 1)),
            5 => Expr::binary(BinOp::And, self.boolean(d - 1), self.boolean(d - 1)),
            6 => Expr::binary(BinOp::Or, self.boolean(d - 1), self.boolean(d - 1)),
            _ => {
                let op = if self.r.random_bool(0.5) { BinOp::Eq } else { BinOp::Ne };
                Expr::binary(op, self.boolean(d - 1), self.boolean(d - 1))
            }
        }
    }

    /// A statement that always returns.
    fn stmt(&mut self, d: u32) -> Stmt {
        self.scopes.push(Vec::new());
        let mut body = Vec::new();
        for _ in 0..self.r.random_range(0..3) {
            let name = format!("l{}", self.fresh);
            self.fresh += 1;
            let (e, sh) = match self.r.random_range(0..4) {
                0 | 1 => (self.real(2), Shape::Real),
                2 => (self.vec(2), Shape::Vec2),
                _ => (self.boolean(2), Shape::Bool),
            };
            body.push(Stmt::Let(name.clone(), e));
            self.scopes.last_mut().unwrap().push((name, sh));
        }
        if d == 0 || self.r.random_bool(0.2) {
            body.push(Stmt::Return(state_label(self.r)));
        } else if self.r.random_bool(0.7) {
            let c = self.boolean(3);
            let a = self.stmt(d - 1);
            let b = self.stmt(d - 1);
            body.push(Stmt::If(c, Box::new(a), Some(Box::new(b))));
        } else {
            // one-armed `if`, then a fallthrough
            let c = self.boolean(3);
            let a = self.stmt(d - 1);
            body.push(Stmt::If(c, Box::new(a), None));
            body.push(self.stmt(d - 1));
        }
        self.scopes.pop();
        Stmt::Block(body)
    }
}

/// A random checked transition function using every construct.
pub fn program(r: &mut Rng) -> TransitionFn {
    let mut g = Free {
        r,
        scopes: Vec::new(),
        fresh: 0,
    };
    let depth = g.r.random_range(1..5);
    let mut t = decls();
    t.body = g.stmt(depth);
    check(&t).unwrap_or_else(|e| panic!("generator produced an ill-formed program: {e}"));
    t
}

pub fn value(r: &mut Rng, sh: Shape) -> Value {
    match sh {
        Shape::Real => Value::Real(small(r)),
        Shape::Bool => Value::Bool(r.random_bool(0.5)),
        Shape::Vec2 => Value::Vec2([small(r), small(r)]),
        Shape::Label => Value::Label(state_label(r)),
    }
}

pub fn element(r: &mut Rng, t: &TransitionFn, at: usize) -> TraceElement {
    let bind = |r: &mut Rng, ds: &[(String, Shape)]| -> Bindings {
        ds.iter().map(|(n, sh)| (n.clone(), value(r, *sh))).collect()
    };
    TraceElement {
        t: at,
        inputs: bind(r, &t.inputs),
        vars: bind(r, &t.vars),
        state: Label::new(t.states[r.random_range(0..t.states.len())].as_str()),
    }
}

pub fn params(r: &mut Rng, t: &TransitionFn) -> ParameterMap {
    t.params.iter().map(|p| (p.clone(), small(r))).collect()
}

/// RSM-shaped generator whose parameters only appear affinely, so every
/// parameter is repairable and the repair formulas are small enough for the
/// oracle.
///
/// Shape: one `if (state == "Si")` block per non-final state, each a short
/// chain of guarded returns ending in a self-loop.
pub fn affine_program(r: &mut Rng) -> TransitionFn {
    let n_states = r.random_range(2..=4);
    let mut t = decls();
    t.states.truncate(n_states);
    let n_params = r.random_range(1..=4);
    t.params.truncate(n_params);
    let ps = t.params.clone();
    let states = t.states.clone();

    let param_term = |r: &mut Rng| -> Expr {
        let p = Expr::param(&ps[r.random_range(0..ps.len())]);
        match r.random_range(0..5) {
            0 => Expr::binary(BinOp::Mul, p, Expr::real(*pick(r, &[0.5, 2.0, -1.0, 3.0]))),
            1 => Expr::binary(BinOp::Add, p, Expr::real(small(r))),
            2 if ps.len() > 1 && r.random_bool(0.3) => {
                Expr::binary(BinOp::Add, p, Expr::param(&ps[r.random_range(0..ps.len())]))
            }
            _ => p,
        }
    };
    let input_term = |r: &mut Rng| -> Expr {
        match r.random_range(0..6) {
            0 => Expr::input("x0"),
            1 => Expr::input("x1"),
            2 => Expr::var("k0"),
            3 => Expr::unary(UnOp::Norm, Expr::input("v0")),
            4 => Expr::binary(BinOp::Sub, Expr::input("x0"), Expr::input("x1")),
            _ => Expr::binary(BinOp::Mul, Expr::input("x1"), Expr::real(2.0)),
        }
    };
    let atom = |r: &mut Rng| -> Expr {
        let (a, b) = (input_term(r), param_term(r));
        let op = *pick(r, &[BinOp::Lt, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge]);
        match r.random_range(0..8) {
            0 => Expr::binary(op, Expr::unary(UnOp::Abs, Expr::binary(BinOp::Sub, a, b)), Expr::real(1.0)),
            1..=4 => Expr::binary(op, a, b),
            _ => Expr::binary(op, b, a),
        }
    };
    let guard = |r: &mut Rng| -> Expr {
        let mut g = atom(r);
        for _ in 0..r.random_range(0..2) {
            let op = if r.random_bool(0.7) { BinOp::And } else { BinOp::Or };
            g = Expr::binary(op, g, atom(r));
        }
        if r.random_bool(0.2) {
            g = Expr::binary(BinOp::And, g, Expr::input("b0"));
        }
        g
    };

    let mut chain: Option<Stmt> = None;
    for i in (0..n_states - 1).rev() {
        let here = states[i].clone();
        let mut inner = Stmt::Return(here.clone());
        for _ in 0..r.random_range(1..=2) {
            let target = states[r.random_range(0..n_states)].clone();
            inner = Stmt::If(guard(r), Box::new(Stmt::Return(target)), Some(Box::new(inner)));
        }
        let test = Expr::binary(BinOp::Eq, Expr::State, Expr::Const(Value::Label(here)));
        let rest = chain.take().unwrap_or_else(|| Stmt::Return(states[n_states - 1].clone()));
        chain = Some(Stmt::If(test, Box::new(Stmt::Block(vec![inner])), Some(Box::new(rest))));
    }
    t.body = Stmt::Block(vec![chain.unwrap()]);
    check(&t).unwrap_or_else(|e| panic!("generator produced an ill-formed program: {e}"));
    t
}

/// A repair problem.
#[derive(Clone, Debug)]
pub struct Instance {
    pub t: TransitionFn,
    pub p: ParameterMap,
    pub trace: Trace,
    pub corrections: Vec<Correction>,
}

/// A desk-scale repair instance with up to `max_corrections` corrections.
pub fn instance(r: &mut Rng, max_corrections: usize) -> Instance {
    let t = affine_program(r);
    let p: ParameterMap = t
        .params
        .iter()
        .map(|x| (x.clone(), (r.random_range(0..=40) as f64) * 0.25))
        .collect();
    let len = r.random_range(1..=max_corrections.max(1) + 2);
    let mut trace = Trace::for_transition(&t);
    for i in 0..len {
        let mut e = element(r, &t, i);
        // inputs in the same range as the parameters
        for v in e.inputs.values_mut().chain(e.vars.values_mut()) {
            match v {
                Value::Real(x) => *x = (r.random_range(0..=40) as f64) * 0.25,
                Value::Vec2(u) => *u = [r.random_range(0.0..6.0), r.random_range(0.0..6.0)],
                _ => {}
            }
        }
        // mostly non-final states, so corrections have something to change
        e.state = t.states[r.random_range(0..t.states.len().saturating_sub(1).max(1))].clone();
        trace.push_unchecked(e);
    }
    let n = r.random_range(0..=max_corrections);
    let corrections = (0..n)
        .map(|_| {
            let kind = *pick(
                r,
                &[CorrectionKind::Immediate, CorrectionKind::Immediate, CorrectionKind::Negative, CorrectionKind::Nominal],
            );
            Correction {
                kind,
                t: r.random_range(0..len),
                state: t.states[r.random_range(0..t.states.len())].clone(),
                params: None,
            }
        })
        .collect();
    Instance { t, p, trace, corrections }
}

/// Counts of each construct in a program, for generator coverage checks.
pub fn census(t: &TransitionFn) -> BTreeMap<&'static str, usize> {
    fn expr(e: &Expr, c: &mut BTreeMap<&'static str, usize>) {
        e.walk(&mut |e| {
            let k = match e {
                Expr::Unary(op, _) => op.name(),
                Expr::Binary(op, _, _) => op.symbol(),
                Expr::Vec2(..) => "vec2",
                Expr::Local(_) => "local",
                Expr::State => "state",
                _ => return,
            };
            *c.entry(k).or_default() += 1;
        });
    }
    fn stmt(s: &Stmt, c: &mut BTreeMap<&'static str, usize>) {
        match s {
            Stmt::Return(_) => *c.entry("return").or_default() += 1,
            Stmt::Let(_, e) => {
                *c.entry("let").or_default() += 1;
                expr(e, c);
            }
            Stmt::If(e, a, b) => {
                *c.entry("if").or_default() += 1;
                expr(e, c);
                stmt(a, c);
                if let Some(b) = b {
                    stmt(b, c);
                }
            }
            Stmt::Block(ss) => ss.iter().for_each(|s| stmt(s, c)),
        }
    }
    let mut c = BTreeMap::new();
    stmt(&t.body, &mut c);
    c
}
