use std::f64::consts::{PI, TAU};

use thiserror::Error;

use super::{BinOp, Bindings, Expr, Label, ParameterMap, Stmt, TransitionFn, UnOp, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("missing binding for `{0}`")]
    MissingBinding(String),
    #[error("unknown binding `{0}`")]
    UnknownBinding(String),
    #[error("runtime shape error: {0}")]
    Shape(String),
    #[error("non-finite argument to angle_mod")]
    NonFinite,
    #[error("transition function fell off the end without returning")]
    NoReturn,
    #[error("unbound local `{0}`")]
    UnboundLocal(String),
}

/// Wraps an angle into `(-π, π]`.
///
/// Values already in range are returned unchanged, which makes the function
/// exactly idempotent.
pub fn angle_mod(a: f64) -> Result<f64, EvalError> {
    if !a.is_finite() {
        return Err(EvalError::NonFinite);
    }
    if a > -PI && a <= PI {
        return Ok(a);
    }
    let r = a.rem_euclid(TAU);
    Ok(if r > PI { r - TAU } else { r })
}

pub(crate) fn apply_unary(op: UnOp, v: &Value) -> Result<Value, EvalError> {
    use Value::*;
    Ok(match (op, v) {
        (UnOp::Neg, Real(x)) => Real(-x),
        (UnOp::Neg, Vec2([x, y])) => Vec2([-x, -y]),
        (UnOp::Not, Bool(b)) => Bool(!b),
        (UnOp::Sin, Real(x)) => Real(x.sin()),
        (UnOp::Cos, Real(x)) => Real(x.cos()),
        (UnOp::Abs, Real(x)) => Real(x.abs()),
        (UnOp::Sqrt, Real(x)) => Real(x.sqrt()),
        (UnOp::Norm, Vec2([x, y])) => Real((x * x + y * y).sqrt()),
        (UnOp::AngleMod, Real(x)) => Real(angle_mod(*x)?),
        (op, v) => {
            return Err(EvalError::Shape(format!(
                "`{}` applied to {}",
                op.name(),
                v.shape()
            )))
        }
    })
}

pub(crate) fn apply_binary(op: BinOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
    use Value::*;
    Ok(match (op, a, b) {
        (BinOp::Add, Real(x), Real(y)) => Real(x + y),
        (BinOp::Sub, Real(x), Real(y)) => Real(x - y),
        (BinOp::Mul, Real(x), Real(y)) => Real(x * y),
        (BinOp::Div, Real(x), Real(y)) => Real(x / y),
        (BinOp::Add, Vec2(u), Vec2(v)) => Vec2([u[0] + v[0], u[1] + v[1]]),
        (BinOp::Sub, Vec2(u), Vec2(v)) => Vec2([u[0] - v[0], u[1] - v[1]]),
        (BinOp::Mul, Real(k), Vec2(v)) => Vec2([k * v[0], k * v[1]]),
        (BinOp::Mul, Vec2(v), Real(k)) => Vec2([v[0] * k, v[1] * k]),
        (BinOp::Div, Vec2(v), Real(k)) => Vec2([v[0] / k, v[1] / k]),
        (BinOp::Dot, Vec2(u), Vec2(v)) => Real(u[0] * v[0] + u[1] * v[1]),
        (BinOp::Lt, Real(x), Real(y)) => Bool(x < y),
        (BinOp::Le, Real(x), Real(y)) => Bool(x <= y),
        (BinOp::Gt, Real(x), Real(y)) => Bool(x > y),
        (BinOp::Ge, Real(x), Real(y)) => Bool(x >= y),
        (BinOp::Eq, Real(x), Real(y)) => Bool(x == y),
        (BinOp::Ne, Real(x), Real(y)) => Bool(x != y),
        (BinOp::Eq, Bool(x), Bool(y)) => Bool(x == y),
        (BinOp::Ne, Bool(x), Bool(y)) => Bool(x != y),
        (BinOp::Eq, Label(x), Label(y)) => Bool(x == y),
        (BinOp::Ne, Label(x), Label(y)) => Bool(x != y),
        (BinOp::And, Bool(x), Bool(y)) => Bool(*x && *y),
        (BinOp::Or, Bool(x), Bool(y)) => Bool(*x || *y),
        (op, a, b) => {
            return Err(EvalError::Shape(format!(
                "`{}` applied to {} and {}",
                op.symbol(),
                a.shape(),
                b.shape()
            )))
        }
    })
}

/// Everything an expression may reference during evaluation.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub state: &'a Label,
    pub inputs: &'a Bindings,
    pub vars: &'a Bindings,
    pub params: &'a ParameterMap,
}

struct Locals(Vec<(String, Value)>);

impl Locals {
    fn get(&self, n: &str) -> Option<&Value> {
        self.0.iter().rev().find(|(k, _)| k == n).map(|(_, v)| v)
    }
}

/// Evaluates a closed expression (no locals).
pub fn eval_expr(e: &Expr, scope: &Scope<'_>) -> Result<Value, EvalError> {
    eval(e, scope, &Locals(Vec::new()))
}

fn eval(e: &Expr, s: &Scope<'_>, locals: &Locals) -> Result<Value, EvalError> {
    match e {
        Expr::Const(v) => Ok(v.clone()),
        Expr::State => Ok(Value::Label(s.state.clone())),
        Expr::Input(n) => s
            .inputs
            .get(n)
            .cloned()
            .ok_or_else(|| EvalError::MissingBinding(format!("in.{n}"))),
        Expr::Var(n) => s
            .vars
            .get(n)
            .cloned()
            .ok_or_else(|| EvalError::MissingBinding(format!("var.{n}"))),
        Expr::Param(n) => s
            .params
            .get(n)
            .map(Value::Real)
            .ok_or_else(|| EvalError::MissingBinding(format!("param.{n}"))),
        Expr::Local(n) => locals
            .get(n)
            .cloned()
            .ok_or_else(|| EvalError::UnboundLocal(n.clone())),
        Expr::Unary(op, a) => apply_unary(*op, &eval(a, s, locals)?),
        Expr::Binary(BinOp::And, a, b) => match eval(a, s, locals)? {
            Value::Bool(false) => Ok(Value::Bool(false)),
            l => apply_binary(BinOp::And, &l, &eval(b, s, locals)?),
        },
        Expr::Binary(BinOp::Or, a, b) => match eval(a, s, locals)? {
            Value::Bool(true) => Ok(Value::Bool(true)),
            l => apply_binary(BinOp::Or, &l, &eval(b, s, locals)?),
        },
        Expr::Binary(op, a, b) => apply_binary(*op, &eval(a, s, locals)?, &eval(b, s, locals)?),
        Expr::Vec2(a, b) => match (eval(a, s, locals)?, eval(b, s, locals)?) {
            (Value::Real(x), Value::Real(y)) => Ok(Value::Vec2([x, y])),
            _ => Err(EvalError::Shape("vector components must be real".into())),
        },
    }
}

fn exec(st: &Stmt, s: &Scope<'_>, locals: &mut Locals) -> Result<Option<Label>, EvalError> {
    match st {
        Stmt::Return(l) => Ok(Some(l.clone())),
        Stmt::Let(n, e) => {
            let v = eval(e, s, locals)?;
            locals.0.push((n.clone(), v));
            Ok(None)
        }
        Stmt::If(c, a, b) => {
            let mark = locals.0.len();
            let r = match eval(c, s, locals)? {
                Value::Bool(true) => exec(a, s, locals),
                Value::Bool(false) => match b {
                    Some(b) => exec(b, s, locals),
                    None => Ok(None),
                },
                v => Err(EvalError::Shape(format!("condition of shape {}", v.shape()))),
            };
            locals.0.truncate(mark);
            r
        }
        Stmt::Block(ss) => {
            let mark = locals.0.len();
            for st in ss {
                if let Some(l) = exec(st, s, locals)? {
                    locals.0.truncate(mark);
                    return Ok(Some(l));
                }
            }
            locals.0.truncate(mark);
            Ok(None)
        }
    }
}

/// Runs the transition function for one step and returns the next state.
pub fn eval_transition(
    t: &TransitionFn,
    state: &Label,
    inputs: &Bindings,
    vars: &Bindings,
    params: &ParameterMap,
) -> Result<Label, EvalError> {
    for (n, _) in &t.inputs {
        if !inputs.contains_key(n) {
            return Err(EvalError::MissingBinding(format!("in.{n}")));
        }
    }
    for (n, _) in &t.vars {
        if !vars.contains_key(n) {
            return Err(EvalError::MissingBinding(format!("var.{n}")));
        }
    }
    for p in &t.params {
        if params.get(p).is_none() {
            return Err(EvalError::MissingBinding(format!("param.{p}")));
        }
    }
    let scope = Scope {
        state,
        inputs,
        vars,
        params,
    };
    exec(&t.body, &scope, &mut Locals(Vec::new()))?.ok_or(EvalError::NoReturn)
}
