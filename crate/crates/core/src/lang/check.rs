use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{BinOp, Expr, Shape, Stmt, TransitionFn, UnOp, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("undeclared state \"{0}\"")]
    UndeclaredState(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("not every path through the transition function ends in a return")]
    MissingReturn,
    #[error("duplicate declaration `{0}`")]
    Duplicate(String),
    #[error("no states declared")]
    NoStates,
}

pub(crate) fn unary_shape(op: UnOp, s: Shape) -> Result<Shape, String> {
    use Shape::*;
    match (op, s) {
        (UnOp::Neg, Real) => Ok(Real),
        (UnOp::Neg, Vec2) => Ok(Vec2),
        (UnOp::Not, Bool) => Ok(Bool),
        (UnOp::Norm, Vec2) => Ok(Real),
        (UnOp::Sin | UnOp::Cos | UnOp::Abs | UnOp::Sqrt | UnOp::AngleMod, Real) => Ok(Real),
        _ => Err(format!("`{}` cannot be applied to {s}", op.name())),
    }
}

pub(crate) fn binary_shape(op: BinOp, l: Shape, r: Shape) -> Result<Shape, String> {
    use Shape::*;
    let ok = match (op, l, r) {
        (BinOp::Add | BinOp::Sub, Real, Real) => Some(Real),
        (BinOp::Add | BinOp::Sub, Vec2, Vec2) => Some(Vec2),
        (BinOp::Mul, Real, Real) => Some(Real),
        (BinOp::Mul, Real, Vec2) | (BinOp::Mul, Vec2, Real) => Some(Vec2),
        (BinOp::Div, Real, Real) => Some(Real),
        (BinOp::Div, Vec2, Real) => Some(Vec2),
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Real, Real) => Some(Bool),
        (BinOp::Eq | BinOp::Ne, a, b) if a == b && a != Vec2 => Some(Bool),
        (BinOp::And | BinOp::Or, Bool, Bool) => Some(Bool),
        (BinOp::Dot, Vec2, Vec2) => Some(Real),
        _ => None,
    };
    ok.ok_or_else(|| format!("`{}` cannot combine {l} and {r}", op.symbol()))
}

/// Definite-return analysis.
pub(crate) fn always_returns(s: &Stmt) -> bool {
    match s {
        Stmt::Return(_) => true,
        Stmt::Let(..) => false,
        Stmt::If(_, a, Some(b)) => always_returns(a) && always_returns(b),
        Stmt::If(_, _, None) => false,
        Stmt::Block(ss) => ss.iter().any(always_returns),
    }
}

/// Re-checks a programmatically built transition function with the same
/// rules the parser enforces.
pub fn check(t: &TransitionFn) -> Result<(), CheckError> {
    if t.states.is_empty() {
        return Err(CheckError::NoStates);
    }
    let mut seen = BTreeSet::new();
    for s in &t.states {
        if !seen.insert(format!("state:{s}")) {
            return Err(CheckError::Duplicate(s.to_string()));
        }
    }
    for (prefix, decls) in [("in", &t.inputs), ("var", &t.vars)] {
        for (n, _) in decls {
            if !seen.insert(format!("{prefix}.{n}")) {
                return Err(CheckError::Duplicate(format!("{prefix}.{n}")));
            }
        }
    }
    let mut pseen = BTreeSet::new();
    for p in &t.params {
        if !pseen.insert(p) {
            return Err(CheckError::Duplicate(p.clone()));
        }
    }
    let mut locals = Vec::new();
    check_stmt(t, &t.body, &mut locals)?;
    if !always_returns(&t.body) {
        return Err(CheckError::MissingReturn);
    }
    Ok(())
}

fn check_stmt(
    t: &TransitionFn,
    s: &Stmt,
    scope: &mut Vec<BTreeMap<String, Shape>>,
) -> Result<(), CheckError> {
    match s {
        Stmt::Return(l) => {
            if !t.has_state(l.as_str()) {
                return Err(CheckError::UndeclaredState(l.to_string()));
            }
        }
        Stmt::Let(name, e) => {
            let sh = shape_of(t, e, scope)?;
            if scope.is_empty() {
                scope.push(BTreeMap::new());
            }
            scope.last_mut().unwrap().insert(name.clone(), sh);
        }
        Stmt::If(c, a, b) => {
            let sh = shape_of(t, c, scope)?;
            if sh != Shape::Bool {
                return Err(CheckError::Shape(format!("condition has shape {sh}")));
            }
            scope.push(BTreeMap::new());
            check_stmt(t, a, scope)?;
            scope.pop();
            if let Some(b) = b {
                scope.push(BTreeMap::new());
                check_stmt(t, b, scope)?;
                scope.pop();
            }
        }
        Stmt::Block(ss) => {
            scope.push(BTreeMap::new());
            for s in ss {
                check_stmt(t, s, scope)?;
            }
            scope.pop();
        }
    }
    Ok(())
}

fn shape_of(
    t: &TransitionFn,
    e: &Expr,
    scope: &[BTreeMap<String, Shape>],
) -> Result<Shape, CheckError> {
    Ok(match e {
        Expr::Const(Value::Label(l)) => {
            if !t.has_state(l.as_str()) {
                return Err(CheckError::UndeclaredState(l.to_string()));
            }
            Shape::Label
        }
        Expr::Const(v) => v.shape(),
        Expr::State => Shape::Label,
        Expr::Input(n) => t
            .input_shape(n)
            .ok_or_else(|| CheckError::Undeclared(format!("in.{n}")))?,
        Expr::Var(n) => t
            .var_shape(n)
            .ok_or_else(|| CheckError::Undeclared(format!("var.{n}")))?,
        Expr::Param(n) => {
            if !t.has_param(n) {
                return Err(CheckError::Undeclared(format!("param.{n}")));
            }
            Shape::Real
        }
        Expr::Local(n) => *scope
            .iter()
            .rev()
            .find_map(|m| m.get(n))
            .ok_or_else(|| CheckError::Undeclared(n.clone()))?,
        Expr::Unary(op, a) => {
            unary_shape(*op, shape_of(t, a, scope)?).map_err(CheckError::Shape)?
        }
        Expr::Binary(op, a, b) => {
            let (sa, sb) = (shape_of(t, a, scope)?, shape_of(t, b, scope)?);
            binary_shape(*op, sa, sb).map_err(CheckError::Shape)?
        }
        Expr::Vec2(a, b) => {
            for c in [a, b] {
                let sh = shape_of(t, c, scope)?;
                if sh != Shape::Real {
                    return Err(CheckError::Shape(format!("vector component has shape {sh}")));
                }
            }
            Shape::Vec2
        }
    })
}
