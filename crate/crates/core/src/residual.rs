//! Partial evaluation and residual construction.
//!
//! [`peval`] substitutes whatever is bound, inlines locals and folds constant
//! subexpressions with the interpreter's own primitives, so folded values are
//! bit-identical to what the interpreter would compute. A [`Residual`] is the
//! result of partially evaluating against one trace element, flattened into
//! guarded paths.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::lang::{
    always_returns, apply_binary, apply_unary, eval_expr, render_stmt, BinOp, Bindings, EvalError,
    Expr, Label, ParameterMap, Scope, Stmt, TransitionFn, UnOp, Value,
};
use crate::trace::TraceElement;

/// Bindings for partial evaluation. Anything missing stays symbolic.
#[derive(Clone, Debug, Default)]
pub struct PartialBindings {
    pub state: Option<Label>,
    pub inputs: Bindings,
    pub vars: Bindings,
    pub params: ParameterMap,
}

type Locals = Vec<(String, Expr)>;

fn lookup<'a>(locals: &'a Locals, n: &str) -> Option<&'a Expr> {
    locals.iter().rev().find(|(k, _)| k == n).map(|(_, e)| e)
}

/// Folds an expression. Locals must already be folded.
fn fold(e: &Expr, b: &PartialBindings, locals: &Locals) -> Expr {
    match e {
        Expr::Const(_) => e.clone(),
        Expr::State => match &b.state {
            Some(s) => Expr::Const(Value::Label(s.clone())),
            None => Expr::State,
        },
        Expr::Input(n) => b.inputs.get(n).map_or_else(|| e.clone(), |v| Expr::Const(v.clone())),
        Expr::Var(n) => b.vars.get(n).map_or_else(|| e.clone(), |v| Expr::Const(v.clone())),
        Expr::Param(n) => b.params.get(n).map_or_else(|| e.clone(), Expr::real),
        Expr::Local(n) => lookup(locals, n).cloned().unwrap_or_else(|| e.clone()),
        Expr::Unary(op, a) => {
            let a = fold(a, b, locals);
            if let Some(v) = a.as_const() {
                if let Ok(r) = apply_unary(*op, v) {
                    return Expr::Const(r);
                }
            }
            Expr::unary(*op, a)
        }
        Expr::Binary(op @ (BinOp::And | BinOp::Or), l, r) => {
            let absorbing = *op == BinOp::Or;
            let l = fold(l, b, locals);
            match l.as_bool() {
                Some(x) if x == absorbing => return Expr::boolean(absorbing),
                Some(_) => return fold(r, b, locals),
                None => {}
            }
            let r = fold(r, b, locals);
            match r.as_bool() {
                Some(x) if x == absorbing => Expr::boolean(absorbing),
                Some(_) => l,
                None => Expr::binary(*op, l, r),
            }
        }
        Expr::Binary(op, l, r) => {
            let l = fold(l, b, locals);
            let r = fold(r, b, locals);
            if let (Some(x), Some(y)) = (l.as_const(), r.as_const()) {
                if let Ok(v) = apply_binary(*op, x, y) {
                    return Expr::Const(v);
                }
            }
            Expr::binary(*op, l, r)
        }
        Expr::Vec2(x, y) => {
            let x = fold(x, b, locals);
            let y = fold(y, b, locals);
            match (x.as_const(), y.as_const()) {
                (Some(Value::Real(a)), Some(Value::Real(c))) => Expr::Const(Value::Vec2([*a, *c])),
                _ => Expr::Vec2(Box::new(x), Box::new(y)),
            }
        }
    }
}

/// Rewrites a statement sequence. Lets are inlined and dropped; statements
/// after one that always returns are unreachable and dropped.
fn fold_seq(ss: &[&Stmt], b: &PartialBindings, locals: &mut Locals, out: &mut Vec<Stmt>) -> bool {
    for s in ss {
        if fold_stmt(s, b, locals, out) {
            return true;
        }
    }
    false
}

fn fold_stmt(s: &Stmt, b: &PartialBindings, locals: &mut Locals, out: &mut Vec<Stmt>) -> bool {
    match s {
        Stmt::Return(l) => {
            out.push(Stmt::Return(l.clone()));
            true
        }
        Stmt::Let(n, e) => {
            let e = fold(e, b, locals);
            locals.push((n.clone(), e));
            false
        }
        Stmt::Block(ss) => {
            let mark = locals.len();
            let refs: Vec<&Stmt> = ss.iter().collect();
            let r = fold_seq(&refs, b, locals, out);
            locals.truncate(mark);
            r
        }
        Stmt::If(c, then, els) => {
            let c = fold(c, b, locals);
            let mark = locals.len();
            let r = match c.as_bool() {
                Some(true) => fold_stmt(then, b, locals, out),
                Some(false) => match els {
                    Some(e) => fold_stmt(e, b, locals, out),
                    None => false,
                },
                None => {
                    let mut t_out = Vec::new();
                    fold_stmt(then, b, locals, &mut t_out);
                    locals.truncate(mark);
                    let mut e_out = Vec::new();
                    if let Some(e) = els {
                        fold_stmt(e, b, locals, &mut e_out);
                    }
                    if t_out.is_empty() && e_out.is_empty() {
                        false
                    } else {
                        let st = Stmt::If(
                            c,
                            Box::new(Stmt::Block(t_out)),
                            (!e_out.is_empty()).then(|| Box::new(Stmt::Block(e_out))),
                        );
                        let r = always_returns(&st);
                        out.push(st);
                        r
                    }
                }
            };
            locals.truncate(mark);
            r
        }
    }
}

/// Partially evaluates `t` against `b`.
///
/// Bound inputs, variables and parameters are substituted and removed from
/// the declarations, locals are inlined, constants folded, and conditionals
/// with concrete guards collapsed.
pub fn peval(t: &TransitionFn, b: &PartialBindings) -> TransitionFn {
    let mut out = Vec::new();
    fold_stmt(&t.body, b, &mut Vec::new(), &mut out);
    let body = match out.len() {
        1 => out.pop().unwrap(),
        _ => Stmt::Block(out),
    };
    TransitionFn {
        name: t.name.clone(),
        states: t.states.clone(),
        inputs: t
            .inputs
            .iter()
            .filter(|(n, _)| !b.inputs.contains_key(n))
            .cloned()
            .collect(),
        vars: t
            .vars
            .iter()
            .filter(|(n, _)| !b.vars.contains_key(n))
            .cloned()
            .collect(),
        params: t
            .params
            .iter()
            .filter(|p| b.params.get(p).is_none())
            .cloned()
            .collect(),
        body,
    }
}

/// A guarded path through a residual: `guards[0] && guards[1] && ...` implies
/// the path returns `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPath {
    pub guards: Vec<Expr>,
    pub target: Label,
}

impl ResidualPath {
    /// The conjunction of the guards (`true` when unconditional).
    pub fn condition(&self) -> Expr {
        let mut it = self.guards.iter().cloned();
        match it.next() {
            None => Expr::boolean(true),
            Some(first) => it.fold(first, Expr::and),
        }
    }
}

/// Enumerates guarded paths of a folded body.
pub fn paths_of(body: &Stmt) -> Vec<ResidualPath> {
    let mut out = Vec::new();
    walk(&[body], Vec::new(), &mut out);
    out
}

fn walk(ss: &[&Stmt], guards: Vec<Expr>, out: &mut Vec<ResidualPath>) {
    let Some((first, rest)) = ss.split_first() else {
        return;
    };
    match first {
        Stmt::Return(l) => out.push(ResidualPath {
            guards,
            target: l.clone(),
        }),
        Stmt::Let(..) => walk(rest, guards, out),
        Stmt::Block(inner) => {
            let seq: Vec<&Stmt> = inner.iter().chain(rest.iter().copied()).collect();
            walk(&seq, guards, out);
        }
        Stmt::If(c, a, b) => {
            let mut then_seq: Vec<&Stmt> = vec![a];
            then_seq.extend_from_slice(rest);
            let mut g = guards.clone();
            g.push(c.clone());
            walk(&then_seq, g, out);

            let mut else_seq: Vec<&Stmt> = b.iter().map(|b| &**b).collect();
            else_seq.extend_from_slice(rest);
            let mut g = guards;
            g.push(Expr::not(c.clone()));
            walk(&else_seq, g, out);
        }
    }
}

/// Repairable / unrepairable split of the declared parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamClass {
    pub repairable: BTreeSet<String>,
    pub unrepairable: BTreeSet<String>,
}

fn live_params(e: &Expr, dead: &BTreeSet<String>) -> BTreeSet<String> {
    let mut ps = e.params();
    ps.retain(|p| !dead.contains(p));
    ps
}

/// Parameters under a non-linear builtin (`functions`) or in a product of
/// two parameter-dependent factors / a parameter-dependent divisor
/// (`!functions`).
fn scan_nonlinear(e: &Expr, dead: &BTreeSet<String>, functions: bool, out: &mut BTreeSet<String>) {
    match e {
        Expr::Unary(op, a) => {
            // |affine| is piecewise affine and handled by the linearizer.
            if functions && !matches!(op, UnOp::Neg | UnOp::Not | UnOp::Abs) {
                out.extend(live_params(a, dead));
            }
            scan_nonlinear(a, dead, functions, out);
        }
        Expr::Binary(op, l, r) => {
            if !functions {
                let (pl, pr) = (live_params(l, dead), live_params(r, dead));
                let poisoned = match op {
                    BinOp::Mul | BinOp::Dot => !pl.is_empty() && !pr.is_empty(),
                    BinOp::Div => !pr.is_empty(),
                    _ => false,
                };
                if poisoned {
                    out.extend(pl);
                    out.extend(pr);
                }
            }
            scan_nonlinear(l, dead, functions, out);
            scan_nonlinear(r, dead, functions, out);
        }
        Expr::Vec2(a, b) => {
            scan_nonlinear(a, dead, functions, out);
            scan_nonlinear(b, dead, functions, out);
        }
        _ => {}
    }
}

fn stmt_exprs<'a>(s: &'a Stmt, out: &mut Vec<&'a Expr>) {
    match s {
        Stmt::Return(_) => {}
        Stmt::Let(_, e) => out.push(e),
        Stmt::If(c, a, b) => {
            out.push(c);
            stmt_exprs(a, out);
            if let Some(b) = b {
                stmt_exprs(b, out);
            }
        }
        Stmt::Block(ss) => ss.iter().for_each(|s| stmt_exprs(s, out)),
    }
}

/// Splits parameters into repairable and unrepairable ones.
///
/// With a linear backend a parameter is unrepairable if any occurrence (after
/// inlining locals and folding constants) is non-affine: inside a
/// trigonometric/sqrt/norm/angle_mod call, multiplied by another expression
/// that depends on a repairable parameter, or in a divisor. Unrepairable
/// parameters get substituted by their values, which can make other
/// occurrences affine, so this runs to a fixpoint from the empty set upward.
pub fn classify_params(t: &TransitionFn, backend_nonlinear: bool) -> ParamClass {
    let all: BTreeSet<String> = t.params.iter().cloned().collect();
    if backend_nonlinear {
        return ParamClass {
            repairable: all,
            unrepairable: BTreeSet::new(),
        };
    }
    let folded = peval(t, &PartialBindings::default());
    let mut exprs = Vec::new();
    stmt_exprs(&folded.body, &mut exprs);
    let mut dead = BTreeSet::new();
    // Builtin arguments first: once those parameters are constants, some
    // products stop being products of two symbolic factors.
    loop {
        let mut found = BTreeSet::new();
        for functions in [true, false] {
            for e in &exprs {
                scan_nonlinear(e, &dead, functions, &mut found);
            }
            if !found.is_empty() {
                break;
            }
        }
        if found.is_empty() {
            break;
        }
        dead.extend(found);
    }
    ParamClass {
        repairable: all.difference(&dead).cloned().collect(),
        unrepairable: dead,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ResidualError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` is unrepairable with the selected backend")]
    Unrepairable(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A transition function specialised to one trace element.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    /// Index of the trace element this residual was built from.
    pub t: usize,
    /// Recorded state of that element.
    pub state: Label,
    /// Parameters left symbolic.
    pub symbols: Vec<String>,
    pub paths: Vec<ResidualPath>,
    /// The folded body, for display.
    pub body: Stmt,
}

impl Residual {
    /// Renders the residual in DSL syntax.
    pub fn render(&self) -> String {
        render_stmt(&self.body)
    }

    /// Paths that return `target`.
    pub fn paths_to<'a>(&'a self, target: &'a Label) -> impl Iterator<Item = &'a ResidualPath> + 'a {
        self.paths.iter().filter(move |p| &p.target == target)
    }

    /// The label the residual returns when the symbols take the values in
    /// `params` (other entries are ignored).
    pub fn select(&self, params: &ParameterMap) -> Result<Label, EvalError> {
        let empty = Bindings::new();
        let state = self.state.clone();
        let scope = Scope {
            state: &state,
            inputs: &empty,
            vars: &empty,
            params,
        };
        'paths: for p in &self.paths {
            for g in &p.guards {
                match eval_expr(g, &scope)? {
                    Value::Bool(true) => {}
                    Value::Bool(false) => continue 'paths,
                    v => return Err(EvalError::Shape(format!("guard of shape {}", v.shape()))),
                }
            }
            return Ok(p.target.clone());
        }
        Err(EvalError::NoReturn)
    }
}

/// Resolves a designated-parameter set against the classification. `None`
/// means every repairable parameter.
pub fn resolve_designated(
    t: &TransitionFn,
    class: &ParamClass,
    designated: Option<&[String]>,
) -> Result<Vec<String>, ResidualError> {
    match designated {
        None => Ok(t
            .params
            .iter()
            .filter(|p| class.repairable.contains(*p))
            .cloned()
            .collect()),
        Some(u) => {
            for p in u {
                if !t.has_param(p) {
                    return Err(ResidualError::UnknownParam(p.clone()));
                }
                if !class.repairable.contains(p) {
                    return Err(ResidualError::Unrepairable(p.clone()));
                }
            }
            // declaration order, deduplicated
            Ok(t.params.iter().filter(|p| u.contains(p)).cloned().collect())
        }
    }
}

/// Builds the residual of `t` at trace element `elem`: everything except the
/// designated repairable parameters is substituted and folded away.
pub fn make_residual(
    t: &TransitionFn,
    elem: &TraceElement,
    p: &ParameterMap,
    designated: Option<&[String]>,
    backend_nonlinear: bool,
) -> Result<Residual, ResidualError> {
    let class = classify_params(t, backend_nonlinear);
    let symbols = resolve_designated(t, &class, designated)?;
    make_residual_for(t, elem, p, &symbols)
}

/// Like [`make_residual`] with an already resolved symbol list.
pub fn make_residual_for(
    t: &TransitionFn,
    elem: &TraceElement,
    p: &ParameterMap,
    symbols: &[String],
) -> Result<Residual, ResidualError> {
    let mut params = ParameterMap::new();
    for name in &t.params {
        if symbols.contains(name) {
            continue;
        }
        let v = p
            .get(name)
            .ok_or_else(|| EvalError::MissingBinding(format!("param.{name}")))?;
        params.set(name, v);
    }
    let b = PartialBindings {
        state: Some(elem.state.clone()),
        inputs: elem.inputs.clone(),
        vars: elem.vars.clone(),
        params,
    };
    let folded = peval(t, &b);
    Ok(Residual {
        t: elem.t,
        state: elem.state.clone(),
        symbols: symbols.to_vec(),
        paths: paths_of(&folded.body),
        body: folded.body,
    })
}
