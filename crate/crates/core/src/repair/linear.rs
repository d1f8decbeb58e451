//! Translation of residual path conditions into linear constraints over the
//! adjustment variables δ.
//!
//! A symbolic parameter `x` becomes `p(x) + δ_x`. `abs` of an affine term is
//! split into two guarded pieces; anything else non-affine is rejected (the
//! parameter classification should have kept it out).

use thiserror::Error;

use crate::lang::{render_expr, BinOp, Expr, ParameterMap, UnOp, Value};

#[derive(Debug, Error, PartialEq)]
pub enum LinearError {
    #[error("non-linear term in repair formula: {0}")]
    NonLinear(String),
    #[error("unexpected reference in residual: {0}")]
    Leaked(String),
    #[error("disjunctive normal form exceeds {0} disjuncts")]
    TooLarge(usize),
}

/// `coeffs · δ + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<f64>,
    pub c: f64,
}

impl Affine {
    pub fn constant(n: usize, c: f64) -> Self {
        Affine {
            coeffs: vec![0.0; n],
            c,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    fn zip(&self, o: &Affine, f: impl Fn(f64, f64) -> f64) -> Affine {
        Affine {
            coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| f(*a, *b)).collect(),
            c: f(self.c, o.c),
        }
    }

    fn scale(&self, k: f64) -> Affine {
        Affine {
            coeffs: self.coeffs.iter().map(|a| a * k).collect(),
            c: self.c * k,
        }
    }

    pub fn eval(&self, delta: &[f64]) -> f64 {
        self.coeffs.iter().zip(delta).map(|(a, d)| a * d).sum::<f64>() + self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rel {
    /// `a < 0`
    Lt,
    /// `a <= 0`
    Le,
    /// `a = 0`
    Eq,
}

/// A linear atom `a ⋈ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinAtom {
    pub a: Affine,
    pub rel: Rel,
}

/// Margins applied when turning atoms into closed constraints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margins {
    /// Strict atoms `a < 0` become `a + epsilon <= 0`.
    pub epsilon: f64,
    /// Non-strict atoms `a <= 0` become `a + eta <= 0`, so that a solution on
    /// the boundary survives floating-point re-evaluation.
    pub eta: f64,
}

impl LinAtom {
    /// The closed form `coeffs · δ (<= | =) rhs`.
    pub fn closed(&self, m: Margins) -> (&[f64], bool, f64) {
        let margin = match self.rel {
            Rel::Lt => m.epsilon,
            Rel::Le => m.eta,
            Rel::Eq => 0.0,
        };
        (&self.a.coeffs, self.rel == Rel::Eq, -self.a.c - margin)
    }

    /// Whether `delta` satisfies the closed form up to `tol`.
    pub fn holds(&self, delta: &[f64], m: Margins, tol: f64) -> bool {
        let (coeffs, eq, rhs) = self.closed(m);
        let lhs: f64 = coeffs.iter().zip(delta).map(|(a, d)| a * d).sum();
        let slack = tol * (1.0 + rhs.abs());
        if eq {
            (lhs - rhs).abs() <= slack
        } else {
            lhs <= rhs + slack
        }
    }

    fn const_truth(&self) -> Option<bool> {
        if !self.a.is_constant() {
            return None;
        }
        let c = self.a.c;
        Some(match self.rel {
            Rel::Lt => c < 0.0,
            Rel::Le => c <= 0.0,
            Rel::Eq => c == 0.0,
        })
    }
}

/// A constraint in negation normal form.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    True,
    False,
    Atom(LinAtom),
    And(Vec<Constraint>),
    Or(Vec<Constraint>),
}

impl Constraint {
    fn atom(a: LinAtom) -> Constraint {
        match a.const_truth() {
            Some(true) => Constraint::True,
            Some(false) => Constraint::False,
            None => Constraint::Atom(a),
        }
    }

    pub fn and(cs: Vec<Constraint>) -> Constraint {
        let mut out = Vec::new();
        for c in cs {
            match c {
                Constraint::True => {}
                Constraint::False => return Constraint::False,
                Constraint::And(inner) => out.extend(inner),
                c => out.push(c),
            }
        }
        match out.len() {
            0 => Constraint::True,
            1 => out.pop().unwrap(),
            _ => Constraint::And(out),
        }
    }

    pub fn or(cs: Vec<Constraint>) -> Constraint {
        let mut out = Vec::new();
        for c in cs {
            match c {
                Constraint::False => {}
                Constraint::True => return Constraint::True,
                Constraint::Or(inner) => out.extend(inner),
                c => out.push(c),
            }
        }
        match out.len() {
            0 => Constraint::False,
            1 => out.pop().unwrap(),
            _ => Constraint::Or(out),
        }
    }

    /// Evaluates the closed form at `delta`.
    pub fn holds(&self, delta: &[f64], m: Margins, tol: f64) -> bool {
        match self {
            Constraint::True => true,
            Constraint::False => false,
            Constraint::Atom(a) => a.holds(delta, m, tol),
            Constraint::And(cs) => cs.iter().all(|c| c.holds(delta, m, tol)),
            Constraint::Or(cs) => cs.iter().any(|c| c.holds(delta, m, tol)),
        }
    }

    /// Disjunctive normal form: a list of conjunctions. `[]` is false and
    /// `[[]]` is true.
    pub fn dnf(&self, limit: usize) -> Result<Vec<Vec<LinAtom>>, LinearError> {
        Ok(match self {
            Constraint::True => vec![vec![]],
            Constraint::False => vec![],
            Constraint::Atom(a) => vec![vec![a.clone()]],
            Constraint::Or(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    out.extend(c.dnf(limit)?);
                    if out.len() > limit {
                        return Err(LinearError::TooLarge(limit));
                    }
                }
                out
            }
            Constraint::And(cs) => {
                let mut acc: Vec<Vec<LinAtom>> = vec![vec![]];
                for c in cs {
                    let d = c.dnf(limit)?;
                    if acc.len() * d.len() > limit {
                        return Err(LinearError::TooLarge(limit));
                    }
                    let mut next = Vec::with_capacity(acc.len() * d.len());
                    for a in &acc {
                        for b in &d {
                            let mut conj = a.clone();
                            for atom in b {
                                if !conj.contains(atom) {
                                    conj.push(atom.clone());
                                }
                            }
                            next.push(conj);
                        }
                    }
                    acc = next;
                }
                acc
            }
        })
    }
}

/// Maps residual expressions to constraints over `symbols`, whose current
/// values come from `base`.
pub struct Linearizer<'a> {
    pub symbols: &'a [String],
    pub base: &'a ParameterMap,
}

/// A value that is affine on the region described by its guards.
#[derive(Clone, Debug)]
struct Piece<T> {
    guards: Vec<LinAtom>,
    val: T,
}

type Real = Vec<Piece<Affine>>;
type Vector = Vec<Piece<[Affine; 2]>>;

fn cross<A: Clone, B: Clone, C>(x: &[Piece<A>], y: &[Piece<B>], f: impl Fn(&A, &B) -> Result<C, LinearError>) -> Result<Vec<Piece<C>>, LinearError> {
    let mut out = Vec::new();
    for a in x {
        for b in y {
            let mut guards = a.guards.clone();
            guards.extend(b.guards.iter().cloned());
            out.push(Piece {
                guards,
                val: f(&a.val, &b.val)?,
            });
        }
    }
    Ok(out)
}

fn negate(rel: Rel, d: &Affine) -> Vec<Vec<LinAtom>> {
    // ¬(d < 0) = -d <= 0 ; ¬(d <= 0) = -d < 0 ; ¬(d = 0) = d < 0 ∨ -d < 0
    let neg = d.scale(-1.0);
    match rel {
        Rel::Lt => vec![vec![LinAtom { a: neg, rel: Rel::Le }]],
        Rel::Le => vec![vec![LinAtom { a: neg, rel: Rel::Lt }]],
        Rel::Eq => vec![
            vec![LinAtom { a: d.clone(), rel: Rel::Lt }],
            vec![LinAtom { a: neg, rel: Rel::Lt }],
        ],
    }
}

impl<'a> Linearizer<'a> {
    fn n(&self) -> usize {
        self.symbols.len()
    }

    fn real(&self, e: &Expr) -> Result<Real, LinearError> {
        let n = self.n();
        let konst = |c| vec![Piece { guards: vec![], val: Affine::constant(n, c) }];
        match e {
            Expr::Const(Value::Real(c)) => Ok(konst(*c)),
            Expr::Param(x) => {
                let Some(j) = self.symbols.iter().position(|s| s == x) else {
                    return match self.base.get(x) {
                        Some(v) => Ok(konst(v)),
                        None => Err(LinearError::Leaked(format!("param.{x}"))),
                    };
                };
                let mut a = Affine::constant(n, self.base.get(x).ok_or_else(|| LinearError::Leaked(format!("param.{x}")))?);
                a.coeffs[j] = 1.0;
                Ok(vec![Piece { guards: vec![], val: a }])
            }
            Expr::Unary(UnOp::Neg, a) => Ok(self
                .real(a)?
                .into_iter()
                .map(|p| Piece { guards: p.guards, val: p.val.scale(-1.0) })
                .collect()),
            Expr::Unary(UnOp::Abs, a) => {
                let mut out = Vec::new();
                for p in self.real(a)? {
                    if p.val.is_constant() {
                        out.push(Piece { guards: p.guards, val: Affine::constant(n, p.val.c.abs()) });
                        continue;
                    }
                    // v >= 0 -> v ; v <= 0 -> -v
                    let mut g = p.guards.clone();
                    g.push(LinAtom { a: p.val.scale(-1.0), rel: Rel::Le });
                    out.push(Piece { guards: g, val: p.val.clone() });
                    let mut g = p.guards;
                    g.push(LinAtom { a: p.val.clone(), rel: Rel::Le });
                    out.push(Piece { guards: g, val: p.val.scale(-1.0) });
                }
                Ok(out)
            }
            Expr::Binary(op @ (BinOp::Add | BinOp::Sub), l, r) => {
                let sign = if *op == BinOp::Add { 1.0 } else { -1.0 };
                cross(&self.real(l)?, &self.real(r)?, |a, b| Ok(a.zip(b, |x, y| x + sign * y)))
            }
            Expr::Binary(BinOp::Mul, l, r) => cross(&self.real(l)?, &self.real(r)?, |a, b| {
                if a.is_constant() {
                    Ok(b.scale(a.c))
                } else if b.is_constant() {
                    Ok(a.scale(b.c))
                } else {
                    Err(LinearError::NonLinear(render_expr(e)))
                }
            }),
            Expr::Binary(BinOp::Div, l, r) => cross(&self.real(l)?, &self.real(r)?, |a, b| {
                if b.is_constant() {
                    Ok(a.scale(1.0 / b.c))
                } else {
                    Err(LinearError::NonLinear(render_expr(e)))
                }
            }),
            Expr::Binary(BinOp::Dot, l, r) => cross(&self.vector(l)?, &self.vector(r)?, |a, b| {
                let (ka, kb) = (a.iter().all(Affine::is_constant), b.iter().all(Affine::is_constant));
                if ka {
                    Ok(b[0].scale(a[0].c).zip(&b[1].scale(a[1].c), |x, y| x + y))
                } else if kb {
                    Ok(a[0].scale(b[0].c).zip(&a[1].scale(b[1].c), |x, y| x + y))
                } else {
                    Err(LinearError::NonLinear(render_expr(e)))
                }
            }),
            Expr::Unary(_, _) => Err(LinearError::NonLinear(render_expr(e))),
            other => Err(LinearError::Leaked(render_expr(other))),
        }
    }

    fn vector(&self, e: &Expr) -> Result<Vector, LinearError> {
        let n = self.n();
        match e {
            Expr::Const(Value::Vec2([x, y])) => Ok(vec![Piece {
                guards: vec![],
                val: [Affine::constant(n, *x), Affine::constant(n, *y)],
            }]),
            Expr::Vec2(a, b) => cross(&self.real(a)?, &self.real(b)?, |x, y| Ok([x.clone(), y.clone()])),
            Expr::Unary(UnOp::Neg, a) => Ok(self
                .vector(a)?
                .into_iter()
                .map(|p| Piece { guards: p.guards, val: [p.val[0].scale(-1.0), p.val[1].scale(-1.0)] })
                .collect()),
            Expr::Binary(op @ (BinOp::Add | BinOp::Sub), l, r) => {
                let sign = if *op == BinOp::Add { 1.0 } else { -1.0 };
                cross(&self.vector(l)?, &self.vector(r)?, |a, b| {
                    Ok([a[0].zip(&b[0], |x, y| x + sign * y), a[1].zip(&b[1], |x, y| x + sign * y)])
                })
            }
            Expr::Binary(BinOp::Mul, l, r) => {
                let (k, v) = match (self.real(l), self.real(r)) {
                    (Ok(k), _) => (k, self.vector(r)?),
                    (_, Ok(k)) => (k, self.vector(l)?),
                    (Err(e), _) => return Err(e),
                };
                cross(&k, &v, |k, v| {
                    if k.is_constant() {
                        Ok([v[0].scale(k.c), v[1].scale(k.c)])
                    } else if v.iter().all(Affine::is_constant) {
                        Ok([k.scale(v[0].c), k.scale(v[1].c)])
                    } else {
                        Err(LinearError::NonLinear(render_expr(e)))
                    }
                })
            }
            Expr::Binary(BinOp::Div, l, r) => cross(&self.vector(l)?, &self.real(r)?, |v, k| {
                if k.is_constant() {
                    Ok([v[0].scale(1.0 / k.c), v[1].scale(1.0 / k.c)])
                } else {
                    Err(LinearError::NonLinear(render_expr(e)))
                }
            }),
            other => Err(LinearError::NonLinear(render_expr(other))),
        }
    }

    /// Translates a boolean residual expression; `negated` pushes a negation
    /// inwards.
    pub fn constraint(&self, e: &Expr, negated: bool) -> Result<Constraint, LinearError> {
        match e {
            Expr::Const(Value::Bool(b)) => Ok(if *b != negated { Constraint::True } else { Constraint::False }),
            Expr::Unary(UnOp::Not, a) => self.constraint(a, !negated),
            Expr::Binary(op @ (BinOp::And | BinOp::Or), l, r) => {
                let parts = vec![self.constraint(l, negated)?, self.constraint(r, negated)?];
                // De Morgan under negation
                Ok(if (*op == BinOp::And) != negated {
                    Constraint::and(parts)
                } else {
                    Constraint::or(parts)
                })
            }
            Expr::Binary(op @ (BinOp::Eq | BinOp::Ne), l, r) if !self.is_real(l) => {
                // boolean (in)equality
                let same = (*op == BinOp::Eq) != negated;
                let (lp, ln) = (self.constraint(l, false)?, self.constraint(l, true)?);
                let (rp, rn) = (self.constraint(r, false)?, self.constraint(r, true)?);
                Ok(if same {
                    Constraint::or(vec![Constraint::and(vec![lp, rp]), Constraint::and(vec![ln, rn])])
                } else {
                    Constraint::or(vec![Constraint::and(vec![lp, rn]), Constraint::and(vec![ln, rp])])
                })
            }
            Expr::Binary(op, l, r) if op.is_comparison() => {
                // d = l - r for < <= == != ; d = r - l for > >=
                let (a, b, rel, flip) = match op {
                    BinOp::Lt => (l, r, Rel::Lt, false),
                    BinOp::Le => (l, r, Rel::Le, false),
                    BinOp::Gt => (r, l, Rel::Lt, false),
                    BinOp::Ge => (r, l, Rel::Le, false),
                    BinOp::Eq => (l, r, Rel::Eq, false),
                    BinOp::Ne => (l, r, Rel::Eq, true),
                    _ => unreachable!(),
                };
                let negated = negated != flip;
                let pieces = cross(&self.real(a)?, &self.real(b)?, |x, y| Ok(x.zip(y, |p, q| p - q)))?;
                let mut alts = Vec::new();
                for p in pieces {
                    let guards: Vec<Constraint> = p.guards.into_iter().map(Constraint::atom).collect();
                    let body = if negated {
                        Constraint::or(
                            negate(rel, &p.val)
                                .into_iter()
                                .map(|c| Constraint::and(c.into_iter().map(Constraint::atom).collect()))
                                .collect(),
                        )
                    } else {
                        Constraint::atom(LinAtom { a: p.val, rel })
                    };
                    let mut conj = guards;
                    conj.push(body);
                    alts.push(Constraint::and(conj));
                }
                Ok(Constraint::or(alts))
            }
            other => Err(LinearError::Leaked(render_expr(other))),
        }
    }

    fn is_real(&self, e: &Expr) -> bool {
        match e {
            Expr::Const(v) => matches!(v, Value::Real(_)),
            Expr::Param(_) => true,
            Expr::Unary(UnOp::Not, _) => false,
            Expr::Unary(UnOp::Norm, _) => true,
            Expr::Unary(_, a) => self.is_real(a),
            Expr::Binary(BinOp::Dot, ..) => true,
            Expr::Binary(op, ..) if op.is_comparison() => false,
            Expr::Binary(BinOp::And | BinOp::Or, ..) => false,
            Expr::Binary(_, l, r) => self.is_real(l) || self.is_real(r),
            _ => false,
        }
    }
}
