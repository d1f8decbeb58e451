//! The transition-function language: AST, parser, checker, interpreter and
//! printer.
//!
//! A program declares its states, inputs, persistent variables and
//! parameters, followed by a single `fn transition { ... }` body that maps the
//! current state and its bindings to the next state.

mod check;
mod interp;
mod lexer;
mod parser;
mod print;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use check::{check, CheckError};
pub(crate) use check::always_returns;
pub(crate) use interp::{apply_binary, apply_unary};
pub use interp::{angle_mod, eval_expr, eval_transition, EvalError, Scope};
pub use parser::{parse_transition, parse_transition_named, ParseError, ParseErrorKind};
pub use print::{fmt_real, render_expr, render_stmt, render_transition};

/// A state label. Cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(Arc<str>);

impl Label {
    pub fn new(s: &str) -> Self {
        Label(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::new(&s))
    }
}

/// Value shapes. There are no integers: times and counters are reals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Real,
    Bool,
    Vec2,
    Label,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Real => "real",
            Shape::Bool => "bool",
            Shape::Vec2 => "vec2",
            Shape::Label => "label",
        })
    }
}

/// A runtime value.
///
/// Serializes untagged: reals as JSON numbers, 2-vectors as two-element
/// arrays, labels as strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Bool(bool),
    Vec2([f64; 2]),
    Label(Label),
}

impl Value {
    pub fn shape(&self) -> Shape {
        match self {
            Value::Real(_) => Shape::Real,
            Value::Bool(_) => Shape::Bool,
            Value::Vec2(_) => Shape::Vec2,
            Value::Label(_) => Shape::Label,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_vec2(&self) -> Option<[f64; 2]> {
        match self {
            Value::Vec2(v) => Some(*v),
            _ => None,
        }
    }

    /// Bitwise equality: distinguishes `-0.0` from `0.0` and treats equal NaN
    /// payloads as equal.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::Vec2(a), Value::Vec2(b)) => {
                a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits()
            }
            (a, b) => a == b,
        }
    }
}

/// Name → value bindings for inputs or variables.
pub type Bindings = BTreeMap<String, Value>;

/// Parameter name → real value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterMap(pub BTreeMap<String, f64>);

impl ParameterMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Errors unless the domain is exactly the declared parameter list.
    pub fn validate_for(&self, t: &TransitionFn) -> Result<(), EvalError> {
        for p in &t.params {
            if !self.0.contains_key(p) {
                return Err(EvalError::MissingBinding(format!("param.{p}")));
            }
        }
        for k in self.0.keys() {
            if !t.params.iter().any(|p| p == k) {
                return Err(EvalError::UnknownBinding(format!("param.{k}")));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, f64)> for ParameterMap {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        ParameterMap(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Norm,
    AngleMod,
}

impl UnOp {
    pub fn builtin(name: &str) -> Option<UnOp> {
        Some(match name {
            "sin" => UnOp::Sin,
            "cos" => UnOp::Cos,
            "abs" => UnOp::Abs,
            "sqrt" => UnOp::Sqrt,
            "norm" => UnOp::Norm,
            "angle_mod" => UnOp::AngleMod,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
            UnOp::Sin => "sin",
            UnOp::Cos => "cos",
            UnOp::Abs => "abs",
            UnOp::Sqrt => "sqrt",
            UnOp::Norm => "norm",
            UnOp::AngleMod => "angle_mod",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Dot,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Dot => "dot",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(Value),
    /// The current state.
    State,
    Input(String),
    Var(String),
    Param(String),
    Local(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Vec2(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn real(x: f64) -> Expr {
        Expr::Const(Value::Real(x))
    }

    pub fn boolean(b: bool) -> Expr {
        Expr::Const(Value::Bool(b))
    }

    pub fn label(s: &str) -> Expr {
        Expr::Const(Value::Label(Label::new(s)))
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn input(name: &str) -> Expr {
        Expr::Input(name.to_string())
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn unary(op: UnOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn not(e: Expr) -> Expr {
        Expr::unary(UnOp::Not, e)
    }

    pub fn and(l: Expr, r: Expr) -> Expr {
        Expr::binary(BinOp::And, l, r)
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Expr::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        self.as_const().and_then(Value::as_bool)
    }

    /// Calls `f` on every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) => e.walk(f),
            Expr::Binary(_, l, r) | Expr::Vec2(l, r) => {
                l.walk(f);
                r.walk(f);
            }
            _ => {}
        }
    }

    /// Names of parameters referenced anywhere in the expression.
    pub fn params(&self) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.clone());
            }
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Return(Label),
    Let(String, Expr),
    If(Expr, Box<Stmt>, Option<Box<Stmt>>),
    Block(Vec<Stmt>),
}

/// A checked transition function.
///
/// The first declared state is the start state and the last declared state is
/// the end state.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionFn {
    pub name: String,
    pub states: Vec<Label>,
    pub inputs: Vec<(String, Shape)>,
    pub vars: Vec<(String, Shape)>,
    pub params: Vec<String>,
    pub body: Stmt,
}

impl TransitionFn {
    pub fn start_state(&self) -> &Label {
        &self.states[0]
    }

    pub fn end_state(&self) -> &Label {
        self.states.last().expect("at least one state")
    }

    pub fn has_state(&self, s: &str) -> bool {
        self.states.iter().any(|l| l.as_str() == s)
    }

    pub fn state(&self, s: &str) -> Option<&Label> {
        self.states.iter().find(|l| l.as_str() == s)
    }

    pub fn input_shape(&self, name: &str) -> Option<Shape> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn var_shape(&self, name: &str) -> Option<Shape> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.iter().any(|p| p == name)
    }

    /// Canonical rendering of the declarations, used for mismatch detection
    /// between traces and transition functions.
    pub fn declaration_signature(&self) -> String {
        let mut s = String::from("states{");
        for l in &self.states {
            s.push_str(l.as_str());
            s.push(',');
        }
        s.push_str("}inputs{");
        for (n, sh) in &self.inputs {
            s.push_str(&format!("{n}:{sh},"));
        }
        s.push_str("}vars{");
        for (n, sh) in &self.vars {
            s.push_str(&format!("{n}:{sh},"));
        }
        s.push_str("}params{");
        for p in &self.params {
            s.push_str(p);
            s.push(',');
        }
        s.push('}');
        s
    }

    /// Hex SHA-256 of [`declaration_signature`](Self::declaration_signature).
    pub fn declaration_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.declaration_signature().as_bytes()))
    }
}
