use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::check::{always_returns, binary_shape, unary_shape};
use super::lexer::{lex, Pos, Tok};
use super::{BinOp, Expr, Label, Shape, Stmt, TransitionFn, UnOp, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    Undeclared(String),
    UndeclaredState(String),
    Shape(String),
    MissingReturn,
    Duplicate(String),
    AssignToVariable(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::Undeclared(n) => write!(f, "undeclared identifier `{n}`"),
            ParseErrorKind::UndeclaredState(s) => write!(f, "undeclared state \"{s}\""),
            ParseErrorKind::Shape(m) => write!(f, "shape mismatch: {m}"),
            ParseErrorKind::MissingReturn => f.write_str("path without return"),
            ParseErrorKind::Duplicate(n) => write!(f, "duplicate declaration `{n}`"),
            ParseErrorKind::AssignToVariable(n) => write!(
                f,
                "transition functions cannot assign to persistent variable `var.{n}`"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
}

const KEYWORDS: &[&str] = &[
    "states", "inputs", "vars", "params", "fn", "transition", "return", "let", "if", "else",
    "true", "false", "state", "in", "var", "param", "pi", "real", "bool", "vec2", "sin", "cos",
    "abs", "sqrt", "norm", "dot", "angle_mod",
];

/// Parses and checks a transition function. The result is named
/// `transition`; see [`parse_transition_named`].
pub fn parse_transition(src: &str) -> Result<TransitionFn, ParseError> {
    parse_transition_named("transition", src)
}

pub fn parse_transition_named(name: &str, src: &str) -> Result<TransitionFn, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        i: 0,
        t: TransitionFn {
            name: name.to_string(),
            states: Vec::new(),
            inputs: Vec::new(),
            vars: Vec::new(),
            params: Vec::new(),
            body: Stmt::Block(Vec::new()),
        },
        scopes: Vec::new(),
    };
    p.program()?;
    Ok(p.t)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    t: TransitionFn,
    scopes: Vec<BTreeMap<String, Shape>>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn err_at<T>(&self, pos: Pos, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError {
            kind,
            line: pos.line,
            col: pos.col,
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, ParseError> {
        let msg = format!("expected {wanted}, found {}", self.peek().describe());
        self.err_at(self.pos(), ParseErrorKind::Syntax(msg))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<Pos, ParseError> {
        if *self.peek() == tok {
            Ok(self.next().1)
        } else {
            self.unexpected(wanted)
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Pos, ParseError> {
        if self.is_kw(kw) {
            Ok(self.next().1)
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let pos = self.next().1;
                Ok((s, pos))
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn label(&mut self) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                let pos = self.next().1;
                Ok((s, pos))
            }
            _ => self.unexpected("quoted state label"),
        }
    }

    fn declared_label(&mut self) -> Result<Label, ParseError> {
        let (s, pos) = self.label()?;
        match self.t.state(&s) {
            Some(l) => Ok(l.clone()),
            None => self.err_at(pos, ParseErrorKind::UndeclaredState(s)),
        }
    }

    fn program(&mut self) -> Result<(), ParseError> {
        self.expect_kw("states")?;
        self.expect(Tok::LBrace, "`{`")?;
        loop {
            let (s, pos) = self.label()?;
            if self.t.has_state(&s) {
                return self.err_at(pos, ParseErrorKind::Duplicate(s));
            }
            self.t.states.push(Label::new(&s));
            if *self.peek() == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RBrace, "`,` or `}`")?;

        if self.is_kw("inputs") {
            self.next();
            self.t.inputs = self.typed_list("in")?;
        }
        if self.is_kw("vars") {
            self.next();
            self.t.vars = self.typed_list("var")?;
        }
        if self.is_kw("params") {
            self.next();
            self.expect(Tok::LBrace, "`{`")?;
            while *self.peek() != Tok::RBrace {
                let (n, pos) = self.ident()?;
                if self.t.has_param(&n) {
                    return self.err_at(pos, ParseErrorKind::Duplicate(format!("param.{n}")));
                }
                self.t.params.push(n);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBrace, "`,` or `}`")?;
        }

        self.expect_kw("fn")?;
        self.expect_kw("transition")?;
        let body_pos = self.pos();
        let body = self.block()?;
        if !always_returns(&body) {
            return self.err_at(body_pos, ParseErrorKind::MissingReturn);
        }
        self.t.body = body;
        if *self.peek() != Tok::Eof {
            return self.unexpected("end of input");
        }
        Ok(())
    }

    fn typed_list(&mut self, prefix: &str) -> Result<Vec<(String, Shape)>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut out: Vec<(String, Shape)> = Vec::new();
        while *self.peek() != Tok::RBrace {
            let (n, pos) = self.ident()?;
            if out.iter().any(|(m, _)| *m == n) {
                return self.err_at(pos, ParseErrorKind::Duplicate(format!("{prefix}.{n}")));
            }
            self.expect(Tok::Colon, "`:`")?;
            let shape = match self.peek() {
                Tok::Ident(s) if s == "real" => Shape::Real,
                Tok::Ident(s) if s == "bool" => Shape::Bool,
                Tok::Ident(s) if s == "vec2" => Shape::Vec2,
                _ => return self.unexpected("`real`, `bool` or `vec2`"),
            };
            self.next();
            out.push((n, shape));
            if *self.peek() == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RBrace, "`,` or `}`")?;
        Ok(out)
    }

    fn block(&mut self) -> Result<Stmt, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        self.scopes.push(BTreeMap::new());
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return self.unexpected("`}`");
            }
            stmts.push(self.stmt()?);
        }
        self.next();
        self.scopes.pop();
        Ok(Stmt::Block(stmts))
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        match self.peek().clone() {
            Tok::LBrace => self.block(),
            Tok::Ident(kw) if kw == "return" => {
                self.next();
                let l = self.declared_label()?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(Stmt::Return(l))
            }
            Tok::Ident(kw) if kw == "let" => {
                self.next();
                let (name, _) = self.ident()?;
                self.expect(Tok::Assign, "`:=`")?;
                let (e, sh) = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                self.scopes
                    .last_mut()
                    .expect("inside a block")
                    .insert(name.clone(), sh);
                Ok(Stmt::Let(name, e))
            }
            Tok::Ident(kw) if kw == "if" => {
                self.next();
                self.expect(Tok::LParen, "`(`")?;
                let cpos = self.pos();
                let (c, sh) = self.expr()?;
                if sh != Shape::Bool {
                    return self.err_at(
                        cpos,
                        ParseErrorKind::Shape(format!("condition has shape {sh}, expected bool")),
                    );
                }
                self.expect(Tok::RParen, "`)`")?;
                let then = self.scoped_stmt()?;
                let els = if self.is_kw("else") {
                    self.next();
                    Some(Box::new(self.scoped_stmt()?))
                } else {
                    None
                };
                Ok(Stmt::If(c, Box::new(then), els))
            }
            Tok::Ident(kw) if kw == "var" && *self.peek_at(1) == Tok::Dot => {
                let pos = self.pos();
                if let (Tok::Ident(n), Tok::Assign) = (self.peek_at(2).clone(), self.peek_at(3)) {
                    return self.err_at(pos, ParseErrorKind::AssignToVariable(n));
                }
                self.unexpected("statement")
            }
            _ => self.unexpected("statement"),
        }
    }

    /// A branch body gets its own scope even when it is a single statement.
    fn scoped_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.scopes.push(BTreeMap::new());
        let s = self.stmt();
        self.scopes.pop();
        s
    }

    fn expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        self.or_expr()
    }

    fn bin(
        &self,
        op: BinOp,
        pos: Pos,
        (l, ls): (Expr, Shape),
        (r, rs): (Expr, Shape),
    ) -> Result<(Expr, Shape), ParseError> {
        match binary_shape(op, ls, rs) {
            Ok(sh) => Ok((Expr::binary(op, l, r), sh)),
            Err(m) => self.err_at(pos, ParseErrorKind::Shape(m)),
        }
    }

    fn or_expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::OrOr {
            let pos = self.next().1;
            let rhs = self.and_expr()?;
            lhs = self.bin(BinOp::Or, pos, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        let mut lhs = self.cmp_expr()?;
        while *self.peek() == Tok::AndAnd {
            let pos = self.next().1;
            let rhs = self.cmp_expr()?;
            lhs = self.bin(BinOp::And, pos, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let pos = self.next().1;
        let rhs = self.add_expr()?;
        self.bin(op, pos, lhs, rhs)
    }

    fn add_expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.next().1;
            let rhs = self.mul_expr()?;
            lhs = self.bin(op, pos, lhs, rhs)?;
        }
    }

    fn mul_expr(&mut self) -> Result<(Expr, Shape), ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.next().1;
            let rhs = self.unary()?;
            lhs = self.bin(op, pos, lhs, rhs)?;
        }
    }

    fn un(&self, op: UnOp, pos: Pos, (e, s): (Expr, Shape)) -> Result<(Expr, Shape), ParseError> {
        match unary_shape(op, s) {
            Ok(sh) => Ok((Expr::unary(op, e), sh)),
            Err(m) => self.err_at(pos, ParseErrorKind::Shape(m)),
        }
    }

    fn unary(&mut self) -> Result<(Expr, Shape), ParseError> {
        match self.peek() {
            Tok::Minus => {
                let pos = self.next().1;
                let e = self.unary()?;
                self.un(UnOp::Neg, pos, e)
            }
            Tok::Bang => {
                let pos = self.next().1;
                let e = self.unary()?;
                self.un(UnOp::Not, pos, e)
            }
            _ => self.primary(),
        }
    }

    fn qualified(&mut self) -> Result<(String, Pos), ParseError> {
        self.expect(Tok::Dot, "`.`")?;
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.next().1;
                Ok((s, pos))
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn primary(&mut self) -> Result<(Expr, Shape), ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Number(x) => {
                self.next();
                Ok((Expr::real(x), Shape::Real))
            }
            Tok::Str(s) => {
                self.next();
                match self.t.state(&s) {
                    Some(l) => Ok((Expr::Const(Value::Label(l.clone())), Shape::Label)),
                    None => self.err_at(pos, ParseErrorKind::UndeclaredState(s)),
                }
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Lt => {
                self.next();
                let (x, xs) = self.add_expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let (y, ys) = self.add_expr()?;
                self.expect(Tok::Gt, "`>`")?;
                if xs != Shape::Real || ys != Shape::Real {
                    return self.err_at(
                        pos,
                        ParseErrorKind::Shape("vector components must be real".into()),
                    );
                }
                Ok((Expr::Vec2(Box::new(x), Box::new(y)), Shape::Vec2))
            }
            Tok::Ident(id) => {
                self.next();
                match id.as_str() {
                    "true" => Ok((Expr::boolean(true), Shape::Bool)),
                    "false" => Ok((Expr::boolean(false), Shape::Bool)),
                    "pi" => Ok((Expr::real(std::f64::consts::PI), Shape::Real)),
                    "state" => Ok((Expr::State, Shape::Label)),
                    "in" => {
                        let (n, npos) = self.qualified()?;
                        match self.t.input_shape(&n) {
                            Some(sh) => Ok((Expr::Input(n), sh)),
                            None => self.err_at(npos, ParseErrorKind::Undeclared(format!("in.{n}"))),
                        }
                    }
                    "var" => {
                        let (n, npos) = self.qualified()?;
                        match self.t.var_shape(&n) {
                            Some(sh) => Ok((Expr::Var(n), sh)),
                            None => {
                                self.err_at(npos, ParseErrorKind::Undeclared(format!("var.{n}")))
                            }
                        }
                    }
                    "param" => {
                        let (n, npos) = self.qualified()?;
                        if self.t.has_param(&n) {
                            Ok((Expr::Param(n), Shape::Real))
                        } else {
                            self.err_at(npos, ParseErrorKind::Undeclared(format!("param.{n}")))
                        }
                    }
                    "dot" => {
                        self.expect(Tok::LParen, "`(`")?;
                        let a = self.expr()?;
                        self.expect(Tok::Comma, "`,`")?;
                        let b = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        self.bin(BinOp::Dot, pos, a, b)
                    }
                    name => {
                        if let Some(op) = UnOp::builtin(name) {
                            self.expect(Tok::LParen, "`(`")?;
                            let a = self.expr()?;
                            self.expect(Tok::RParen, "`)`")?;
                            return self.un(op, pos, a);
                        }
                        if KEYWORDS.contains(&name) {
                            return self.err_at(
                                pos,
                                ParseErrorKind::Syntax(format!("unexpected keyword `{name}`")),
                            );
                        }
                        match self.scopes.iter().rev().find_map(|s| s.get(name)) {
                            Some(sh) => Ok((Expr::Local(name.to_string()), *sh)),
                            None => self.err_at(pos, ParseErrorKind::Undeclared(name.to_string())),
                        }
                    }
                }
            }
            _ => self.unexpected("expression"),
        }
    }
}
