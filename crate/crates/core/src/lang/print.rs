use std::fmt::Write;

use super::{BinOp, Expr, Shape, Stmt, TransitionFn, UnOp, Value};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 && x.is_sign_negative() {
        return "-0".to_string();
    }
    format!("{x}")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, ..) => match op {
            BinOp::Or => 1,
            BinOp::And => 2,
            op if op.is_comparison() => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div => 5,
            _ => 7,
        },
        Expr::Unary(UnOp::Neg | UnOp::Not, _) => 6,
        Expr::Const(Value::Real(x)) if x.is_sign_negative() => 6,
        _ => 7,
    }
}

fn child(out: &mut String, e: &Expr, min: u8) {
    if prec(e) < min {
        out.push('(');
        expr(out, e);
        out.push(')');
    } else {
        expr(out, e);
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(Value::Real(x)) => out.push_str(&fmt_real(*x)),
        Expr::Const(Value::Bool(b)) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Const(Value::Vec2([x, y])) => {
            let _ = write!(out, "<{}, {}>", fmt_real(*x), fmt_real(*y));
        }
        Expr::Const(Value::Label(l)) => {
            let _ = write!(out, "\"{l}\"");
        }
        Expr::State => out.push_str("state"),
        Expr::Input(n) => {
            let _ = write!(out, "in.{n}");
        }
        Expr::Var(n) => {
            let _ = write!(out, "var.{n}");
        }
        Expr::Param(n) => {
            let _ = write!(out, "param.{n}");
        }
        Expr::Local(n) => out.push_str(n),
        Expr::Unary(op @ (UnOp::Neg | UnOp::Not), a) => {
            out.push_str(op.name());
            child(out, a, 6);
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            expr(out, a);
            out.push(')');
        }
        Expr::Binary(BinOp::Dot, a, b) => {
            out.push_str("dot(");
            expr(out, a);
            out.push_str(", ");
            expr(out, b);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let p = prec(e);
            if op.is_comparison() {
                child(out, a, p + 1);
            } else {
                child(out, a, p);
            }
            let _ = write!(out, " {} ", op.symbol());
            child(out, b, p + 1);
        }
        Expr::Vec2(a, b) => {
            out.push('<');
            child(out, a, 4);
            out.push_str(", ");
            child(out, b, 4);
            out.push('>');
        }
    }
}

pub fn render_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

fn stmt(out: &mut String, s: &Stmt, indent: usize) {
    let pad = "  ".repeat(indent);
    match s {
        Stmt::Return(l) => {
            let _ = writeln!(out, "{pad}return \"{l}\";");
        }
        Stmt::Let(n, e) => {
            let _ = writeln!(out, "{pad}let {n} := {};", render_expr(e));
        }
        Stmt::If(c, a, b) => {
            let _ = writeln!(out, "{pad}if ({}) {{", render_expr(c));
            body(out, a, indent + 1);
            match b {
                None => {
                    let _ = writeln!(out, "{pad}}}");
                }
                Some(b) => {
                    let _ = writeln!(out, "{pad}}} else {{");
                    body(out, b, indent + 1);
                    let _ = writeln!(out, "{pad}}}");
                }
            }
        }
        Stmt::Block(ss) => {
            let _ = writeln!(out, "{pad}{{");
            for s in ss {
                stmt(out, s, indent + 1);
            }
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

fn body(out: &mut String, s: &Stmt, indent: usize) {
    match s {
        Stmt::Block(ss) => ss.iter().for_each(|s| stmt(out, s, indent)),
        s => stmt(out, s, indent),
    }
}

pub fn render_stmt(s: &Stmt) -> String {
    let mut out = String::new();
    body(&mut out, s, 0);
    out
}

/// Renders a full program in the concrete syntax accepted by the parser.
pub fn render_transition(t: &TransitionFn) -> String {
    let mut out = String::from("states { ");
    let labels: Vec<String> = t.states.iter().map(|l| format!("\"{l}\"")).collect();
    out.push_str(&labels.join(", "));
    out.push_str(" }\n");
    let typed = |decls: &[(String, Shape)]| -> String {
        decls
            .iter()
            .map(|(n, s)| format!("{n}: {s}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    if !t.inputs.is_empty() {
        let _ = writeln!(out, "inputs {{ {} }}", typed(&t.inputs));
    }
    if !t.vars.is_empty() {
        let _ = writeln!(out, "vars {{ {} }}", typed(&t.vars));
    }
    if !t.params.is_empty() {
        let _ = writeln!(out, "params {{ {} }}", t.params.join(", "));
    }
    out.push_str("fn transition {\n");
    body(&mut out, &t.body, 1);
    out.push_str("}\n");
    out
}
