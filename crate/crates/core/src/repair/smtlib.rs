//! SMT-LIB2 encoding of repair formulas and a backend that pipes the script
//! through an optimizing solver process (z3's `minimize` extension).

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use super::{Assignment, Backend, Constraint, LinAtom, Mode, RepairError, RepairFormula};

/// Exact decimal rendering of a finite `f64` as an SMT-LIB real term.
pub fn real(x: f64) -> String {
    assert!(x.is_finite(), "non-finite constant in repair formula");
    let neg = x.is_sign_negative() && x != 0.0;
    let a = x.abs();
    // a = m * 2^e exactly; 2^-k has exactly k fractional decimal digits
    let bits = a.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let e = if exp == 0 { -1074 } else { exp - 1075 };
    let digits = if e < 0 { (-e) as usize } else { 0 };
    let mut s = format!("{a:.digits$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.push('0');
        }
    } else {
        s.push_str(".0");
    }
    if neg {
        format!("(- {s})")
    } else {
        s
    }
}

fn atom(out: &mut String, a: &LinAtom, f: &RepairFormula) {
    let (coeffs, eq, rhs) = a.closed(f.margins);
    let terms: Vec<String> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, c)| {
            if *c == 1.0 {
                format!("d{j}")
            } else {
                format!("(* {} d{j})", real(*c))
            }
        })
        .collect();
    let lhs = match terms.len() {
        0 => "0.0".to_string(),
        1 => terms[0].clone(),
        _ => format!("(+ {})", terms.join(" ")),
    };
    let _ = write!(out, "({} {lhs} {})", if eq { "=" } else { "<=" }, real(rhs));
}

fn constraint(out: &mut String, c: &Constraint, f: &RepairFormula) {
    match c {
        Constraint::True => out.push_str("true"),
        Constraint::False => out.push_str("false"),
        Constraint::Atom(a) => atom(out, a, f),
        Constraint::And(cs) | Constraint::Or(cs) => {
            out.push_str(if matches!(c, Constraint::And(_)) { "(and" } else { "(or" });
            for c in cs {
                out.push(' ');
                constraint(out, c, f);
            }
            out.push(')');
        }
    }
}

fn sum(terms: Vec<String>) -> String {
    match terms.len() {
        0 => "0.0".into(),
        1 => terms.into_iter().next().unwrap(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

/// Emits a complete script: declarations, one exclusive-or clause per
/// correction, exploration constraints, objective(s), `check-sat` and
/// `get-value`.
pub fn encode(f: &RepairFormula) -> String {
    let n = f.deltas.len();
    for c in &f.clauses {
        for conj in &c.dnf {
            for a in conj {
                assert_eq!(a.a.coeffs.len(), n, "atom over unknown adjustment variables");
            }
        }
    }
    let mut s = String::new();
    s.push_str("(set-option :produce-models true)\n");
    match f.mode {
        Mode::Lexicographic => s.push_str("(set-option :opt.priority lex)\n"),
        Mode::Pareto => s.push_str("(set-option :opt.priority pareto)\n"),
        Mode::WeightedSum => {}
    }
    s.push_str("(set-logic QF_LRA)\n");
    for (j, x) in f.deltas.iter().enumerate() {
        let _ = writeln!(s, "; d{j} adjusts {x}");
        let _ = writeln!(s, "(declare-const d{j} Real)");
        let _ = writeln!(s, "(declare-const t{j} Real)");
        let _ = writeln!(s, "(assert (>= t{j} d{j}))");
        let _ = writeln!(s, "(assert (>= t{j} (- d{j})))");
    }
    for (i, c) in f.clauses.iter().enumerate() {
        let h = real(c.weight);
        let _ = writeln!(s, "(declare-const w{i} Real)");
        let _ = writeln!(s, "(assert (or (= w{i} 0.0) (= w{i} {h})))");
        let mut phi = String::new();
        constraint(&mut phi, &c.phi, f);
        let _ = writeln!(s, "(assert (xor (= w{i} {h}) (and (= w{i} 0.0) {phi})))");
    }
    for e in &f.exclusions {
        if !e.some_satisfied.is_empty() {
            let alts: Vec<String> = e.some_satisfied.iter().map(|i| format!("(= w{i} 0.0)")).collect();
            let _ = writeln!(s, "(assert (or false {}))", alts.join(" "));
        }
        if !e.some_penalized.is_empty() {
            let alts: Vec<String> = e
                .some_penalized
                .iter()
                .map(|&i| format!("(= w{i} {})", real(f.clauses[i].weight)))
                .collect();
            let _ = writeln!(s, "(assert (or false {}))", alts.join(" "));
        }
    }
    let ws = sum((0..f.clauses.len()).map(|i| format!("w{i}")).collect());
    let ts = sum(
        f.scales
            .iter()
            .enumerate()
            .map(|(j, k)| if *k == 1.0 { format!("t{j}") } else { format!("(* {} t{j})", real(*k)) })
            .collect(),
    );
    match f.mode {
        Mode::WeightedSum => {
            let _ = writeln!(s, "(minimize (+ {ws} {ts}))");
        }
        Mode::Lexicographic | Mode::Pareto => {
            let _ = writeln!(s, "(minimize {ws})");
            let _ = writeln!(s, "(minimize {ts})");
        }
    }
    // Tie-breaks, lower priority under lex: fewer penalized corrections,
    // then the earliest corrections satisfied.
    if f.mode != Mode::Pareto && !f.clauses.is_empty() {
        let n = f.clauses.len();
        let pen = |i: usize, k: &str| format!("(ite (= w{i} 0.0) 0.0 {k})");
        let count = sum((0..n).map(|i| pen(i, "1.0")).collect());
        let rank = sum((0..n).map(|i| pen(i, &format!("{}.0", 1u64 << (n - 1 - i).min(62)))).collect());
        let _ = writeln!(s, "(minimize {count})");
        let _ = writeln!(s, "(minimize {rank})");
    }
    s.push_str("(check-sat)\n");
    let vars: Vec<String> = (0..n)
        .map(|j| format!("d{j}"))
        .chain((0..f.clauses.len()).map(|i| format!("w{i}")))
        .collect();
    if !vars.is_empty() {
        let _ = writeln!(s, "(get-value ({}))", vars.join(" "));
    }
    s
}

/// A parsed s-expression.
#[derive(Clone, Debug, PartialEq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

/// Parses a sequence of s-expressions.
pub fn parse_sexps(text: &str) -> Result<Vec<Sexp>, String> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '(' => stack.push(Vec::new()),
            ')' => {
                let done = stack.pop().ok_or("unbalanced `)`")?;
                stack.last_mut().ok_or("unbalanced `)`")?.push(Sexp::List(done));
            }
            ';' => {
                for c in chars.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            }
            '"' => {
                let mut s = String::from('"');
                for c in chars.by_ref() {
                    s.push(c);
                    if c == '"' {
                        break;
                    }
                }
                stack.last_mut().unwrap().push(Sexp::Atom(s));
            }
            c if c.is_whitespace() => {}
            c => {
                let mut s = String::from(c);
                while let Some(&n) = chars.peek() {
                    if n.is_whitespace() || n == '(' || n == ')' {
                        break;
                    }
                    s.push(n);
                    chars.next();
                }
                stack.last_mut().unwrap().push(Sexp::Atom(s));
            }
        }
    }
    if stack.len() != 1 {
        return Err("unbalanced `(`".into());
    }
    Ok(stack.pop().unwrap())
}

/// Evaluates a numeric model term: decimals, `(- x)`, `(/ a b)`.
pub fn eval_number(e: &Sexp) -> Result<f64, String> {
    match e {
        Sexp::Atom(a) => a.parse::<f64>().map_err(|_| format!("not a number: {a}")),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => Ok(-eval_number(x)?),
            [Sexp::Atom(op), a, b] if op == "/" => Ok(eval_number(a)? / eval_number(b)?),
            [Sexp::Atom(op), a, b] if op == "-" => Ok(eval_number(a)? - eval_number(b)?),
            [Sexp::Atom(op), rest @ ..] if op == "+" => rest.iter().map(eval_number).sum(),
            [Sexp::Atom(op), rest @ ..] if op == "*" => rest.iter().map(eval_number).product(),
            _ => Err(format!("unsupported model term {e:?}")),
        },
    }
}

/// Interprets solver output for a script produced by [`encode`].
pub fn parse_response(f: &RepairFormula, out: &str) -> Result<Option<Assignment>, String> {
    let sexps = parse_sexps(out)?;
    let mut it = sexps.iter();
    let status = loop {
        match it.next() {
            Some(Sexp::Atom(a)) if a == "sat" || a == "unsat" || a == "unknown" => break a.as_str(),
            Some(Sexp::List(l)) if matches!(l.first(), Some(Sexp::Atom(a)) if a == "error") => {
                return Err(format!("solver error: {l:?}"));
            }
            Some(_) => continue,
            None => return Err(format!("no check-sat answer in solver output: {out}")),
        }
    };
    match status {
        "unsat" => return Ok(None),
        "unknown" => return Err("solver returned unknown".into()),
        _ => {}
    }
    let mut deltas = vec![0.0; f.deltas.len()];
    let mut w = vec![None; f.clauses.len()];
    for e in it {
        let Sexp::List(pairs) = e else { continue };
        for p in pairs {
            let Sexp::List(kv) = p else { continue };
            let [Sexp::Atom(name), val] = kv.as_slice() else { continue };
            let v = eval_number(val)?;
            if let Some(j) = name.strip_prefix('d').and_then(|s| s.parse::<usize>().ok()) {
                if j < deltas.len() {
                    deltas[j] = v;
                }
            } else if let Some(i) = name.strip_prefix('w').and_then(|s| s.parse::<usize>().ok()) {
                if i < w.len() {
                    w[i] = Some(v);
                }
            }
        }
    }
    let satisfied = w
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.map(|v| v == 0.0).ok_or(format!("model lacks w{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(Assignment { deltas, satisfied }))
}

/// Runs an SMT-LIB2 solver process reading the script on stdin.
#[derive(Clone, Debug)]
pub struct SmtBackend {
    pub id: String,
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl SmtBackend {
    pub fn z3(timeout: Duration) -> Self {
        let program = std::env::var("RSM_Z3").unwrap_or_else(|_| "z3".into());
        SmtBackend {
            id: "z3".into(),
            program,
            args: vec![
                "-in".into(),
                "-smt2".into(),
                format!("-T:{}", timeout.as_secs().max(1)),
            ],
            timeout,
        }
    }

    /// An arbitrary command line, split on whitespace.
    pub fn command(cmd: &str, timeout: Duration) -> Self {
        let mut parts = cmd.split_whitespace().map(String::from);
        SmtBackend {
            id: format!("smt:{cmd}"),
            program: parts.next().unwrap_or_default(),
            args: parts.collect(),
            timeout,
        }
    }

    /// Whether the solver binary can be started.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("-version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }

    fn fail(&self, message: String) -> RepairError {
        RepairError::Backend {
            backend: self.id.clone(),
            message,
        }
    }

    /// Runs `script` and returns stdout.
    pub fn run(&self, script: &str) -> Result<String, RepairError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.fail(format!("cannot start `{}`: {e}", self.program)))?;
        let mut stdin = child.stdin.take().unwrap();
        let script = script.to_string();
        let writer = std::thread::spawn(move || stdin.write_all(script.as_bytes()));
        let mut out = String::new();
        child
            .stdout
            .take()
            .unwrap()
            .read_to_string(&mut out)
            .map_err(|e| self.fail(e.to_string()))?;
        let mut err = String::new();
        let _ = child.stderr.take().unwrap().read_to_string(&mut err);
        let status = child.wait().map_err(|e| self.fail(e.to_string()))?;
        let _ = writer.join();
        if !status.success() && !out.contains("sat") {
            return Err(self.fail(format!("exit status {status}: {out}{err}")));
        }
        Ok(out)
    }
}

impl Backend for SmtBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn solve(&self, f: &RepairFormula) -> Result<Option<Assignment>, RepairError> {
        let out = self.run(&encode(f))?;
        parse_response(f, &out).map_err(|m| self.fail(m))
    }
}
