//! The small expression language used in configs for potentials and
//! policies.
//!
//! ```text
//! potential := sum_scalar(kernel) | linear | quad(kernel, Q=matrix)
//!            | lpf_quad(theta=1.0, P=matrix) | add(potential, a, potential, b)
//!            | mul(potential, potential) | outer(kernel, potential)
//!            | inner(potential, kernel)
//! kernel    := pow(alpha) | pow | log | lpf(theta) | lpf | identity
//! matrix    := [[1, 0], [0, 1]] | @name
//! policy    := max_scalar(potential) | memory(potential) | memory_dyn(potential)
//!            | stale(policy, delay=d) | frame(policy, k=k)
//! ```
//!
//! `@name` references are resolved by the caller.

use thiserror::Error;

use crate::policies::{PolicySpec, StaleMode};
use crate::potentials::{combine, Combine, Kernel, Potential, PotentialError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LangError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
    #[error("cannot resolve matrix @{name}: {msg}")]
    Reference { name: String, msg: String },
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Number(f64),
    Ident(String),
    Call(String, Vec<Arg>),
    Ref(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
struct Arg {
    name: Option<String>,
    value: Expr,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        Err(LangError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), LangError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && {
            let c = self.src[self.pos];
            c.is_ascii_alphanumeric() || c == b'_' || c == b'-' || c == b'.' || c == b'/'
        } {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64, LangError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && {
            let c = self.src[self.pos];
            c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E')
        } {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("bad number '{text}'"))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'@') => {
                self.pos += 1;
                let name = self.word();
                if name.is_empty() {
                    return self.err("empty reference");
                }
                Ok(Expr::Ref(name))
            }
            Some(b'[') => self.matrix().map(Expr::Matrix),
            Some(c) if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' => {
                self.number().map(Expr::Number)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.word();
                if self.eat(b'(') {
                    let mut args = Vec::new();
                    if !self.eat(b')') {
                        loop {
                            args.push(self.arg()?);
                            if self.eat(b')') {
                                break;
                            }
                            self.expect(b',')?;
                        }
                    }
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            Some(c) => self.err(format!("unexpected '{}'", c as char)),
        }
    }

    fn arg(&mut self) -> Result<Arg, LangError> {
        self.skip_ws();
        let save = self.pos;
        if self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            let name = self.word();
            if self.eat(b'=') {
                return Ok(Arg {
                    name: Some(name),
                    value: self.expr()?,
                });
            }
            self.pos = save;
        }
        Ok(Arg {
            name: None,
            value: self.expr()?,
        })
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>, LangError> {
        self.expect(b'[')?;
        let mut rows = Vec::new();
        if self.eat(b']') {
            return Ok(rows);
        }
        loop {
            self.expect(b'[')?;
            let mut row = Vec::new();
            if !self.eat(b']') {
                loop {
                    row.push(self.number()?);
                    if self.eat(b']') {
                        break;
                    }
                    self.expect(b',')?;
                }
            }
            rows.push(row);
            if self.eat(b']') {
                return Ok(rows);
            }
            self.expect(b',')?;
        }
    }

    fn finish(mut self, e: Expr) -> Result<Expr, LangError> {
        if self.peek().is_some() {
            return self.err("trailing input");
        }
        Ok(e)
    }
}

fn parse(src: &str) -> Result<Expr, LangError> {
    let mut p = Parser::new(src);
    let e = p.expr()?;
    p.finish(e)
}

/// Resolves `@name` matrix references.
pub type MatrixResolver<'a> = dyn Fn(&str) -> Result<Vec<Vec<f64>>, String> + 'a;

/// Positional and named arguments of one call.
struct Args<'e> {
    call: &'e str,
    positional: Vec<&'e Expr>,
    named: Vec<(&'e str, &'e Expr)>,
}

impl<'e> Args<'e> {
    fn new(call: &'e str, args: &'e [Arg]) -> Self {
        let mut positional = Vec::new();
        let mut named = Vec::new();
        for a in args {
            match &a.name {
                Some(n) => named.push((n.as_str(), &a.value)),
                None => positional.push(&a.value),
            }
        }
        Self {
            call,
            positional,
            named,
        }
    }

    /// Argument `i`, given either positionally or as `name=`.
    fn get(&self, i: usize, name: &str) -> Option<&'e Expr> {
        self.named
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| *e)
            .or(self.positional.get(i).copied())
    }

    fn require(&self, i: usize, name: &str) -> Result<&'e Expr, LangError> {
        self.get(i, name)
            .ok_or_else(|| LangError::Semantic(format!("{}: missing argument '{name}'", self.call)))
    }

    fn check(&self, max_positional: usize, names: &[&str]) -> Result<(), LangError> {
        if self.positional.len() > max_positional {
            return Err(LangError::Semantic(format!(
                "{}: expected at most {max_positional} positional arguments, got {}",
                self.call,
                self.positional.len()
            )));
        }
        if let Some((n, _)) = self.named.iter().find(|(n, _)| !names.contains(n)) {
            return Err(LangError::Semantic(format!(
                "{}: unknown argument '{n}'",
                self.call
            )));
        }
        Ok(())
    }
}

fn number(e: &Expr, what: &str) -> Result<f64, LangError> {
    match e {
        Expr::Number(v) => Ok(*v),
        _ => Err(LangError::Semantic(format!("{what} must be a number"))),
    }
}

fn count(e: &Expr, what: &str) -> Result<usize, LangError> {
    let v = number(e, what)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(LangError::Semantic(format!(
            "{what} must be a nonnegative integer, got {v}"
        )));
    }
    Ok(v as usize)
}

fn kernel(e: &Expr) -> Result<Kernel, LangError> {
    let (name, args): (&str, &[Arg]) = match e {
        Expr::Ident(n) => (n, &[]),
        Expr::Call(n, a) => (n, a),
        _ => {
            return Err(LangError::Semantic(
                "expected a kernel such as pow(1.0), log, lpf(1.0) or identity".into(),
            ))
        }
    };
    let a = Args::new(name, args);
    Ok(match name {
        "pow" | "power" => {
            a.check(1, &["alpha"])?;
            let alpha = a.get(0, "alpha").map(|e| number(e, "alpha")).transpose()?;
            Kernel::power(alpha.unwrap_or(Kernel::DEFAULT_ALPHA))?
        }
        "lpf" => {
            a.check(1, &["theta"])?;
            let theta = a.get(0, "theta").map(|e| number(e, "theta")).transpose()?;
            Kernel::lpf(theta.unwrap_or(Kernel::DEFAULT_THETA))?
        }
        "log" => {
            a.check(0, &[])?;
            Kernel::Log
        }
        "identity" => {
            a.check(0, &[])?;
            Kernel::Identity
        }
        other => return Err(LangError::Semantic(format!("unknown kernel '{other}'"))),
    })
}

fn matrix(e: &Expr, resolve: &MatrixResolver<'_>) -> Result<Vec<Vec<f64>>, LangError> {
    match e {
        Expr::Matrix(m) => Ok(m.clone()),
        Expr::Ref(name) => resolve(name).map_err(|msg| LangError::Reference {
            name: name.clone(),
            msg,
        }),
        _ => Err(LangError::Semantic(
            "expected a matrix literal or @reference".into(),
        )),
    }
}

fn potential(e: &Expr, resolve: &MatrixResolver<'_>) -> Result<Potential, LangError> {
    let (name, args): (&str, &[Arg]) = match e {
        Expr::Ident(n) => (n, &[]),
        Expr::Call(n, a) => (n, a),
        _ => {
            return Err(LangError::Semantic(
                "expected a potential expression".into(),
            ))
        }
    };
    let a = Args::new(name, args);
    Ok(match name {
        "sum_scalar" => {
            a.check(1, &["kernel"])?;
            Potential::sum_scalar(kernel(a.require(0, "kernel")?)?)
        }
        "linear" => {
            a.check(0, &[])?;
            Potential::linear()
        }
        "quad" => {
            a.check(2, &["kernel", "Q"])?;
            Potential::quad(
                kernel(a.require(0, "kernel")?)?,
                matrix(a.require(1, "Q")?, resolve)?,
            )?
        }
        "lpf_quad" => {
            a.check(2, &["theta", "P"])?;
            let theta = a.get(0, "theta").map(|e| number(e, "theta")).transpose()?;
            let k = Kernel::lpf(theta.unwrap_or(Kernel::DEFAULT_THETA))?;
            Potential::quad(k, matrix(a.require(1, "P")?, resolve)?)?
        }
        "add" => {
            a.check(4, &[])?;
            let left = potential(a.require(0, "left")?, resolve)?;
            let ca = number(a.require(1, "a")?, "coefficient")?;
            let right = potential(a.require(2, "right")?, resolve)?;
            let cb = number(a.require(3, "b")?, "coefficient")?;
            combine(Combine::Sum(ca, left, cb, right))?
        }
        "mul" => {
            a.check(2, &[])?;
            combine(Combine::Product(
                potential(a.require(0, "left")?, resolve)?,
                potential(a.require(1, "right")?, resolve)?,
            ))?
        }
        "outer" => {
            a.check(2, &[])?;
            combine(Combine::Outer(
                kernel(a.require(0, "kernel")?)?,
                potential(a.require(1, "inner")?, resolve)?,
            ))?
        }
        "inner" => {
            a.check(2, &[])?;
            combine(Combine::Inner(
                potential(a.require(0, "outer")?, resolve)?,
                kernel(a.require(1, "kernel")?)?,
            ))?
        }
        other => return Err(LangError::Semantic(format!("unknown potential '{other}'"))),
    })
}

fn policy(e: &Expr, resolve: &MatrixResolver<'_>) -> Result<PolicySpec, LangError> {
    let Expr::Call(name, args) = e else {
        return Err(LangError::Semantic(
            "expected a policy such as max_scalar(...)".into(),
        ));
    };
    let a = Args::new(name, args);
    let stale = |mode: fn(usize) -> StaleMode, key: &str| -> Result<PolicySpec, LangError> {
        a.check(2, &[key])?;
        let inner = policy(a.require(0, "policy")?, resolve)?;
        let n = count(a.require(1, key)?, key)?;
        PolicySpec::wrap_stale(inner, mode(n)).map_err(|e| LangError::Semantic(e.to_string()))
    };
    Ok(match name.as_str() {
        "max_scalar" => {
            a.check(1, &[])?;
            PolicySpec::MaxScalar(potential(a.require(0, "potential")?, resolve)?)
        }
        "memory" => {
            a.check(1, &[])?;
            PolicySpec::Memory(potential(a.require(0, "potential")?, resolve)?)
        }
        "memory_dyn" => {
            a.check(1, &[])?;
            PolicySpec::MemoryDynamic(potential(a.require(0, "potential")?, resolve)?)
        }
        "stale" => stale(StaleMode::Delay, "delay")?,
        "frame" => stale(StaleMode::Frame, "k")?,
        other => return Err(LangError::Semantic(format!("unknown policy '{other}'"))),
    })
}

pub fn parse_potential(src: &str, resolve: &MatrixResolver<'_>) -> Result<Potential, LangError> {
    potential(&parse(src)?, resolve)
}

pub fn parse_policy(src: &str, resolve: &MatrixResolver<'_>) -> Result<PolicySpec, LangError> {
    policy(&parse(src)?, resolve)
}

/// Rows of whitespace-separated numbers; blank lines and `#` comments skipped.
pub fn parse_matrix_text(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| format!("row {}: bad number '{tok}'", i + 1))
                })
                .collect()
        })
        .collect()
}
