//! A small arithmetic expression language for rate functions, staffing rules
//! and test functions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers are resolved against a [`Scope`] at compile time, so a
//! compiled [`Expr`] evaluates against a flat slice of values without any
//! lookups. Built-in functions: `min`, `max` (one or more arguments), `pos`
//! (positive part), `neg` (negative part), `abs`, `sqrt`, `floor`, `ceil`,
//! `round`, `exp`, `ln`. The constants `inf` and `pi` are always available.

use std::fmt;

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 64;
const MAX_LEN: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Pos,
    Neg,
    Abs,
    Sqrt,
    Floor,
    Ceil,
    Round,
    Exp,
    Ln,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "pos" => Func::Pos,
            "neg" => Func::Neg,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "floor" => Func::Floor,
            "ceil" => Func::Ceil,
            "round" => Func::Round,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Pos => "pos",
            Func::Neg => "neg",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Floor => "floor",
            Func::Ceil => "ceil",
            Func::Round => "round",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

/// Parsed but unresolved syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Ident { name: String, pos: usize },
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Call { func: Func, args: Vec<Ast> },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    if src.len() > MAX_LEN {
        return Err(Error::Parse {
            pos: MAX_LEN,
            msg: "expression too long".into(),
        });
    }
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                out.push((Tok::Comma, i));
                i += 1;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(Error::Parse {
                    pos: i,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return self.err("expression nested too deeply");
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Ast> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.at += 1;
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Ast::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.at += 1;
            self.enter()?;
            let exp = self.unary()?;
            self.depth -= 1;
            return Ok(Ast::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Ast::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if let Some(Tok::LParen) = self.peek() {
                    let Some(func) = Func::lookup(&name) else {
                        return Err(Error::Parse {
                            pos,
                            msg: format!("unknown function `{name}`"),
                        });
                    };
                    self.at += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.at += 1;
                        args.push(self.expr()?);
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("expected `)`");
                    }
                    self.at += 1;
                    if !func.variadic() && args.len() != 1 {
                        return Err(Error::Parse {
                            pos,
                            msg: format!("`{}` takes exactly one argument", func.name()),
                        });
                    }
                    Ok(Ast::Call { func, args })
                } else {
                    Ok(Ast::Ident { name, pos })
                }
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.at += 1;
                Ok(inner)
            }
            Some(_) => self.err("unexpected token"),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// Whether `name` is a built-in function or constant (and so unavailable as
/// a variable name).
pub fn is_builtin(name: &str) -> bool {
    Func::lookup(name).is_some() || name == "inf" || name == "pi"
}

/// Whether `name` is a valid identifier: `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(name: &str) -> bool {
    let mut c = name.chars();
    c.next().is_some_and(|h| h.is_ascii_alphabetic() || h == '_') && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

/// Parse an expression into an unresolved syntax tree.
pub fn parse(src: &str) -> Result<Ast> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        at: 0,
        end: src.len(),
        depth: 0,
    };
    let ast = p.expr()?;
    if p.at != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(ast)
}

/// Ordered variable names; an identifier compiles to its index here.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    names: Vec<String>,
}

impl Scope {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a name and return its slot. Re-registering returns the
    /// existing slot.
    pub fn push(&mut self, name: impl Into<String>) -> usize {
        let name = name.into();
        if let Some(i) = self.slot(&name) {
            return i;
        }
        self.names.push(name);
        self.names.len() - 1
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A compiled expression. Evaluation never panics; arithmetic follows IEEE
/// semantics (division by zero yields an infinity or NaN).
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    source: String,
    arity: usize,
}

impl Expr {
    /// Parse and resolve `src` against `scope`.
    pub fn compile(src: &str, scope: &Scope) -> Result<Expr> {
        let ast = parse(src)?;
        let root = resolve(&ast, scope)?;
        Ok(Expr {
            root,
            source: src.trim().to_string(),
            arity: scope.len(),
        })
    }

    /// Number of slots the evaluation environment must provide.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluate against `env`, indexed by the slots of the compiling scope.
    /// Missing slots evaluate as NaN.
    pub fn eval(&self, env: &[f64]) -> f64 {
        eval(&self.root, env)
    }

    /// Slots the expression reads, ascending and deduplicated.
    pub fn slots(&self) -> Vec<usize> {
        fn walk(n: &Node, out: &mut Vec<usize>) {
            match n {
                Node::Num(_) => {}
                Node::Var(i) => out.push(*i),
                Node::Neg(a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Whether the value is independent of every slot.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
                Node::Call(_, args) => args.iter().all(walk),
            }
        }
        walk(&self.root)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn resolve(ast: &Ast, scope: &Scope) -> Result<Node> {
    Ok(match ast {
        Ast::Num(v) => Node::Num(*v),
        Ast::Ident { name, pos } => match scope.slot(name) {
            Some(i) => Node::Var(i),
            None => match name.as_str() {
                "inf" => Node::Num(f64::INFINITY),
                "pi" => Node::Num(std::f64::consts::PI),
                _ => {
                    return Err(Error::Parse {
                        pos: *pos,
                        msg: format!("unknown identifier `{name}`"),
                    })
                }
            },
        },
        Ast::Neg(a) => Node::Neg(Box::new(resolve(a, scope)?)),
        Ast::Bin(op, a, b) => Node::Bin(*op, Box::new(resolve(a, scope)?), Box::new(resolve(b, scope)?)),
        Ast::Call { func, args } => Node::Call(
            *func,
            args.iter().map(|a| resolve(a, scope)).collect::<Result<_>>()?,
        ),
    })
}

fn eval(node: &Node, env: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(i) => env.get(*i).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval(a, env),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => {
                    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                        a.powi(b as i32)
                    } else {
                        a.powf(b)
                    }
                }
            }
        }
        Node::Call(func, args) => {
            let first = eval(&args[0], env);
            match func {
                Func::Min => args[1..].iter().fold(first, |m, a| m.min(eval(a, env))),
                Func::Max => args[1..].iter().fold(first, |m, a| m.max(eval(a, env))),
                Func::Pos => first.max(0.0),
                Func::Neg => (-first).max(0.0),
                Func::Abs => first.abs(),
                Func::Sqrt => first.sqrt(),
                Func::Floor => first.floor(),
                Func::Ceil => first.ceil(),
                Func::Round => first.round(),
                Func::Exp => first.exp(),
                Func::Ln => first.ln(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(names: &[&str]) -> Scope {
        let mut s = Scope::new();
        for n in names {
            s.push(*n);
        }
        s
    }

    fn ev(src: &str, names: &[&str], env: &[f64]) -> f64 {
        Expr::compile(src, &scope(names)).unwrap().eval(env)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[], &[]), 9.0);
        assert_eq!(ev("-2^2", &[], &[]), -4.0);
        assert_eq!(ev("2^3^2", &[], &[]), 512.0);
        assert_eq!(ev("8 / 4 / 2", &[], &[]), 1.0);
        assert_eq!(ev("10 - 3 - 2", &[], &[]), 5.0);
        assert_eq!(ev("2^-1", &[], &[]), 0.5);
        assert_eq!(ev("1.5e2 + 2E-1", &[], &[]), 150.2);
    }

    #[test]
    fn erlang_a_death_rate() {
        let src = "mu*min(x1, N) + theta*pos(x1 - N)";
        let names = ["x1", "N", "mu", "theta"];
        assert_eq!(ev(src, &names, &[80.0, 100.0, 1.0, 0.5]), 80.0);
        assert_eq!(ev(src, &names, &[120.0, 100.0, 1.0, 0.5]), 110.0);
    }

    #[test]
    fn functions() {
        assert_eq!(ev("max(1, 5, 3)", &[], &[]), 5.0);
        assert_eq!(ev("min(4)", &[], &[]), 4.0);
        assert_eq!(ev("neg(-3) + pos(-3)", &[], &[]), 3.0);
        assert_eq!(ev("round(2.5) + floor(1.9) + ceil(1.1)", &[], &[]), 3.0 + 1.0 + 2.0);
        assert_eq!(ev("sqrt(16) + abs(-1)", &[], &[]), 5.0);
        assert!(ev("inf", &[], &[]).is_infinite());
        assert!((ev("ln(exp(2))", &[], &[]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse("1 + * 2").unwrap_err();
        assert!(matches!(e, Error::Parse { pos: 4, .. }), "{e}");
        assert!(parse("foo(1)").is_err());
        assert!(parse("(1 + 2").is_err());
        assert!(parse("1 2").is_err());
        assert!(parse("").is_err());
        assert!(parse("abs(1, 2)").is_err());
        assert!(parse("3 # 4").is_err());
        assert!(Expr::compile("y + 1", &Scope::new()).is_err());
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let deep = "(".repeat(10_000) + "1" + &")".repeat(10_000);
        assert!(parse(&deep).is_err());
        let negs = "-".repeat(10_000) + "1";
        assert!(parse(&negs).is_err());
        let pows = "2^".repeat(10_000) + "1";
        assert!(parse(&pows).is_err());
    }

    #[test]
    fn division_by_zero_is_ieee() {
        assert!(ev("1/0", &[], &[]).is_infinite());
        assert!(ev("0/0", &[], &[]).is_nan());
    }

    #[test]
    fn constant_detection() {
        let s = scope(&["x1"]);
        assert!(Expr::compile("2*pi", &s).unwrap().is_constant());
        assert!(!Expr::compile("x1 + 1", &s).unwrap().is_constant());
    }
}
