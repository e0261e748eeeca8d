//! Arithmetic expressions over parameter names, e.g. `theta7/theta9`.
//!
//! Grammar, loosest to tightest:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! So `-2^2` is −4 and `2^3^2` is 2^9. Functions: log, exp, sqrt, abs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Nesting limit; deeper input is rejected rather than risking the stack.
pub const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("empty expression")]
    Empty,
    #[error("unbound variable `{0}`")]
    Unbound(String),
}

fn syntax(offset: usize, msg: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Log,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Log => x.ln(),
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Result of evaluating on one set of bindings. `Undefined` covers division
/// by zero, log or sqrt of a negative, overflow: any non-finite intermediate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluated {
    Value(f64),
    Undefined,
}

impl Evaluated {
    pub fn value(self) -> Option<f64> {
        match self {
            Evaluated::Value(v) => Some(v),
            Evaluated::Undefined => None,
        }
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            depth: 0,
        };
        p.skip_ws();
        if p.pos == p.src.len() {
            return Err(ExprError::Empty);
        }
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(syntax(p.pos, format!("unexpected `{}`", p.src[p.pos] as char)));
        }
        Ok(e)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn evaluate(&self, bindings: &BTreeMap<String, f64>) -> Result<Evaluated, ExprError> {
        for v in self.free_vars() {
            if !bindings.contains_key(&v) {
                return Err(ExprError::Unbound(v));
            }
        }
        Ok(self.eval_with(&|name| bindings[name]))
    }

    fn eval_with(&self, lookup: &dyn Fn(&str) -> f64) -> Evaluated {
        fn go(e: &Expr, lookup: &dyn Fn(&str) -> f64) -> Option<f64> {
            let v = match e {
                Expr::Num(x) => *x,
                Expr::Var(name) => lookup(name),
                Expr::Neg(a) => -go(a, lookup)?,
                Expr::Bin(op, a, b) => op.apply(go(a, lookup)?, go(b, lookup)?),
                Expr::Call(f, a) => f.apply(go(a, lookup)?),
            };
            v.is_finite().then_some(v)
        }
        match go(self, lookup) {
            Some(v) => Evaluated::Value(v),
            None => Evaluated::Undefined,
        }
    }

    /// Resolve variable names against a fixed column order for fast
    /// evaluation over many draws.
    pub fn bind(&self, names: &[String]) -> Result<BoundExpr, ExprError> {
        fn go(e: &Expr, names: &[String]) -> Result<Node, ExprError> {
            Ok(match e {
                Expr::Num(x) => Node::Num(*x),
                Expr::Var(v) => Node::Var(
                    names
                        .iter()
                        .position(|n| n == v)
                        .ok_or_else(|| ExprError::Unbound(v.clone()))?,
                ),
                Expr::Neg(a) => Node::Neg(Box::new(go(a, names)?)),
                Expr::Bin(op, a, b) => Node::Bin(*op, Box::new(go(a, names)?), Box::new(go(b, names)?)),
                Expr::Call(f, a) => Node::Call(*f, Box::new(go(a, names)?)),
            })
        }
        Ok(BoundExpr { root: go(self, names)? })
    }
}

/// Fully parenthesized; reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// An expression with variables resolved to column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundExpr {
    root: Node,
}

impl BoundExpr {
    pub fn eval(&self, row: &[f64]) -> Evaluated {
        fn go(n: &Node, row: &[f64]) -> Option<f64> {
            let v = match n {
                Node::Num(x) => *x,
                Node::Var(i) => row[*i],
                Node::Neg(a) => -go(a, row)?,
                Node::Bin(op, a, b) => op.apply(go(a, row)?, go(b, row)?),
                Node::Call(f, a) => f.apply(go(a, row)?),
            };
            v.is_finite().then_some(v)
        }
        match go(&self.root, row) {
            Some(v) => Evaluated::Value(v),
            None => Evaluated::Undefined,
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(syntax(self.pos, format!("nesting deeper than {MAX_DEPTH}")));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let e = if self.peek() == Some(b'-') {
            self.pos += 1;
            Expr::Neg(Box::new(self.unary()?))
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn expect_close(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(syntax(self.pos, format!("expected `)`, found `{}`", c as char))),
            None => Err(syntax(self.pos, "expected `)`, found end of input")),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(syntax(self.pos, "unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_close()?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
                if let Some(func) = Func::from_name(name) {
                    if self.peek() != Some(b'(') {
                        return Err(syntax(self.pos, format!("expected `(` after function `{name}`")));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_close()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if self.peek() == Some(b'(') {
                    return Err(syntax(start, format!("unknown function `{name}`")));
                }
                Ok(Expr::Var(name.to_owned()))
            }
            Some(c) if c.is_ascii() => Err(syntax(self.pos, format!("unexpected `{}`", c as char))),
            Some(_) => Err(syntax(self.pos, "non-ASCII character")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(syntax(start, "malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(syntax(save, "malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let v: f64 = text.parse().map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
        if !v.is_finite() {
            return Err(syntax(start, format!("number `{text}` is not finite")));
        }
        Ok(Expr::Num(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Box<Expr> {
        Box::new(Expr::Var(s.into()))
    }

    fn num(x: f64) -> Box<Expr> {
        Box::new(Expr::Num(x))
    }

    fn eval(s: &str, b: &[(&str, f64)]) -> Evaluated {
        let map = b.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Expr::parse(s).unwrap().evaluate(&map).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            Expr::parse("theta7/theta9").unwrap(),
            Expr::Bin(BinOp::Div, var("theta7"), var("theta9"))
        );
        assert_eq!(eval("2+3*4", &[]), Evaluated::Value(14.0));
        assert_eq!(
            Expr::parse("log("),
            Err(ExprError::Syntax {
                offset: 4,
                msg: "unexpected end of input".into()
            })
        );
        assert_eq!(Expr::parse("   "), Err(ExprError::Empty));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(
            Expr::parse("-2^2").unwrap(),
            Expr::Neg(Box::new(Expr::Bin(BinOp::Pow, num(2.0), num(2.0))))
        );
        assert_eq!(eval("-2^2", &[]), Evaluated::Value(-4.0));
        assert_eq!(eval("2^3^2", &[]), Evaluated::Value(512.0));
        assert_eq!(eval("8-3-2", &[]), Evaluated::Value(3.0));
        assert_eq!(eval("16/4/2", &[]), Evaluated::Value(2.0));
        assert_eq!(eval("2^-1", &[]), Evaluated::Value(0.5));
        assert_eq!(eval("--3", &[]), Evaluated::Value(3.0));
        assert_eq!(eval("1.5e2 + .5", &[]), Evaluated::Value(150.5));
    }

    #[test]
    fn evaluation_contract() {
        assert_eq!(eval("log(exp(x))", &[("x", 1.5)]), Evaluated::Value(1.5));
        assert_eq!(eval("a/b", &[("a", 1.0), ("b", 0.0)]), Evaluated::Undefined);
        assert_eq!(eval("sqrt(x)", &[("x", -1.0)]), Evaluated::Undefined);
        assert_eq!(eval("log(0)", &[]), Evaluated::Undefined);
        assert_eq!(eval("exp(-1/0)", &[]), Evaluated::Undefined);
        assert_eq!(eval("abs(-2)", &[]), Evaluated::Value(2.0));
        let e = Expr::parse("a + c").unwrap();
        let b = [("a".to_string(), 1.0)].into_iter().collect();
        assert_eq!(e.evaluate(&b), Err(ExprError::Unbound("c".into())));
    }

    #[test]
    fn free_vars_examples() {
        let set = |s: &str| Expr::parse(s).unwrap().free_vars().into_iter().collect::<Vec<_>>();
        assert_eq!(set("theta7/theta9"), vec!["theta7", "theta9"]);
        assert!(set("3.14").is_empty());
        assert_eq!(set("x + x*x"), vec!["x"]);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let off = |s: &str| match Expr::parse(s) {
            Err(ExprError::Syntax { offset, .. }) => offset,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(off("1 +"), 3);
        assert_eq!(off("(a"), 2);
        assert_eq!(off("a b"), 2);
        assert_eq!(off("foo(1)"), 0);
        assert_eq!(off("log 2"), 4);
        assert_eq!(off("1e"), 1);
        assert_eq!(off("2 $ 3"), 2);
        assert_eq!(off("1e999"), 0);
        assert_eq!(off("θ"), 0);
    }

    #[test]
    fn depth_limit() {
        let deep = format!("{}1{}", "(".repeat(10_000), ")".repeat(10_000));
        assert!(matches!(Expr::parse(&deep), Err(ExprError::Syntax { .. })));
        let negs = format!("{}1", "-".repeat(10_000));
        assert!(Expr::parse(&negs).is_err());
        let ok = format!("{}1{}", "(".repeat(100), ")".repeat(100));
        assert!(Expr::parse(&ok).is_ok());
    }

    #[test]
    fn bound_matches_map_evaluation() {
        let e = Expr::parse("a/b + log(c) - a^2").unwrap();
        let names = vec!["c".to_string(), "a".to_string(), "b".to_string()];
        let bound = e.bind(&names).unwrap();
        let row = [2.0, 3.0, 4.0];
        let map = names.iter().cloned().zip(row).collect();
        assert_eq!(bound.eval(&row), e.evaluate(&map).unwrap());
        assert!(matches!(e.bind(&names[..2]), Err(ExprError::Unbound(_))));
    }

    #[test]
    fn display_is_fully_parenthesized() {
        let e = Expr::parse("-a^2 + 3*log(b)").unwrap();
        assert_eq!(e.to_string(), "((-(a ^ 2)) + (3 * log(b)))");
        assert_eq!(Expr::parse(&e.to_string()).unwrap(), e);
    }
}
