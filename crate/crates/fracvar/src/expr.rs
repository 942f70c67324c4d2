//! A small arithmetic-expression grammar for coefficient fields and
//! manufactured solutions: one variable `x`, the constants `pi` and `e`,
//! the functions sin, cos, exp, sqrt, abs, pow, and the binary operators
//! `+ - * / ^` with the usual precedence (^ right-associative, binding
//! tighter than unary minus).
//!
//! The parser is recursive descent over a token stream; errors carry the
//! byte offset and the expected-token set. A pretty-printer emits a form
//! that reparses to an identical tree, and a symbolic derivative covers
//! the differentiable part of the grammar.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedConst {
    Pi,
    E,
}

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
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

/// Expression tree. `pow(a, b)` is normalized to the `^` operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Var,
    Const(NamedConst),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier '{s}'"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Caret => write!(f, "'^'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Comma => write!(f, "','"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Tok::Slash));
                i += 1;
            }
            '^' => {
                out.push((i, Tok::Caret));
                i += 1;
            }
            '(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            '0'..='9' | '.' => {
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
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    offset: start,
                    expected: "a numeric literal".into(),
                    found: format!("'{s}'"),
                })?;
                out.push((start, Tok::Num(v)));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                return Err(Error::Parse {
                    offset: i,
                    expected: "an operator, number, identifier, or parenthesis".into(),
                    found: format!("'{c}'"),
                })
            }
        }
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, expected: &str) -> Result<()> {
        let (off, tok) = self.peek().clone();
        if &tok == want {
            self.bump();
            Ok(())
        } else {
            Err(Error::Parse {
                offset: off,
                expected: expected.into(),
                found: tok.to_string(),
            })
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().1 {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().1 {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr> {
        if self.peek().1 == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    // power := primary ('^' unary)?   (right-associative)
    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.peek().1 == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let (off, tok) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Number(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var),
                "pi" => Ok(Expr::Const(NamedConst::Pi)),
                "e" => Ok(Expr::Const(NamedConst::E)),
                "sin" | "cos" | "exp" | "sqrt" | "abs" => {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        _ => Func::Abs,
                    };
                    self.expect(&Tok::LParen, "'(' opening the argument list")?;
                    let arg = self.expr()?;
                    if self.peek().1 == Tok::Comma {
                        let (coff, _) = self.peek().clone();
                        return Err(Error::Parse {
                            offset: coff,
                            expected: format!("')' ({name} takes one argument)"),
                            found: "','".into(),
                        });
                    }
                    self.expect(&Tok::RParen, "')'")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                }
                "pow" => {
                    self.expect(&Tok::LParen, "'(' opening the argument list")?;
                    let base = self.expr()?;
                    let (coff, ctok) = self.peek().clone();
                    if ctok != Tok::Comma {
                        return Err(Error::Parse {
                            offset: coff,
                            expected: "',' (pow takes two arguments)".into(),
                            found: ctok.to_string(),
                        });
                    }
                    self.bump();
                    let exp = self.expr()?;
                    self.expect(&Tok::RParen, "')'")?;
                    Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
                }
                _ => Err(Error::Parse {
                    offset: off,
                    expected: "x, pi, e, or one of sin, cos, exp, sqrt, abs, pow".into(),
                    found: format!("identifier '{name}'"),
                }),
            },
            other => Err(Error::Parse {
                offset: off,
                expected: "a primary expression".into(),
                found: other.to_string(),
            }),
        }
    }
}

/// Parses `text` into an expression tree.
pub fn parse_expression(text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    let (off, tok) = p.peek().clone();
    if tok != Tok::End {
        return Err(Error::Parse {
            offset: off,
            expected: "an operator or end of input".into(),
            found: tok.to_string(),
        });
    }
    Ok(e)
}

impl Expr {
    /// Evaluates at `x`, reporting an error when the result is not finite.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = self.eval_raw(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Data(format!(
                "expression '{self}' is not finite at x = {x} (got {v})"
            )))
        }
    }

    pub(crate) fn eval_raw(&self, x: f64) -> f64 {
        match self {
            Expr::Number(v) => *v,
            Expr::Var => x,
            Expr::Const(NamedConst::Pi) => std::f64::consts::PI,
            Expr::Const(NamedConst::E) => std::f64::consts::E,
            Expr::Neg(a) => -a.eval_raw(x),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval_raw(x), b.eval_raw(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, a) => {
                let a = a.eval_raw(x);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                }
            }
        }
    }

    /// True when the tree references the variable.
    pub fn contains_var(&self) -> bool {
        match self {
            Expr::Number(_) | Expr::Const(_) => false,
            Expr::Var => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.contains_var(),
            Expr::Bin(_, a, b) => a.contains_var() || b.contains_var(),
        }
    }

    /// Numeric value of a variable-free subtree, if finite.
    fn as_constant(&self) -> Option<f64> {
        if self.contains_var() {
            return None;
        }
        let v = self.eval_raw(0.0);
        v.is_finite().then_some(v)
    }

    /// Symbolic derivative with light constant folding. `abs` and powers
    /// with the variable in both base and exponent are rejected.
    pub fn differentiate(&self) -> Result<Expr> {
        let d = match self {
            Expr::Number(_) | Expr::Const(_) => Expr::Number(0.0),
            Expr::Var => Expr::Number(1.0),
            Expr::Neg(a) => Expr::Neg(Box::new(a.differentiate()?)),
            Expr::Bin(BinOp::Add, a, b) => Expr::Bin(
                BinOp::Add,
                Box::new(a.differentiate()?),
                Box::new(b.differentiate()?),
            ),
            Expr::Bin(BinOp::Sub, a, b) => Expr::Bin(
                BinOp::Sub,
                Box::new(a.differentiate()?),
                Box::new(b.differentiate()?),
            ),
            Expr::Bin(BinOp::Mul, a, b) => Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(a.differentiate()?),
                    b.clone(),
                )),
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    a.clone(),
                    Box::new(b.differentiate()?),
                )),
            ),
            Expr::Bin(BinOp::Div, a, b) => Expr::Bin(
                BinOp::Div,
                Box::new(Expr::Bin(
                    BinOp::Sub,
                    Box::new(Expr::Bin(
                        BinOp::Mul,
                        Box::new(a.differentiate()?),
                        b.clone(),
                    )),
                    Box::new(Expr::Bin(
                        BinOp::Mul,
                        a.clone(),
                        Box::new(b.differentiate()?),
                    )),
                )),
                Box::new(Expr::Bin(BinOp::Mul, b.clone(), b.clone())),
            ),
            Expr::Bin(BinOp::Pow, a, b) => {
                if let Some(k) = b.as_constant() {
                    // d(a^k) = k a^(k-1) a'
                    Expr::Bin(
                        BinOp::Mul,
                        Box::new(Expr::Bin(
                            BinOp::Mul,
                            Box::new(Expr::Number(k)),
                            Box::new(Expr::Bin(
                                BinOp::Pow,
                                a.clone(),
                                Box::new(Expr::Number(k - 1.0)),
                            )),
                        )),
                        Box::new(a.differentiate()?),
                    )
                } else if let Some(c) = a.as_constant() {
                    if c <= 0.0 {
                        return Err(Error::Domain(format!(
                            "cannot differentiate '{self}': nonpositive base {c} \
                             under a variable exponent"
                        )));
                    }
                    // d(c^b) = c^b ln(c) b'
                    Expr::Bin(
                        BinOp::Mul,
                        Box::new(Expr::Bin(
                            BinOp::Mul,
                            Box::new(self.clone()),
                            Box::new(Expr::Number(c.ln())),
                        )),
                        Box::new(b.differentiate()?),
                    )
                } else {
                    return Err(Error::Domain(format!(
                        "cannot differentiate '{self}': the grammar has no \
                         logarithm for a variable base and exponent"
                    )));
                }
            }
            Expr::Call(Func::Sin, a) => Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Call(Func::Cos, a.clone())),
                Box::new(a.differentiate()?),
            ),
            Expr::Call(Func::Cos, a) => Expr::Neg(Box::new(Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Call(Func::Sin, a.clone())),
                Box::new(a.differentiate()?),
            ))),
            Expr::Call(Func::Exp, a) => Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Call(Func::Exp, a.clone())),
                Box::new(a.differentiate()?),
            ),
            Expr::Call(Func::Sqrt, a) => Expr::Bin(
                BinOp::Div,
                Box::new(a.differentiate()?),
                Box::new(Expr::Bin(
                    BinOp::Mul,
                    Box::new(Expr::Number(2.0)),
                    Box::new(Expr::Call(Func::Sqrt, a.clone())),
                )),
            ),
            Expr::Call(Func::Abs, _) => {
                return Err(Error::Domain(format!(
                    "cannot differentiate '{self}': abs is not differentiable"
                )))
            }
        };
        Ok(d.simplified())
    }

    /// Folds constant subtrees and strips arithmetic identities.
    pub fn simplified(&self) -> Expr {
        let folded = match self {
            Expr::Neg(a) => Expr::Neg(Box::new(a.simplified())),
            Expr::Bin(op, a, b) => {
                Expr::Bin(*op, Box::new(a.simplified()), Box::new(b.simplified()))
            }
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.simplified())),
            other => other.clone(),
        };
        if let Expr::Number(_) = folded {
            return folded;
        }
        if let Some(v) = folded.as_constant() {
            return Expr::Number(v);
        }
        match folded {
            Expr::Bin(BinOp::Add, a, b) => match (*a, *b) {
                (Expr::Number(z), rest) | (rest, Expr::Number(z)) if z == 0.0 => rest,
                (a, b) => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
            },
            Expr::Bin(BinOp::Sub, a, b) => match (*a, *b) {
                (rest, Expr::Number(0.0)) => rest,
                (a, b) => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
            },
            Expr::Bin(BinOp::Mul, a, b) => match (*a, *b) {
                (Expr::Number(z), _) | (_, Expr::Number(z)) if z == 0.0 => Expr::Number(0.0),
                (Expr::Number(o), rest) | (rest, Expr::Number(o)) if o == 1.0 => rest,
                (a, b) => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
            },
            Expr::Bin(BinOp::Div, a, b) => match (*a, *b) {
                (rest, Expr::Number(1.0)) => rest,
                (a, b) => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
            },
            Expr::Bin(BinOp::Pow, a, b) => match (*a, *b) {
                (rest, Expr::Number(1.0)) => rest,
                (_, Expr::Number(0.0)) => Expr::Number(1.0),
                (a, b) => Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b)),
            },
            other => other,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

impl fmt::Display for Expr {
    /// Prints with the minimal parentheses that reparse to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
            if wrap {
                write!(f, "(")?;
                write!(f, "{e}")?;
                write!(f, ")")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Number(v) => {
                if *v < 0.0 || (v == &0.0 && v.is_sign_negative()) {
                    write!(f, "({v})")
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var => write!(f, "x"),
            Expr::Const(NamedConst::Pi) => write!(f, "pi"),
            Expr::Const(NamedConst::E) => write!(f, "e"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, a.precedence() < 3)
            }
            Expr::Bin(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => (" + ", 1),
                    BinOp::Sub => (" - ", 1),
                    BinOp::Mul => (" * ", 2),
                    BinOp::Div => (" / ", 2),
                    BinOp::Pow => (" ^ ", 4),
                };
                match op {
                    // left-associative: wrap the right child on ties
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                        child(f, a, a.precedence() < prec)?;
                        write!(f, "{sym}")?;
                        child(f, b, b.precedence() <= prec)
                    }
                    // right-associative and above unary minus: wrap the
                    // left child on ties and any lower-precedence right child
                    BinOp::Pow => {
                        child(f, a, a.precedence() <= prec)?;
                        write!(f, "{sym}")?;
                        child(f, b, b.precedence() < 3)
                    }
                }
            }
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Sqrt => "sqrt",
                    Func::Abs => "abs",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval(s: &str, x: f64) -> f64 {
        parse_expression(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn basic_arithmetic_and_precedence() {
        assert_eq!(eval("2*x+1", 0.5), 2.0);
        assert_eq!(eval("2*3+4*5", 0.0), 26.0);
        assert_eq!(eval("2/4/2", 0.0), 0.25);
        assert_eq!(eval("2^3^2", 0.0), 512.0);
        assert_eq!(eval("-2^2", 0.0), -4.0);
        assert_eq!(eval("x^-1", 2.0), 0.5);
        assert_eq!(eval("2 - 3 - 4", 0.0), -5.0);
        assert_relative_eq!(eval("sin(pi*x)", 0.5), 1.0, max_relative = 1e-15);
        assert_relative_eq!(eval("exp(1)", 0.0), std::f64::consts::E);
        assert_eq!(eval("pow(x, 2)", 3.0), 9.0);
        assert_eq!(eval("abs(0 - x)", 2.5), 2.5);
        assert_relative_eq!(eval("sqrt(x)", 9.0), 3.0);
        assert_eq!(eval("1.5e2", 0.0), 150.0);
    }

    #[test]
    fn syntax_error_reports_offset_and_expectation() {
        let err = parse_expression("2*^x").unwrap_err();
        match err {
            Error::Parse {
                offset, expected, ..
            } => {
                assert_eq!(offset, 2);
                assert!(expected.contains("primary expression"), "{expected}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_and_arity_errors() {
        assert!(matches!(
            parse_expression("foo(x)"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            parse_expression("sin(x, 1)"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_expression("pow(x)"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_expression("(1 + x"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(parse_expression("1 + "), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_expression("1 $ 2"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn evaluation_flags_non_finite_results() {
        let e = parse_expression("1/(x - x)").unwrap();
        assert!(e.eval(1.0).is_err());
        let e = parse_expression("sqrt(0 - 1 - x)").unwrap();
        assert!(e.eval(0.5).is_err());
    }

    #[test]
    fn printer_round_trips_a_corpus() {
        let corpus = [
            "2*x+1",
            "sin(pi*x)",
            "x^2",
            "x ^ -2",
            "-x^2",
            "(-x)^2",
            "-(x + 1)",
            "2^3^2",
            "(2^3)^2",
            "1 - (2 - 3)",
            "1 - 2 - 3",
        ];
        for s in corpus {
            let ast = parse_expression(s).unwrap();
            let printed = ast.to_string();
            let reparsed = parse_expression(&printed)
                .unwrap_or_else(|e| panic!("reparse of '{printed}' failed: {e:?}"));
            assert_eq!(ast, reparsed, "round trip of '{s}' via '{printed}'");
        }
        let more = [
            "x/(1 + x)",
            "x/1/x",
            "abs(x - 0.5)",
            "sqrt(x^2 + 1)",
            "exp(-x)",
            "cos(2*pi*x) + sin(x)",
            "pow(x, 3) - pow(2, x)",
            "e^x",
            "1.25e-3 * x",
            "((x))",
            "x*(1 - x)*(2 - x)",
            "-(-x)",
            "-x*-x",
            "x^(1/2)",
            "2*(x + 1)^3",
            "x - -1",
            "0.5*x^4 - x^3 + 2",
            "sin(cos(exp(x)))",
        ];
        for s in more {
            let ast = parse_expression(s).unwrap();
            let printed = ast.to_string();
            let reparsed = parse_expression(&printed).unwrap();
            assert_eq!(ast, reparsed, "round trip of '{s}' via '{printed}'");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let cases = [
            "x^3",
            "sin(pi*x)",
            "x*exp(x)",
            "sqrt(x + 1)",
            "x/(1 + x^2)",
            "2^x",
            "e^x",
            "cos(x)*sin(x)",
            "pow(x, 4) - 3*x",
        ];
        for s in cases {
            let f = parse_expression(s).unwrap();
            let df = f.differentiate().unwrap();
            for &x in &[0.1, 0.35, 0.8] {
                let h = 1e-6;
                let fd = (f.eval(x + h).unwrap() - f.eval(x - h).unwrap()) / (2.0 * h);
                assert_relative_eq!(df.eval(x).unwrap(), fd, max_relative = 1e-7, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn derivative_rejects_abs_and_general_powers() {
        assert!(parse_expression("abs(x)").unwrap().differentiate().is_err());
        assert!(parse_expression("x^x").unwrap().differentiate().is_err());
        assert!(parse_expression("(0 - 2)^x")
            .unwrap()
            .differentiate()
            .is_err());
    }

    #[test]
    fn simplification_folds_constants() {
        let e = parse_expression("x^2").unwrap().differentiate().unwrap();
        assert_eq!(e.to_string(), "2 * x");
        let zero = parse_expression("3 + pi").unwrap().differentiate().unwrap();
        assert_eq!(zero, Expr::Number(0.0));
    }
}
