//! Surface syntax: tokenizer, AST and a recursive-descent parser.
//!
//! The term language is delimiter-complete (every compound form is opened by a
//! keyword, an identifier followed by `(`, or a parenthesis), so the parser
//! needs one token of lookahead and never backtracks.

use std::fmt;

use thiserror::Error;

use crate::types::{is_identifier, Operator, SELF_NAME};

/// Splits on runs of whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Joins tokens with single spaces.
pub fn serialize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LiteralKind {
    Int,
    Bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Literal(String, LiteralKind),
    /// One-based parameter index: `p1` is `Param(1)`.
    Param(usize),
    Invoke(String, Vec<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Op(Operator, Box<Expr>, Box<Expr>),
}

/// A parsed `fun f0 ( p1 : T1 , ... ) : R = body`.
///
/// Types are kept as written; they are resolved against a context only by the
/// type checker.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub params: Vec<String>,
    pub ret: String,
    pub body: Expr,
}

impl Program {
    /// Index of the declared return-type token in the serialization.
    pub fn return_type_position(&self) -> usize {
        if self.params.is_empty() {
            5
        } else {
            4 * self.params.len() + 4
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = ["fun", SELF_NAME, "("].map(String::from).to_vec();
        for (i, ty) in self.params.iter().enumerate() {
            if i > 0 {
                out.push(",".into());
            }
            out.push(format!("p{}", i + 1));
            out.push(":".into());
            out.push(ty.clone());
        }
        out.extend([")", ":"].map(String::from));
        out.push(self.ret.clone());
        out.push("=".into());
        self.body.write_tokens(&mut out);
        out
    }
}

impl Expr {
    pub fn write_tokens(&self, out: &mut Vec<String>) {
        match self {
            Expr::Literal(tok, _) => out.push(tok.clone()),
            Expr::Param(i) => out.push(format!("p{i}")),
            Expr::Invoke(name, args) => {
                out.push(name.clone());
                out.push("(".into());
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push(",".into());
                    }
                    a.write_tokens(out);
                }
                out.push(")".into());
            }
            Expr::If(c, t, e) => {
                out.push("if".into());
                c.write_tokens(out);
                out.push("{".into());
                t.write_tokens(out);
                out.extend(["}", "else", "{"].map(String::from));
                e.write_tokens(out);
                out.push("}".into());
            }
            Expr::Op(op, l, r) => {
                out.push("(".into());
                l.write_tokens(out);
                out.push(op.token().into());
                r.write_tokens(out);
                out.push(")".into());
            }
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.write_tokens(&mut out);
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(&self.tokens()))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(&self.tokens()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at token {position}: expected {expected}, found {found}")]
pub struct SyntaxError {
    pub position: usize,
    pub expected: String,
    pub found: String,
}

pub fn parse<S: AsRef<str>>(tokens: &[S]) -> Result<Program, SyntaxError> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut p = Parser {
        toks,
        pos: 0,
        arity: 0,
    };
    let program = p.program()?;
    if p.pos != p.toks.len() {
        return Err(p.error("end of input"));
    }
    Ok(program)
}

pub fn parse_str(text: &str) -> Result<Program, SyntaxError> {
    parse(&tokenize(text))
}

struct Parser<'a> {
    toks: Vec<&'a str>,
    pos: usize,
    arity: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn error(&self, expected: &str) -> SyntaxError {
        SyntaxError {
            position: self.pos,
            expected: expected.to_string(),
            found: self
                .peek()
                .map_or("end of input".to_string(), |t| format!("`{t}`")),
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("`{tok}`")))
        }
    }

    fn type_name(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(t) if is_identifier(t) => {
                self.pos += 1;
                Ok(t.to_string())
            }
            _ => Err(self.error("type name")),
        }
    }

    fn program(&mut self) -> Result<Program, SyntaxError> {
        self.expect("fun")?;
        self.expect(SELF_NAME)?;
        self.expect("(")?;
        let mut params = Vec::new();
        if self.peek() != Some(")") {
            loop {
                let expected = format!("p{}", params.len() + 1);
                self.expect(&expected)?;
                self.expect(":")?;
                params.push(self.type_name()?);
                if self.peek() == Some(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(")")?;
        self.expect(":")?;
        let ret = self.type_name()?;
        self.expect("=")?;
        self.arity = params.len();
        let body = self.expr()?;
        Ok(Program { params, ret, body })
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let Some(tok) = self.peek() else {
            return Err(self.error("expression"));
        };
        match tok {
            "true" | "false" => {
                self.pos += 1;
                Ok(Expr::Literal(tok.to_string(), LiteralKind::Bool))
            }
            "if" => {
                self.pos += 1;
                let c = self.expr()?;
                self.expect("{")?;
                let t = self.expr()?;
                self.expect("}")?;
                self.expect("else")?;
                self.expect("{")?;
                let e = self.expr()?;
                self.expect("}")?;
                Ok(Expr::If(Box::new(c), Box::new(t), Box::new(e)))
            }
            "(" => {
                self.pos += 1;
                let l = self.expr()?;
                let op = self
                    .peek()
                    .and_then(Operator::from_token)
                    .ok_or_else(|| self.error("operator"))?;
                self.pos += 1;
                let r = self.expr()?;
                self.expect(")")?;
                Ok(Expr::Op(op, Box::new(l), Box::new(r)))
            }
            t if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) => {
                self.pos += 1;
                Ok(Expr::Literal(t.to_string(), LiteralKind::Int))
            }
            t if param_index(t).is_some() => {
                let i = param_index(t).unwrap();
                if i == 0 || i > self.arity {
                    return Err(self.error(&format!("parameter in p1..p{}", self.arity)));
                }
                self.pos += 1;
                Ok(Expr::Param(i))
            }
            t if is_identifier(t) && !matches!(t, "fun" | "else") => {
                self.pos += 1;
                self.expect("(")?;
                let mut args = Vec::new();
                if self.peek() != Some(")") {
                    loop {
                        args.push(self.expr()?);
                        if self.peek() == Some(",") {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.expect(")")?;
                Ok(Expr::Invoke(t.to_string(), args))
            }
            _ => Err(self.error("expression")),
        }
    }
}

fn param_index(tok: &str) -> Option<usize> {
    let digits = tok.strip_prefix('p')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}
