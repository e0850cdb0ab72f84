//! Scalar expressions of the output `y`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := power (('*' | '/') power)*
//! power   := unary ('^' int)?
//! unary   := '-' unary | primary
//! primary := number | 'y' | '(' sum ')' | func '(' args ')'
//! func    := cos | sin | exp | pow
//! ```
//!
//! `pow(base, n)` and `base ^ n` both require an integer literal exponent.
//! Unary minus binds tighter than `^`, so `-y^2` is `(-y)^2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at position {position}")]
pub struct ParseError {
    /// Byte offset into the source; equals the source length for unexpected end of input.
    pub position: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("`{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("expression evaluated to non-finite value {value} at y = {y}")]
pub struct EvalError {
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Cos(Box<Node>),
    Sin(Box<Node>),
    Exp(Box<Node>),
    Pow(Box<Node>, i32),
}

impl Node {
    fn eval(&self, y: f64) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var => y,
            Node::Neg(a) => -a.eval(y),
            Node::Add(a, b) => a.eval(y) + b.eval(y),
            Node::Sub(a, b) => a.eval(y) - b.eval(y),
            Node::Mul(a, b) => a.eval(y) * b.eval(y),
            Node::Div(a, b) => a.eval(y) / b.eval(y),
            Node::Cos(a) => a.eval(y).cos(),
            Node::Sin(a) => a.eval(y).sin(),
            Node::Exp(a) => a.eval(y).exp(),
            Node::Pow(a, n) => a.eval(y).powi(*n),
        }
    }
}

impl fmt::Display for Node {
    // Fully parenthesised so that printing then parsing reproduces the tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if c.is_sign_negative() => write!(f, "(-{:?})", -c),
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var => f.write_str("y"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Pow(a, n) => write!(f, "pow({a}, {n})"),
        }
    }
}

/// A parsed nonlinearity `psi(y)`.
///
/// Keeps the source text it was parsed from so configs round-trip unchanged.
#[derive(Debug, Clone)]
pub struct NonlinearityExpr {
    source: String,
    ast: Node,
}

impl NonlinearityExpr {
    pub fn ast(&self) -> &Node {
        &self.ast
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn from_ast(ast: Node) -> Self {
        Self {
            source: ast.to_string(),
            ast,
        }
    }

    /// Evaluates at `y`, flagging NaN and infinities.
    pub fn eval(&self, y: f64) -> Result<f64, EvalError> {
        let value = self.ast.eval(y);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError { y, value })
        }
    }

    /// Canonical, fully parenthesised rendering.
    pub fn canonical(&self) -> String {
        self.ast.to_string()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_ast(Node::Const(c))
    }
}

impl PartialEq for NonlinearityExpr {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast
    }
}

impl fmt::Display for NonlinearityExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for NonlinearityExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

impl Serialize for NonlinearityExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for NonlinearityExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_expr(&s).map_err(serde::de::Error::custom)
    }
}

pub fn parse_expr(src: &str) -> Result<NonlinearityExpr, ParseError> {
    let tokens = tokenize(src)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: src.len(),
    };
    if parser.tokens.is_empty() {
        return Err(parser.error_here(ParseErrorKind::Syntax("empty expression".into())));
    }
    let ast = parser.sum()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError {
            position: tok.pos,
            kind: ParseErrorKind::Syntax(format!("unexpected {}", tok.kind)),
        });
    }
    Ok(NonlinearityExpr {
        source: src.to_string(),
        ast,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Plus => f.write_str("`+`"),
            TokenKind::Minus => f.write_str("`-`"),
            TokenKind::Star => f.write_str("`*`"),
            TokenKind::Slash => f.write_str("`/`"),
            TokenKind::Caret => f.write_str("`^`"),
            TokenKind::LParen => f.write_str("`(`"),
            TokenKind::RParen => f.write_str("`)`"),
            TokenKind::Comma => f.write_str("`,`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ParseError {
                    position: start,
                    kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
                })?;
                out.push(Token {
                    kind: TokenKind::Number(value),
                    pos: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(src[start..i].to_string()),
                    pos: start,
                });
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    position: start,
                    kind: ParseErrorKind::Syntax(format!("unexpected character `{ch}`")),
                });
            }
        };
        out.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            position: self.here(),
            kind,
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match self.peek() {
            Some(t) => t.kind.to_string(),
            None => "end of input".to_string(),
        };
        self.error_here(ParseErrorKind::Syntax(format!(
            "expected {wanted}, found {found}"
        )))
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().is_some_and(|t| &t.kind == kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(&TokenKind::Plus) {
                lhs = Node::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat(&TokenKind::Minus) {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.power()?;
        loop {
            if self.eat(&TokenKind::Star) {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.power()?));
            } else if self.eat(&TokenKind::Slash) {
                lhs = Node::Div(Box::new(lhs), Box::new(self.power()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.unary()?;
        if self.eat(&TokenKind::Caret) {
            let n = self.integer()?;
            return Ok(Node::Pow(Box::new(base), n));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(&TokenKind::Minus) {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    /// Optionally signed integer literal.
    fn integer(&mut self) -> Result<i32, ParseError> {
        let position = self.here();
        let negative = self.eat(&TokenKind::Minus);
        match self.next() {
            Some(Token {
                kind: TokenKind::Number(v),
                ..
            }) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                let n = v as i32;
                Ok(if negative { -n } else { n })
            }
            _ => Err(ParseError {
                position,
                kind: ParseErrorKind::Syntax("exponent must be an integer literal".into()),
            }),
        }
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("an operand"));
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(&TokenKind::RParen) {
                    return Err(self.unexpected("`)`"));
                }
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if name == "y" {
                    return Ok(Node::Var);
                }
                let expected = match name.as_str() {
                    "cos" | "sin" | "exp" => 1,
                    "pow" => 2,
                    _ => {
                        return Err(ParseError {
                            position: tok.pos,
                            kind: ParseErrorKind::UnknownIdentifier(name),
                        })
                    }
                };
                self.call(&name, tok.pos, expected)
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn call(&mut self, name: &str, name_pos: usize, expected: usize) -> Result<Node, ParseError> {
        if !self.eat(&TokenKind::LParen) {
            return Err(self.unexpected("`(`"));
        }
        let mut args = Vec::new();
        let mut exponent = None;
        if !self.eat(&TokenKind::RParen) {
            loop {
                if name == "pow" && args.len() == 1 && exponent.is_none() {
                    exponent = Some(self.integer()?);
                } else {
                    args.push(self.sum()?);
                }
                if self.eat(&TokenKind::Comma) {
                    continue;
                }
                if self.eat(&TokenKind::RParen) {
                    break;
                }
                return Err(self.unexpected("`,` or `)`"));
            }
        }
        let found = args.len() + usize::from(exponent.is_some());
        if found != expected {
            return Err(ParseError {
                position: name_pos,
                kind: ParseErrorKind::Arity {
                    name: name.to_string(),
                    expected,
                    found,
                },
            });
        }
        let arg = Box::new(args.remove(0));
        Ok(match name {
            "cos" => Node::Cos(arg),
            "sin" => Node::Sin(arg),
            "exp" => Node::Exp(arg),
            _ => Node::Pow(arg, exponent.unwrap_or(1)),
        })
    }
}
