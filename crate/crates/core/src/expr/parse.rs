//! Recursive-descent parser for the expression grammar.
//!
//! Precedence, loosest first: `+ -`, `* /`, unary `-`, `^` (right associative).

use super::{BinOp, Func, Node, VarStyle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    Eof,
}

struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit()) {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                expected: vec!["number".into()],
            })?;
            out.push(Token {
                tok: Tok::Num(v),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(Error::Syntax {
                    offset: start,
                    expected: vec!["operator".into(), "operand".into()],
                })
            }
        };
        out.push(Token { tok, offset: start });
        i += c.len_utf8();
    }
    out.push(Token {
        tok: Tok::Eof,
        offset: src.len(),
    });
    Ok(out)
}

pub(super) struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dim: usize,
    style: VarStyle,
}

impl Parser {
    pub(super) fn new(src: &str, dim: usize, style: VarStyle) -> Result<Self> {
        Ok(Self {
            toks: lex(src)?,
            pos: 0,
            dim,
            style,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].offset
    }

    fn bump(&mut self) -> &Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub(super) fn parse_all(mut self) -> Result<Node> {
        let node = self.expr()?;
        if *self.peek() != Tok::Eof {
            return self.fail(&["operator", "end of input"]);
        }
        Ok(node)
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Node::neg(self.unary()?))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::pow(base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.fail(&["')'", "operator"]);
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let func = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier {
                        name: name.clone(),
                        offset,
                    })?;
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if *self.peek() != Tok::RParen {
                        return self.fail(&["')'", "','", "operator"]);
                    }
                    self.bump();
                    if args.len() != func.arity() {
                        return Err(Error::Arity {
                            name,
                            expected: func.arity(),
                            found: args.len(),
                            offset,
                        });
                    }
                    return Ok(Node::call(func, args));
                }
                self.variable(&name, offset)
            }
            _ => self.fail(&["number", "identifier", "'('", "'-'"]),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Node> {
        if name == "pi" {
            return Ok(Node::Const(std::f64::consts::PI));
        }
        let unknown = || Error::UnknownIdentifier {
            name: name.to_string(),
            offset,
        };
        match self.style {
            VarStyle::Radial => {
                if name == "u" {
                    Ok(Node::Var(0))
                } else {
                    Err(unknown())
                }
            }
            VarStyle::Coordinates => {
                let idx: usize = name
                    .strip_prefix('x')
                    .and_then(|s| if s.starts_with('0') { None } else { s.parse().ok() })
                    .ok_or_else(unknown)?;
                if idx == 0 || idx > self.dim {
                    return Err(unknown());
                }
                Ok(Node::Var(idx - 1))
            }
        }
    }
}
