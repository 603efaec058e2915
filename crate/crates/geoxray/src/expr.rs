//! Minimal arithmetic expression parser for custom conformal factors
//! `λ(x1, x2)` supplied as text in surface JSON.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, the variables `x1`, `x2`,
//! the constants `pi` and `e`, and the one-argument functions
//! `sin cos tan exp log sqrt sinh cosh tanh atan abs`.

use crate::error::{Error, Result};

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
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let mut toks = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        match ch {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                toks.push(Tok::Star);
                i += 1;
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                toks.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| Error::Expr(format!("bad number '{s}'")))?;
                toks.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_')
                {
                    i += 1;
                }
                toks.push(Tok::Ident(bytes[start..i].iter().collect()));
            }
            c => return Err(Error::Expr(format!("unexpected character '{c}'"))),
        }
    }
    Ok(toks)
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize), // 0 = x1, 1 = x2
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Fun(Fun, Box<Node>),
}

#[derive(Debug, Clone, Copy)]
enum Fun {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    Abs,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        match self.next() {
            Some(x) if x == t => Ok(()),
            other => Err(Error::Expr(format!("expected {t:?}, got {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.next();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.next();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // right-associative power binds tighter than unary minus on its left
    fn factor(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.next();
                Ok(Node::Neg(Box::new(self.factor()?)))
            }
            _ => {
                let base = self.atom()?;
                if let Some(Tok::Caret) = self.peek() {
                    self.next();
                    let exp = self.factor()?;
                    Ok(Node::Pow(Box::new(base), Box::new(exp)))
                } else {
                    Ok(base)
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x1" | "x" => Ok(Node::Var(0)),
                "x2" | "y" => Ok(Node::Var(1)),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                f => {
                    let fun = match f {
                        "sin" => Fun::Sin,
                        "cos" => Fun::Cos,
                        "tan" => Fun::Tan,
                        "exp" => Fun::Exp,
                        "log" | "ln" => Fun::Log,
                        "sqrt" => Fun::Sqrt,
                        "sinh" => Fun::Sinh,
                        "cosh" => Fun::Cosh,
                        "tanh" => Fun::Tanh,
                        "atan" => Fun::Atan,
                        "abs" => Fun::Abs,
                        other => {
                            return Err(Error::Expr(format!("unknown name '{other}'")))
                        }
                    };
                    self.expect(Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Node::Fun(fun, Box::new(arg)))
                }
            },
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn eval(node: &Node, x1: f64, x2: f64) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(0) => x1,
        Node::Var(_) => x2,
        Node::Neg(a) => -eval(a, x1, x2),
        Node::Add(a, b) => eval(a, x1, x2) + eval(b, x1, x2),
        Node::Sub(a, b) => eval(a, x1, x2) - eval(b, x1, x2),
        Node::Mul(a, b) => eval(a, x1, x2) * eval(b, x1, x2),
        Node::Div(a, b) => eval(a, x1, x2) / eval(b, x1, x2),
        Node::Pow(a, b) => eval(a, x1, x2).powf(eval(b, x1, x2)),
        Node::Fun(f, a) => {
            let v = eval(a, x1, x2);
            match f {
                Fun::Sin => v.sin(),
                Fun::Cos => v.cos(),
                Fun::Tan => v.tan(),
                Fun::Exp => v.exp(),
                Fun::Log => v.ln(),
                Fun::Sqrt => v.sqrt(),
                Fun::Sinh => v.sinh(),
                Fun::Cosh => v.cosh(),
                Fun::Tanh => v.tanh(),
                Fun::Atan => v.atan(),
                Fun::Abs => v.abs(),
            }
        }
    }
}

/// A parsed scalar expression in the two spatial variables.
#[derive(Debug, Clone)]
pub struct Expr2 {
    node: Node,
    pub source: String,
}

impl Expr2 {
    pub fn parse(src: &str) -> Result<Expr2> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0 };
        let node = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!(
                "trailing input at token {} in '{src}'",
                p.pos
            )));
        }
        Ok(Expr2 { node, source: src.to_string() })
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        eval(&self.node, x1, x2)
    }
}
