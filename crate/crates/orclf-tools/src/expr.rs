//! Scalar expressions for inline system definitions, compiled to a
//! postfix program over indexed variable slots.
//!
//! Grammar: numbers, `+ - * / ^` (right associative `^`), unary minus,
//! parentheses, variables and calls `f(a, ...)`. Functions: exp, ln, log,
//! sqrt, abs, sin, cos, tan, tanh, sinh, cosh, min, max, pow. Constants:
//! pi, e.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character `{0}` at {1}")]
    Char(char, usize),
    #[error("unexpected end of expression")]
    End,
    #[error("unexpected token `{0}`")]
    Token(String),
    #[error("unknown variable `{0}`")]
    Var(String),
    #[error("unknown function `{0}`")]
    Func(String),
    #[error("`{0}` takes {1} argument(s), got {2}")]
    Arity(String, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Id(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(src: &str) -> Result<Vec<Tok>, ExprError> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let st = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut k = i + 1;
                if k < b.len() && (b[k] == b'+' || b[k] == b'-') {
                    k += 1;
                }
                if k < b.len() && (b[k] as char).is_ascii_digit() {
                    i = k;
                    while i < b.len() && (b[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s = &src[st..i];
            out.push(Tok::Num(s.parse().map_err(|_| ExprError::Token(s.into()))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let st = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Id(src[st..i].into()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(ExprError::Char(c, i)),
            });
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    F1(fn(f64) -> f64),
    F2(fn(f64, f64) -> f64),
}

/// A compiled expression; evaluate with [`Expr::eval`].
#[derive(Debug, Clone)]
pub struct Expr {
    prog: Vec<Op>,
    depth: usize,
    src: String,
}

impl PartialEq for Expr {
    fn eq(&self, o: &Self) -> bool {
        self.src == o.src
    }
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a HashMap<String, usize>,
    prog: Vec<Op>,
}

fn func1(name: &str) -> Option<fn(f64) -> f64> {
    Some(match name {
        "exp" => f64::exp,
        "ln" | "log" => f64::ln,
        "sqrt" => f64::sqrt,
        "abs" => f64::abs,
        "sin" => f64::sin,
        "cos" => f64::cos,
        "tan" => f64::tan,
        "tanh" => f64::tanh,
        "sinh" => f64::sinh,
        "cosh" => f64::cosh,
        _ => return None,
    })
}

fn func2(name: &str) -> Option<fn(f64, f64) -> f64> {
    Some(match name {
        "min" => f64::min,
        "max" => f64::max,
        "pow" => f64::powf,
        _ => return None,
    })
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ExprError> {
        let t = self.toks.get(self.pos).cloned().ok_or(ExprError::End)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, t: Tok) -> Result<(), ExprError> {
        let got = self.next()?;
        if got == t {
            Ok(())
        } else {
            Err(ExprError::Token(format!("{got:?}")))
        }
    }

    fn sum(&mut self) -> Result<(), ExprError> {
        self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            self.product()?;
            self.prog.push(if c == '+' { Op::Add } else { Op::Sub });
        }
        Ok(())
    }

    fn product(&mut self) -> Result<(), ExprError> {
        self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            self.unary()?;
            self.prog.push(if c == '*' { Op::Mul } else { Op::Div });
        }
        Ok(())
    }

    fn unary(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                self.unary()?;
                self.prog.push(Op::Neg);
                Ok(())
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<(), ExprError> {
        self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            self.unary()?;
            self.prog.push(Op::Pow);
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<(), ExprError> {
        match self.next()? {
            Tok::Num(v) => self.prog.push(Op::Const(v)),
            Tok::LParen => {
                self.sum()?;
                self.expect(Tok::RParen)?;
            }
            Tok::Id(name) => {
                if let Some(Tok::LParen) = self.peek() {
                    self.pos += 1;
                    let mut argc = 0;
                    if let Some(Tok::RParen) = self.peek() {
                        self.pos += 1;
                    } else {
                        loop {
                            self.sum()?;
                            argc += 1;
                            match self.next()? {
                                Tok::Comma => continue,
                                Tok::RParen => break,
                                t => return Err(ExprError::Token(format!("{t:?}"))),
                            }
                        }
                    }
                    if let Some(f) = func1(&name) {
                        if argc != 1 {
                            return Err(ExprError::Arity(name, 1, argc));
                        }
                        self.prog.push(Op::F1(f));
                    } else if let Some(f) = func2(&name) {
                        if argc != 2 {
                            return Err(ExprError::Arity(name, 2, argc));
                        }
                        self.prog.push(Op::F2(f));
                    } else {
                        return Err(ExprError::Func(name));
                    }
                } else if let Some(&slot) = self.vars.get(&name) {
                    self.prog.push(Op::Var(slot));
                } else {
                    match name.as_str() {
                        "pi" => self.prog.push(Op::Const(std::f64::consts::PI)),
                        "e" => self.prog.push(Op::Const(std::f64::consts::E)),
                        _ => return Err(ExprError::Var(name)),
                    }
                }
            }
            t => return Err(ExprError::Token(format!("{t:?}"))),
        }
        Ok(())
    }
}

impl Expr {
    /// Compiles `src`; `vars` lists the variable names in slot order.
    pub fn compile(src: &str, vars: &[&str]) -> Result<Self, ExprError> {
        let map: HashMap<String, usize> = vars.iter().enumerate().map(|(i, v)| (v.to_string(), i)).collect();
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            vars: &map,
            prog: Vec::new(),
        };
        p.sum()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Token(format!("{t:?}")));
        }
        let mut d: usize = 0;
        let mut depth = 0;
        for op in &p.prog {
            match op {
                Op::Const(_) | Op::Var(_) => d += 1,
                Op::Neg | Op::F1(_) => {}
                _ => d -= 1,
            }
            depth = depth.max(d);
        }
        Ok(Self {
            prog: p.prog,
            depth,
            src: src.into(),
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, slots: &[f64]) -> f64 {
        let mut small = [0.0; 32];
        let mut big;
        let st: &mut [f64] = if self.depth <= 32 {
            &mut small
        } else {
            big = vec![0.0; self.depth];
            &mut big
        };
        let mut sp = 0;
        for op in &self.prog {
            match *op {
                Op::Const(v) => {
                    st[sp] = v;
                    sp += 1;
                }
                Op::Var(i) => {
                    st[sp] = slots[i];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::F1(f) => st[sp - 1] = f(st[sp - 1]),
                _ => {
                    let b = st[sp - 1];
                    let a = st[sp - 2];
                    sp -= 1;
                    st[sp - 1] = match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => a / b,
                        Op::Pow => {
                            if b == 2.0 {
                                a * a
                            } else {
                                a.powf(b)
                            }
                        }
                        Op::F2(f) => f(a, b),
                        _ => unreachable!(),
                    };
                }
            }
        }
        st[0]
    }
}
