//! Arithmetic expressions for reward fields given in config files.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, one- and two-argument
//! functions, the constants `pi` and `e`, the time variable `t`, and state
//! coordinates `x` (alias `x0`), `x1`, `x2`, ...

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Time,
    Coord(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func1 {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tanh,
    Floor,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func2 {
    Min,
    Max,
    Pow,
}

/// A compiled expression over `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub message: String,
    pub position: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at byte {})", self.message, self.position)
    }
}

impl std::error::Error for ParseError {}

impl Expr {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Self {
            root,
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates at time `t` and point `y`.  A coordinate index beyond the
    /// dimension of `y` yields NaN, which validation reports as a violation.
    pub fn eval(&self, t: f64, y: &[f64]) -> f64 {
        eval_node(&self.root, t, y)
    }
}

fn eval_node(n: &Node, t: f64, y: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Time => t,
        Node::Coord(k) => y.get(*k).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval_node(a, t, y),
        Node::Add(a, b) => eval_node(a, t, y) + eval_node(b, t, y),
        Node::Sub(a, b) => eval_node(a, t, y) - eval_node(b, t, y),
        Node::Mul(a, b) => eval_node(a, t, y) * eval_node(b, t, y),
        Node::Div(a, b) => eval_node(a, t, y) / eval_node(b, t, y),
        Node::Pow(a, b) => eval_node(a, t, y).powf(eval_node(b, t, y)),
        Node::Call1(f, a) => {
            let v = eval_node(a, t, y);
            match f {
                Func1::Exp => v.exp(),
                Func1::Log => v.ln(),
                Func1::Sqrt => v.sqrt(),
                Func1::Abs => v.abs(),
                Func1::Sin => v.sin(),
                Func1::Cos => v.cos(),
                Func1::Tanh => v.tanh(),
                Func1::Floor => v.floor(),
                Func1::Ceil => v.ceil(),
            }
        }
        Node::Call2(f, a, b) => {
            let u = eval_node(a, t, y);
            let v = eval_node(b, t, y);
            match f {
                Func2::Min => u.min(v),
                Func2::Max => u.max(v),
                Func2::Pow => u.powf(v),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ParseError {
        ParseError {
            message: message.to_string(),
            position: self.pos,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            // Right associative; exponent may carry its own unary minus.
            let exp = self.unary()?;
            Ok(Node::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.eat(b'(');
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(self.err("expected a number, variable, function, or '('")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ParseError {
            message: format!("malformed number '{text}'"),
            position: start,
        })?;
        self.skip_ws();
        Ok(Node::Num(value))
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        self.skip_ws();

        if self.eat(b'(') {
            let (is_two, f1, f2) = match name.as_str() {
                "exp" => (false, Some(Func1::Exp), None),
                "log" | "ln" => (false, Some(Func1::Log), None),
                "sqrt" => (false, Some(Func1::Sqrt), None),
                "abs" => (false, Some(Func1::Abs), None),
                "sin" => (false, Some(Func1::Sin), None),
                "cos" => (false, Some(Func1::Cos), None),
                "tanh" => (false, Some(Func1::Tanh), None),
                "floor" => (false, Some(Func1::Floor), None),
                "ceil" => (false, Some(Func1::Ceil), None),
                "min" => (true, None, Some(Func2::Min)),
                "max" => (true, None, Some(Func2::Max)),
                "pow" => (true, None, Some(Func2::Pow)),
                _ => {
                    return Err(ParseError {
                        message: format!("unknown function '{name}'"),
                        position: start,
                    })
                }
            };
            let a = self.expr()?;
            if is_two {
                if !self.eat(b',') {
                    return Err(self.err("expected ','"));
                }
                let b = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(Node::Call2(f2.unwrap(), Box::new(a), Box::new(b)))
            } else {
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(Node::Call1(f1.unwrap(), Box::new(a)))
            }
        } else {
            match name.as_str() {
                "t" => Ok(Node::Time),
                "x" => Ok(Node::Coord(0)),
                "pi" => Ok(Node::Num(std::f64::consts::PI)),
                "e" => Ok(Node::Num(std::f64::consts::E)),
                _ => {
                    if let Some(rest) = name.strip_prefix('x') {
                        if let Ok(k) = rest.parse::<usize>() {
                            return Ok(Node::Coord(k));
                        }
                    }
                    Err(ParseError {
                        message: format!("unknown variable '{name}'"),
                        position: start,
                    })
                }
            }
        }
    }
}
