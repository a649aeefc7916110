//! Arithmetic expressions over `x`, `y`, `z`, `t` for load programs.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names: `x y z` (coordinates), `t`, `pi`. Functions: `sin cos tan exp ln
//! sqrt abs tanh min max`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    /// Byte offset into the source.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position + 1, self.message)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Self, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "tanh" => (Func::Tanh, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }

    fn apply(self, a: &[f64]) -> f64 {
        match self {
            Func::Sin => a[0].sin(),
            Func::Cos => a[0].cos(),
            Func::Tan => a[0].tan(),
            Func::Exp => a[0].exp(),
            Func::Ln => a[0].ln(),
            Func::Sqrt => a[0].sqrt(),
            Func::Abs => a[0].abs(),
            Func::Tanh => a[0].tanh(),
            Func::Min => a[0].min(a[1]),
            Func::Max => a[0].max(a[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    /// Coordinate index, or 3 for time.
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

const TIME: usize = 3;

/// Parsed expression; evaluation is allocation-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < src.len() {
            return Err(p.error(format!("unexpected '{}'", src[p.pos..].chars().next().unwrap_or(' '))));
        }
        Ok(Self {
            root,
            source: src.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Largest coordinate index used plus one.
    pub fn coordinates_used(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Num(_) => 0,
                Node::Var(i) if *i == TIME => 0,
                Node::Var(i) => i + 1,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a).max(walk(b)),
                Node::Call(_, args) => args.iter().map(walk).max().unwrap_or(0),
            }
        }
        walk(&self.root)
    }

    /// Value at point `x` (missing coordinates read as zero) and time `t`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        fn go(n: &Node, x: &[f64], t: f64) -> f64 {
            match n {
                Node::Num(v) => *v,
                Node::Var(TIME) => t,
                Node::Var(i) => x.get(*i).copied().unwrap_or(0.0),
                Node::Neg(a) => -go(a, x, t),
                Node::Bin(op, a, b) => {
                    let (a, b) = (go(a, x, t), go(b, x, t));
                    match op {
                        '+' => a + b,
                        '-' => a - b,
                        '*' => a * b,
                        '/' => a / b,
                        _ => a.powf(b),
                    }
                }
                Node::Call(f, args) => {
                    let mut v = [0.0; 2];
                    for (slot, a) in v.iter_mut().zip(args) {
                        *slot = go(a, x, t);
                    }
                    f.apply(&v)
                }
            }
        }
        go(&self.root, x, t)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: String) -> ExprError {
        ExprError {
            position: self.pos,
            message,
        }
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

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.name(),
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of expression".into())),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mut p = self.pos + 1;
            if p < self.src.len() && matches!(self.src[p], b'+' | b'-') {
                p += 1;
            }
            if p < self.src.len() && self.src[p].is_ascii_digit() {
                self.pos = p;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse().map(Node::Num).map_err(|_| ExprError {
            position: start,
            message: format!("malformed number '{text}'"),
        })
    }

    fn name(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let unknown = |message: String| ExprError { position: start, message };
        match name {
            "x" => return Ok(Node::Var(0)),
            "y" => return Ok(Node::Var(1)),
            "z" => return Ok(Node::Var(2)),
            "t" => return Ok(Node::Var(TIME)),
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            _ => {}
        }
        let (func, arity) = Func::lookup(name).ok_or_else(|| unknown(format!("unknown name '{name}'")))?;
        self.expect(b'(')?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        if args.len() != arity {
            return Err(unknown(format!("'{name}' takes {arity} argument(s), got {}", args.len())));
        }
        Ok(Node::Call(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64], t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, t)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", &[], 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[], 0.0), 1.0);
        assert_eq!(ev("1/2", &[], 0.0), 0.5);
        assert_eq!(ev("2.5e-1 * 4", &[], 0.0), 1.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("40*t*(1+y)", &[0.3, 0.5], 2.0), 120.0);
        assert!((ev("sin(pi*x) + max(t, 1)", &[0.5], 0.0) - 2.0).abs() < 1e-15);
        assert_eq!(ev("z", &[1.0], 0.0), 0.0);
        assert_eq!(Expr::parse("x + sin(y*t)").unwrap().coordinates_used(), 2);
    }

    #[test]
    fn errors_carry_positions() {
        let e = Expr::parse("1 + foo(2)").unwrap_err();
        assert_eq!(e.position, 4);
        assert!(Expr::parse("(1 + 2").unwrap_err().message.contains("')'"));
        assert!(Expr::parse("max(1)").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("").is_err());
    }
}
