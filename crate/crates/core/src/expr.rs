//! Arithmetic expressions over `x`, `y` and named parameters.
//!
//! Expressions are parsed from text, evaluated with explicit error reporting
//! for non-finite values, and differentiated symbolically so that gradients
//! of switching functions and Lie derivatives never go through finite
//! differences.
//!
//! Grammar (precedence from loosest to tightest):
//!
//! ```text
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := "-" unary | power
//! power    := atom ("^" exponent)*
//! exponent := ["-"] atom              (must fold to an integer >= 0)
//! atom     := number | ident | func "(" expr ")" | "(" expr ")"
//! func     := "sin" | "cos" | "exp" | "sqrt"
//! ```
//!
//! `abs` and `sign` are rejected: every field is kept smooth and the only
//! discontinuity in a system comes from region switching.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("non-smooth primitive `{name}` at position {pos} is not allowed")]
    NonSmooth { name: String, pos: usize },
    #[error("invalid exponent at position {pos}: {message}")]
    BadExponent { pos: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no binding for variable `{0}`")]
    MissingBinding(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree. Equality is structural.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Integer power with a non-negative exponent.
    Pow(Box<Expr>, u32),
}

const FUNCTIONS: [(&str, UnaryOp); 4] = [
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
    ("exp", UnaryOp::Exp),
    ("sqrt", UnaryOp::Sqrt),
];
const NON_SMOOTH: [&str; 6] = ["abs", "sign", "sgn", "min", "max", "floor"];

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Neg => -v,
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Sqrt => v.sqrt(),
        }
    }
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let end = if i < chars.len() { chars[i].0 } else { src.len() };
            let text = &src[pos..end];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Token::Num(value), pos));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let end = if i < chars.len() { chars[i].0 } else { src.len() };
            out.push((Token::Ident(src[pos..end].to_string()), pos));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Token::Op(c),
            '(' => Token::LParen,
            ')' => Token::RParen,
            other => {
                return Err(ExprError::Syntax {
                    pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, pos));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    idx: usize,
    end: usize,
    symbols: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.idx).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.idx).cloned();
        self.idx += 1;
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.bump() {
            Some((Token::RParen, _)) => Ok(()),
            Some((_, pos)) => Err(ExprError::Syntax { pos, message: "expected `)`".into() }),
            None => Err(ExprError::Syntax { pos: self.end, message: "expected `)`".into() }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            self.idx += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Token::Op('-')) = self.peek() {
            self.idx += 1;
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.atom()?;
        while let Some(Token::Op('^')) = self.peek() {
            self.idx += 1;
            let pos = self.pos();
            let negative = if let Some(Token::Op('-')) = self.peek() {
                self.idx += 1;
                true
            } else {
                false
            };
            let exp = self.atom()?;
            let value = match exp.const_value() {
                Some(v) => {
                    if negative {
                        -v
                    } else {
                        v
                    }
                }
                None => {
                    return Err(ExprError::BadExponent {
                        pos,
                        message: "exponent must be a constant".into(),
                    })
                }
            };
            if value < 0.0 {
                return Err(ExprError::BadExponent {
                    pos,
                    message: format!("negative exponent {value}"),
                });
            }
            if value.fract() != 0.0 || value > u32::MAX as f64 {
                return Err(ExprError::BadExponent {
                    pos,
                    message: format!("non-integer exponent {value}"),
                });
            }
            base = Expr::Pow(Box::new(base), value as u32);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            Some((Token::Num(v), _)) => Ok(Expr::Const(v)),
            Some((Token::LParen, _)) => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some((Token::Ident(name), pos)) => {
                if let Some(Token::LParen) = self.peek() {
                    if NON_SMOOTH.contains(&name.as_str()) {
                        return Err(ExprError::NonSmooth { name, pos });
                    }
                    let op = FUNCTIONS
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, op)| *op)
                        .ok_or_else(|| ExprError::UnknownFunction { name: name.clone(), pos })?;
                    self.idx += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Unary(op, Box::new(arg)))
                } else if self.symbols.contains(&name.as_str()) {
                    Ok(Expr::Var(name))
                } else if NON_SMOOTH.contains(&name.as_str()) {
                    Err(ExprError::NonSmooth { name, pos })
                } else {
                    Err(ExprError::UnknownIdentifier { name, pos })
                }
            }
            Some((tok, pos)) => Err(ExprError::Syntax {
                pos,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(ExprError::Syntax { pos: self.end, message: "unexpected end of input".into() }),
        }
    }
}

/// Parse `source`, accepting only the variable names listed in `symbols`.
pub fn parse_expression(source: &str, symbols: &[&str]) -> Result<Expr, ExprError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, idx: 0, end: source.len(), symbols };
    let e = parser.expr()?;
    if parser.idx < parser.tokens.len() {
        return Err(ExprError::Syntax {
            pos: parser.pos(),
            message: "trailing input".into(),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Evaluation, differentiation, simplification
// ---------------------------------------------------------------------------

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Value of a variable-free expression.
    pub fn const_value(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            Expr::Var(_) => None,
            Expr::Unary(op, a) => a.const_value().map(|v| op.apply(v)),
            Expr::Binary(op, a, b) => Some(op.apply(a.const_value()?, b.const_value()?)),
            Expr::Pow(a, n) => a.const_value().map(|v| v.powi(*n as i32)),
        }
    }

    /// Variable names in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        fn walk(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(n) => {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Expr::Unary(_, a) | Expr::Pow(a, _) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Evaluate with every variable looked up in `binding`.
    pub fn evaluate(&self, binding: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(v) => *v,
            Expr::Var(n) => *binding.get(n).ok_or_else(|| EvalError::MissingBinding(n.clone()))?,
            Expr::Unary(op, a) => op.apply(a.evaluate(binding)?),
            Expr::Binary(op, a, b) => op.apply(a.evaluate(binding)?, b.evaluate(binding)?),
            Expr::Pow(a, n) => a.evaluate(binding)?.powi(*n as i32),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }

    /// Exact partial derivative with respect to `var`, simplified.
    pub fn differentiate(&self, var: &str) -> Expr {
        self.derivative(var).simplify()
    }

    fn derivative(&self, var: &str) -> Expr {
        use BinaryOp::*;
        use UnaryOp::*;
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(n) => Expr::Const(if n == var { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.derivative(var);
                let a = (**a).clone();
                match op {
                    Neg => Expr::unary(Neg, da),
                    Sin => Expr::binary(Mul, Expr::unary(Cos, a), da),
                    Cos => Expr::binary(Mul, Expr::unary(Neg, Expr::unary(Sin, a)), da),
                    Exp => Expr::binary(Mul, Expr::unary(Exp, a), da),
                    Sqrt => Expr::binary(
                        Div,
                        da,
                        Expr::binary(Mul, Expr::Const(2.0), Expr::unary(Sqrt, a)),
                    ),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    Add => Expr::binary(Add, da, db),
                    Sub => Expr::binary(Sub, da, db),
                    Mul => Expr::binary(Add, Expr::binary(Mul, da, b), Expr::binary(Mul, a, db)),
                    Div => Expr::binary(
                        Div,
                        Expr::binary(Sub, Expr::binary(Mul, da, b.clone()), Expr::binary(Mul, a, db)),
                        Expr::Pow(Box::new(b), 2),
                    ),
                }
            }
            Expr::Pow(a, n) => {
                if *n == 0 {
                    return Expr::Const(0.0);
                }
                let da = a.derivative(var);
                Expr::binary(
                    Mul,
                    Expr::binary(Mul, Expr::Const(*n as f64), Expr::Pow(a.clone(), n - 1)),
                    da,
                )
            }
        }
    }

    /// Constant folding plus the identities `0+a`, `a*1`, `a^1`, `--a`, ...
    pub fn simplify(&self) -> Expr {
        use BinaryOp::*;
        let folded = match self {
            Expr::Const(_) | Expr::Var(_) => return self.clone(),
            Expr::Unary(op, a) => {
                let a = a.simplify();
                match (op, &a) {
                    (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) => (**inner).clone(),
                    _ => Expr::unary(*op, a),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.simplify();
                let b = b.simplify();
                let is = |e: &Expr, v: f64| matches!(e, Expr::Const(c) if *c == v);
                match op {
                    Add if is(&a, 0.0) => b,
                    Add if is(&b, 0.0) => a,
                    Sub if is(&b, 0.0) => a,
                    Sub if is(&a, 0.0) => Expr::unary(UnaryOp::Neg, b).simplify(),
                    Mul if is(&a, 0.0) || is(&b, 0.0) => Expr::Const(0.0),
                    Mul if is(&a, 1.0) => b,
                    Mul if is(&b, 1.0) => a,
                    Div if is(&a, 0.0) => Expr::Const(0.0),
                    Div if is(&b, 1.0) => a,
                    _ => Expr::binary(*op, a, b),
                }
            }
            Expr::Pow(a, n) => {
                let a = a.simplify();
                match n {
                    0 => Expr::Const(1.0),
                    1 => a,
                    _ => Expr::Pow(Box::new(a), *n),
                }
            }
        };
        match folded.const_value() {
            Some(v) if v.is_finite() && !matches!(folded, Expr::Const(_)) => Expr::Const(v),
            _ => folded,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Const(v) if v.is_sign_negative() => 3,
            Expr::Pow(_, _) => 4,
            _ => 5,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        let wrap = prec < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Expr::Const(v) => write!(f, "{v}")?,
            Expr::Var(n) => f.write_str(n)?,
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                a.write_prec(f, 3)?;
            }
            Expr::Unary(op, a) => {
                write!(f, "{}(", op.name())?;
                a.write_prec(f, 0)?;
                f.write_str(")")?;
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                a.write_prec(f, p)?;
                write!(f, " {} ", op.symbol())?;
                b.write_prec(f, p + 1)?;
            }
            Expr::Pow(a, n) => {
                a.write_prec(f, 4)?;
                write!(f, "^{n}")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

// ---------------------------------------------------------------------------
// Compiled planar evaluation
// ---------------------------------------------------------------------------

/// Expression with parameters substituted and `x`/`y` resolved to slots.
#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    X,
    Y,
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
}

impl Node {
    fn compile(e: &Expr, params: &BTreeMap<String, f64>) -> Result<Node, EvalError> {
        Ok(match e {
            Expr::Const(v) => Node::Const(*v),
            Expr::Var(n) if n == "x" => Node::X,
            Expr::Var(n) if n == "y" => Node::Y,
            Expr::Var(n) => Node::Const(*params.get(n).ok_or_else(|| EvalError::MissingBinding(n.clone()))?),
            Expr::Unary(op, a) => Node::Unary(*op, Box::new(Node::compile(a, params)?)),
            Expr::Binary(op, a, b) => Node::Binary(
                *op,
                Box::new(Node::compile(a, params)?),
                Box::new(Node::compile(b, params)?),
            ),
            Expr::Pow(a, n) => Node::Pow(Box::new(Node::compile(a, params)?), *n),
        })
    }

    #[inline]
    fn eval(&self, x: f64, y: f64) -> Option<f64> {
        let v = match self {
            Node::Const(v) => *v,
            Node::X => x,
            Node::Y => y,
            Node::Unary(op, a) => op.apply(a.eval(x, y)?),
            Node::Binary(op, a, b) => op.apply(a.eval(x, y)?, b.eval(x, y)?),
            Node::Pow(a, n) => a.eval(x, y)?.powi(*n as i32),
        };
        v.is_finite().then_some(v)
    }
}

/// Parameter bindings shared between all fields of one system.
pub type Params = Arc<BTreeMap<String, f64>>;

/// Symbol set for planar expressions: `x`, `y` and the parameter names.
pub fn planar_symbols(params: &BTreeMap<String, f64>) -> Vec<&str> {
    let mut s = vec!["x", "y"];
    s.extend(params.keys().map(String::as_str));
    s
}

/// Scalar function of the planar position.
#[derive(Debug, Clone)]
pub struct ScalarField {
    expr: Expr,
    node: Node,
    params: Params,
}

impl ScalarField {
    pub fn new(expr: Expr, params: Params) -> Result<Self, EvalError> {
        let node = Node::compile(&expr, &params)?;
        Ok(ScalarField { expr, node, params })
    }

    pub fn parse(source: &str, params: Params) -> Result<Self, ExprError> {
        let expr = parse_expression(source, &planar_symbols(&params))?;
        // every identifier was checked against the symbol set, so compilation cannot fail
        Ok(ScalarField::new(expr, params).expect("validated symbols"))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64, EvalError> {
        self.node
            .eval(x, y)
            .ok_or_else(|| EvalError::NonFinite(self.expr.to_string()))
    }

    pub fn partial(&self, var: &str) -> ScalarField {
        ScalarField::new(self.expr.differentiate(var), self.params.clone()).expect("same symbols")
    }

    pub fn gradient(&self) -> (ScalarField, ScalarField) {
        (self.partial("x"), self.partial("y"))
    }

    /// `a * self + b * other` as a new field (used for Lie derivatives).
    pub fn combine(terms: &[(&ScalarField, &ScalarField)], params: Params) -> ScalarField {
        let mut acc: Option<Expr> = None;
        for (a, b) in terms {
            let t = Expr::binary(BinaryOp::Mul, a.expr.clone(), b.expr.clone());
            acc = Some(match acc {
                None => t,
                Some(s) => Expr::binary(BinaryOp::Add, s, t),
            });
        }
        let e = acc.unwrap_or(Expr::Const(0.0)).simplify();
        ScalarField::new(e, params).expect("same symbols")
    }
}

/// A planar vector field given by two scalar components.
#[derive(Debug, Clone)]
pub struct PlanarField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl PlanarField {
    pub fn parse(fx: &str, fy: &str, params: Params) -> Result<Self, ExprError> {
        Ok(PlanarField {
            x: ScalarField::parse(fx, params.clone())?,
            y: ScalarField::parse(fy, params)?,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<[f64; 2], EvalError> {
        Ok([self.x.eval(x, y)?, self.y.eval(x, y)?])
    }

    /// Lie derivative `∇s · F` of a scalar field along this field, symbolically.
    pub fn lie(&self, s: &ScalarField) -> ScalarField {
        let (sx, sy) = s.gradient();
        ScalarField::combine(&[(&sx, &self.x), (&sy, &self.y)], self.x.params.clone())
    }
}
