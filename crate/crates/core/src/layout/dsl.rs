//! A small straight-line arithmetic language for placing objects:
//!
//! ```text
//! table_top = vec(0, 0, table_size.z)
//! lamp_pos = table_top + vec(0.3, 0, lamp_size.z / 2)
//! place(lamp, 1, (0, 0, 90), lamp_pos)
//! ```
//!
//! Values are scalars or 3-vectors. Arithmetic broadcasts scalars over
//! vectors; `min`/`max` work componentwise; `.x/.y/.z` read components.
//! No loops, no conditionals, single assignment.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::UnitQuaternion;

use super::LayoutError;
use crate::math::Vec3;
use crate::scene::ObjectTransform;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Tuple(Box<Expr>, Box<Expr>, Box<Expr>),
    Component(Box<Expr>, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Assign(String, Expr),
    Place { object: String, scale: Expr, euler_deg: Expr, translation: Expr },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayoutProgram {
    pub statements: Vec<Statement>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vec3),
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` prints the shortest string that parses back to the same f64.
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Bin(op, a, b) => write!(f, "({a} {op} {b})"),
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Tuple(a, b, c) => write!(f, "({a}, {b}, {c})"),
            Expr::Component(e, i) => match **e {
                Expr::Neg(_) => write!(f, "({e}).{}", ["x", "y", "z"][*i]),
                _ => write!(f, "{e}.{}", ["x", "y", "z"][*i]),
            },
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Assign(name, e) => write!(f, "{name} = {e}"),
            Statement::Place { object, scale, euler_deg, translation } => {
                write!(f, "place({object}, {scale}, {euler_deg}, {translation})")
            }
        }
    }
}

impl fmt::Display for LayoutProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut seen_dot = false;
            while i < chars.len() {
                if chars[i].is_ascii_digit() {
                    i += 1;
                } else if chars[i] == '.' && !seen_dot && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    seen_dot = true;
                    i += 1;
                } else {
                    break;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number '{text}'"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/(),.=".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(format!("unexpected character '{c}'"));
        }
    }
    Ok(out)
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

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!("expected '{c}', found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(format!("expected a name, found {}", describe(other.as_ref()))),
        }
    }

    fn statement(&mut self) -> Result<Statement, String> {
        let name = self.ident()?;
        let stmt = if name == "place" && self.peek() == Some(&Tok::Sym('(')) {
            self.expect('(')?;
            let object = self.ident()?;
            self.expect(',')?;
            let scale = self.expr()?;
            self.expect(',')?;
            let euler_deg = self.expr()?;
            self.expect(',')?;
            let translation = self.expr()?;
            self.expect(')')?;
            Statement::Place { object, scale, euler_deg, translation }
        } else {
            self.expect('=')?;
            Statement::Assign(name, self.expr()?)
        };
        if let Some(t) = self.peek() {
            return Err(format!("unexpected trailing {}", describe(Some(t))));
        }
        Ok(stmt)
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let mut e = self.primary()?;
        while self.eat('.') {
            let c = match self.ident()?.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                other => return Err(format!("unknown component '.{other}'")),
            };
            e = Expr::Component(Box::new(e), c);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                if self.eat('(') {
                    let mut args = Vec::new();
                    if !self.eat(')') {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(')') {
                                break;
                            }
                            self.expect(',')?;
                        }
                    }
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::Sym('(')) => {
                let first = self.expr()?;
                if self.eat(')') {
                    return Ok(first);
                }
                self.expect(',')?;
                let second = self.expr()?;
                self.expect(',')?;
                let third = self.expr()?;
                self.expect(')')?;
                Ok(Expr::Tuple(Box::new(first), Box::new(second), Box::new(third)))
            }
            other => Err(format!("expected an expression, found {}", describe(other.as_ref()))),
        }
    }
}

fn describe(t: Option<&Tok>) -> String {
    match t {
        None => "end of statement".into(),
        Some(Tok::Num(v)) => format!("number {v}"),
        Some(Tok::Ident(s)) => format!("'{s}'"),
        Some(Tok::Sym(c)) => format!("'{c}'"),
    }
}

impl LayoutProgram {
    /// Parses one statement per entry; blank entries and `#` comments are
    /// skipped but still count toward statement indices in diagnostics.
    pub fn parse_statements<S: AsRef<str>>(lines: &[S]) -> Result<Self, LayoutError> {
        let mut statements = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            let toks = lex(line.as_ref()).map_err(|message| LayoutError::Program { statement: i, message })?;
            if toks.is_empty() {
                continue;
            }
            let mut p = Parser { toks, pos: 0 };
            statements.push(p.statement().map_err(|message| LayoutError::Program { statement: i, message })?);
        }
        Ok(Self { statements })
    }

    /// Parses newline- or semicolon-separated source text.
    pub fn parse(src: &str) -> Result<Self, LayoutError> {
        let lines: Vec<&str> = src.split(['\n', ';']).collect();
        Self::parse_statements(&lines)
    }

    pub fn to_lines(&self) -> Vec<String> {
        self.statements.iter().map(|s| s.to_string()).collect()
    }
}

fn arith(op: Op, a: Value, b: Value) -> Result<Value, String> {
    let f = |x: f64, y: f64| -> Result<f64, String> {
        match op {
            Op::Add => Ok(x + y),
            Op::Sub => Ok(x - y),
            Op::Mul => Ok(x * y),
            Op::Div if y == 0.0 => Err("division by zero".into()),
            Op::Div => Ok(x / y),
        }
    };
    componentwise(a, b, f)
}

fn componentwise(a: Value, b: Value, f: impl Fn(f64, f64) -> Result<f64, String>) -> Result<Value, String> {
    Ok(match (a, b) {
        (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(f(x, y)?),
        (Value::Vector(u), Value::Scalar(y)) => Value::Vector(Vec3::new(f(u.x, y)?, f(u.y, y)?, f(u.z, y)?)),
        (Value::Scalar(x), Value::Vector(v)) => Value::Vector(Vec3::new(f(x, v.x)?, f(x, v.y)?, f(x, v.z)?)),
        (Value::Vector(u), Value::Vector(v)) => Value::Vector(Vec3::new(f(u.x, v.x)?, f(u.y, v.y)?, f(u.z, v.z)?)),
    })
}

fn scalar(v: Value, what: &str) -> Result<f64, String> {
    match v {
        Value::Scalar(x) => Ok(x),
        Value::Vector(_) => Err(format!("{what} must be a scalar, got a vector")),
    }
}

fn vector(v: Value, what: &str) -> Result<Vec3, String> {
    match v {
        Value::Vector(u) => Ok(u),
        Value::Scalar(_) => Err(format!("{what} must be a vector, got a scalar")),
    }
}

fn eval(e: &Expr, env: &HashMap<String, Value>) -> Result<Value, String> {
    match e {
        Expr::Num(v) => Ok(Value::Scalar(*v)),
        Expr::Var(name) => env.get(name).copied().ok_or_else(|| format!("unbound variable '{name}'")),
        Expr::Neg(inner) => Ok(match eval(inner, env)? {
            Value::Scalar(x) => Value::Scalar(-x),
            Value::Vector(u) => Value::Vector(-u),
        }),
        Expr::Bin(op, a, b) => arith(*op, eval(a, env)?, eval(b, env)?),
        Expr::Tuple(a, b, c) => Ok(Value::Vector(Vec3::new(
            scalar(eval(a, env)?, "vector component")?,
            scalar(eval(b, env)?, "vector component")?,
            scalar(eval(c, env)?, "vector component")?,
        ))),
        Expr::Component(inner, i) => Ok(Value::Scalar(vector(eval(inner, env)?, "component access")?[*i])),
        Expr::Call(name, args) => {
            let vals = args.iter().map(|a| eval(a, env)).collect::<Result<Vec<_>, _>>()?;
            match (name.as_str(), vals.as_slice()) {
                ("vec", [a, b, c]) => Ok(Value::Vector(Vec3::new(
                    scalar(*a, "vec argument")?,
                    scalar(*b, "vec argument")?,
                    scalar(*c, "vec argument")?,
                ))),
                ("min", [a, b]) => componentwise(*a, *b, |x, y| Ok(x.min(y))),
                ("max", [a, b]) => componentwise(*a, *b, |x, y| Ok(x.max(y))),
                ("vec", _) => Err(format!("vec takes 3 arguments, got {}", vals.len())),
                ("min" | "max", _) => Err(format!("{name} takes 2 arguments, got {}", vals.len())),
                _ => Err(format!("unknown function '{name}'")),
            }
        }
    }
}

/// Rotation from Euler angles in degrees, applied about x, then y, then z
/// (fixed axes): `R = Rz * Ry * Rx`.
pub fn euler_xyz_degrees(angles: &Vec3) -> UnitQuaternion<f64> {
    let r = angles.map(f64::to_radians);
    UnitQuaternion::from_euler_angles(r.x, r.y, r.z)
}

/// Runs a program with some variables pre-bound and returns the placement
/// of each object.
pub fn execute_program_with(
    program: &LayoutProgram,
    bindings: &[(String, Value)],
) -> Result<BTreeMap<String, ObjectTransform>, LayoutError> {
    let mut env: HashMap<String, Value> = bindings.iter().cloned().collect();
    let mut placed = BTreeMap::new();
    for (i, stmt) in program.statements.iter().enumerate() {
        let err = |message: String| LayoutError::Program { statement: i, message };
        match stmt {
            Statement::Assign(name, e) => {
                if env.contains_key(name) {
                    return Err(err(format!("'{name}' is already bound")));
                }
                let v = eval(e, &env).map_err(err)?;
                env.insert(name.clone(), v);
            }
            Statement::Place { object, scale, euler_deg, translation } => {
                if placed.contains_key(object) {
                    return Err(err(format!("object '{object}' is placed twice")));
                }
                let s = scalar(eval(scale, &env).map_err(err)?, "scale").map_err(err)?;
                let angles = vector(eval(euler_deg, &env).map_err(err)?, "rotation").map_err(err)?;
                let t = vector(eval(translation, &env).map_err(err)?, "translation").map_err(err)?;
                if !(s > 0.0) || !s.is_finite() {
                    return Err(err(format!("scale of '{object}' must be positive, got {s}")));
                }
                if !angles.iter().chain(t.iter()).all(|v| v.is_finite()) {
                    return Err(err(format!("non-finite placement for '{object}'")));
                }
                placed.insert(
                    object.clone(),
                    ObjectTransform { scale: s, rotation: euler_xyz_degrees(&angles), translation: t },
                );
            }
        }
    }
    Ok(placed)
}

pub fn execute_program(program: &LayoutProgram) -> Result<BTreeMap<String, ObjectTransform>, LayoutError> {
    execute_program_with(program, &[])
}
