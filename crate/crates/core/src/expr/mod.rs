//! Arithmetic expressions over `x1..xd` (or `u` for radial profiles) with
//! exact forward-mode derivatives.
//!
//! Grammar: numbers, variables, `pi`, binary `+ - * / ^`, unary `-`,
//! parentheses, and the functions `exp log sin cos sqrt abs` (one argument),
//! `min max` (two) and `smoothstep(a, b, u)` (three; the cubic Hermite clamp
//! that is 0 at `u = a` and 1 at `u = b`, `a > b` allowed).

pub mod ad;
mod parse;

use std::fmt;

pub use ad::{Dual, HyperDual, Scalar};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Min,
    Max,
    Smoothstep,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "smoothstep" => Func::Smoothstep,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Smoothstep => "smoothstep",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Smoothstep => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// Integer exponent; any base.
    PowI(Box<Node>, i32),
    /// Constant non-integer exponent; positive base.
    PowC(Box<Node>, f64),
    Call(Func, Vec<Node>),
}

impl Node {
    fn neg(a: Node) -> Node {
        match a {
            Node::Const(v) => Node::Const(-v),
            a => Node::Neg(Box::new(a)),
        }
    }

    fn bin(op: BinOp, a: Node, b: Node) -> Node {
        if let (Node::Const(x), Node::Const(y)) = (&a, &b) {
            let v = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => x.powf(*y),
            };
            // keep unfoldable operations (e.g. 1/0) so evaluation reports them
            if v.is_finite() {
                return Node::Const(v);
            }
        }
        Node::Bin(op, Box::new(a), Box::new(b))
    }

    fn pow(base: Node, exponent: Node) -> Node {
        match exponent {
            Node::Const(c) if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 => {
                if let Node::Const(b) = base {
                    let v = b.powi(c as i32);
                    if v.is_finite() {
                        return Node::Const(v);
                    }
                }
                Node::PowI(Box::new(base), c as i32)
            }
            Node::Const(c) => Node::PowC(Box::new(base), c),
            e => Node::bin(BinOp::Pow, base, e),
        }
    }

    fn call(func: Func, args: Vec<Node>) -> Node {
        Node::Call(func, args)
    }

    fn eval<S: Scalar>(&self, vars: &[S]) -> S {
        match self {
            Node::Const(v) => S::constant(*v),
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Bin(op, a, b) => {
                let x = a.eval(vars);
                let y = b.eval(vars);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => general_pow(x, y),
                }
            }
            Node::PowI(a, n) => a.eval(vars).powi(*n),
            Node::PowC(a, c) => {
                let x = a.eval(vars);
                if x.value() > 0.0 {
                    x.powf(*c)
                } else {
                    S::constant(f64::NAN)
                }
            }
            Node::Call(f, args) => {
                let x = args[0].eval(vars);
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs => x.abs(),
                    Func::Min => select(x, args[1].eval(vars), true),
                    Func::Max => select(x, args[1].eval(vars), false),
                    Func::Smoothstep => {
                        let b = args[1].eval(vars);
                        smoothstep(x, b, args[2].eval(vars))
                    }
                }
            }
        }
    }

    /// Evaluates with a finiteness check at every node, naming the first
    /// subexpression that leaves the real domain.
    fn eval_checked(&self, vars: &[f64], style: VarStyle) -> Result<f64> {
        let fail = |reason: &str| Error::Domain {
            subexpr: Rendered(self, style).to_string(),
            reason: reason.to_string(),
        };
        let v = match self {
            Node::Const(v) => *v,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval_checked(vars, style)?,
            Node::Bin(op, a, b) => {
                let x = a.eval_checked(vars, style)?;
                let y = b.eval_checked(vars, style)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(fail("division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if x <= 0.0 && y.fract() != 0.0 {
                            return Err(fail("non-integer power of a non-positive base"));
                        }
                        general_pow(x, y)
                    }
                }
            }
            Node::PowI(a, n) => {
                let x = a.eval_checked(vars, style)?;
                if x == 0.0 && *n < 0 {
                    return Err(fail("division by zero"));
                }
                x.powi(*n)
            }
            Node::PowC(a, c) => {
                let x = a.eval_checked(vars, style)?;
                if x <= 0.0 {
                    return Err(fail("non-integer power of a non-positive base"));
                }
                x.powf(*c)
            }
            Node::Call(f, args) => {
                let x = args[0].eval_checked(vars, style)?;
                match f {
                    Func::Log if x <= 0.0 => return Err(fail("log of a non-positive number")),
                    Func::Sqrt if x < 0.0 => return Err(fail("sqrt of a negative number")),
                    _ => {}
                }
                let rest: Vec<f64> = args[1..]
                    .iter()
                    .map(|a| a.eval_checked(vars, style))
                    .collect::<Result<_>>()?;
                if *f == Func::Smoothstep && rest[0] == x {
                    return Err(fail("smoothstep with equal edges"));
                }
                let mut all = vec![x];
                all.extend(rest);
                Node::Call(*f, all.into_iter().map(Node::Const).collect()).eval::<f64>(&[])
            }
        };
        if !v.is_finite() {
            return Err(fail("non-finite value"));
        }
        Ok(v)
    }

    fn polynomial(&self) -> Option<Vec<f64>> {
        fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        }
        fn add(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
            let mut out = vec![0.0; a.len().max(b.len())];
            for (i, x) in a.iter().enumerate() {
                out[i] += x;
            }
            for (i, y) in b.iter().enumerate() {
                out[i] += sign * y;
            }
            out
        }
        Some(match self {
            Node::Const(v) => vec![*v],
            Node::Var(0) => vec![0.0, 1.0],
            Node::Var(_) => return None,
            Node::Neg(a) => a.polynomial()?.iter().map(|c| -c).collect(),
            Node::Bin(op, a, b) => {
                let pa = a.polynomial()?;
                let pb = b.polynomial()?;
                match op {
                    BinOp::Add => add(&pa, &pb, 1.0),
                    BinOp::Sub => add(&pa, &pb, -1.0),
                    BinOp::Mul => mul(&pa, &pb),
                    BinOp::Div => {
                        let pb = trim(pb);
                        if pb.len() != 1 || pb[0] == 0.0 {
                            return None;
                        }
                        pa.iter().map(|c| c / pb[0]).collect()
                    }
                    BinOp::Pow => return None,
                }
            }
            Node::PowI(a, n) if *n >= 0 => {
                let pa = a.polynomial()?;
                let mut acc = vec![1.0];
                for _ in 0..*n {
                    acc = mul(&acc, &pa);
                }
                acc
            }
            _ => return None,
        })
    }
}

fn trim(mut p: Vec<f64>) -> Vec<f64> {
    while p.len() > 1 && *p.last().unwrap() == 0.0 {
        p.pop();
    }
    p
}

fn general_pow<S: Scalar>(x: S, y: S) -> S {
    let (b, e) = (x.value(), y.value());
    if b > 0.0 {
        (y * x.ln()).exp()
    } else if e.fract() == 0.0 {
        // integer-valued exponent: power rule, ignoring the exponent's
        // tangent (undefined for a non-positive base)
        x.powi(e as i32)
    } else {
        S::constant(f64::NAN)
    }
}

fn select<S: Scalar>(a: S, b: S, min: bool) -> S {
    let (x, y) = (a.value(), b.value());
    if x.is_nan() {
        a
    } else if y.is_nan() {
        b
    } else if (x <= y) == min {
        a
    } else {
        b
    }
}

fn smoothstep<S: Scalar>(lo: S, hi: S, u: S) -> S {
    if u.value().is_nan() {
        return u;
    }
    let t = (u - lo) / (hi - lo);
    if t.value() <= 0.0 {
        S::constant(0.0)
    } else if t.value() >= 1.0 {
        S::constant(1.0)
    } else {
        t * t * (S::constant(3.0) - S::constant(2.0) * t)
    }
}

struct Rendered<'a>(&'a Node, VarStyle);

impl fmt::Display for Rendered<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.render(f, &self.1)
    }
}

impl Node {
    fn render(&self, f: &mut fmt::Formatter<'_>, style: &VarStyle) -> fmt::Result {
        match self {
            Node::Const(v) if *v < 0.0 => write!(f, "({v})"),
            Node::Const(v) => write!(f, "{v}"),
            Node::Var(i) => match style {
                VarStyle::Radial => write!(f, "u"),
                VarStyle::Coordinates => write!(f, "x{}", i + 1),
            },
            Node::Neg(a) => {
                write!(f, "(-")?;
                a.render(f, style)?;
                write!(f, ")")
            }
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "(")?;
                a.render(f, style)?;
                write!(f, " {sym} ")?;
                b.render(f, style)?;
                write!(f, ")")
            }
            Node::PowI(a, n) => {
                write!(f, "(")?;
                a.render(f, style)?;
                write!(f, "^({n}))")
            }
            Node::PowC(a, c) => {
                write!(f, "(")?;
                a.render(f, style)?;
                write!(f, "^({c}))")
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.render(f, style)?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarStyle {
    Coordinates,
    Radial,
}

/// A parsed expression together with the dimension of its argument.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    dim: usize,
    style: VarStyle,
}

/// Value and gradient of a scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub value: f64,
    pub partials: Vec<f64>,
}

/// Parses an expression in the variables `x1..x{dim}`.
pub fn parse(source: &str, dim: usize) -> Result<Expression> {
    let root = parse::Parser::new(source, dim, VarStyle::Coordinates)?.parse_all()?;
    Ok(Expression {
        root,
        dim,
        style: VarStyle::Coordinates,
    })
}

/// Parses a radial profile in the single variable `u`.
pub fn parse_profile(source: &str) -> Result<Expression> {
    let root = parse::Parser::new(source, 1, VarStyle::Radial)?.parse_all()?;
    Ok(Expression {
        root,
        dim: 1,
        style: VarStyle::Radial,
    })
}

impl Expression {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Precondition(format!(
                "expression in {} variable(s) evaluated at a point of length {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// Unchecked evaluation; domain violations surface as NaN or infinity.
    #[inline]
    pub fn eval_fast(&self, x: &[f64]) -> f64 {
        self.root.eval::<f64>(x)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let v = self.root.eval::<f64>(x);
        if v.is_finite() {
            Ok(v)
        } else {
            self.root.eval_checked(x, self.style)
        }
    }

    /// Generic evaluation over any differentiable number type.
    pub fn eval_with<S: Scalar>(&self, vars: &[S]) -> S {
        self.root.eval(vars)
    }

    /// Writes the gradient into `grad` and returns the value, without domain
    /// checks. One dual pass per coordinate.
    pub fn gradient_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut vars = [Dual::new(0.0, 0.0); 8];
        if self.dim > vars.len() {
            let mut v: Vec<Dual> = x.iter().map(|&xi| Dual::new(xi, 0.0)).collect();
            let mut value = 0.0;
            for i in 0..self.dim {
                v[i].d = 1.0;
                let r = self.root.eval(&v);
                v[i].d = 0.0;
                grad[i] = r.d;
                value = r.v;
            }
            return value;
        }
        for (slot, &xi) in vars.iter_mut().zip(x) {
            *slot = Dual::new(xi, 0.0);
        }
        let vars = &mut vars[..self.dim];
        let mut value = 0.0;
        for i in 0..self.dim {
            vars[i].d = 1.0;
            let r = self.root.eval(vars);
            vars[i].d = 0.0;
            grad[i] = r.d;
            value = r.v;
        }
        value
    }

    /// Value and exact gradient.
    pub fn eval_gradient(&self, x: &[f64]) -> Result<DualVector> {
        self.check_len(x)?;
        let mut partials = vec![0.0; self.dim];
        let value = self.gradient_into(x, &mut partials);
        if !value.is_finite() || partials.iter().any(|p| !p.is_finite()) {
            self.root.eval_checked(x, self.style)?;
            return Err(Error::Domain {
                subexpr: self.to_string(),
                reason: "derivative is not finite".into(),
            });
        }
        Ok(DualVector { value, partials })
    }

    /// `hᵀ H k` for the Hessian `H` at `x`, unchecked.
    pub fn hessian_form(&self, x: &[f64], h: &[f64], k: &[f64]) -> f64 {
        let vars: Vec<HyperDual> = (0..self.dim).map(|i| HyperDual::new(x[i], h[i], k[i], 0.0)).collect();
        self.root.eval(&vars).ab
    }

    /// Writes `H v` into `out` (d hyper-dual passes).
    pub fn hessian_vector_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let mut vars: Vec<HyperDual> = (0..self.dim).map(|i| HyperDual::new(x[i], 0.0, v[i], 0.0)).collect();
        for i in 0..self.dim {
            vars[i].a = 1.0;
            out[i] = self.root.eval(&vars).ab;
            vars[i].a = 0.0;
        }
    }

    /// Dense row-major Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        let mut vars: Vec<HyperDual> = x.iter().map(|&xi| HyperDual::new(xi, 0.0, 0.0, 0.0)).collect();
        for i in 0..d {
            for j in i..d {
                vars[i].a = 1.0;
                vars[j].b = 1.0;
                let h = self.root.eval(&vars).ab;
                vars[i].a = 0.0;
                vars[j].b = 0.0;
                out[i * d + j] = h;
                out[j * d + i] = h;
            }
        }
        out
    }

    /// Second directional derivative `hᵀ ∇²e(x) h`; `h` must be a unit vector.
    ///
    /// For a potential `U` with `V = -∇U`, this is `-⟨h, DV(x) h⟩`.
    pub fn eval_jacobian_action(&self, x: &[f64], h: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        self.check_len(h)?;
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!("direction has norm {norm}, expected 1")));
        }
        let v = self.hessian_form(x, h, h);
        if !v.is_finite() {
            self.root.eval_checked(x, self.style)?;
            return Err(Error::Domain {
                subexpr: self.to_string(),
                reason: "second derivative is not finite".into(),
            });
        }
        Ok(v)
    }

    /// Coefficients (lowest degree first) when the expression is a polynomial
    /// in its single variable.
    pub fn as_polynomial(&self) -> Option<Vec<f64>> {
        if self.dim != 1 {
            return None;
        }
        self.root.polynomial().map(trim)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.render(f, &self.style)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_asymmetric_potential() {
        let e = parse("6*x1^2 + 0.5*x2^2", 2).unwrap();
        assert_eq!(e.eval(&[1.0, 2.0]).unwrap(), 8.0);
        assert_eq!(e.eval(&[0.5, -1.0]).unwrap(), 6.0 * 0.25 + 0.5);
    }

    #[test]
    fn identity() {
        let e = parse("x1", 1).unwrap();
        assert_eq!(e.eval(&[3.25]).unwrap(), 3.25);
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        match parse("2*(x1", 1) {
            Err(Error::Syntax { offset, expected }) => {
                assert_eq!(offset, 5);
                assert!(expected.iter().any(|e| e.contains(')')));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_and_arity() {
        assert!(matches!(parse("x3", 2), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("foo(x1)", 1), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(
            parse("min(x1)", 1),
            Err(Error::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(parse("x0", 1), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("u", 1), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("1 +", 1), Err(Error::Syntax { offset: 3, .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = parse("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 512.0);
        let e = parse("8/4/2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
        let e = parse("2^-1 + 1e-1*10", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.5);
    }

    #[test]
    fn gradient_examples() {
        let e = parse("6*x1^2+0.5*x2^2", 2).unwrap();
        let g = e.eval_gradient(&[1.0, 2.0]).unwrap();
        assert_eq!(g.value, 8.0);
        assert_eq!(g.partials, vec![12.0, 2.0]);

        let e = parse("x1", 1).unwrap();
        let g = e.eval_gradient(&[3.0]).unwrap();
        assert_eq!((g.value, g.partials), (3.0, vec![1.0]));

        let e = parse("x1*x2", 2).unwrap();
        let g = e.eval_gradient(&[2.0, 5.0]).unwrap();
        assert_eq!((g.value, g.partials), (10.0, vec![5.0, 2.0]));
    }

    #[test]
    fn jacobian_action_examples() {
        let u = parse("6*x1^2 + 0.5*x2^2", 2).unwrap();
        // ⟨h, DV h⟩ = -hᵀ∇²U h for V = -∇U
        assert_eq!(-u.eval_jacobian_action(&[0.3, -0.7], &[1.0, 0.0]).unwrap(), -12.0);
        let u = parse("0.5*x1^2", 1).unwrap();
        assert_eq!(-u.eval_jacobian_action(&[2.0], &[1.0]).unwrap(), -1.0);
        let u = parse("x1^4/4", 1).unwrap();
        assert_eq!(u.eval_jacobian_action(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!(matches!(
            u.eval_jacobian_action(&[0.0], &[2.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let e = parse("1 + log(x1)", 1).unwrap();
        match e.eval(&[-1.0]) {
            Err(Error::Domain { subexpr, .. }) => assert!(subexpr.contains("log")),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse("x1/(x1-1)", 1).unwrap();
        assert!(matches!(e.eval(&[1.0]), Err(Error::Domain { .. })));
        let e = parse("sqrt(x1)", 1).unwrap();
        assert!(matches!(e.eval_gradient(&[-4.0]), Err(Error::Domain { .. })));
        let e = parse("x1^0.5", 1).unwrap();
        assert!(matches!(e.eval(&[-4.0]), Err(Error::Domain { .. })));
        assert_eq!(e.eval(&[4.0]).unwrap(), 2.0);
        let e = parse("x1^x1", 1).unwrap();
        assert!(matches!(e.eval(&[-0.5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn abs_min_max_smoothstep() {
        let e = parse("abs(x1)", 1).unwrap();
        assert_eq!(e.eval_gradient(&[0.0]).unwrap().partials, vec![0.0]);
        let e = parse("min(x1, 2) + max(x1, 2)", 1).unwrap();
        assert_eq!(e.eval(&[1.0]).unwrap(), 3.0);
        let e = parse("smoothstep(0, 1, x1)", 1).unwrap();
        assert_eq!(e.eval(&[-1.0]).unwrap(), 0.0);
        assert_eq!(e.eval(&[2.0]).unwrap(), 1.0);
        assert_eq!(e.eval(&[0.5]).unwrap(), 0.5);
        assert_eq!(e.eval_gradient(&[0.5]).unwrap().partials, vec![1.5]);
        // reversed edges
        let e = parse("smoothstep(-1.6, -2, x1)", 1).unwrap();
        assert_eq!(e.eval(&[-1.0]).unwrap(), 0.0);
        assert_eq!(e.eval(&[-3.0]).unwrap(), 1.0);
    }

    #[test]
    fn polynomial_extraction() {
        let p = parse_profile("4*u").unwrap();
        assert_eq!(p.as_polynomial(), Some(vec![0.0, 4.0]));
        let p = parse_profile("(u+1)^2 - 1").unwrap();
        assert_eq!(p.as_polynomial(), Some(vec![0.0, 2.0, 1.0]));
        let p = parse_profile("u/2 + u^3").unwrap();
        assert_eq!(p.as_polynomial(), Some(vec![0.0, 0.5, 0.0, 1.0]));
        let p = parse_profile("sinh(u)");
        assert!(p.is_err());
        let p = parse_profile("exp(u) - 1").unwrap();
        assert_eq!(p.as_polynomial(), None);
    }

    #[test]
    fn render_round_trip() {
        for src in [
            "6*x1^2 + 0.5*x2^2",
            "-x1^3/(1+x2^2) - exp(-x1)*smoothstep(-1, 2, x2)",
            "x1^-2 + x2^0.5 + min(x1, -3e-4)",
        ] {
            let e = parse(src, 2).unwrap();
            let back = parse(&e.to_string(), 2).unwrap();
            for x in [[0.3, 1.7], [1.1, 0.2], [-2.0, 4.0]] {
                let (a, b) = (e.eval_fast(&x), back.eval_fast(&x));
                assert!(a == b || (a.is_nan() && b.is_nan()), "{src}: {a} vs {b}");
            }
        }
        let p = parse_profile("2.5*u").unwrap();
        assert_eq!(parse_profile(&p.to_string()).unwrap(), p);
    }
}
