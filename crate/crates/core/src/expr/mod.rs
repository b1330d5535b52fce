//! Scalar expression trees: parsing, evaluation, and exact symbolic
//! differentiation.
//!
//! Frames, right-hand sides, manifold parametrizations, and data are all
//! supplied as formulas in this little language. Expressions are immutable
//! after parsing and safe to share across threads; evaluation against
//! distinct bindings is pure.
//!
//! Variable naming convention used throughout the crate: `x1..xn` for
//! independent variables, `u1..um` for unknowns, `s1..sk` for manifold
//! parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

mod parse;

pub use parse::{parse, ParseError};

/// Unary operations. `Neg` is arithmetic negation; the rest are the
/// supported function calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Immutable syntax tree for a scalar function of named variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Map from variable name to value, used by [`Expr::eval`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding {
    values: BTreeMap<String, f64>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style insert.
    pub fn set(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_owned(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_owned(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// Errors raised while evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{name}`")]
    Unbound { name: String },
    /// Domain violation (log of a nonpositive value, division by zero, ...)
    /// reported with a rendering of the offending node.
    #[error("domain error in `{node}`: {message}")]
    Domain { node: String, message: String },
}

fn domain_error(node: &Expr, message: impl Into<String>) -> EvalError {
    EvalError::Domain {
        node: node.to_string(),
        message: message.into(),
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_owned())
    }

    /// Free variables of the expression, sorted by name.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, a) => a.collect_variables(out),
            Expr::Binary(_, a, b) => {
                a.collect_variables(out);
                b.collect_variables(out);
            }
        }
    }

    /// IEEE double-precision value of the expression under `binding`.
    ///
    /// Errors on unbound variables and on domain violations; a non-finite
    /// result produced from finite operands is reported as a domain error at
    /// the node that produced it.
    pub fn eval(&self, binding: &Binding) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(name) => binding.get(name).ok_or_else(|| EvalError::Unbound {
                name: name.clone(),
            }),
            Expr::Unary(op, a) => {
                let v = a.eval(binding)?;
                apply_unary(*op, v).map_err(|msg| domain_error(self, msg))
            }
            Expr::Binary(op, a, b) => {
                let va = a.eval(binding)?;
                let vb = b.eval(binding)?;
                apply_binary(*op, va, vb).map_err(|msg| domain_error(self, msg))
            }
        }
    }

    /// Exact symbolic partial derivative with respect to `var`.
    ///
    /// The derivative of an expression that does not mention `var` collapses
    /// to the zero constant. Local constant folding keeps repeated
    /// differentiation from blowing up the tree; no other simplification is
    /// attempted.
    pub fn diff(&self, var: &str) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(name) => {
                if name == var {
                    Expr::Const(1.0)
                } else {
                    Expr::Const(0.0)
                }
            }
            Expr::Unary(op, a) => {
                let da = a.diff(var);
                match op {
                    UnaryOp::Neg => neg(da),
                    UnaryOp::Sin => mul(unary(UnaryOp::Cos, (**a).clone()), da),
                    UnaryOp::Cos => neg(mul(unary(UnaryOp::Sin, (**a).clone()), da)),
                    UnaryOp::Exp => mul(unary(UnaryOp::Exp, (**a).clone()), da),
                    UnaryOp::Log => div(da, (**a).clone()),
                    UnaryOp::Sqrt => div(
                        da,
                        mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, (**a).clone())),
                    ),
                    UnaryOp::Tanh => {
                        // d tanh = (1 - tanh^2)
                        let t = unary(UnaryOp::Tanh, (**a).clone());
                        mul(sub(Expr::Const(1.0), pow(t, Expr::Const(2.0))), da)
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                match op {
                    BinaryOp::Add => add(da, db),
                    BinaryOp::Sub => sub(da, db),
                    BinaryOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    BinaryOp::Div => div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), Expr::Const(2.0)),
                    ),
                    BinaryOp::Pow => {
                        // Power rule when the exponent is a closed constant
                        // subtree; the general a^b = exp(b log a) rule would
                        // needlessly restrict u1^2 to positive bases.
                        if let Some(c) = b.fold_constant() {
                            let base_pow = pow((**a).clone(), Expr::Const(c - 1.0));
                            mul(mul(Expr::Const(c), base_pow), da)
                        } else {
                            let a_pow_b = pow((**a).clone(), (**b).clone());
                            let term1 = mul(db, unary(UnaryOp::Log, (**a).clone()));
                            let term2 = div(mul((**b).clone(), da), (**a).clone());
                            mul(a_pow_b, add(term1, term2))
                        }
                    }
                }
            }
        }
    }

    /// Numeric value of a variable-free subtree, if it evaluates cleanly.
    fn fold_constant(&self) -> Option<f64> {
        if !self.variables().is_empty() {
            return None;
        }
        self.eval(&Binding::new()).ok()
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
            Expr::Const(_) | Expr::Var(_) => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(..) => 5,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Expr::Binary(BinaryOp::Pow, ..) => 4,
        }
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

fn apply_unary(op: UnaryOp, v: f64) -> Result<f64, String> {
    let out = match op {
        UnaryOp::Neg => -v,
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log => {
            if v <= 0.0 {
                return Err(format!("log of nonpositive value {v}"));
            }
            v.ln()
        }
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return Err(format!("sqrt of negative value {v}"));
            }
            v.sqrt()
        }
        UnaryOp::Tanh => v.tanh(),
    };
    if out.is_finite() || !v.is_finite() {
        Ok(out)
    } else {
        Err("non-finite result".to_owned())
    }
}

fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, String> {
    let out = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err("division by zero".to_owned());
            }
            a / b
        }
        BinaryOp::Pow => {
            let p = a.powf(b);
            if p.is_nan() && !a.is_nan() && !b.is_nan() {
                return Err(format!("{a}^{b} is undefined"));
            }
            p
        }
    };
    if out.is_finite() || !a.is_finite() || !b.is_finite() {
        Ok(out)
    } else {
        Err("non-finite result".to_owned())
    }
}

// Smart constructors used by `diff`. They fold the constants the derivative
// rules generate; they do not rewrite anything the user wrote.

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        other => unary(UnaryOp::Neg, other),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), b) if z == 0.0 => b,
        (a, Expr::Const(z)) if z == 0.0 => a,
        (a, b) => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, Expr::Const(z)) if z == 0.0 => a,
        (Expr::Const(z), b) if z == 0.0 => neg(b),
        (a, b) => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), b) if o == 1.0 => b,
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(z), b) if z == 0.0 && !matches!(b, Expr::Const(c) if c == 0.0) => {
            Expr::Const(0.0)
        }
        (a, Expr::Const(o)) if o == 1.0 => a,
        (a, b) => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(c)) if *c == 1.0 => a,
        (_, Expr::Const(c)) if *c == 0.0 => Expr::Const(1.0),
        _ => Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b)),
    }
}

impl fmt::Display for Expr {
    /// Unparse with minimal parentheses; reparsing the output yields a tree
    /// with identical evaluation behavior (association is preserved).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                if a.precedence() < 3 {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let prec = self.precedence();
                // Left child: parenthesize below our precedence, and at equal
                // precedence for the right-associative `^`.
                if a.precedence() < prec
                    || (a.precedence() == prec && matches!(op, BinaryOp::Pow))
                {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Right child: parenthesize below our precedence, and at equal
                // precedence for the left-associative operators so the
                // original association survives a reparse.
                if b.precedence() < prec
                    || (b.precedence() == prec && !matches!(op, BinaryOp::Pow))
                {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

/// Ordered variable list defining the slot layout for [`CompiledExpr`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarTable {
    names: Vec<String>,
}

impl VarTable {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    /// The conventional layout `x1..xn`.
    pub fn spatial(n: usize) -> Self {
        Self::new((1..=n).map(|k| format!("x{k}")))
    }

    /// The conventional layout `x1..xn, u1..um`.
    pub fn spatial_and_unknowns(n: usize, m: usize) -> Self {
        Self::new(
            (1..=n)
                .map(|k| format!("x{k}"))
                .chain((1..=m).map(|k| format!("u{k}"))),
        )
    }

    /// The conventional layout `s1..sk`.
    pub fn parameters(k: usize) -> Self {
        Self::new((1..=k).map(|j| format!("s{j}")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Push(f64),
    Load(u32),
    Un(UnaryOp),
    Bin(BinaryOp),
}

/// Expression lowered to a postfix program over a fixed slot layout.
///
/// Evaluation avoids name lookups and tree traversal; this is what the
/// solver's inner loops run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    instrs: Vec<Instr>,
    max_stack: usize,
}

impl Expr {
    /// Lower against `vars`; errors if the expression references a name
    /// outside the table.
    pub fn compile(&self, vars: &VarTable) -> Result<CompiledExpr, EvalError> {
        let mut instrs = Vec::new();
        lower(self, vars, &mut instrs)?;
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for instr in &instrs {
            match instr {
                Instr::Push(_) | Instr::Load(_) => depth += 1,
                Instr::Un(_) => {}
                Instr::Bin(_) => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Ok(CompiledExpr { instrs, max_stack })
    }
}

fn lower(e: &Expr, vars: &VarTable, out: &mut Vec<Instr>) -> Result<(), EvalError> {
    match e {
        Expr::Const(c) => out.push(Instr::Push(*c)),
        Expr::Var(name) => {
            let slot = vars.index_of(name).ok_or_else(|| EvalError::Unbound {
                name: name.clone(),
            })?;
            out.push(Instr::Load(slot as u32));
        }
        Expr::Unary(op, a) => {
            lower(a, vars, out)?;
            out.push(Instr::Un(*op));
        }
        Expr::Binary(op, a, b) => {
            lower(a, vars, out)?;
            lower(b, vars, out)?;
            out.push(Instr::Bin(*op));
        }
    }
    Ok(())
}

impl CompiledExpr {
    /// Evaluate against slot values laid out per the compile-time table.
    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(self.max_stack);
        self.eval_into(slots, &mut stack)
    }

    /// Evaluation with a caller-provided stack, for hot loops.
    pub fn eval_into(&self, slots: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        stack.reserve(self.max_stack);
        for instr in &self.instrs {
            match instr {
                Instr::Push(c) => stack.push(*c),
                Instr::Load(slot) => stack.push(slots[*slot as usize]),
                Instr::Un(op) => {
                    let v = stack.last_mut().expect("compiled stack underflow");
                    *v = apply_unary(*op, *v).map_err(compiled_domain)?;
                }
                Instr::Bin(op) => {
                    let b = stack.pop().expect("compiled stack underflow");
                    let a = stack.last_mut().expect("compiled stack underflow");
                    *a = apply_binary(*op, *a, b).map_err(compiled_domain)?;
                }
            }
        }
        debug_assert_eq!(stack.len(), 1);
        Ok(stack[0])
    }
}

fn compiled_domain(message: String) -> EvalError {
    EvalError::Domain {
        node: "compiled expression".to_owned(),
        message,
    }
}
