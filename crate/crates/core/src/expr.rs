//! Symbolic expression trees over state variables.
//!
//! Every operator is protected so that evaluation is total: any finite state
//! produces a finite value. Division, inverse and logarithm fall back to a
//! fixed value when their argument is within [`PROTECT_EPS`] of zero, `sqrt`
//! acts on the absolute value and `exp` is capped at `e^30`. Intermediate
//! overflow saturates to `±f64::MAX`.
//!
//! Trees print as fully parenthesized infix text (`(0.52 - (2 * s2))`) and
//! unary/extremum operators use call syntax (`cos(s5)`, `max(s0, 0.1)`).
//! [`parse_expr`] reads that format back, and also accepts unparenthesized
//! input with the usual precedence.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Magnitude below which protected operators return their fallback value.
pub const PROTECT_EPS: f64 = 1e-3;
const EXP_CAP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Inv,
    Cos,
    Sqrt,
    Exp,
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 6] = [
        UnaryOp::Inv,
        UnaryOp::Cos,
        UnaryOp::Sqrt,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Neg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Inv => "inv",
            UnaryOp::Cos => "cos",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "neg",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        let v = match self {
            UnaryOp::Inv => {
                if x.abs() > PROTECT_EPS {
                    1.0 / x
                } else {
                    0.0
                }
            }
            UnaryOp::Cos => x.cos(),
            UnaryOp::Sqrt => x.abs().sqrt(),
            UnaryOp::Exp => x.min(EXP_CAP).exp(),
            UnaryOp::Log => {
                if x.abs() > PROTECT_EPS {
                    x.abs().ln()
                } else {
                    0.0
                }
            }
            UnaryOp::Neg => -x,
        };
        saturate(v)
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 6] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Min,
        BinaryOp::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Infix symbol, if the operator prints infix.
    pub fn symbol(self) -> Option<char> {
        match self {
            BinaryOp::Add => Some('+'),
            BinaryOp::Sub => Some('-'),
            BinaryOp::Mul => Some('*'),
            BinaryOp::Div => Some('/'),
            BinaryOp::Min | BinaryOp::Max => None,
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b.abs() > PROTECT_EPS {
                    a / b
                } else {
                    1.0
                }
            }
            BinaryOp::Min => a.min(b),
            BinaryOp::Max => a.max(b),
        };
        saturate(v)
    }
}

#[inline]
pub(crate) fn saturate(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else if v.is_nan() {
        0.0
    } else {
        f64::MAX.copysign(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn unary(op: UnaryOp, child: Expr) -> Self {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Self {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_))
    }

    /// Evaluates against `state`, rejecting variables beyond its length.
    pub fn eval(&self, state: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => match state.get(*i) {
                Some(v) => saturate(*v),
                None => {
                    return Err(Error::VarIndex {
                        index: *i,
                        dim: state.len(),
                    })
                }
            },
            Expr::Unary(op, c) => op.apply(c.eval(state)?),
            Expr::Binary(op, l, r) => op.apply(l.eval(state)?, r.eval(state)?),
        })
    }

    /// Evaluation for trees already validated against the state dimension.
    ///
    /// Panics if a variable index is out of range.
    #[inline]
    pub fn eval_unchecked(&self, state: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => saturate(state[*i]),
            Expr::Unary(op, c) => op.apply(c.eval_unchecked(state)),
            Expr::Binary(op, l, r) => op.apply(l.eval_unchecked(state), r.eval_unchecked(state)),
        }
    }

    /// Leaf depth is 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, c) => 1 + c.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Node count.
    pub fn length(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, c) => 1 + c.length(),
            Expr::Binary(_, l, r) => 1 + l.length() + r.length(),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, c) => c.max_var(),
            Expr::Binary(_, l, r) => l.max_var().max(r.max_var()),
        }
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Unary(_, c) => c.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// Checks variable indices against `dim` and that constants are finite.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Expr::Const(c) if !c.is_finite() => {
                Err(Error::InvalidInput(format!("non-finite constant {c}")))
            }
            Expr::Const(_) => Ok(()),
            Expr::Var(i) if *i >= dim => Err(Error::VarIndex { index: *i, dim }),
            Expr::Var(_) => Ok(()),
            Expr::Unary(_, c) => c.validate(dim),
            Expr::Binary(_, l, r) => {
                l.validate(dim)?;
                r.validate(dim)
            }
        }
    }

    /// Subtree at preorder position `index` (root is 0).
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        if index == 0 {
            return Some(self);
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, c) => c.subtree(index - 1),
            Expr::Binary(_, l, r) => {
                let ll = l.length();
                if index <= ll {
                    l.subtree(index - 1)
                } else {
                    r.subtree(index - 1 - ll)
                }
            }
        }
    }

    /// Copy of `self` with the subtree at preorder `index` swapped for `replacement`.
    pub fn with_subtree(&self, index: usize, replacement: Expr) -> Expr {
        let mut out = self.clone();
        if let Some(slot) = out.subtree_mut(index) {
            *slot = replacement;
        }
        out
    }

    fn subtree_mut(&mut self, index: usize) -> Option<&mut Expr> {
        if index == 0 {
            return Some(self);
        }
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, c) => c.subtree_mut(index - 1),
            Expr::Binary(_, l, r) => {
                let ll = l.length();
                if index <= ll {
                    l.subtree_mut(index - 1)
                } else {
                    r.subtree_mut(index - 1 - ll)
                }
            }
        }
    }

    /// Rebuilds the tree bottom-up, giving `f` each node after its children
    /// have been rebuilt. Visits nodes in postorder.
    pub fn map_nodes<F: FnMut(Expr) -> Expr>(&self, f: &mut F) -> Expr {
        let rebuilt = match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, c) => Expr::Unary(*op, Box::new(c.map_nodes(f))),
            Expr::Binary(op, l, r) => {
                let l = l.map_nodes(f);
                let r = r.map_nodes(f);
                Expr::Binary(*op, Box::new(l), Box::new(r))
            }
        };
        f(rebuilt)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "s{i}"),
            Expr::Unary(op, c) => write!(f, "{}({c})", op.name()),
            Expr::Binary(op, l, r) => match op.symbol() {
                Some(sym) => write!(f, "({l} {sym} {r})"),
                None => write!(f, "{}({l}, {r})", op.name()),
            },
        }
    }
}

/// Operators available to the tree generator and the constant range for
/// generated leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    pub unary: Vec<UnaryOp>,
    pub binary: Vec<BinaryOp>,
    pub const_range: (f64, f64),
}

impl BasisSet {
    pub fn new(unary: Vec<UnaryOp>, binary: Vec<BinaryOp>) -> Result<Self> {
        let basis = BasisSet {
            unary,
            binary,
            const_range: (-1.0, 1.0),
        };
        basis.validate()?;
        Ok(basis)
    }

    /// Parses a comma/space separated list of operator names,
    /// e.g. `"add, sub, mul, div, inv, cos"`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut unary = Vec::new();
        let mut binary = Vec::new();
        for name in list
            .split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']')
            .filter(|s| !s.is_empty())
        {
            if let Some(op) = UnaryOp::from_name(name) {
                if !unary.contains(&op) {
                    unary.push(op);
                }
            } else if let Some(op) = BinaryOp::from_name(name) {
                if !binary.contains(&op) {
                    binary.push(op);
                }
            } else {
                return Err(Error::InvalidConfig(format!("unknown basis function `{name}`")));
            }
        }
        Self::new(unary, binary)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unary.is_empty() && self.binary.is_empty() {
            return Err(Error::InvalidConfig("basis set is empty".into()));
        }
        let (lo, hi) = self.const_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "constant range [{lo}, {hi}] is not a finite interval"
            )));
        }
        Ok(())
    }

    pub fn n_functions(&self) -> usize {
        self.unary.len() + self.binary.len()
    }

    /// Names in a stable order, suitable for [`BasisSet::parse`].
    pub fn names(&self) -> Vec<&'static str> {
        self.binary
            .iter()
            .map(|op| op.name())
            .chain(self.unary.iter().map(|op| op.name()))
            .collect()
    }

    pub(crate) fn random_terminal<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Expr {
        let pick = rng.random_range(0..=dim);
        if pick == dim {
            let (lo, hi) = self.const_range;
            Expr::Const(rng.random_range(lo..=hi))
        } else {
            Expr::Var(pick)
        }
    }

    /// Random function node with freshly generated children.
    fn random_function<R, F>(&self, rng: &mut R, mut child: F) -> Expr
    where
        R: Rng + ?Sized,
        F: FnMut(&mut R) -> Expr,
    {
        let pick = rng.random_range(0..self.n_functions());
        if pick < self.unary.len() {
            let op = self.unary[pick];
            Expr::unary(op, child(rng))
        } else {
            let op = self.binary[pick - self.unary.len()];
            let l = child(rng);
            let r = child(rng);
            Expr::binary(op, l, r)
        }
    }
}

impl Default for BasisSet {
    /// `add, sub, mul, div, inv, cos` with constants in `[-1, 1]`.
    fn default() -> Self {
        BasisSet {
            unary: vec![UnaryOp::Inv, UnaryOp::Cos],
            binary: vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div],
            const_range: (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    /// Every path reaches the sampled depth.
    Full,
    /// Interior nodes may terminate early.
    Grow,
}

/// Generates a random tree whose depth is drawn uniformly from `depth_range`.
///
/// `Full` trees have exactly the sampled depth. `Grow` trees never exceed it,
/// and their root is a function node whenever the sampled depth is above 1.
pub fn random_tree<R: Rng + ?Sized>(
    rng: &mut R,
    basis: &BasisSet,
    dim: usize,
    depth_range: (usize, usize),
    method: InitMethod,
) -> Expr {
    let (lo, hi) = depth_range;
    let depth = rng.random_range(lo.max(1)..=hi.max(lo).max(1));
    build(rng, basis, dim, depth, method, true)
}

fn build<R: Rng + ?Sized>(
    rng: &mut R,
    basis: &BasisSet,
    dim: usize,
    depth: usize,
    method: InitMethod,
    root: bool,
) -> Expr {
    if depth <= 1 || basis.n_functions() == 0 {
        return basis.random_terminal(rng, dim);
    }
    let function = match method {
        InitMethod::Full => true,
        InitMethod::Grow => {
            root || {
                let nf = basis.n_functions();
                rng.random_range(0..nf + dim + 1) < nf
            }
        }
    };
    if function {
        basis.random_function(rng, |r| build(r, basis, dim, depth - 1, method, false))
    } else {
        basis.random_terminal(rng, dim)
    }
}

/// Parses the infix grammar produced by `Display`, rejecting `s<k>` with `k >= dim`.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.to_string(),
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

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.signed()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.signed()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn signed(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
                return Ok(Expr::Const(-self.number()?));
            }
            return Ok(Expr::unary(UnaryOp::Neg, self.signed()?));
        }
        self.primary()
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        let v: f64 = text.parse().map_err(|_| self.error("malformed number"))?;
        if !v.is_finite() {
            return Err(self.error("constant is not finite"));
        }
        self.pos = i;
        Ok(v)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
                if let Some(digits) = ident.strip_prefix('s') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = digits
                            .parse()
                            .map_err(|_| self.error("variable index too large"))?;
                        if index >= self.dim {
                            return Err(Error::VarIndex {
                                index,
                                dim: self.dim,
                            });
                        }
                        return Ok(Expr::Var(index));
                    }
                }
                self.call(ident, start)
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn call(&mut self, name: &str, start: usize) -> Result<Expr> {
        let unary = UnaryOp::from_name(name);
        let binary = BinaryOp::from_name(name);
        if unary.is_none() && binary.is_none() {
            self.pos = start;
            return Err(self.error(&format!("unknown function `{name}`")));
        }
        self.expect(b'(')?;
        let first = self.expr()?;
        let e = if let Some(op) = unary {
            Expr::unary(op, first)
        } else {
            self.expect(b',')?;
            let second = self.expr()?;
            Expr::binary(binary.expect("checked above"), first, second)
        };
        self.expect(b')')?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    #[test]
    fn table_cartpole_expression_at_origin() {
        let e = parse_expr("0.52 - 2*s2 - 0.595*s3", 4).unwrap();
        assert_eq!(e.eval(&[0.3, -0.1, 0.0, 0.0]).unwrap(), 0.52);
        // Sub(Sub(0.52, Mul(2, s2)), Mul(0.595, s3)): 2 subs, 2 muls, 5 leaves
        assert_eq!(e.length(), 9);
        assert_eq!(e.depth(), 4);
    }

    #[test]
    fn table_acrobot_expression_by_hand() {
        let e = parse_expr("0.404 - 0.155*s5 - 0.31*cos(s5 - 1.976)", 6).unwrap();
        let by_hand = 0.404 - 0.155 * 0.0 - 0.31 * (0.0f64 - 1.976).cos();
        let v = e.eval(&[0.0; 6]).unwrap();
        assert!((v - by_hand).abs() < 1e-15);
        assert!((v - (0.404 + 0.31 * 0.394_206)).abs() < 1e-4);
    }

    #[test]
    fn protected_semantics() {
        let div = Expr::binary(BinaryOp::Div, c(1.0), c(0.0));
        assert_eq!(div.eval(&[]).unwrap(), 1.0);
        assert_eq!(BinaryOp::Div.apply(3.0, 5e-4), 1.0);
        assert_eq!(BinaryOp::Div.apply(3.0, 2.0), 1.5);
        assert_eq!(UnaryOp::Inv.apply(-5e-4), 0.0);
        assert_eq!(UnaryOp::Inv.apply(4.0), 0.25);
        assert_eq!(UnaryOp::Sqrt.apply(-9.0), 3.0);
        assert_eq!(UnaryOp::Log.apply(0.0), 0.0);
        assert_eq!(UnaryOp::Log.apply(-1.0), 0.0);
        assert_eq!(UnaryOp::Exp.apply(1000.0), 30f64.exp());
        assert_eq!(BinaryOp::Mul.apply(f64::MAX, 2.0), f64::MAX);
        assert_eq!(BinaryOp::Mul.apply(f64::MAX, -2.0), -f64::MAX);
    }

    #[test]
    fn out_of_range_variable_is_rejected() {
        let e = Expr::binary(BinaryOp::Add, Expr::Var(0), Expr::Var(3));
        assert!(matches!(
            e.eval(&[1.0, 2.0]),
            Err(Error::VarIndex { index: 3, dim: 2 })
        ));
        assert!(e.validate(3).is_err());
        assert!(e.validate(4).is_ok());
        assert!(matches!(
            parse_expr("s0 + s2", 2),
            Err(Error::VarIndex { index: 2, dim: 2 })
        ));
    }

    #[test]
    fn depth_and_length() {
        assert_eq!((c(1.0).depth(), c(1.0).length()), (1, 1));
        let e = Expr::binary(BinaryOp::Add, Expr::Var(0), Expr::Var(1));
        assert_eq!((e.depth(), e.length()), (2, 3));
    }

    #[test]
    fn printing() {
        assert_eq!(c(0.5).to_string(), "0.5");
        let e = Expr::binary(
            BinaryOp::Sub,
            c(0.52),
            Expr::binary(BinaryOp::Mul, c(2.0), Expr::Var(2)),
        );
        assert_eq!(e.to_string(), "(0.52 - (2 * s2))");
        let m = Expr::binary(BinaryOp::Max, Expr::unary(UnaryOp::Cos, Expr::Var(0)), c(-0.25));
        assert_eq!(m.to_string(), "max(cos(s0), -0.25)");
        assert_eq!(parse_expr(&m.to_string(), 1).unwrap(), m);
    }

    #[test]
    fn parse_errors_report_position() {
        match parse_expr("(s0 + ", 1) {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expr("foo(s0)", 1), Err(Error::Parse { pos: 0, .. })));
        assert!(matches!(parse_expr("s0 s0", 1), Err(Error::Parse { .. })));
        assert!(matches!(parse_expr("cos(s0, s0)", 1), Err(Error::Parse { .. })));
    }

    #[test]
    fn negation_forms() {
        let e = parse_expr("s0 - -0.5", 1).unwrap();
        assert_eq!(e, Expr::binary(BinaryOp::Sub, Expr::Var(0), c(-0.5)));
        let n = parse_expr("-s0", 1).unwrap();
        assert_eq!(n, Expr::unary(UnaryOp::Neg, Expr::Var(0)));
        assert_eq!(n.eval(&[2.0]).unwrap(), -2.0);
    }

    #[test]
    fn depth_one_tree_is_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = BasisSet::default();
        for _ in 0..100 {
            let t = random_tree(&mut rng, &basis, 1, (1, 1), InitMethod::Grow);
            assert!(matches!(t, Expr::Const(_) | Expr::Var(0)));
        }
    }

    #[test]
    fn full_trees_hit_sampled_depth_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = BasisSet::default();
        for _ in 0..500 {
            let t = random_tree(&mut rng, &basis, 3, (2, 6), InitMethod::Full);
            assert!((2..=6).contains(&t.depth()));
            let g = random_tree(&mut rng, &basis, 3, (2, 6), InitMethod::Grow);
            assert!(g.depth() <= 6);
        }
    }

    #[test]
    fn every_variable_is_generated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = BasisSet::default();
        let mut seen = BTreeSet::new();
        for _ in 0..10_000 {
            let t = random_tree(&mut rng, &basis, 4, (1, 3), InitMethod::Grow);
            seen.extend(t.variables());
        }
        assert_eq!(seen, (0..4).collect());
    }

    #[test]
    fn subtree_addressing_is_preorder() {
        let e = parse_expr("(s0 + cos(s1)) * 0.5", 2).unwrap();
        let nodes: Vec<String> = (0..e.length())
            .map(|i| e.subtree(i).unwrap().to_string())
            .collect();
        assert_eq!(
            nodes,
            ["((s0 + cos(s1)) * 0.5)", "(s0 + cos(s1))", "s0", "cos(s1)", "s1", "0.5"]
        );
        assert!(e.subtree(6).is_none());
        let r = e.with_subtree(3, Expr::Var(0));
        assert_eq!(r.to_string(), "((s0 + s0) * 0.5)");
    }

    #[test]
    fn basis_parsing() {
        let b = BasisSet::parse("[add, sub, mul, div, inv, cos]").unwrap();
        assert_eq!(b, BasisSet::default());
        assert!(BasisSet::parse("add, tan").is_err());
        assert!(BasisSet::parse("").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn full_basis() -> BasisSet {
            BasisSet::new(UnaryOp::ALL.to_vec(), BinaryOp::ALL.to_vec()).unwrap()
        }

        proptest! {
            #[test]
            fn round_trip_preserves_semantics(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut basis = full_basis();
                basis.const_range = (-5.0, 5.0);
                let e = random_tree(&mut rng, &basis, 3, (1, 7), InitMethod::Grow);
                let back = parse_expr(&e.to_string(), 3).unwrap();
                for _ in 0..100 {
                    let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let a = e.eval(&s).unwrap();
                    let b = back.eval(&s).unwrap();
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{e}: {a} vs {b}");
                }
            }

            #[test]
            fn length_dominates_depth(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = random_tree(&mut rng, &full_basis(), 2, (1, 8), InitMethod::Grow);
                prop_assert!(e.length() >= e.depth());
                prop_assert!(e.depth() >= 1);
            }

            #[test]
            fn evaluation_is_total(seed in any::<u64>(), s in prop::collection::vec(-1e6f64..1e6, 4)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = random_tree(&mut rng, &full_basis(), 4, (1, 10), InitMethod::Full);
                prop_assert!(e.eval(&s).unwrap().is_finite());
            }
        }
    }
}
