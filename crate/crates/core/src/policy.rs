//! Closed-form policies built from expression trees, and their text format.
//!
//! ```text
//! # discrete: one line per action
//! pi(a0) = ((0.52 - (2 * s2)) - (0.595 * s3))
//! pi(a1) = ((0.48 + (2 * s2)) + (0.595 * s3))
//! # continuous: mean and stddev per action dimension
//! mu(a0) = (s0 * -0.8)
//! sigma(a0) = max(0.01, 0.2)
//! ```

use std::fmt;

use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::expr::{parse_expr, BinaryOp, Expr};
use crate::nn::{ActionDistribution, MIN_STD};

/// Default floor substituted for non-positive symbolic probabilities.
pub const DEFAULT_PROB_FLOOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub enum SymbolicPolicy {
    /// One expression per action, or per action but the last when
    /// `complement_last` is set (the last probability is then `1 - sum`).
    Discrete {
        exprs: Vec<Expr>,
        complement_last: bool,
        floor: f64,
    },
    /// Mean and stddev expressions per action dimension.
    Gaussian { means: Vec<Expr>, stds: Vec<Expr> },
}

/// Raises entries below `floor` to exactly `floor`, rescaling the rest so the
/// total stays 1. A distribution already above the floor is returned as is.
fn lift_to_floor(mut p: Vec<f64>, floor: f64) -> Vec<f64> {
    if floor * p.len() as f64 > 1.0 {
        return p;
    }
    let mut pinned = vec![false; p.len()];
    loop {
        let mut changed = false;
        for (v, pin) in p.iter().zip(pinned.iter_mut()) {
            if !*pin && *v < floor {
                *pin = true;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let free_mass = 1.0 - floor * n_pinned as f64;
        let free_sum: f64 = p.iter().zip(&pinned).filter(|(_, &k)| !k).map(|(v, _)| v).sum();
        for (v, &pin) in p.iter_mut().zip(&pinned) {
            *v = if pin {
                floor
            } else if free_sum > 0.0 {
                *v * free_mass / free_sum
            } else {
                free_mass
            };
        }
    }
}

impl SymbolicPolicy {
    pub fn discrete(exprs: Vec<Expr>) -> Self {
        SymbolicPolicy::Discrete {
            exprs,
            complement_last: false,
            floor: DEFAULT_PROB_FLOOR,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            SymbolicPolicy::Discrete {
                exprs, complement_last, ..
            } => exprs.len() + usize::from(*complement_last),
            SymbolicPolicy::Gaussian { means, .. } => means.len(),
        }
    }

    fn exprs(&self) -> Box<dyn Iterator<Item = &Expr> + '_> {
        match self {
            SymbolicPolicy::Discrete { exprs, .. } => Box::new(exprs.iter()),
            SymbolicPolicy::Gaussian { means, stds } => Box::new(means.iter().chain(stds)),
        }
    }

    /// Checks the policy against an environment's state dimension and action space.
    pub fn validate(&self, state_dim: usize, actions: &ActionSpace) -> Result<()> {
        for e in self.exprs() {
            e.validate(state_dim)?;
        }
        match (self, actions) {
            (SymbolicPolicy::Discrete { floor, .. }, ActionSpace::Discrete(n)) => {
                if self.n_actions() != *n {
                    return Err(Error::InvalidInput(format!(
                        "symbolic policy has {} actions, environment has {n}",
                        self.n_actions()
                    )));
                }
                if !(*floor > 0.0 && *floor * *n as f64 <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "probability floor must be positive and at most 1/{n}"
                    )));
                }
                Ok(())
            }
            (SymbolicPolicy::Gaussian { means, stds }, ActionSpace::Continuous { dims, .. }) => {
                if means.len() != *dims || stds.len() != *dims {
                    return Err(Error::InvalidInput(format!(
                        "symbolic policy has {} mean / {} stddev expressions, environment has {dims} dimensions",
                        means.len(),
                        stds.len()
                    )));
                }
                Ok(())
            }
            _ => Err(Error::InvalidInput("symbolic policy kind does not match the action space".into())),
        }
    }

    /// Evaluates to a valid distribution.
    ///
    /// Discrete outputs that are non-finite or `<= 0` are replaced by the floor
    /// and the vector is renormalized. Entries that renormalization pushed back
    /// under the floor are raised to it, with the others scaled down to pay
    /// for it, so every probability stays `>= floor` and importance ratios
    /// stay bounded by `1 / floor`. Gaussian stddevs are floored at 0.01.
    pub fn distribution(&self, state: &[f64]) -> Result<ActionDistribution> {
        match self {
            SymbolicPolicy::Discrete {
                exprs,
                complement_last,
                floor,
            } => {
                let mut raw = exprs.iter().map(|e| e.eval(state)).collect::<Result<Vec<f64>>>()?;
                if *complement_last {
                    raw.push(1.0 - raw.iter().sum::<f64>());
                }
                let clamped: Vec<f64> = raw
                    .into_iter()
                    .map(|v| if v.is_finite() && v > 0.0 { v } else { *floor })
                    .collect();
                let total: f64 = clamped.iter().sum();
                let probs = if total.is_finite() {
                    clamped.iter().map(|v| v / total).collect()
                } else {
                    // every entry is finite, so only overflow of the sum lands here
                    let scaled: Vec<f64> = clamped.iter().map(|v| v / f64::MAX).collect();
                    let s: f64 = scaled.iter().sum();
                    scaled.iter().map(|v| v / s).collect()
                };
                Ok(ActionDistribution::Discrete(lift_to_floor(probs, *floor)))
            }
            SymbolicPolicy::Gaussian { means, stds } => Ok(ActionDistribution::Gaussian {
                mean: means.iter().map(|e| e.eval(state)).collect::<Result<_>>()?,
                std: stds
                    .iter()
                    .map(|e| e.eval(state).map(|v| v.max(MIN_STD)))
                    .collect::<Result<_>>()?,
            }),
        }
    }

    /// Parses the line format written by `Display`. Discrete policies read
    /// back with one expression per action.
    pub fn parse(text: &str, state_dim: usize) -> Result<Self> {
        let mut pis: Vec<(usize, Expr)> = Vec::new();
        let mut mus: Vec<(usize, Expr)> = Vec::new();
        let mut sigmas: Vec<(usize, Expr)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                pos: lineno + 1,
                msg: format!("line {}: {msg}", lineno + 1),
            };
            let (lhs, rhs) = line.split_once('=').ok_or_else(|| bad("expected `name(a<i>) = expr`"))?;
            let lhs = lhs.trim();
            let (kind, rest) = lhs.split_once("(a").ok_or_else(|| bad("expected `name(a<i>)`"))?;
            let idx: usize = rest
                .strip_suffix(')')
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| bad("bad action index"))?;
            let expr = parse_expr(rhs.trim(), state_dim).map_err(|e| match e {
                Error::Parse { msg, .. } => bad(&msg),
                other => other,
            })?;
            match kind.trim() {
                "pi" => pis.push((idx, expr)),
                "mu" => mus.push((idx, expr)),
                "sigma" => sigmas.push((idx, expr)),
                other => return Err(bad(&format!("unknown policy component `{other}`"))),
            }
        }
        fn ordered(mut v: Vec<(usize, Expr)>, what: &str) -> Result<Vec<Expr>> {
            v.sort_by_key(|(i, _)| *i);
            for (k, (i, _)) in v.iter().enumerate() {
                if *i != k {
                    return Err(Error::InvalidInput(format!("{what} indices must be 0..n without gaps")));
                }
            }
            Ok(v.into_iter().map(|(_, e)| e).collect())
        }
        match (pis.is_empty(), mus.is_empty() && sigmas.is_empty()) {
            (false, true) => Ok(SymbolicPolicy::discrete(ordered(pis, "pi")?)),
            (true, false) => {
                let means = ordered(mus, "mu")?;
                let stds = ordered(sigmas, "sigma")?;
                if means.len() != stds.len() {
                    return Err(Error::InvalidInput("need one sigma per mu".into()));
                }
                Ok(SymbolicPolicy::Gaussian { means, stds })
            }
            (true, true) => Err(Error::InvalidInput("no policy expressions found".into())),
            (false, false) => Err(Error::InvalidInput("cannot mix pi with mu/sigma lines".into())),
        }
    }
}

impl fmt::Display for SymbolicPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolicPolicy::Discrete {
                exprs, complement_last, ..
            } => {
                for (i, e) in exprs.iter().enumerate() {
                    writeln!(f, "pi(a{i}) = {e}")?;
                }
                if *complement_last {
                    let sum = exprs
                        .iter()
                        .cloned()
                        .reduce(|a, b| Expr::binary(BinaryOp::Add, a, b))
                        .unwrap_or(Expr::Const(0.0));
                    let last = Expr::binary(BinaryOp::Sub, Expr::Const(1.0), sum);
                    writeln!(f, "pi(a{}) = {last}", exprs.len())?;
                }
                Ok(())
            }
            SymbolicPolicy::Gaussian { means, stds } => {
                for (i, (m, s)) in means.iter().zip(stds).enumerate() {
                    writeln!(f, "mu(a{i}) = {m}")?;
                    let floored = Expr::binary(BinaryOp::Max, Expr::Const(MIN_STD), s.clone());
                    writeln!(f, "sigma(a{i}) = {floored}")?;
                }
                Ok(())
            }
        }
    }
}
