//! Browser bindings: fit an expression to samples, animate a CartPole
//! rollout under a symbolic policy, and sample an expression for plotting.

use sympol::envs::{Action, CartPole, Env};
use sympol::expr::parse_expr;
use sympol::policy::SymbolicPolicy;
use sympol::symreg::{fit, GpConfig};
use wasm_bindgen::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[wasm_bindgen]
pub struct FitResult {
    expr: String,
    mse: f64,
    history: Vec<f64>,
}

#[wasm_bindgen]
impl FitResult {
    #[wasm_bindgen(getter)]
    pub fn expr(&self) -> String {
        self.expr.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mse(&self) -> f64 {
        self.mse
    }

    /// Best raw MSE per generation.
    #[wasm_bindgen(getter)]
    pub fn history(&self) -> Vec<f64> {
        self.history.clone()
    }
}

/// Samples `target` (over s0, s1) at `samples` uniform points in [-1, 1]^2
/// and evolves an expression to match it.
pub fn fit_target(target: &str, samples: usize, population: usize, generations: usize, seed: u64) -> Result<FitResult, String> {
    let e = parse_expr(target, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..samples)
        .map(|_| vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| e.eval_unchecked(r)).collect();
    let cfg = GpConfig {
        population_size: population,
        generations,
        tournament_size: 20.min(population),
        seed,
        ..GpConfig::default()
    };
    let report = fit(&rows, &y, &cfg).map_err(|e| e.to_string())?;
    Ok(FitResult {
        expr: report.best.to_string(),
        mse: report.raw_fitness,
        history: report.history.iter().map(|g| g.best_raw).collect(),
    })
}

/// Runs one CartPole episode and returns the visited states flattened as
/// `[x, x_dot, theta, theta_dot, ...]`. Actions are sampled unless `greedy`.
pub fn rollout(policy_text: &str, seed: u64, greedy: bool) -> Result<Vec<f64>, String> {
    let sym = SymbolicPolicy::parse(policy_text, 4).map_err(|e| e.to_string())?;
    let mut env = CartPole::new(seed);
    let spec = env.spec();
    sym.validate(spec.state_dim, &spec.actions).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCA27);
    let mut state = env.reset();
    let mut frames = state.clone();
    loop {
        let d = sym.distribution(&state).map_err(|e| e.to_string())?;
        let action = if greedy { d.mode() } else { d.sample(&mut rng).0 };
        debug_assert!(matches!(action, Action::Discrete(_)));
        let step = env.step(&action).map_err(|e| e.to_string())?;
        frames.extend_from_slice(&step.next_state);
        state = step.next_state;
        if step.done {
            return Ok(frames);
        }
    }
}

/// Values of `text` along variable `var` from `lo` to `hi`, other variables
/// held at `fixed`.
pub fn slice(text: &str, fixed: &[f64], var: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    let e = parse_expr(text, fixed.len()).map_err(|e| e.to_string())?;
    if var >= fixed.len() {
        return Err(format!("variable s{var} out of range"));
    }
    if n < 2 || !(lo < hi) {
        return Err("need n >= 2 and lo < hi".into());
    }
    let mut s = fixed.to_vec();
    Ok((0..n)
        .map(|i| {
            s[var] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            e.eval_unchecked(&s)
        })
        .collect())
}

#[wasm_bindgen]
pub fn fit_expression(target: &str, samples: usize, population: usize, generations: usize, seed: u32) -> Result<FitResult, JsError> {
    fit_target(target, samples, population, generations, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cartpole_rollout(policy_text: &str, seed: u32, greedy: bool) -> Result<Vec<f64>, JsError> {
    rollout(policy_text, seed as u64, greedy).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn expression_slice(text: &str, fixed: Vec<f64>, var: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    slice(text, &fixed, var, lo, hi, n).map_err(|e| JsError::new(&e))
}
