//! Genetic-programming symbolic regression.
//!
//! A population of [`Expr`] trees is evolved with tournament selection,
//! subtree crossover and three mutation operators (subtree, hoist, point).
//! Fitness is mean squared error plus a per-node parsimony penalty; lower is
//! better. The best individual of each generation is carried over unchanged,
//! so the best penalized fitness never increases.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{random_tree, saturate, BasisSet, Expr, InitMethod};

#[derive(Clone, Debug, PartialEq)]
pub struct GpConfig {
    pub population_size: usize,
    pub tournament_size: usize,
    pub generations: usize,
    pub p_crossover: f64,
    pub p_subtree_mutation: f64,
    pub p_hoist_mutation: f64,
    pub p_point_mutation: f64,
    /// Per-node replacement probability inside a point mutation.
    pub p_point_replace: f64,
    pub parsimony_coefficient: f64,
    pub basis: BasisSet,
    /// Depth range for freshly generated trees (initial population and subtree mutation).
    pub init_depth: (usize, usize),
    pub max_depth: usize,
    pub max_length: usize,
    pub seed: u64,
    /// Seed each fit with the final population of the previous fit for the same target.
    pub warm_start: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 2000,
            tournament_size: 20,
            generations: 20,
            p_crossover: 0.7,
            p_subtree_mutation: 0.1,
            p_hoist_mutation: 0.05,
            p_point_mutation: 0.1,
            p_point_replace: 0.05,
            parsimony_coefficient: 0.005,
            basis: BasisSet::default(),
            init_depth: (2, 6),
            max_depth: 17,
            max_length: 64,
            seed: 0,
            warm_start: false,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let probs = [
            self.p_crossover,
            self.p_subtree_mutation,
            self.p_hoist_mutation,
            self.p_point_mutation,
            self.p_point_replace,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("operator probabilities must lie in [0, 1]".into());
        }
        let total = self.p_crossover + self.p_subtree_mutation + self.p_hoist_mutation + self.p_point_mutation;
        if total > 1.0 + 1e-12 {
            return bad(format!("operator probabilities sum to {total} > 1"));
        }
        if self.tournament_size < 1 || self.population_size < self.tournament_size {
            return bad(format!(
                "need population_size ({}) >= tournament_size ({}) >= 1",
                self.population_size, self.tournament_size
            ));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if !(self.parsimony_coefficient.is_finite() && self.parsimony_coefficient >= 0.0) {
            return bad("parsimony_coefficient must be finite and non-negative".into());
        }
        let (lo, hi) = self.init_depth;
        if lo < 1 || lo > hi || hi > self.max_depth {
            return bad(format!(
                "init depth range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= max_depth ({})",
                self.max_depth
            ));
        }
        if self.max_length < 1 {
            return bad("max_length must be >= 1".into());
        }
        self.basis.validate()
    }

    fn within_caps(&self, e: &Expr) -> bool {
        e.length() <= self.max_length && e.depth() <= self.max_depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationStats {
    pub best_penalized: f64,
    pub best_raw: f64,
    pub mean_penalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub best: Expr,
    /// Mean squared error of `best`.
    pub raw_fitness: f64,
    /// `raw_fitness + parsimony_coefficient * best.length()`.
    pub penalized_fitness: f64,
    /// One entry per generation.
    pub history: Vec<GenerationStats>,
}

/// Design matrix stored column-wise for batch evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} targets",
                rows.len(),
                y.len()
            )));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidInput("need at least two samples".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("samples have no features".into()));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); dim];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {r} has {} features, expected {dim}",
                    row.len()
                )));
            }
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite feature at row {r}")));
                }
                columns[c].push(*v);
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite target at row {i}")));
        }
        Ok(Dataset {
            columns,
            y: y.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Predictions of `e` on every row; identical to row-wise `eval_unchecked`.
    pub fn predict(&self, e: &Expr) -> Vec<f64> {
        eval_columns(e, &self.columns, self.len())
    }

    pub fn mse(&self, e: &Expr) -> f64 {
        let pred = self.predict(e);
        let sum: f64 = pred
            .iter()
            .zip(&self.y)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        sum / self.len() as f64
    }
}

fn eval_columns(e: &Expr, cols: &[Vec<f64>], n: usize) -> Vec<f64> {
    match e {
        Expr::Const(c) => vec![*c; n],
        Expr::Var(i) => cols[*i].iter().map(|v| saturate(*v)).collect(),
        Expr::Unary(op, c) => {
            let mut v = eval_columns(c, cols, n);
            v.iter_mut().for_each(|x| *x = op.apply(*x));
            v
        }
        Expr::Binary(op, l, r) => {
            let mut a = eval_columns(l, cols, n);
            let b = eval_columns(r, cols, n);
            a.iter_mut().zip(&b).for_each(|(x, y)| *x = op.apply(*x, *y));
            a
        }
    }
}

#[derive(Clone, Debug)]
struct Scored {
    expr: Expr,
    raw: f64,
    penalized: f64,
    length: usize,
}

fn score_population(pop: Vec<Expr>, data: &Dataset, parsimony: f64) -> Vec<Scored> {
    let score = |expr: Expr| {
        let raw = data.mse(&expr);
        let length = expr.length();
        Scored {
            penalized: raw + parsimony * length as f64,
            raw,
            length,
            expr,
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pop.into_par_iter().map(score).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pop.into_iter().map(score).collect()
    }
}

/// Ordering used everywhere a "best" individual is chosen: penalized
/// fitness, then length, then position.
fn better(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    }
}

fn argmin(penalized: &[f64], lengths: &[usize], candidates: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in candidates {
        best = match best {
            Some(b) if !better((penalized[i], lengths[i], i), (penalized[b], lengths[b], b)) => Some(b),
            _ => Some(i),
        };
    }
    best.expect("at least one candidate")
}

/// Tournament selection: draws `k` distinct indices uniformly and returns the
/// one with the lowest penalized fitness (ties: shorter, then lower index).
pub fn tournament<R: Rng + ?Sized>(penalized: &[f64], lengths: &[usize], k: usize, rng: &mut R) -> usize {
    let n = penalized.len();
    let k = k.clamp(1, n);
    let drawn = index::sample(rng, n, k);
    argmin(penalized, lengths, drawn.into_iter())
}

/// Replaces a uniformly chosen subtree of `winner` with a uniformly chosen
/// subtree of `donor`. Oversized offspring fall back to a copy of `winner`.
pub fn crossover<R: Rng + ?Sized>(winner: &Expr, donor: &Expr, rng: &mut R, cfg: &GpConfig) -> Expr {
    let at = rng.random_range(0..winner.length());
    let from = rng.random_range(0..donor.length());
    let graft = donor.subtree(from).expect("index within donor").clone();
    let child = winner.with_subtree(at, graft);
    if cfg.within_caps(&child) {
        child
    } else {
        winner.clone()
    }
}

/// Replaces a uniformly chosen subtree with a fresh `grow` tree.
pub fn subtree_mutation<R: Rng + ?Sized>(winner: &Expr, rng: &mut R, cfg: &GpConfig, dim: usize) -> Expr {
    let at = rng.random_range(0..winner.length());
    let fresh = random_tree(rng, &cfg.basis, dim, cfg.init_depth, InitMethod::Grow);
    let child = winner.with_subtree(at, fresh);
    if cfg.within_caps(&child) {
        child
    } else {
        winner.clone()
    }
}

/// Picks a subtree A, then a subtree B of A, and puts B where A was.
pub fn hoist_mutation<R: Rng + ?Sized>(winner: &Expr, rng: &mut R) -> Expr {
    let at = rng.random_range(0..winner.length());
    let outer = winner.subtree(at).expect("index within winner");
    let inner_at = rng.random_range(0..outer.length());
    let inner = outer.subtree(inner_at).expect("index within subtree").clone();
    winner.with_subtree(at, inner)
}

/// Independently swaps each node, with probability `p_point_replace`, for a
/// random node of the same arity.
pub fn point_mutation<R: Rng + ?Sized>(winner: &Expr, rng: &mut R, cfg: &GpConfig, dim: usize) -> Expr {
    let basis = &cfg.basis;
    let p = cfg.p_point_replace;
    winner.map_nodes(&mut |node| {
        if !rng.random_bool(p) {
            return node;
        }
        match node {
            Expr::Const(_) | Expr::Var(_) => basis.random_terminal(rng, dim),
            Expr::Unary(_, c) if !basis.unary.is_empty() => {
                Expr::Unary(basis.unary[rng.random_range(0..basis.unary.len())], c)
            }
            Expr::Binary(_, l, r) if !basis.binary.is_empty() => {
                Expr::Binary(basis.binary[rng.random_range(0..basis.binary.len())], l, r)
            }
            other => other,
        }
    })
}

fn next_generation<R: Rng + ?Sized>(scored: &[Scored], cfg: &GpConfig, dim: usize, rng: &mut R) -> Vec<Expr> {
    let penalized: Vec<f64> = scored.iter().map(|s| s.penalized).collect();
    let lengths: Vec<usize> = scored.iter().map(|s| s.length).collect();
    let elite = argmin(&penalized, &lengths, 0..scored.len());

    let mut out = Vec::with_capacity(cfg.population_size);
    out.push(scored[elite].expr.clone());

    let t_cross = cfg.p_crossover;
    let t_subtree = t_cross + cfg.p_subtree_mutation;
    let t_hoist = t_subtree + cfg.p_hoist_mutation;
    let t_point = t_hoist + cfg.p_point_mutation;

    while out.len() < cfg.population_size {
        let w = tournament(&penalized, &lengths, cfg.tournament_size, rng);
        let winner = &scored[w].expr;
        let r: f64 = rng.random();
        let child = if r < t_cross {
            let d = tournament(&penalized, &lengths, cfg.tournament_size, rng);
            crossover(winner, &scored[d].expr, rng, cfg)
        } else if r < t_subtree {
            subtree_mutation(winner, rng, cfg, dim)
        } else if r < t_hoist {
            hoist_mutation(winner, rng)
        } else if r < t_point {
            point_mutation(winner, rng, cfg, dim)
        } else {
            winner.clone()
        };
        out.push(child);
    }
    out
}

/// Scores `population` on `data` and breeds exactly `cfg.population_size`
/// offspring. Slot 0 holds the unchanged best individual.
pub fn evolve_generation<R: Rng + ?Sized>(
    population: &[Expr],
    data: &Dataset,
    cfg: &GpConfig,
    rng: &mut R,
) -> Result<Vec<Expr>> {
    cfg.validate()?;
    if population.is_empty() {
        return Err(Error::InvalidInput("empty population".into()));
    }
    for e in population {
        e.validate(data.dim())?;
    }
    let scored = score_population(population.to_vec(), data, cfg.parsimony_coefficient);
    Ok(next_generation(&scored, cfg, data.dim(), rng))
}

/// Ramped half-and-half: alternating full and grow trees over `init_depth`.
pub fn initial_population<R: Rng + ?Sized>(cfg: &GpConfig, dim: usize, rng: &mut R) -> Vec<Expr> {
    (0..cfg.population_size)
        .map(|i| {
            let method = if i % 2 == 0 { InitMethod::Full } else { InitMethod::Grow };
            random_tree(rng, &cfg.basis, dim, cfg.init_depth, method)
        })
        .collect()
}

/// Fits an expression to `(rows, y)`.
pub fn fit(rows: &[Vec<f64>], y: &[f64], cfg: &GpConfig) -> Result<FitReport> {
    let data = Dataset::new(rows, y)?;
    fit_dataset(&data, cfg, None).map(|(report, _)| report)
}

/// Like [`fit`], optionally seeding the population, and also returning the
/// final population for warm starts.
pub fn fit_dataset(data: &Dataset, cfg: &GpConfig, seed_population: Option<Vec<Expr>>) -> Result<(FitReport, Vec<Expr>)> {
    cfg.validate()?;
    let dim = data.dim();

    let y0 = data.y[0];
    if data.y.iter().all(|v| *v == y0) {
        let mean = data.y.iter().sum::<f64>() / data.len() as f64;
        let best = Expr::Const(mean);
        let raw = data.mse(&best);
        let penalized = raw + cfg.parsimony_coefficient;
        let stats = GenerationStats {
            best_penalized: penalized,
            best_raw: raw,
            mean_penalized: penalized,
        };
        let report = FitReport {
            best: best.clone(),
            raw_fitness: raw,
            penalized_fitness: penalized,
            history: vec![stats; cfg.generations],
        };
        return Ok((report, vec![best]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population = match seed_population {
        Some(mut seeded) => {
            seeded.retain(|e| e.validate(dim).is_ok() && cfg.within_caps(e));
            seeded.truncate(cfg.population_size);
            let fresh = initial_population(cfg, dim, &mut rng);
            let missing = cfg.population_size - seeded.len();
            seeded.extend(fresh.into_iter().take(missing));
            seeded
        }
        None => initial_population(cfg, dim, &mut rng),
    };

    let mut history = Vec::with_capacity(cfg.generations);
    let mut scored;
    let mut gen = 0;
    loop {
        scored = score_population(population, data, cfg.parsimony_coefficient);
        let penalized: Vec<f64> = scored.iter().map(|s| s.penalized).collect();
        let lengths: Vec<usize> = scored.iter().map(|s| s.length).collect();
        let b = argmin(&penalized, &lengths, 0..scored.len());
        history.push(GenerationStats {
            best_penalized: scored[b].penalized,
            best_raw: scored[b].raw,
            mean_penalized: penalized.iter().sum::<f64>() / penalized.len() as f64,
        });
        gen += 1;
        if gen == cfg.generations {
            break;
        }
        population = next_generation(&scored, cfg, dim, &mut rng);
    }

    let penalized: Vec<f64> = scored.iter().map(|s| s.penalized).collect();
    let lengths: Vec<usize> = scored.iter().map(|s| s.length).collect();
    let b = argmin(&penalized, &lengths, 0..scored.len());
    let best = &scored[b];
    let report = FitReport {
        best: best.expr.clone(),
        raw_fitness: best.raw,
        penalized_fitness: best.penalized,
        history,
    };
    Ok((report, scored.into_iter().map(|s| s.expr).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, BinaryOp};

    fn grid(n: usize, seed: u64, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn small_cfg(seed: u64) -> GpConfig {
        GpConfig {
            population_size: 500,
            generations: 20,
            seed,
            ..GpConfig::default()
        }
    }

    #[test]
    fn recovers_a_terminal_target() {
        let x = grid(100, 7, 3);
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let rep = fit(&x, &y, &small_cfg(1)).unwrap();
        assert!(rep.raw_fitness < 1e-8, "{} mse {}", rep.best, rep.raw_fitness);
        assert_eq!(rep.history.len(), 20);
    }

    #[test]
    fn constant_target_short_circuits() {
        let x = grid(50, 1, 2);
        let y = vec![3.0; 50];
        let rep = fit(&x, &y, &small_cfg(0)).unwrap();
        for row in &x {
            assert!((rep.best.eval(row).unwrap() - 3.0).abs() < 1e-6);
        }
        assert_eq!(rep.raw_fitness, 0.0);
        assert_eq!(rep.history.len(), 20);
    }

    #[test]
    fn penalized_fitness_formula() {
        let x = grid(60, 3, 2);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + 0.3).collect();
        let cfg = GpConfig {
            population_size: 200,
            generations: 5,
            ..GpConfig::default()
        };
        let rep = fit(&x, &y, &cfg).unwrap();
        let expect = rep.raw_fitness + cfg.parsimony_coefficient * rep.best.length() as f64;
        assert_eq!(rep.penalized_fitness, expect);
        let data = Dataset::new(&x, &y).unwrap();
        assert_eq!(data.mse(&rep.best), rep.raw_fitness);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = grid(40, 5, 2);
        let y: Vec<f64> = x.iter().map(|r| (r[0] - r[1]).cos()).collect();
        let cfg = GpConfig {
            population_size: 300,
            generations: 6,
            seed: 99,
            ..GpConfig::default()
        };
        assert_eq!(fit(&x, &y, &cfg).unwrap(), fit(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn best_fitness_is_monotone_under_elitism() {
        let x = grid(80, 11, 3);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0] - 0.5 * r[2]).collect();
        let cfg = GpConfig {
            population_size: 300,
            generations: 15,
            seed: 4,
            ..GpConfig::default()
        };
        let rep = fit(&x, &y, &cfg).unwrap();
        for w in rep.history.windows(2) {
            assert!(w[1].best_penalized <= w[0].best_penalized);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GpConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.p_crossover = 0.9;
        assert!(cfg.validate().is_err());
        let cfg = GpConfig {
            tournament_size: 30,
            population_size: 20,
            ..GpConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GpConfig {
            generations: 0,
            ..GpConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(fit(&[vec![1.0]], &[1.0], &GpConfig::default()).is_err());
        assert!(fit(&[vec![1.0], vec![f64::NAN]], &[1.0, 2.0], &GpConfig::default()).is_err());
        assert!(fit(&[vec![1.0], vec![2.0]], &[1.0], &GpConfig::default()).is_err());
    }

    #[test]
    fn full_tournament_is_global_argmin() {
        let fit = [0.5, 0.2, 0.9, 0.2, 0.3];
        let len = [3, 5, 1, 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // tie on 0.2 resolved by length
        assert_eq!(tournament(&fit, &len, 5, &mut rng), 3);
    }

    #[test]
    fn unit_tournament_is_uniform() {
        let fit = [1.0, 2.0, 3.0, 4.0];
        let len = [1; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[tournament(&fit, &len, 1, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 400.0, "{counts:?}");
        }
    }

    #[test]
    fn tournament_replays_prng_stream() {
        let fit = [0.9, 0.1, 0.5, 0.7, 0.3, 0.8, 0.2, 0.6, 0.4, 1.0];
        let len = [1; 10];
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let got = tournament(&fit, &len, 3, &mut a);
            let drawn: Vec<usize> = index::sample(&mut b, 10, 3).into_vec();
            let expect = *drawn
                .iter()
                .min_by(|i, j| fit[**i].total_cmp(&fit[**j]).then(i.cmp(j)))
                .unwrap();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn copy_only_generation_keeps_elite() {
        let x = grid(30, 2, 2);
        let y: Vec<f64> = x.iter().map(|r| r[1]).collect();
        let data = Dataset::new(&x, &y).unwrap();
        let cfg = GpConfig {
            population_size: 50,
            tournament_size: 5,
            p_crossover: 0.0,
            p_subtree_mutation: 0.0,
            p_hoist_mutation: 0.0,
            p_point_mutation: 0.0,
            ..GpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pop = initial_population(&cfg, 2, &mut rng);
        pop[17] = Expr::Var(1);
        let next = evolve_generation(&pop, &data, &cfg, &mut rng).unwrap();
        assert_eq!(next.len(), 50);
        assert_eq!(next[0], Expr::Var(1));
        assert!(next.iter().all(|e| pop.contains(e)));
    }

    #[test]
    fn self_crossover_of_identical_trees() {
        let x = grid(30, 2, 2);
        let y: Vec<f64> = x.iter().map(|r| r[1]).collect();
        let data = Dataset::new(&x, &y).unwrap();
        let cfg = GpConfig {
            population_size: 40,
            tournament_size: 4,
            p_crossover: 1.0,
            p_subtree_mutation: 0.0,
            p_hoist_mutation: 0.0,
            p_point_mutation: 0.0,
            ..GpConfig::default()
        };
        // single-leaf parents: every crossover reproduces the parent
        let pop = vec![Expr::Var(0); 40];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let next = evolve_generation(&pop, &data, &cfg, &mut rng).unwrap();
        assert!(next.iter().all(|e| *e == Expr::Var(0)));
    }

    #[test]
    fn operators_respect_caps() {
        let cfg = GpConfig {
            max_length: 15,
            max_depth: 6,
            init_depth: (2, 4),
            ..GpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pop = initial_population(&cfg, 3, &mut rng);
        let pop: Vec<Expr> = pop.into_iter().filter(|e| cfg.within_caps(e)).collect();
        for w in pop.windows(2) {
            let c = crossover(&w[0], &w[1], &mut rng, &cfg);
            assert!(cfg.within_caps(&c));
            let m = subtree_mutation(&w[0], &mut rng, &cfg, 3);
            assert!(cfg.within_caps(&m));
        }
    }

    #[test]
    fn point_mutation_keeps_shape() {
        let cfg = GpConfig {
            p_point_replace: 1.0,
            ..GpConfig::default()
        };
        let e = parse_expr("cos(s0) + (s1 * 0.5)", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = point_mutation(&e, &mut rng, &cfg, 2);
            assert_eq!(m.length(), e.length());
            assert_eq!(m.depth(), e.depth());
            assert!(matches!(m, Expr::Binary(_, _, _)));
        }
        let b = Expr::binary(BinaryOp::Add, Expr::Var(0), Expr::Var(1));
        let none = GpConfig {
            p_point_replace: 0.0,
            ..GpConfig::default()
        };
        assert_eq!(point_mutation(&b, &mut rng, &none, 2), b);
    }

    #[test]
    fn batch_prediction_matches_rowwise() {
        let x = grid(25, 9, 3);
        let y = vec![0.0; 25];
        let data = Dataset::new(&x, &y).unwrap();
        let e = parse_expr("inv(s0 - s1) * cos(s2) / (s0 + 0.001)", 3).unwrap();
        let batch = data.predict(&e);
        for (row, p) in x.iter().zip(batch) {
            assert_eq!(e.eval_unchecked(row).to_bits(), p.to_bits());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn hoist_never_grows(seed in any::<u64>()) {
                let cfg = GpConfig::default();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = random_tree(&mut rng, &cfg.basis, 4, (1, 8), InitMethod::Grow);
                let h = hoist_mutation(&e, &mut rng);
                prop_assert!(h.length() <= e.length());
            }

            #[test]
            fn offspring_stay_valid(seed in any::<u64>()) {
                let cfg = GpConfig { population_size: 60, tournament_size: 5, seed, ..GpConfig::default() };
                let x = grid(20, seed, 3);
                let y: Vec<f64> = x.iter().map(|r| r[0] - r[2]).collect();
                let data = Dataset::new(&x, &y).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut pop = initial_population(&cfg, 3, &mut rng);
                for _ in 0..4 {
                    pop = evolve_generation(&pop, &data, &cfg, &mut rng).unwrap();
                    prop_assert_eq!(pop.len(), 60);
                    for e in &pop {
                        prop_assert!(e.validate(3).is_ok());
                        prop_assert!(e.depth() <= cfg.max_depth);
                        prop_assert!(e.length() <= cfg.max_length);
                    }
                }
            }
        }
    }
}
