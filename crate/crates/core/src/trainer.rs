//! REINFORCE with periodic symbolic distillation and importance-sampled updates.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{env_spec, make_env, Action, ActionSpace, Env};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::nn::{ActionDistribution, HeadKind, Mlp, NetShape};
use crate::policy::{SymbolicPolicy, DEFAULT_PROB_FLOOR};
use crate::symreg::{fit_dataset, Dataset, FitReport, GpConfig};

pub const EPISODE_LOG_HEADER: &str = "episode,return,ma50_return,update_kind,sr_fit_mse,wall_ms";
pub const MA_WINDOW: usize = 50;

/// One rollout. `rewards[t]` is the reward received after `actions[t]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Probability of each action under the policy that sampled it.
    pub behavior_probs: Vec<f64>,
    /// Probability of each action under the neural policy at rollout time.
    pub eval_probs: Vec<f64>,
    /// Full neural-policy distribution at each visited state.
    pub eval_dists: Vec<ActionDistribution>,
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Which policy samples the actions of a rollout.
#[derive(Clone, Copy, Debug)]
pub enum Sampler<'a> {
    Neural(&'a Mlp),
    Symbolic(&'a SymbolicPolicy),
}

impl Sampler<'_> {
    pub fn distribution(&self, state: &[f64]) -> Result<ActionDistribution> {
        match self {
            Sampler::Neural(m) => m.forward(state),
            Sampler::Symbolic(s) => s.distribution(state),
        }
    }
}

/// `G_t = r_{t+1} + gamma * G_{t+1}` computed backwards.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("empty reward sequence".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("discount {gamma} outside [0, 1]")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    Ok(out)
}

/// Rolls out one episode with actions from `sampler`, recording the
/// probability of each action under `eval` as well.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut dyn Env,
    sampler: Sampler<'_>,
    eval: &Mlp,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut state = env.reset();
    let mut traj = Trajectory {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        behavior_probs: Vec::new(),
        eval_probs: Vec::new(),
        eval_dists: Vec::new(),
        final_state: Vec::new(),
    };
    loop {
        let eval_dist = eval.forward(&state)?;
        let (action, behavior) = match sampler {
            Sampler::Neural(m) if std::ptr::eq(m, eval) => eval_dist.sample(rng),
            other => other.distribution(&state)?.sample(rng),
        };
        let p_eval = eval_dist.prob(&action)?;
        let step = env.step(&action)?;
        traj.states.push(std::mem::replace(&mut state, step.next_state));
        traj.actions.push(action);
        traj.rewards.push(step.reward);
        traj.behavior_probs.push(behavior);
        traj.eval_probs.push(p_eval);
        traj.eval_dists.push(eval_dist);
        if step.done {
            traj.final_state = state;
            return Ok(traj);
        }
    }
}

/// Monte Carlo score-function estimate `sum_t G_t grad log pi(a_t|s_t)`.
pub fn mc_gradient(policy: &Mlp, traj: &Trajectory, gamma: f64) -> Result<Vec<f64>> {
    let g = rewards_to_go(&traj.rewards, gamma)?;
    policy.weighted_score_sum(traj.states.iter().zip(&traj.actions).zip(&g).map(|((s, a), w)| (s.as_slice(), a, *w)))
}

/// Importance-weighted estimate for a trajectory sampled off-policy.
/// Ratios are `eval_probs / behavior_probs`, optionally clipped from above.
pub fn is_gradient(policy: &Mlp, traj: &Trajectory, gamma: f64, ratio_clip: Option<f64>) -> Result<Vec<f64>> {
    let g = rewards_to_go(&traj.rewards, gamma)?;
    let weights = importance_weights(traj, &g, ratio_clip)?;
    policy.weighted_score_sum(traj.states.iter().zip(&traj.actions).zip(&weights).map(|((s, a), w)| (s.as_slice(), a, *w)))
}

fn importance_weights(traj: &Trajectory, g: &[f64], ratio_clip: Option<f64>) -> Result<Vec<f64>> {
    traj.eval_probs
        .iter()
        .zip(&traj.behavior_probs)
        .zip(g)
        .map(|((p, b), g)| {
            if !(*b > 0.0) {
                return Err(Error::InvalidInput("behavior probability must be positive".into()));
            }
            let mut ratio = p / b;
            if let Some(c) = ratio_clip {
                ratio = ratio.min(c);
            }
            Ok(ratio * g)
        })
        .collect()
}

pub fn mc_update(policy: &mut Mlp, traj: &Trajectory, gamma: f64, learning_rate: f64) -> Result<Vec<f64>> {
    let grad = mc_gradient(policy, traj, gamma)?;
    policy.ascend(&grad, learning_rate)?;
    Ok(grad)
}

pub fn is_update(
    policy: &mut Mlp,
    traj: &Trajectory,
    gamma: f64,
    learning_rate: f64,
    ratio_clip: Option<f64>,
) -> Result<Vec<f64>> {
    let grad = is_gradient(policy, traj, gamma, ratio_clip)?;
    policy.ascend(&grad, learning_rate)?;
    Ok(grad)
}

/// What the symbolic regressor is fitted to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SrTargetMode {
    /// One regression per action (or per mean / stddev component).
    #[default]
    PerAction,
    /// A single regression of the taken action's probability on the state
    /// plus the action index.
    TakenAction,
}

impl SrTargetMode {
    pub fn name(self) -> &'static str {
        match self {
            SrTargetMode::PerAction => "per_action",
            SrTargetMode::TakenAction => "taken_action",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "per_action" => Some(SrTargetMode::PerAction),
            "taken_action" => Some(SrTargetMode::TakenAction),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SymbolicFit {
    pub policy: SymbolicPolicy,
    pub reports: Vec<FitReport>,
    /// Mean raw MSE over the fitted targets.
    pub mean_mse: f64,
}

/// Distills a neural policy into expressions. Keeps GP populations between
/// fits when warm starting.
#[derive(Clone, Debug)]
pub struct SymbolicFitter {
    pub gp: GpConfig,
    pub mode: SrTargetMode,
    pub complement_last: bool,
    pub prob_floor: f64,
    populations: Vec<Option<Vec<Expr>>>,
    fits: u64,
}

impl SymbolicFitter {
    pub fn new(gp: GpConfig, mode: SrTargetMode) -> Self {
        SymbolicFitter {
            gp,
            mode,
            complement_last: false,
            prob_floor: DEFAULT_PROB_FLOOR,
            populations: Vec::new(),
            fits: 0,
        }
    }

    pub fn fits(&self) -> u64 {
        self.fits
    }

    fn seed_for(&self, target: usize) -> u64 {
        self.gp
            .seed
            .wrapping_add(self.fits.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(target as u64)
    }

    fn fit_target(&mut self, target: usize, rows: &[Vec<f64>], y: &[f64]) -> Result<FitReport> {
        let data = Dataset::new(rows, y)?;
        let mut cfg = self.gp.clone();
        cfg.seed = self.seed_for(target);
        if self.populations.len() <= target {
            self.populations.resize(target + 1, None);
        }
        let seed_pop = if cfg.warm_start { self.populations[target].take() } else { None };
        let (report, pop) = fit_dataset(&data, &cfg, seed_pop)?;
        if cfg.warm_start {
            self.populations[target] = Some(pop);
        }
        Ok(report)
    }

    /// Fits expressions to the action probabilities (or Gaussian parameters)
    /// of `policy` at `states`. `actions` is only read in taken-action mode.
    pub fn fit(&mut self, states: &[Vec<f64>], actions: &[Action], policy: &Mlp) -> Result<SymbolicFit> {
        let dists = states.iter().map(|s| policy.forward(s)).collect::<Result<Vec<_>>>()?;
        let result = match (policy.head(), self.mode) {
            (HeadKind::Softmax { actions: k }, SrTargetMode::PerAction) => {
                let fitted = if self.complement_last { k - 1 } else { k };
                let mut reports = Vec::with_capacity(fitted);
                for i in 0..fitted {
                    let y: Vec<f64> = dists.iter().map(|d| discrete(d)[i]).collect();
                    reports.push(self.fit_target(i, states, &y)?);
                }
                let policy = SymbolicPolicy::Discrete {
                    exprs: reports.iter().map(|r| r.best.clone()).collect(),
                    complement_last: self.complement_last,
                    floor: self.prob_floor,
                };
                finish(policy, reports)
            }
            (HeadKind::Softmax { actions: k }, SrTargetMode::TakenAction) => {
                if actions.len() != states.len() {
                    return Err(Error::InvalidInput("need one action per state".into()));
                }
                // regress on (state, action index), then bind the index per action
                let d = policy.input_dim();
                let mut rows = Vec::with_capacity(states.len());
                let mut y = Vec::with_capacity(states.len());
                for ((s, dist), a) in states.iter().zip(&dists).zip(actions) {
                    let i = match a {
                        Action::Discrete(i) if *i < k => *i,
                        _ => return Err(Error::InvalidAction(format!("{a:?}"))),
                    };
                    let mut row = s.clone();
                    row.push(i as f64);
                    rows.push(row);
                    y.push(discrete(dist)[i]);
                }
                let report = self.fit_target(0, &rows, &y)?;
                let exprs = (0..k)
                    .map(|i| {
                        report.best.map_nodes(&mut |n| match n {
                            Expr::Var(v) if v == d => Expr::Const(i as f64),
                            other => other,
                        })
                    })
                    .collect();
                let policy = SymbolicPolicy::Discrete {
                    exprs,
                    complement_last: false,
                    floor: self.prob_floor,
                };
                finish(policy, vec![report])
            }
            (HeadKind::Gaussian { dims }, SrTargetMode::PerAction) => {
                let mut reports = Vec::with_capacity(2 * dims);
                for j in 0..dims {
                    let y: Vec<f64> = dists.iter().map(|d| gaussian(d).0[j]).collect();
                    reports.push(self.fit_target(2 * j, states, &y)?);
                    let y: Vec<f64> = dists.iter().map(|d| gaussian(d).1[j]).collect();
                    reports.push(self.fit_target(2 * j + 1, states, &y)?);
                }
                let policy = SymbolicPolicy::Gaussian {
                    means: reports.iter().step_by(2).map(|r| r.best.clone()).collect(),
                    stds: reports.iter().skip(1).step_by(2).map(|r| r.best.clone()).collect(),
                };
                finish(policy, reports)
            }
            (HeadKind::Gaussian { .. }, SrTargetMode::TakenAction) => Err(Error::InvalidConfig(
                "taken_action target mode needs a discrete action space".into(),
            )),
        };
        self.fits += 1;
        result
    }
}

fn discrete(d: &ActionDistribution) -> &[f64] {
    match d {
        ActionDistribution::Discrete(p) => p,
        ActionDistribution::Gaussian { .. } => unreachable!("softmax head"),
    }
}

fn gaussian(d: &ActionDistribution) -> (&[f64], &[f64]) {
    match d {
        ActionDistribution::Gaussian { mean, std } => (mean, std),
        ActionDistribution::Discrete(_) => unreachable!("gaussian head"),
    }
}

fn finish(policy: SymbolicPolicy, reports: Vec<FitReport>) -> Result<SymbolicFit> {
    let mean_mse = reports.iter().map(|r| r.raw_fitness).sum::<f64>() / reports.len() as f64;
    Ok(SymbolicFit {
        policy,
        reports,
        mean_mse,
    })
}

/// One-off distillation of the states visited in `traj`.
pub fn fit_symbolic_policy(traj: &Trajectory, policy: &Mlp, gp: &GpConfig, mode: SrTargetMode) -> Result<SymbolicFit> {
    SymbolicFitter::new(gp.clone(), mode).fit(&traj.states, &traj.actions, policy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    pub e_max: usize,
    /// First episode eligible for a symbolic fit.
    pub e_tf: usize,
    /// Period between fits and importance-sampled episodes.
    pub e_delta: usize,
    pub e_is_start: usize,
    /// Last episode eligible for importance sampling.
    pub e_ts: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    /// `false` runs plain REINFORCE.
    pub symbolic: bool,
    pub sr_target_mode: SrTargetMode,
    pub complement_last: bool,
    pub prob_floor: f64,
    pub ratio_clip: Option<f64>,
    pub log_wall_ms: bool,
    pub gp: GpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: "cartpole".into(),
            seed: 0,
            e_max: 2000,
            e_tf: 400,
            e_delta: 10,
            e_is_start: 500,
            e_ts: 1800,
            learning_rate: 3e-4,
            gamma: 0.99,
            hidden: vec![128],
            symbolic: true,
            sr_target_mode: SrTargetMode::PerAction,
            complement_last: false,
            prob_floor: DEFAULT_PROB_FLOOR,
            ratio_clip: None,
            log_wall_ms: false,
            gp: GpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let spec = env_spec(&self.env)?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.e_max == 0 {
            return bad("e_max must be at least 1".into());
        }
        if self.e_delta == 0 {
            return bad("e_delta must be at least 1".into());
        }
        if !(self.e_tf < self.e_is_start && self.e_is_start <= self.e_ts) {
            return bad(format!(
                "need e_tf < e_is_start <= e_ts, got {} / {} / {}",
                self.e_tf, self.e_is_start, self.e_ts
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths".into());
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return bad("prob_floor must lie in (0, 1)".into());
        }
        if let Some(c) = self.ratio_clip {
            if !(c > 0.0) {
                return bad("ratio_clip must be positive".into());
            }
        }
        if let ActionSpace::Continuous { .. } = spec.actions {
            if self.sr_target_mode == SrTargetMode::TakenAction {
                return bad("taken_action target mode needs a discrete action space".into());
            }
        }
        if let ActionSpace::Discrete(k) = spec.actions {
            if self.complement_last && k < 2 {
                return bad("complement_last needs at least two actions".into());
            }
        }
        self.gp.validate()
    }

    pub fn net_shape(&self) -> Result<NetShape> {
        let spec = env_spec(&self.env)?;
        Ok(NetShape {
            inputs: spec.state_dim,
            hidden: self.hidden.clone(),
            head: match spec.actions {
                ActionSpace::Discrete(actions) => HeadKind::Softmax { actions },
                ActionSpace::Continuous { dims, .. } => HeadKind::Gaussian { dims },
            },
        })
    }

    pub fn is_fit_episode(&self, e: usize) -> bool {
        self.symbolic && e >= self.e_tf && e % self.e_delta == 0
    }

    /// Whether episode `e` is sampled from the symbolic policy, given that a
    /// fit is available.
    pub fn is_is_episode(&self, e: usize) -> bool {
        self.symbolic && e >= self.e_is_start && e <= self.e_ts && e % self.e_delta == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Mc,
    Is,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateKind::Mc => "mc",
            UpdateKind::Is => "is",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub ret: f64,
    pub ma50: f64,
    pub kind: UpdateKind,
    pub sr_fit_mse: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Mlp,
    /// Latest successful fit, if any.
    pub symbolic: Option<SymbolicPolicy>,
    pub log: Vec<EpisodeRecord>,
    pub sr_failures: usize,
}

impl TrainOutcome {
    pub fn returns(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.ret).collect()
    }
}

const ACTION_STREAM: u64 = 0x5EED_AC71;
const ENV_STREAM: u64 = 0x5EED_E4F0;
const GP_STREAM: u64 = 0x5EED_6E7E;

/// Action RNG and environment for one seed. The two draw from separate
/// streams; sharing one seed would correlate e.g. a bandit's context with
/// the action sampled in it.
pub fn rollout_streams(env: &str, seed: u64) -> Result<(ChaCha8Rng, Box<dyn Env>)> {
    Ok((ChaCha8Rng::seed_from_u64(seed ^ ACTION_STREAM), make_env(env, seed ^ ENV_STREAM)?))
}

/// Runs the full schedule. `on_episode` sees every record as it is produced.
pub fn train_with<F: FnMut(&EpisodeRecord)>(cfg: &TrainConfig, mut on_episode: F) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut act_rng, mut env) = rollout_streams(&cfg.env, cfg.seed)?;
    let mut policy = Mlp::init(&cfg.net_shape()?, &mut init_rng)?;

    let mut gp = cfg.gp.clone();
    gp.seed = cfg.gp.seed ^ cfg.seed.wrapping_mul(GP_STREAM);
    let mut fitter = SymbolicFitter::new(gp, cfg.sr_target_mode);
    fitter.complement_last = cfg.complement_last;
    fitter.prob_floor = cfg.prob_floor;

    let mut symbolic: Option<SymbolicPolicy> = None;
    let mut log = Vec::with_capacity(cfg.e_max);
    let mut returns = Vec::with_capacity(cfg.e_max);
    let mut sr_failures = 0;

    for e in 1..=cfg.e_max {
        let started = Instant::now();
        let sym = symbolic.as_ref().filter(|_| cfg.is_is_episode(e));
        let (traj, kind) = match sym {
            Some(sym) => {
                let traj = run_episode(env.as_mut(), Sampler::Symbolic(sym), &policy, &mut act_rng)?;
                is_update(&mut policy, &traj, cfg.gamma, cfg.learning_rate, cfg.ratio_clip)?;
                (traj, UpdateKind::Is)
            }
            None => {
                let traj = run_episode(env.as_mut(), Sampler::Neural(&policy), &policy, &mut act_rng)?;
                mc_update(&mut policy, &traj, cfg.gamma, cfg.learning_rate)?;
                (traj, UpdateKind::Mc)
            }
        };
        let mut sr_fit_mse = None;
        if cfg.is_fit_episode(e) {
            match fitter.fit(&traj.states, &traj.actions, &policy) {
                Ok(fit) => {
                    sr_fit_mse = Some(fit.mean_mse);
                    symbolic = Some(fit.policy);
                }
                Err(_) => {
                    // fall back to on-policy updates until the next good fit
                    symbolic = None;
                    sr_failures += 1;
                }
            }
        }
        returns.push(traj.total_return());
        let window = &returns[returns.len().saturating_sub(MA_WINDOW)..];
        let record = EpisodeRecord {
            episode: e,
            ret: traj.total_return(),
            ma50: window.iter().sum::<f64>() / window.len() as f64,
            kind,
            sr_fit_mse,
            wall_ms: cfg.log_wall_ms.then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        on_episode(&record);
        log.push(record);
    }
    Ok(TrainOutcome {
        policy,
        symbolic,
        log,
        sr_failures,
    })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// Trailing mean over up to `window` values; early entries average the prefix.
///
/// # Panics
/// If `window` is zero.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be positive");
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let w = &series[(i + 1).saturating_sub(window)..=i];
        out.push(w.iter().sum::<f64>() / w.len() as f64);
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_episode_log<W: Write>(records: &[EpisodeRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{EPISODE_LOG_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.episode,
            r.ret,
            r.ma50,
            r.kind,
            fmt_opt(r.sr_fit_mse),
            fmt_opt(r.wall_ms)
        )?;
    }
    Ok(())
}

/// Per-coordinate running mean and variance (Welford).
#[derive(Clone, Debug)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, m2), xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = xi - *m;
            *m += d / n;
            *m2 += d * (xi - *m);
        }
    }

    fn variances(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|v| v / denom).collect()
    }
}

#[derive(Clone, Debug)]
pub struct VarianceReport {
    pub batches: usize,
    pub mc_mean: Vec<f64>,
    pub is_mean: Vec<f64>,
    pub mc_var: Vec<f64>,
    pub is_var: Vec<f64>,
}

impl VarianceReport {
    /// Sum of per-coordinate sample variances.
    pub fn mc_trace(&self) -> f64 {
        self.mc_var.iter().sum()
    }

    pub fn is_trace(&self) -> f64 {
        self.is_var.iter().sum()
    }

    /// Largest per-coordinate mean difference in units of its standard error.
    pub fn max_mean_gap_se(&self) -> f64 {
        let n = self.batches as f64;
        self.mc_mean
            .iter()
            .zip(&self.is_mean)
            .zip(self.mc_var.iter().zip(&self.is_var))
            .map(|((a, b), (va, vb))| {
                let se = ((va + vb) / n).sqrt();
                if se > 0.0 {
                    (a - b).abs() / se
                } else if a == b {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Estimates the spread of single-episode gradient estimates with the
/// parameters held fixed: `batches` on-policy episodes for the Monte Carlo
/// estimator and `batches` episodes from `behavior` for the importance-sampled
/// one.
pub fn variance_diagnostic<R: Rng + ?Sized>(
    policy: &Mlp,
    behavior: &SymbolicPolicy,
    env: &mut dyn Env,
    batches: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<VarianceReport> {
    if batches < 2 {
        return Err(Error::InvalidInput("need at least two batches".into()));
    }
    let spec = env.spec();
    behavior.validate(spec.state_dim, &spec.actions)?;
    let n = policy.num_params();
    let (mut mc, mut is) = (Moments::new(n), Moments::new(n));
    for _ in 0..batches {
        let t = run_episode(env, Sampler::Neural(policy), policy, rng)?;
        mc.push(&mc_gradient(policy, &t, gamma)?);
        let t = run_episode(env, Sampler::Symbolic(behavior), policy, rng)?;
        is.push(&is_gradient(policy, &t, gamma, None)?);
    }
    Ok(VarianceReport {
        batches,
        mc_var: mc.variances(),
        is_var: is.variances(),
        mc_mean: mc.mean,
        is_mean: is.mean,
    })
}

/// Average undiscounted return of `episodes` rollouts.
pub fn evaluate<R: Rng + ?Sized>(
    env: &mut dyn Env,
    sampler: Sampler<'_>,
    episodes: usize,
    greedy: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut total = 0.0;
        loop {
            let d = sampler.distribution(&state)?;
            let action = if greedy { d.mode() } else { d.sample(rng).0 };
            let step = env.step(&action)?;
            total += step.reward;
            state = step.next_state;
            if step.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn small_cfg(env: &str) -> TrainConfig {
        let mut cfg = TrainConfig {
            env: env.into(),
            e_max: 40,
            e_tf: 10,
            e_delta: 5,
            e_is_start: 15,
            e_ts: 30,
            hidden: vec![8],
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        cfg.gp.population_size = 60;
        cfg.gp.generations = 3;
        cfg.gp.tournament_size = 5;
        cfg
    }

    #[test]
    fn rewards_to_go_hand_values() {
        assert_eq!(rewards_to_go(&[1.0, 2.0, 3.0], 0.5).unwrap(), vec![2.75, 3.5, 3.0]);
        assert_eq!(rewards_to_go(&[1.0, 2.0, 3.0], 1.0).unwrap(), vec![6.0, 5.0, 3.0]);
        assert_eq!(rewards_to_go(&[1.0, 2.0, 3.0], 0.0).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(rewards_to_go(&[], 0.9).is_err());
        assert!(rewards_to_go(&[1.0], 1.5).is_err());
    }

    #[test]
    fn moving_average_prefix() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
        assert_eq!(moving_average(&[1.0, 2.0], 50), vec![1.0, 1.5]);
    }

    #[test]
    fn schedule_matches_table_values() {
        let cfg = TrainConfig::default();
        assert!(!cfg.is_fit_episode(390));
        assert!(cfg.is_fit_episode(400));
        assert!(!cfg.is_fit_episode(405));
        assert!(!cfg.is_is_episode(490));
        assert!(cfg.is_is_episode(500));
        assert!(cfg.is_is_episode(1800));
        assert!(!cfg.is_is_episode(1810));
        assert!(!cfg.is_is_episode(505));
        let base = TrainConfig {
            symbolic: false,
            ..TrainConfig::default()
        };
        assert!(!base.is_fit_episode(400) && !base.is_is_episode(500));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let one = TrainConfig {
            e_max: 1,
            ..TrainConfig::default()
        };
        assert!(one.validate().is_ok());
        for bad in [
            TrainConfig { e_tf: 600, ..TrainConfig::default() },
            TrainConfig { e_delta: 0, ..TrainConfig::default() },
            TrainConfig { gamma: 0.0, ..TrainConfig::default() },
            TrainConfig { env: "pong".into(), ..TrainConfig::default() },
            TrainConfig { env: "pointreach".into(), sr_target_mode: SrTargetMode::TakenAction, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn unit_ratio_gives_identical_update() {
        let cfg = small_cfg("cartpole");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = Mlp::init(&cfg.net_shape().unwrap(), &mut rng).unwrap();
        let mut env = make_env("cartpole", 1).unwrap();
        let traj = run_episode(env.as_mut(), Sampler::Neural(&policy), &policy, &mut rng).unwrap();
        assert_eq!(traj.behavior_probs, traj.eval_probs);
        let mut a = policy.clone();
        let mut b = policy.clone();
        let ga = mc_update(&mut a, &traj, 0.99, 1e-2).unwrap();
        let gb = is_update(&mut b, &traj, 0.99, 1e-2, None).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn symbolic_rollout_records_both_probabilities() {
        let cfg = small_cfg("cartpole");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = Mlp::init(&cfg.net_shape().unwrap(), &mut rng).unwrap();
        let sym = SymbolicPolicy::discrete(vec![parse_expr("0.9", 4).unwrap(), parse_expr("0.1", 4).unwrap()]);
        let mut env = make_env("cartpole", 1).unwrap();
        let traj = run_episode(env.as_mut(), Sampler::Symbolic(&sym), &policy, &mut rng).unwrap();
        for (t, a) in traj.actions.iter().enumerate() {
            let want = if *a == Action::Discrete(0) { 0.9 } else { 0.1 };
            assert!((traj.behavior_probs[t] - want).abs() < 1e-12);
            let p = policy.forward(&traj.states[t]).unwrap().prob(a).unwrap();
            assert_eq!(traj.eval_probs[t], p);
        }
    }

    #[test]
    fn training_schedule_and_log() {
        let cfg = small_cfg("cartpole");
        let out = train(&cfg).unwrap();
        assert_eq!(out.log.len(), 40);
        for r in &out.log {
            let want = if cfg.is_is_episode(r.episode) { UpdateKind::Is } else { UpdateKind::Mc };
            assert_eq!(r.kind, want, "episode {}", r.episode);
            assert_eq!(r.sr_fit_mse.is_some(), cfg.is_fit_episode(r.episode));
            assert!(r.wall_ms.is_none());
        }
        assert_eq!(out.sr_failures, 0);
        assert!(out.symbolic.is_some());
        let ma = moving_average(&out.returns(), MA_WINDOW);
        for (r, m) in out.log.iter().zip(ma) {
            assert!((r.ma50 - m).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_cfg("cartpole");
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_episode_log(&train(&cfg).unwrap().log, &mut a).unwrap();
        write_episode_log(&train(&cfg).unwrap().log, &mut b).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 1, ..cfg };
        let mut c = Vec::new();
        write_episode_log(&train(&other).unwrap().log, &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn contexts_and_actions_are_uncorrelated() {
        // a uniform policy on the bandit: each (context, action) cell should get a quarter
        let mut flat = Mlp::init(
            &NetShape { inputs: 1, hidden: vec![], head: HeadKind::Softmax { actions: 2 } },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        flat.set_params(&vec![0.0; flat.num_params()]).unwrap();
        for seed in [0, 5, 9] {
            let (mut rng, mut env) = rollout_streams("bandit2", seed).unwrap();
            let mut cells = [0usize; 4];
            for _ in 0..4000 {
                let t = run_episode(env.as_mut(), Sampler::Neural(&flat), &flat, &mut rng).unwrap();
                let Action::Discrete(a) = t.actions[0] else { unreachable!() };
                cells[2 * usize::from(t.states[0][0] < 0.0) + a] += 1;
            }
            assert!(cells.iter().all(|&c| (850..1150).contains(&c)), "seed {seed}: {cells:?}");
        }
    }

    #[test]
    fn continuous_and_bandit_run() {
        for env in ["pointreach", "bandit2", "acrobot"] {
            let mut cfg = small_cfg(env);
            cfg.e_max = 20;
            if env == "acrobot" {
                cfg.e_max = 12;
            }
            let out = train(&cfg).unwrap();
            assert!(out.log.iter().all(|r| r.ret.is_finite()));
        }
    }

    #[test]
    fn taken_action_mode_fits_one_expression() {
        let mut cfg = small_cfg("acrobot");
        cfg.sr_target_mode = SrTargetMode::TakenAction;
        cfg.e_max = 10;
        cfg.e_tf = 9;
        let out = train(&cfg).unwrap();
        let sym = out.symbolic.unwrap();
        assert_eq!(sym.n_actions(), 3);
        let spec = env_spec("acrobot").unwrap();
        sym.validate(spec.state_dim, &spec.actions).unwrap();
    }

    #[test]
    fn baseline_never_fits() {
        let cfg = TrainConfig {
            symbolic: false,
            ..small_cfg("cartpole")
        };
        let out = train(&cfg).unwrap();
        assert!(out.symbolic.is_none());
        assert!(out.log.iter().all(|r| r.kind == UpdateKind::Mc && r.sr_fit_mse.is_none()));
    }

    #[test]
    fn log_format() {
        let recs = vec![
            EpisodeRecord {
                episode: 1,
                ret: 12.0,
                ma50: 12.0,
                kind: UpdateKind::Mc,
                sr_fit_mse: None,
                wall_ms: None,
            },
            EpisodeRecord {
                episode: 2,
                ret: 20.0,
                ma50: 16.0,
                kind: UpdateKind::Is,
                sr_fit_mse: Some(0.25),
                wall_ms: None,
            },
        ];
        let mut buf = Vec::new();
        write_episode_log(&recs, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "episode,return,ma50_return,update_kind,sr_fit_mse,wall_ms\n1,12,12,mc,,\n2,20,16,is,0.25,\n"
        );
    }
}
