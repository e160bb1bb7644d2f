//! Command-line front end. Exit codes: 0 success, 1 usage, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_seeds, preset, set_gp, RunConfig};
use crate::envs::{env_spec, ActionSpace};
use crate::nn::{HeadKind, Mlp};
use crate::plot::{mean_std, parse_episode_log, render_svg};
use crate::policy::SymbolicPolicy;
use crate::symreg::{fit, GpConfig};
use crate::trainer::{evaluate, rollout_streams, train, variance_diagnostic, write_episode_log, Sampler, TrainOutcome, MA_WINDOW};

pub const OUT_DIR_VAR: &str = "SYMPOL_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "sympol", version, about = "Policy gradient with symbolic policy distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one run per seed and write logs, policies and a plot.
    Train(TrainArgs),
    /// Fit an expression to a CSV with columns s0..s{d-1}, y.
    FitSr(FitArgs),
    /// Evaluate a network checkpoint or a symbolic policy file.
    Eval(EvalArgs),
    /// Compare single-episode gradient variance of the two estimators.
    DiagVariance(DiagArgs),
    /// Plot the cross-seed MA-50 return of episode logs as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Built-in configuration: cartpole, acrobot or pointreach.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Configuration file (`key = value` with [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed count (N runs seeds 0..N) or comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Concurrent seed runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output root; defaults to $SYMPOL_OUT_DIR, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// Dotted override such as trainer.e_tf=400 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for --set trainer.e_max=N.
    #[arg(long)]
    e_max: Option<usize>,
    /// Plain REINFORCE (no fits, no importance sampling).
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    csv: PathBuf,
    /// GP settings file; only the [gp] section is read.
    #[arg(long)]
    config: Option<PathBuf>,
    /// GP override such as gp.population_size=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    env: String,
    #[arg(long, required_unless_present = "policy", conflicts_with = "policy")]
    checkpoint: Option<PathBuf>,
    /// Symbolic policy file (`pi(a0) = ...` lines).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Take the most likely action instead of sampling.
    #[arg(long)]
    greedy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Symbolic behavior policy file.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    batches: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mean MA-50 return")]
    title: String,
    #[arg(long)]
    force: bool,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<crate::error::Error> for Failure {
    fn from(e: crate::error::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::FitSr(a) => cmd_fit_sr(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DiagVariance(a) => cmd_diag(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => preset(p).map_err(usage)?,
        (None, Some(path)) => {
            let text = read(path)?;
            let mut c = RunConfig::parse(&text).map_err(usage)?;
            if c.name == RunConfig::default().name {
                if let Some(stem) = path.file_stem() {
                    c.name = stem.to_string_lossy().into_owned();
                }
            }
            c
        }
        (None, None) => return Err(usage("train needs --preset or --config")),
    };
    cfg.apply_overrides(&a.sets).map_err(usage)?;
    if let Some(e) = a.e_max {
        cfg.train.e_max = e;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_seeds(s).map_err(usage)?;
    }
    if a.baseline {
        cfg.train.symbolic = false;
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn out_root(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Final MA-50 return of one run, i.e. the mean of its last 50 returns.
fn final_window(out: &TrainOutcome) -> f64 {
    let r = out.returns();
    let w = &r[r.len().saturating_sub(MA_WINDOW)..];
    w.iter().sum::<f64>() / w.len() as f64
}

fn write_seed(dir: &Path, out: &TrainOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut log = Vec::new();
    write_episode_log(&out.log, &mut log)?;
    write_atomic(&dir.join("episodes.csv"), &log)?;
    write_atomic(&dir.join("network.ckpt"), out.policy.to_checkpoint().as_bytes())?;
    if let Some(sym) = &out.symbolic {
        write_atomic(&dir.join("policy.txt"), sym.to_string().as_bytes())?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_train_config(&a)?;
    let root = out_root(&a.out);
    let final_dir = root.join(&cfg.name);
    if final_dir.exists() && !a.force {
        return Err(Failure::Runtime(anyhow!(
            "{} already exists (use --force to replace it)",
            final_dir.display()
        )));
    }
    if final_dir.exists() && !final_dir.join("config.txt").is_file() {
        return Err(Failure::Runtime(anyhow!(
            "{} exists but does not look like a run directory; refusing to replace it",
            final_dir.display()
        )));
    }
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    // build the run in a staging directory and move it into place at the end
    let staging = root.join(format!(".{}.partial-{}", cfg.name, std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).context("clearing stale staging directory")?;
    }
    fs::create_dir_all(&staging).context("creating staging directory")?;
    let result = train_into(&cfg, &staging, a.jobs);
    let finals = match result {
        Ok(f) => f,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e.into());
        }
    };
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).with_context(|| format!("removing {}", final_dir.display()))?;
    }
    fs::rename(&staging, &final_dir).with_context(|| format!("moving run into {}", final_dir.display()))?;
    let (m, s) = mean_std(&finals);
    println!("wrote {}", final_dir.display());
    println!("reward {m:.1} ± {s:.1}");
    Ok(())
}

fn train_into(cfg: &RunConfig, dir: &Path, jobs: usize) -> anyhow::Result<Vec<f64>> {
    write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    let seeds = &cfg.seeds;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<anyhow::Result<(f64, String)>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let seed = seeds[i];
                let r = train(&cfg.for_seed(seed))
                    .map_err(anyhow::Error::from)
                    .and_then(|out| {
                        write_seed(&dir.join(format!("seed-{seed}")), &out)?;
                        let f = final_window(&out);
                        let line = format!(
                            "seed {seed}: final MA-50 {f:.1}, fits {}, failed fits {}",
                            out.log.iter().filter(|r| r.sr_fit_mse.is_some()).count(),
                            out.sr_failures
                        );
                        Ok((f, line))
                    })
                    .with_context(|| format!("seed {seed}"));
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    let mut finals = Vec::with_capacity(seeds.len());
    let mut series = Vec::with_capacity(seeds.len());
    for (i, r) in results.into_inner().unwrap_or_else(|e| e.into_inner()).into_iter().enumerate() {
        let (f, line) = r.ok_or_else(|| anyhow!("seed {} did not run", seeds[i]))??;
        println!("{line}");
        finals.push(f);
        let log = read(&dir.join(format!("seed-{}", seeds[i])).join("episodes.csv"))?;
        series.push(parse_episode_log(&log)?.iter().map(|r| r.ma50).collect::<Vec<_>>());
    }
    let svg = render_svg(&series, &format!("{}: mean MA-50 return ± 1 std", cfg.name))?;
    write_atomic(&dir.join("returns.svg"), svg.as_bytes())?;
    let (m, s) = mean_std(&finals);
    let mut summary = String::new();
    for (seed, f) in seeds.iter().zip(&finals) {
        summary.push_str(&format!("seed {seed} final_ma50 {f}\n"));
    }
    summary.push_str(&format!("reward {m:.1} ± {s:.1}\n"));
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    Ok(finals)
}

fn read_fit_csv(path: &Path) -> anyhow::Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| anyhow!("missing `y` column"))?;
    let d = headers.len() - 1;
    let mut s_cols = Vec::with_capacity(d);
    for k in 0..d {
        let name = format!("s{k}");
        s_cols.push(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| anyhow!("expected columns s0..s{} and y, missing `{name}`", d.saturating_sub(1)))?,
        );
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> anyhow::Result<f64> {
            let v = rec.get(c).unwrap_or("");
            v.parse().with_context(|| format!("row {}: bad number `{v}`", i + 2))
        };
        rows.push(s_cols.iter().map(|&c| num(c)).collect::<anyhow::Result<Vec<f64>>>()?);
        y.push(num(y_col)?);
    }
    Ok((rows, y))
}

fn cmd_fit_sr(a: FitArgs) -> Result<(), Failure> {
    let mut gp = GpConfig::default();
    if let Some(path) = &a.config {
        gp = RunConfig::parse(&read(path)?).map_err(usage)?.train.gp;
    }
    for s in &a.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("override `{s}` is not key=value")))?;
        let k = k.trim();
        let name = k.strip_prefix("gp.").unwrap_or(k);
        set_gp(&mut gp, k, name, v.trim()).map_err(usage)?;
    }
    if let Some(seed) = a.seed {
        gp.seed = seed;
    }
    gp.validate().map_err(usage)?;
    let (rows, y) = read_fit_csv(&a.csv)?;
    let report = fit(&rows, &y, &gp).context("symbolic regression")?;
    println!("best = {}", report.best);
    println!("raw_mse = {}", report.raw_fitness);
    println!("penalized_fitness = {}", report.penalized_fitness);
    Ok(())
}

enum LoadedPolicy {
    Net(Mlp),
    Sym(SymbolicPolicy),
}

fn load_checkpoint(path: &Path, env: &str) -> Result<Mlp, Failure> {
    let spec = env_spec(env).map_err(usage)?;
    let net = Mlp::from_checkpoint(&read(path)?).with_context(|| format!("loading {}", path.display()))?;
    let want = match spec.actions {
        ActionSpace::Discrete(actions) => HeadKind::Softmax { actions },
        ActionSpace::Continuous { dims, .. } => HeadKind::Gaussian { dims },
    };
    if net.input_dim() != spec.state_dim || net.head() != want {
        return Err(Failure::Runtime(anyhow!(
            "checkpoint {} does not fit environment {env}",
            path.display()
        )));
    }
    Ok(net)
}

fn load_symbolic(path: &Path, env: &str) -> Result<SymbolicPolicy, Failure> {
    let spec = env_spec(env).map_err(usage)?;
    let sym = SymbolicPolicy::parse(&read(path)?, spec.state_dim).with_context(|| format!("parsing {}", path.display()))?;
    sym.validate(spec.state_dim, &spec.actions)
        .with_context(|| format!("policy {} does not fit environment {env}", path.display()))?;
    Ok(sym)
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    env_spec(&a.env).map_err(usage)?;
    if a.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let policy = match (&a.checkpoint, &a.policy) {
        (Some(c), _) => LoadedPolicy::Net(load_checkpoint(c, &a.env)?),
        (None, Some(p)) => LoadedPolicy::Sym(load_symbolic(p, &a.env)?),
        (None, None) => return Err(usage("eval needs --checkpoint or --policy")),
    };
    let sampler = match &policy {
        LoadedPolicy::Net(n) => Sampler::Neural(n),
        LoadedPolicy::Sym(s) => Sampler::Symbolic(s),
    };
    let (mut rng, mut env) = rollout_streams(&a.env, a.seed).context("creating environment")?;
    let returns = evaluate(env.as_mut(), sampler, a.episodes, a.greedy, &mut rng).context("evaluation")?;
    let (m, s) = mean_std(&returns);
    println!(
        "return {m:.1} ± {s:.1} over {} {} episodes",
        a.episodes,
        if a.greedy { "greedy" } else { "sampled" }
    );
    Ok(())
}

fn cmd_diag(a: DiagArgs) -> Result<(), Failure> {
    env_spec(&a.env).map_err(usage)?;
    if a.batches < 2 {
        return Err(usage("--batches must be at least 2"));
    }
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(usage("--gamma must lie in (0, 1]"));
    }
    let net = load_checkpoint(&a.checkpoint, &a.env)?;
    let sym = load_symbolic(&a.policy, &a.env)?;
    let (mut rng, mut env) = rollout_streams(&a.env, a.seed).context("creating environment")?;
    let rep = variance_diagnostic(&net, &sym, env.as_mut(), a.batches, a.gamma, &mut rng).context("diagnostic")?;
    println!("batches = {}", rep.batches);
    println!("tr_var_mc = {}", rep.mc_trace());
    println!("tr_var_is = {}", rep.is_trace());
    println!("ratio_is_over_mc = {}", rep.is_trace() / rep.mc_trace());
    println!("max_mean_gap_se = {}", rep.max_mean_gap_se());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<(), Failure> {
    if a.out.exists() && !a.force {
        return Err(Failure::Runtime(anyhow!("{} already exists (use --force)", a.out.display())));
    }
    let mut series = Vec::with_capacity(a.logs.len());
    for p in &a.logs {
        let recs = parse_episode_log(&read(p)?).with_context(|| format!("reading {}", p.display()))?;
        if recs.is_empty() {
            return Err(Failure::Runtime(anyhow!("{} has no episodes", p.display())));
        }
        series.push(recs.iter().map(|r| r.ma50).collect::<Vec<_>>());
    }
    let svg = render_svg(&series, &a.title)?;
    write_atomic(&a.out, svg.as_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
