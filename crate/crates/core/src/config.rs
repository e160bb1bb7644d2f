//! Run configuration: a flat `key = value` text format with `[section]` headers.
//!
//! ```text
//! # comments start with '#'
//! [run]
//! name = cartpole
//! seeds = 5              # a count (seeds 0..5) or a list: 0, 3, 7 (or 4, for one)
//!
//! [trainer]
//! env = cartpole
//! e_max = 2000
//! e_tf = 400
//! e_delta = 10
//! e_is_start = 500
//! e_ts = 1800
//! learning_rate = 0.0003
//! gamma = 0.99
//! symbolic = true
//! sr_target_mode = per_action
//! complement_last = false
//! prob_floor = 0.05
//! ratio_clip = none
//! log_wall_ms = false
//!
//! [net]
//! hidden = 128
//!
//! [gp]
//! population_size = 2000
//! basis = add, sub, mul, div, inv, cos
//! const_range = -1, 1
//! init_depth = 2, 6
//! ...
//! ```
//!
//! Every key is optional; missing keys keep their defaults. Overrides use
//! dotted names such as `trainer.e_tf=400` or `gp.population_size=500`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expr::BasisSet;
use crate::symreg::GpConfig;
use crate::trainer::{SrTargetMode, TrainConfig};

pub const PRESETS: [&str; 3] = ["cartpole", "acrobot", "pointreach"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seeds: vec![0],
            train: TrainConfig::default(),
        }
    }
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        name: name.into(),
        ..RunConfig::default()
    };
    let t = &mut cfg.train;
    t.env = name.into();
    match name {
        "cartpole" => {}
        "acrobot" => {
            t.hidden = vec![128, 128];
            t.learning_rate = 5e-4;
            t.gp.tournament_size = 50;
        }
        "pointreach" => {
            t.hidden = vec![128, 128];
            t.learning_rate = 5e-4;
            t.gp.basis = BasisSet::parse("add, sub, mul, div, min, max")?;
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(cfg)
}

/// Parses `5` as seeds 0..5 and `1, 4, 9` as that list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if !text.contains(',') {
        let n: u64 = parse_value("seeds", text)?;
        if n == 0 {
            return Err(Error::InvalidConfig("seeds must be at least 1".into()));
        }
        return Ok((0..n).collect());
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value("seeds", s))
        .collect()
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean `{v}` for `{key}`"))),
    }
}

fn parse_pair<T: FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse_value(key, a)?, parse_value(key, b)?)),
        _ => Err(Error::InvalidConfig(format!("`{key}` needs two comma-separated values"))),
    }
}

impl RunConfig {
    /// Sets one dotted key such as `trainer.e_tf`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (section, name) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::InvalidConfig(format!("key `{key}` needs a section prefix")))?;
        let t = &mut self.train;
        match (section, name) {
            ("run", "name") => self.name = value.into(),
            ("run", "seeds") => self.seeds = parse_seeds(value)?,
            ("trainer", "env") => t.env = value.into(),
            ("trainer", "e_max") => t.e_max = parse_value(key, value)?,
            ("trainer", "e_tf") => t.e_tf = parse_value(key, value)?,
            ("trainer", "e_delta") => t.e_delta = parse_value(key, value)?,
            ("trainer", "e_is_start") => t.e_is_start = parse_value(key, value)?,
            ("trainer", "e_ts") => t.e_ts = parse_value(key, value)?,
            ("trainer", "learning_rate") => t.learning_rate = parse_value(key, value)?,
            ("trainer", "gamma") => t.gamma = parse_value(key, value)?,
            ("trainer", "symbolic") => t.symbolic = parse_bool(key, value)?,
            ("trainer", "sr_target_mode") => {
                t.sr_target_mode = SrTargetMode::from_name(value)
                    .ok_or_else(|| Error::InvalidConfig(format!("bad sr_target_mode `{value}`")))?
            }
            ("trainer", "complement_last") => t.complement_last = parse_bool(key, value)?,
            ("trainer", "prob_floor") => t.prob_floor = parse_value(key, value)?,
            ("trainer", "ratio_clip") => {
                t.ratio_clip = match value {
                    "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            ("trainer", "log_wall_ms") => t.log_wall_ms = parse_bool(key, value)?,
            ("net", "hidden") => {
                t.hidden = value
                    .split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            ("gp", _) => set_gp(&mut t.gp, key, name, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Reads config text on top of `base`.
    pub fn parse_onto(mut base: RunConfig, text: &str) -> Result<RunConfig> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(format!("line {}: {m}", i + 1)),
                other => other,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(Error::InvalidConfig(format!("expected `key = value`, got `{line}`"))))?;
            if section.is_empty() {
                return Err(at(Error::InvalidConfig("key outside of any [section]".into())));
            }
            base.set(&format!("{section}.{}", k.trim()), v).map_err(at)?;
        }
        Ok(base)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        Self::parse_onto(RunConfig::default(), text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::InvalidConfig(format!("bad run name `{}`", self.name)));
        }
        self.train.validate()
    }

    /// The configuration of one seed's run.
    pub fn for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// Renders every key; the result parses back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &t.gp;
        let join = |v: &[String]| v.join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "name = {}", self.name);
        let mut seeds = join(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>());
        if self.seeds.len() == 1 {
            // a trailing comma keeps a single seed from reading back as a count
            seeds.push(',');
        }
        let _ = writeln!(s, "seeds = {seeds}");
        let _ = writeln!(s, "\n[trainer]");
        let _ = writeln!(s, "env = {}", t.env);
        let _ = writeln!(s, "e_max = {}", t.e_max);
        let _ = writeln!(s, "e_tf = {}", t.e_tf);
        let _ = writeln!(s, "e_delta = {}", t.e_delta);
        let _ = writeln!(s, "e_is_start = {}", t.e_is_start);
        let _ = writeln!(s, "e_ts = {}", t.e_ts);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "gamma = {}", t.gamma);
        let _ = writeln!(s, "symbolic = {}", t.symbolic);
        let _ = writeln!(s, "sr_target_mode = {}", t.sr_target_mode.name());
        let _ = writeln!(s, "complement_last = {}", t.complement_last);
        let _ = writeln!(s, "prob_floor = {}", t.prob_floor);
        let _ = writeln!(s, "ratio_clip = {}", t.ratio_clip.map_or("none".into(), |c| c.to_string()));
        let _ = writeln!(s, "log_wall_ms = {}", t.log_wall_ms);
        let _ = writeln!(s, "\n[net]");
        let _ = writeln!(s, "hidden = {}", join(&t.hidden.iter().map(usize::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "\n[gp]");
        let _ = writeln!(s, "population_size = {}", g.population_size);
        let _ = writeln!(s, "tournament_size = {}", g.tournament_size);
        let _ = writeln!(s, "generations = {}", g.generations);
        let _ = writeln!(s, "p_crossover = {}", g.p_crossover);
        let _ = writeln!(s, "p_subtree_mutation = {}", g.p_subtree_mutation);
        let _ = writeln!(s, "p_hoist_mutation = {}", g.p_hoist_mutation);
        let _ = writeln!(s, "p_point_mutation = {}", g.p_point_mutation);
        let _ = writeln!(s, "p_point_replace = {}", g.p_point_replace);
        let _ = writeln!(s, "parsimony_coefficient = {}", g.parsimony_coefficient);
        let _ = writeln!(s, "basis = {}", g.basis.names().join(", "));
        let _ = writeln!(s, "const_range = {}, {}", g.basis.const_range.0, g.basis.const_range.1);
        let _ = writeln!(s, "init_depth = {}, {}", g.init_depth.0, g.init_depth.1);
        let _ = writeln!(s, "max_depth = {}", g.max_depth);
        let _ = writeln!(s, "max_length = {}", g.max_length);
        let _ = writeln!(s, "seed = {}", g.seed);
        let _ = writeln!(s, "warm_start = {}", g.warm_start);
        s
    }
}

/// Sets a `gp.*` key. Shared with the standalone regression command.
pub fn set_gp(g: &mut GpConfig, key: &str, name: &str, value: &str) -> Result<()> {
    match name {
        "population_size" => g.population_size = parse_value(key, value)?,
        "tournament_size" => g.tournament_size = parse_value(key, value)?,
        "generations" => g.generations = parse_value(key, value)?,
        "p_crossover" => g.p_crossover = parse_value(key, value)?,
        "p_subtree_mutation" => g.p_subtree_mutation = parse_value(key, value)?,
        "p_hoist_mutation" => g.p_hoist_mutation = parse_value(key, value)?,
        "p_point_mutation" => g.p_point_mutation = parse_value(key, value)?,
        "p_point_replace" => g.p_point_replace = parse_value(key, value)?,
        "parsimony_coefficient" => g.parsimony_coefficient = parse_value(key, value)?,
        "basis" => {
            let range = g.basis.const_range;
            g.basis = BasisSet::parse(value)?;
            g.basis.const_range = range;
        }
        "const_range" => g.basis.const_range = parse_pair(key, value)?,
        "init_depth" => g.init_depth = parse_pair(key, value)?,
        "max_depth" => g.max_depth = parse_value(key, value)?,
        "max_length" => g.max_length = parse_value(key, value)?,
        "seed" => g.seed = parse_value(key, value)?,
        "warm_start" => g.warm_start = parse_bool(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
    }
    Ok(())
}
