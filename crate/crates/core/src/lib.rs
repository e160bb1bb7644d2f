pub mod error;
pub mod expr;
pub mod symreg;
pub mod envs;
pub mod nn;
pub mod policy;
pub mod trainer;
pub mod config;
pub mod plot;
#[cfg(feature = "cli")]
pub mod cli;
