#![allow(clippy::needless_range_loop)]

pub mod assign;
pub mod baselines;
pub mod cli;
pub mod dispatch;
pub mod env;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod patrol;
pub mod rng;
pub mod scenario;
pub mod trainer;
