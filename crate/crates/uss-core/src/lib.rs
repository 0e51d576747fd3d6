//! Cascaded sensor selection without ground-truth labels.
//!
//! A cascade of `K` sensors is queried in order; querying up to sensor `j`
//! costs `C_j` and yields binary predictions `Y^1..Y^j` of a hidden label
//! `Y`. The total cost of stopping at `j` is `C_j + P{Y != Y^j}`. The error
//! rates are unobservable without labels, so online selection has to work
//! from pairwise disagreement rates alone.
//!
//! This crate provides:
//!
//! * exact instance modeling over enumerable joint distributions, with the
//!   learnability diagnostics (strong/weak dominance, per-arm gaps) that
//!   decide whether the label-free problem is solvable ([`model`]);
//! * the disagreement-based UCB policy, its lower-confidence ablation, a
//!   label-fed baseline, and fixed/oracle references ([`policies`]);
//! * synthetic cascade generators and recorded-trace replay
//!   ([`environments`]);
//! * a deterministic Monte-Carlo regret harness plus closed-form bound
//!   calculators ([`simulator`]);
//! * serializable run configuration and canned experiment presets
//!   ([`config`], [`presets`]).

pub mod config;
pub mod environments;
pub mod error;
pub mod model;
pub mod policies;
pub mod presets;
pub mod simulator;

pub use error::{Result, UssError};
