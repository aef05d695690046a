//! History-driven API fuzzing engine.
//!
//! Pipeline: recorded invocations land in the [`store`]; the [`fuzz`] driver
//! mutates them with the [`rules`], [`codegen`] renders each case for a
//! target runtime, and [`exec`] runs it and classifies the outcome.
//! [`sim`] is an in-process target with planted bugs; [`kb`] mines
//! vulnerability reports for the root causes the rules are built from.

pub mod codegen;
pub mod exec;
pub mod fuzz;
pub mod kb;
pub mod rng;
pub mod rules;
pub mod sim;
pub mod store;
pub mod value;
