//! Desk-scale continual-learning laboratory for instruction-following
//! navigation: a tape autodiff engine, a synthetic navigation world, a
//! structured attention planner, dual-loop scenario replay, transfer metrics
//! and an experiment harness.

pub mod autodiff;
pub mod engine;
pub mod exec;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod planner;
pub mod rng;
pub mod world;
