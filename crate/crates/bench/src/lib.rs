//! Benchmark harness for the contextguard pipeline.
//!
//! Generates a synthetic 2×2 corpus (Lazy/Expert prompt style ×
//! Personal/Institutional secrets), runs it through the guard or straight to
//! a cloud tier, and reports leakage and token parsimony per quadrant. Also
//! hosts the log-triage and long-session scenarios and a pairwise judge.

pub mod attack;
pub mod corpus;
pub mod fuzz;
pub mod judge;
pub mod report;
pub mod runner;
pub mod scenarios;
pub mod secrets;
pub mod stats;
