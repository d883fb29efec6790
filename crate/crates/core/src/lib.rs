//! Tail-bound evaluators and a seeded Monte Carlo harness for empirical
//! processes of independent variables and regenerating Markov chains.
//!
//! The crate has three layers:
//!
//! * primitives: ψ_α Orlicz norms ([`orlicz`]) and closed-form tail bound
//!   evaluators with an explicit ledger of universal constants ([`bounds`]);
//! * chains: discrete Markov chains with minorization certificates, the
//!   split-chain sampler, regeneration-block decomposition ([`chain`]), the
//!   concrete test chains ([`zoo`]) and block-based estimators
//!   ([`estimators`]);
//! * verification: experiment configs ([`config`]), the tail-experiment and
//!   calibration engine ([`harness`]) and report serialization ([`report`]).

pub mod bounds;
pub mod chain;
pub mod config;
pub mod estimators;
pub mod harness;
pub mod orlicz;
pub mod report;
pub mod rng;
pub mod zoo;
