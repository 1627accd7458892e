//! Knowledge-guided automated feature engineering.
//!
//! The pipeline has two halves. The *exploitation* half loads a knowledge
//! base ([`kg`]), maps dataset columns to concepts, and forward-chains
//! derivation rules to materialize domain features ([`reasoner`]). The
//! *exploration* half trains a Q-learning agent ([`agent`]) that walks an
//! episodic search over transformation compositions ([`search`]), trading off
//! predictive gain against feature interpretability scored on the
//! decomposition graph ([`decomp`]).
//!
//! [`job`] ties both halves into a reproducible batch run; [`evaluator`]
//! supplies the in-crate learners and metrics used for rewards and reports.

pub mod agent;
pub mod decomp;
pub mod evaluator;
pub mod exec;
pub mod job;
pub mod kg;
pub mod reasoner;
pub mod search;
pub mod tabular;
pub mod transforms;
