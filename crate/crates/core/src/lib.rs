//! Channel-count search for network pruning.
//!
//! An architecture is described as a layer graph ([`arch`]); its prunable
//! widths form the dimensions of a shrunk [`space`]; an artificial bee colony
//! ([`search`]) looks for the structure with the highest fitness as reported
//! by an [`fitness::Evaluator`]. The [`harness`] module wires these into the
//! `abcprune` command line tool.

pub mod arch;
pub mod fitness;
pub mod harness;
pub mod search;
pub mod seed;
pub mod space;
