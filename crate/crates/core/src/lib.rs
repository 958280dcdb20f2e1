//! Directed information graphs: exact and estimated causal structure discovery
//! for networks of stochastic processes.
//!
//! * [`model`] holds finite-alphabet panels and positive generative models.
//! * [`exactinfo`] computes KL divergence, mutual and directed information
//!   exactly on enumerated joints.
//! * [`structure`] recovers parent sets from (conditioned) directed information.
//! * [`graphquery`] answers c-separation and d-separation queries.
//! * [`estimate`] fits point-process GLMs and estimates normalized rates.
//! * [`sim`] generates synthetic systems and panels.

pub mod estimate;
pub mod exactinfo;
pub mod graphquery;
pub mod model;
pub mod sim;
pub mod structure;
