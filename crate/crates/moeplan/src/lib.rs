//! moeplan: a planning, estimation, and simulation toolkit for
//! Mixture-of-Experts (MoE) distributed training.
//!
//! The crate is organized around a small set of pure, composable modules:
//!
//! - [`model`] — architecture / run / platform / plan value types and the
//!   built-in model zoo.
//! - [`memory`] — exact-integer training-memory models (undivided,
//!   expert-data-parallel, GPipe, 1F1B per-stage, stage skew).
//! - [`comm`] — closed-form communication volumes, the all-to-all latency
//!   lower bound, expert-migration cost, and the FLOPs-per-step model.
//! - [`bench`] — micro-benchmark ingestion (CSV) with interpolated lookups
//!   and a deterministic synthetic-profile generator.
//! - [`estimator`] — step-time composition under a 1F1B pipeline and MFU.
//! - [`planner`] — exhaustive (PP, EP) plan enumeration under feasibility
//!   constraints, ranked by estimated MFU.
//! - [`halo`] — functional reference of the hierarchical three-phase
//!   all-to-all, executed across simulated ranks.
//! - [`netsim`] — bottleneck-link latency simulation of flat vs.
//!   hierarchical all-to-all on a three-tier Dragonfly-style topology.
//! - [`rebalance`] — expert-load tracking and hill-climbing swap-based
//!   rebalancing with migration costing.
//!
//! Everything is deterministic: identical inputs produce identical outputs,
//! including serialized JSON/CSV reports.

pub mod bench;
pub mod comm;
pub mod estimator;
pub mod halo;
pub mod memory;
pub mod model;
pub mod netsim;
pub mod planner;
pub mod rebalance;

pub(crate) mod exact;
