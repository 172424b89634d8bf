//! Sliding-window band joins over indexed streams.
//!
//! This crate implements the index family and execution engine for
//! index-based window joins: every arriving tuple probes the opposite
//! stream's index, expired tuples leave the index, and the new tuple is
//! inserted — three steps whose cost this crate's structures trade against
//! each other in different ways.
//!
//! * [`window`] — count-based sliding windows over preallocated rings.
//! * [`btree`] — a classic mutable B+-tree with a chained, tail-flagged leaf
//!   level; the building block of every mutable index here.
//! * [`immutable`] — a pointer-free, breadth-first array B+-tree built in one
//!   linear pass; searches descend by address arithmetic.
//! * [`merge_tree`] — the two-stage merge tree: a small mutable B+-tree in
//!   front of a large immutable tree, periodically merged.
//! * [`partitioned`] — the concurrent merge tree: the mutable stage is range
//!   partitioned into independently locked subindexes aligned with the
//!   immutable tree's inner nodes.
//! * [`baselines`] — chained subindexes and round-robin partitioning.
//! * [`engine`] — the four-step parallel join engine (task acquisition,
//!   result generation, index update, in-order result propagation) with
//!   blocking and non-blocking merges.
//! * [`cost`] — the per-tuple analytical cost model and crossover solver.
//! * [`oracle`] — the nested-loop reference join everything is checked
//!   against.
//! * [`workload`] — deterministic key-stream generation and band
//!   calibration.

pub mod baselines;
pub mod btree;
pub mod cost;
pub mod engine;
pub mod immutable;
pub mod merge_tree;
pub mod oracle;
pub mod partitioned;
pub mod types;
pub mod window;
pub mod workload;

pub use types::{BandPredicate, Entry, JoinMode, ResultRecord, Stream, Tuple};

#[cfg(doctest)]
mod book;
