//! Runs every fenced Rust block in the guide under `book/` as a doctest,
//! so the prose can never drift from the library. mdBook itself cannot test
//! snippets against a crate, so we include each chapter here and let
//! `cargo test --doc` do the work; one module per chapter keeps failure
//! origins identifiable.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/windows.md")]
pub mod windows {}

#[doc = include_str!("../../../book/src/btree.md")]
pub mod btree {}

#[doc = include_str!("../../../book/src/immutable.md")]
pub mod immutable {}

#[doc = include_str!("../../../book/src/merge-tree.md")]
pub mod merge_tree {}

#[doc = include_str!("../../../book/src/partitioned.md")]
pub mod partitioned {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}

#[doc = include_str!("../../../book/src/workloads.md")]
pub mod workloads {}

#[doc = include_str!("../../../book/src/cost-model.md")]
pub mod cost_model {}

#[doc = include_str!("../../../book/src/bench.md")]
pub mod bench {}
