//! Reference index organizations the merge-based trees are measured
//! against: a chain of time-ordered archived runs and a round-robin
//! partitioned tree.

pub mod chained;
pub mod round_robin;

pub use chained::{subindex_capacity, ChainStyle, ChainedIndex};
pub use round_robin::RoundRobinIndex;
