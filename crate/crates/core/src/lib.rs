//! Controllable abductive reasoning over knowledge graphs.
//!
//! Given an observed set of entities and a control condition, the crate
//! finds first-order hypotheses (projection, intersection, union, negation)
//! whose conclusions on the graph explain the observation while honoring the
//! condition. Alongside the search it provides the pieces needed to build
//! and score training data: pair sampling with sub-logic augmentation,
//! Jaccard/Dice/Overlap rewards, group-relative advantage arithmetic and a
//! Smatch-style structural similarity.

pub mod abducer;
pub mod diagnostics;
pub mod enumerate;
pub mod error;
pub mod executor;
pub mod graph;
pub mod hypothesis;
pub mod set;
pub mod synth;

pub mod metrics;
pub mod rewards;
pub mod sampler;

mod construct;

pub use error::{Error, Result};
pub use graph::{DatasetSplit, Direction, EntityId, KnowledgeGraph, RelationId, Triple};
pub use hypothesis::{check_condition, extract_pattern, parse, serialize, Condition, Hypothesis, PatternId};
pub use set::EntitySet;
