//! Exhaustive exploration and abstract classification of small instances.

mod canonical;
mod classify;
mod diamond;
mod explore;
mod refinement;

pub use canonical::{causal_key, exact_key, KeyContext, StateKey};
pub use classify::{
    classify_state, decidable_by, decidable_by_few, escapes, subsets, Classification, Decidability,
    SearchBounds,
};
pub use diamond::{check_diamond, check_pair, sample_diamond, DiamondReport, DiamondViolation};
pub use explore::{explore, explore_with, ClassCounts, ExploreConfig, KeyKind, ReachabilityReport, Witness};
pub use refinement::{abstract_step, refinement_trace, AbstractStep, RefinementError, RefinementTrace};
