//! Round-free binary consensus: the protocol state machine, a deterministic
//! simulator, the consistent-cut decision oracle, a vector-clock learner, and
//! a bounded explicit-state checker.

pub mod causality;
pub mod checker;
pub mod learner;
pub mod protocol;
pub mod sim;
pub mod trace;
