//! Deterministic simulation of the message-passing system.

mod construct;
mod run;
mod world;

pub use construct::{construct_nonblocking_execution, construct_nontriviality_execution, ConstructError};
pub use run::{
    apply_schedule, crash_scenario, replay, run, transition_of, HaltReason, Policy, ProbeRecord, ReplayError,
    RunReport, Scenario, ScenarioError,
};
pub use world::{Behavior, Consumption, Proc, Snapshot, World, WorldError};
