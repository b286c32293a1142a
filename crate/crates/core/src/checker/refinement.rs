//! Mapping of crash-model traces onto the abstract non-blocking consensus
//! machine, whose state is `OPEN`, `PREDECIDED(c)` or `DECIDED(c)`.

use std::fmt;

use thiserror::Error;

use super::classify::{classify_state, Classification, SearchBounds};
use crate::protocol::{FaultModel, Value};
use crate::sim::{transition_of, ReplayError, World};
use crate::trace::{EventKind, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AbstractStep {
    Predecide(Value),
    Revert(Value),
    Decide(Value),
    Stutter,
}

impl fmt::Display for AbstractStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractStep::Predecide(c) => write!(f, "PREDECIDE({c})"),
            AbstractStep::Revert(c) => write!(f, "REVERT({c})"),
            AbstractStep::Decide(c) => write!(f, "DECIDE({c})"),
            AbstractStep::Stutter => f.write_str("STUTTER"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RefinementError {
    #[error("refinement is defined for the crash model only")]
    Model,
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("event {event:?}: state {state:?} has no abstract counterpart")]
    NoCounterpart {
        event: Option<usize>,
        state: Classification,
    },
    #[error("event {event}: {from:?} -> {to:?} is not a legal abstract transition")]
    Illegal {
        event: usize,
        from: Classification,
        to: Classification,
    },
}

/// The abstract reading of a trace: the initial class and one step per
/// transition, keyed by the index of the event opening it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementTrace {
    pub initial: Classification,
    pub steps: Vec<(usize, AbstractStep)>,
    pub last: Classification,
}

impl RefinementTrace {
    pub fn decides(&self) -> impl Iterator<Item = (usize, Value)> + '_ {
        self.steps.iter().filter_map(|&(i, s)| match s {
            AbstractStep::Decide(c) => Some((i, c)),
            _ => None,
        })
    }

    /// Exactly one DECIDE when the trace starts undecided and ends decided,
    /// none otherwise, and each DECIDE(c) directly preceded by a
    /// PREDECIDE(c) among the non-stutter steps or by an initial
    /// PREDECIDED(c).
    pub fn is_well_formed(&self) -> bool {
        let starts_decided = matches!(self.initial, Classification::Decided(_));
        let ends_decided = matches!(self.last, Classification::Decided(_));
        let want = usize::from(!starts_decided && ends_decided);
        if self.decides().count() != want {
            return false;
        }
        let mut before = match self.initial {
            Classification::Predecided(c) => Some(c),
            _ => None,
        };
        for &(_, s) in &self.steps {
            match s {
                AbstractStep::Predecide(c) => before = Some(c),
                AbstractStep::Revert(_) => before = None,
                AbstractStep::Decide(c) if before != Some(c) => return false,
                _ => {}
            }
        }
        true
    }
}

impl fmt::Display for RefinementTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "INITIAL {:?}", self.initial)?;
        for (i, s) in &self.steps {
            if *s != AbstractStep::Stutter {
                writeln!(f, "{i} {s}")?;
            }
        }
        Ok(())
    }
}

/// The abstract transition between two classes, if it is legal.
pub fn abstract_step(from: &Classification, to: &Classification) -> Option<AbstractStep> {
    use Classification::*;
    match (from, to) {
        (Open, Open) => Some(AbstractStep::Stutter),
        (Predecided(a), Predecided(b)) if a == b => Some(AbstractStep::Stutter),
        (Decided(a), Decided(b)) if a == b => Some(AbstractStep::Stutter),
        (Open | Predecided(_), Predecided(c)) => Some(AbstractStep::Predecide(*c)),
        (Predecided(c), Open) => Some(AbstractStep::Revert(*c)),
        (Predecided(c), Decided(d)) if c == d => Some(AbstractStep::Decide(*c)),
        _ => None,
    }
}

fn check(event: Option<usize>, c: Classification) -> Result<Classification, RefinementError> {
    match c {
        Classification::Dangerous(_) | Classification::Inconclusive => {
            Err(RefinementError::NoCounterpart { event, state: c })
        }
        _ => Ok(c),
    }
}

/// Replays a crash-model trace, classifying the state after every
/// transition and mapping each change of class to an abstract step.
pub fn refinement_trace(trace: &Trace, bounds: &SearchBounds) -> Result<RefinementTrace, RefinementError> {
    if trace.header.params.model() != FaultModel::Crash {
        return Err(RefinementError::Model);
    }
    let mut world = World::from_header(&trace.header).map_err(ReplayError::World)?;
    world.stop_recording();
    let initial = check(None, classify_state(&world, bounds))?;
    let mut current = initial.clone();
    let mut steps = Vec::new();
    for event in &trace.events {
        let t = match &event.kind {
            EventKind::Crash => {
                // Crashes leave local states and messages untouched.
                steps.push((event.index, AbstractStep::Stutter));
                continue;
            }
            EventKind::LearnerProbe { .. } => continue,
            _ => match transition_of(event) {
                Some(t) => t,
                None => continue,
            },
        };
        world.step(&t).map_err(ReplayError::World)?;
        let next = check(Some(event.index), classify_state(&world, bounds))?;
        let step = abstract_step(&current, &next).ok_or_else(|| RefinementError::Illegal {
            event: event.index,
            from: current.clone(),
            to: next.clone(),
        })?;
        steps.push((event.index, step));
        current = next;
    }
    Ok(RefinementTrace {
        initial,
        steps,
        last: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{parse_votes, VariantParams};
    use crate::sim::{run, Scenario};

    #[test]
    fn legal_edges() {
        use Classification::*;
        let r = Value::Red;
        assert_eq!(
            abstract_step(&Open, &Predecided(r)),
            Some(AbstractStep::Predecide(r))
        );
        assert_eq!(
            abstract_step(&Predecided(r), &Decided(r)),
            Some(AbstractStep::Decide(r))
        );
        assert_eq!(abstract_step(&Open, &Decided(r)), None);
        assert_eq!(abstract_step(&Predecided(Value::Blue), &Decided(r)), None);
        assert_eq!(abstract_step(&Decided(r), &Open), None);
    }

    #[test]
    fn unanimous_trace_stutters() {
        let params = VariantParams::crash(1).unwrap();
        let report = run(&Scenario::new(params, parse_votes("RRRR").unwrap())).unwrap();
        let r = refinement_trace(&report.trace, &SearchBounds::default()).unwrap();
        assert_eq!(r.initial, Classification::Decided(Value::Red));
        assert!(r.steps.iter().all(|(_, s)| *s == AbstractStep::Stutter));
        assert!(r.is_well_formed());
    }

    #[test]
    fn deciding_trace_has_one_decide() {
        let params = VariantParams::crash(1).unwrap();
        for seed in 0..20 {
            let mut sc = Scenario::new(params, parse_votes("RRBB").unwrap());
            sc.seed = seed;
            let report = run(&sc).unwrap();
            let r = refinement_trace(&report.trace, &SearchBounds::default()).unwrap();
            assert!(r.is_well_formed(), "seed {seed}: {r}");
            if matches!(report.decision, Ok(Some(_))) {
                assert_eq!(r.decides().count(), 1);
            }
        }
    }
}
