//! Explicit deciding schedules following the three-phase argument: start
//! everywhere, let every experiment abort, then flip the opposers one
//! experiment each.

use thiserror::Error;

use super::world::World;
use crate::causality::CausalityError;
use crate::protocol::{Message, Payload, ProcessId, Transition, Value};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConstructError {
    #[error("already decided {0}")]
    DecidedOther(Value),
    #[error("{failed} failed processes exceed f = {f}")]
    TooManyFailed { failed: usize, f: usize },
    #[error("only {actors} processes may act; need {need}")]
    TooFewActors { actors: usize, need: usize },
    #[error("schedule ends without deciding {0}")]
    Undecided(Value),
    #[error(transparent)]
    Oracle(#[from] CausalityError),
}

/// A schedule after which every alive correct process supports `target` and
/// the decision rule yields `target`.
pub fn construct_nontriviality_execution(
    world: &World,
    target: Value,
) -> Result<Vec<Transition>, ConstructError> {
    if let Some(c) = world.verdict()?.filter(|&c| c != target) {
        return Err(ConstructError::DecidedOther(c));
    }
    let actors: Vec<ProcessId> = acting(world, &[]);
    three_phases(world, &actors, target)
}

/// A value and a schedule that involves no process in `failed` and after
/// which the decision rule yields that value.
pub fn construct_nonblocking_execution(
    world: &World,
    failed: &[ProcessId],
) -> Result<(Value, Vec<Transition>), ConstructError> {
    let f = world.params().f();
    if failed.len() > f {
        return Err(ConstructError::TooManyFailed {
            failed: failed.len(),
            f,
        });
    }
    if let Some(c) = world.verdict()? {
        return Ok((c, Vec::new()));
    }
    let actors = acting(world, failed);
    let need = 2 * f + 1;
    if actors.len() < need {
        return Err(ConstructError::TooFewActors {
            actors: actors.len(),
            need,
        });
    }
    let mut t = [0usize; 2];
    for &p in &actors {
        t[world.proc(p).vote.value().index()] += 1;
    }
    let c = if t[Value::Blue.index()] > t[Value::Red.index()] {
        Value::Blue
    } else {
        Value::Red
    };
    Ok((c, three_phases(world, &actors, c)?))
}

fn acting(world: &World, failed: &[ProcessId]) -> Vec<ProcessId> {
    world
        .params()
        .processes()
        .filter(|p| world.is_alive(*p) && world.is_correct(*p) && !failed.contains(p))
        .collect()
}

fn queries_to(world: &World, dests: &[ProcessId], from: Option<&[ProcessId]>) -> Vec<Message> {
    world
        .buffer()
        .keys()
        .filter(|m| dests.contains(&m.dest))
        .filter(|m| match m.payload {
            Payload::Query { source, .. } => from.is_none_or(|f| f.contains(&source)),
            Payload::Response { .. } => false,
        })
        .copied()
        .collect()
}

fn three_phases(
    world: &World,
    actors: &[ProcessId],
    target: Value,
) -> Result<Vec<Transition>, ConstructError> {
    let mut sim = world.clone();
    sim.stop_recording();
    let mut schedule = Vec::new();
    let mut apply = |sim: &mut World, t: Transition| {
        sim.step(&t).expect("constructed transition is enabled");
        schedule.push(t);
    };

    for &p in actors {
        if sim.proc(p).vote.is_idle() {
            apply(&mut sim, Transition::Start { process: p });
        }
    }
    loop {
        let pending = queries_to(&sim, actors, None);
        if pending.is_empty() {
            break;
        }
        for m in pending {
            while sim.buffer().contains_key(&m) {
                apply(&mut sim, Transition::Deliver(m));
            }
        }
    }

    let opposers: Vec<ProcessId> = actors
        .iter()
        .copied()
        .filter(|&p| sim.proc(p).vote.value() != target)
        .collect();
    let supporters: Vec<ProcessId> = actors
        .iter()
        .copied()
        .filter(|&p| sim.proc(p).vote.value() == target)
        .collect();
    // At most one actor can still be running here: one whose queries all
    // arrived before it started. A supporter's query makes it give up.
    for &o in &opposers {
        if sim.proc(o).vote.is_idle() {
            continue;
        }
        let Some(&s) = supporters.iter().find(|&&s| sim.proc(s).vote.is_idle()) else {
            return Err(ConstructError::Undecided(target));
        };
        apply(&mut sim, Transition::Start { process: s });
        let nonce = sim
            .proc(s)
            .vote
            .experiment()
            .map(|e| e.nonce)
            .expect("just started");
        apply(&mut sim, Transition::Deliver(Message::query(o, s, nonce)));
    }
    for &o in &opposers {
        apply(&mut sim, Transition::Start { process: o });
    }
    for m in queries_to(&sim, &supporters, Some(&opposers)) {
        apply(&mut sim, Transition::Deliver(m));
    }
    for &o in &opposers {
        let Some(nonce) = sim.proc(o).vote.experiment().map(|e| e.nonce) else {
            continue;
        };
        let answers: Vec<Message> = sim
            .inbox(o)
            .map(|(m, _)| *m)
            .filter(|m| m.nonce() == nonce)
            .collect();
        for m in answers {
            if sim.proc(o).vote.is_idle() {
                break;
            }
            apply(&mut sim, Transition::Deliver(m));
        }
    }

    if sim.full_cut_decision() == Some(target) || sim.verdict()? == Some(target) {
        Ok(schedule)
    } else {
        Err(ConstructError::Undecided(target))
    }
}
