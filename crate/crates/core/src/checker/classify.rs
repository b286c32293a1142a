use std::collections::HashSet;

use super::canonical::causal_key;
use crate::protocol::{ExperimentOutcome, Message, Payload, ProcessId, Transition, Value};
use crate::sim::{construct_nonblocking_execution, World};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Classification {
    Decided(Value),
    /// Every deciding execution involves a process of the set.
    Dangerous(Vec<ProcessId>),
    Predecided(Value),
    Open,
    /// Bounded searches could not settle the class, or the history already
    /// violates consistency.
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchBounds {
    /// Longest execution searched, in transitions.
    pub depth: usize,
    /// Experiments each actor may start beyond those it already started.
    pub extra_starts: u32,
    /// States a single search may visit.
    pub max_states: usize,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            depth: 64,
            extra_starts: 2,
            max_states: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decidability {
    /// A schedule of actor transitions after which the value is decided.
    Yes(Vec<Transition>),
    NoWithinBound,
}

impl Decidability {
    pub fn is_yes(&self) -> bool {
        matches!(self, Decidability::Yes(_))
    }
}

/// Breadth-first search for an execution, using only transitions of
/// `actors`, that decides `c`.
pub fn decidable_by(world: &World, actors: &[ProcessId], c: Value, bounds: &SearchBounds) -> Decidability {
    match world.verdict() {
        Ok(Some(v)) if v == c => return Decidability::Yes(Vec::new()),
        Ok(None) => {}
        _ => return Decidability::NoWithinBound,
    }
    let limit: Vec<u32> = world
        .procs()
        .iter()
        .map(|p| p.started + bounds.extra_starts)
        .collect();
    let mut start = world.clone();
    start.stop_recording();
    let mut seen = HashSet::new();
    seen.insert(causal_key(&start));
    let mut frontier = vec![(start, Vec::new())];
    for _ in 0..bounds.depth {
        let mut next = Vec::new();
        for (w, path) in &frontier {
            for t in w.enabled(u32::MAX) {
                let p = t.actor();
                if !actors.contains(&p) {
                    continue;
                }
                if matches!(t, Transition::Start { .. }) && w.proc(p).started >= limit[p.index()] {
                    continue;
                }
                let mut succ = w.clone();
                let Ok(outcome) = succ.step(&t) else { continue };
                let mut path = path.clone();
                path.push(t);
                if outcome == ExperimentOutcome::Reversing && succ.verdict() == Ok(Some(c)) {
                    return Decidability::Yes(path);
                }
                if seen.len() >= bounds.max_states {
                    return Decidability::NoWithinBound;
                }
                if seen.insert(causal_key(&succ)) {
                    next.push((succ, path));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Decidability::NoWithinBound
}

/// Transitions that can matter for a set of at most `f` actors in the
/// crash model: responses to their running experiments, and the queries of
/// those experiments addressed to each other. With no more than `f` actors
/// no newly started experiment can ever end, and stale queries can only make
/// an actor give up its running experiment, so nothing else can lead to a
/// decision.
fn local_moves(world: &World, actors: &[ProcessId]) -> Vec<Transition> {
    let running: Vec<_> = actors
        .iter()
        .filter_map(|&p| world.proc(p).vote.experiment().map(|e| (p, e.nonce)))
        .collect();
    let mut out = Vec::new();
    for &p in actors {
        if !world.is_alive(p) {
            continue;
        }
        for (m, _) in world.inbox(p) {
            let relevant = match m.payload {
                Payload::Response { nonce, .. } => running.contains(&(p, nonce)),
                Payload::Query { source, nonce } => running.contains(&(source, nonce)),
            };
            if relevant {
                out.push(Transition::Deliver(*m));
            }
        }
    }
    out
}

/// Whether the running experiment of `p` could still reverse to `c` using
/// only buffered answers and answers from the other actors.
fn may_reverse_to(world: &World, actors: &[ProcessId], p: ProcessId, c: Value) -> bool {
    let Some(e) = world.proc(p).vote.experiment().filter(|e| e.value != c) else {
        return false;
    };
    let mut from = e.heard;
    for (m, _) in world.inbox(p) {
        if let Payload::Response { sender, nonce, value } = m.payload {
            if nonce == e.nonce && value == c {
                from = from.with(sender);
            }
        }
    }
    let askable = actors
        .iter()
        .filter(|&&q| q != p && !from.contains(q))
        .filter(|&&q| world.buffer().contains_key(&Message::query(q, p, e.nonce)))
        .count();
    let buffered = from.len() - e.heard.len();
    e.tallies.get(c) as usize + buffered + askable > world.params().trigger() as usize
}

/// Exact decidability for at most `f` actors in the crash model, searching
/// only [`local_moves`].
pub fn decidable_by_few(world: &World, actors: &[ProcessId], c: Value) -> Decidability {
    match world.verdict() {
        Ok(Some(v)) if v == c => return Decidability::Yes(Vec::new()),
        Ok(None) => {}
        _ => return Decidability::NoWithinBound,
    }
    if !actors.iter().any(|&p| may_reverse_to(world, actors, p, c)) {
        return Decidability::NoWithinBound;
    }
    let mut start = world.clone();
    start.stop_recording();
    let mut seen = HashSet::new();
    seen.insert(causal_key(&start));
    let mut stack = vec![(start, Vec::new())];
    while let Some((w, path)) = stack.pop() {
        for t in local_moves(&w, actors) {
            let mut succ = w.clone();
            let Ok(outcome) = succ.step(&t) else { continue };
            let mut path = path.clone();
            path.push(t);
            if outcome == ExperimentOutcome::Reversing && succ.verdict() == Ok(Some(c)) {
                return Decidability::Yes(path);
            }
            if seen.insert(causal_key(&succ)) {
                stack.push((succ, path));
            }
        }
    }
    Decidability::NoWithinBound
}

/// All `k`-element subsets of `0..n`, in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<ProcessId>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<ProcessId>, out: &mut Vec<Vec<ProcessId>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(ProcessId(i as u8));
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Whether some execution avoiding `failed` decides: first via the
/// constructive schedule, then by bounded search.
pub fn escapes(world: &World, failed: &[ProcessId], bounds: &SearchBounds) -> bool {
    if construct_nonblocking_execution(world, failed).is_ok() {
        return true;
    }
    let rest: Vec<ProcessId> = world
        .params()
        .processes()
        .filter(|p| !failed.contains(p))
        .collect();
    Value::ALL
        .into_iter()
        .any(|c| decidable_by(world, &rest, c, bounds).is_yes())
}

/// Classifies a crash-model state. Crash flags are ignored: the class is a
/// property of local states and buffered messages, so every process is
/// treated as able to act.
pub fn classify_state(world: &World, bounds: &SearchBounds) -> Classification {
    let mut w = world.clone();
    w.stop_recording();
    w.revive_all();
    match w.verdict() {
        Ok(Some(c)) => return Classification::Decided(c),
        Ok(None) => {}
        Err(_) => return Classification::Inconclusive,
    }
    let fsets = subsets(w.params().n(), w.params().f());
    for f in &fsets {
        if !escapes(&w, f, bounds) {
            return Classification::Dangerous(f.clone());
        }
    }
    let mut can = [false; 2];
    for f in &fsets {
        let here: Vec<bool> = Value::ALL
            .into_iter()
            .map(|c| decidable_by_few(&w, f, c).is_yes())
            .collect();
        if here[0] && here[1] {
            return Classification::Inconclusive;
        }
        for c in Value::ALL {
            can[c.index()] |= here[c.index()];
        }
    }
    match can {
        [true, false] => Classification::Predecided(Value::Red),
        [false, true] => Classification::Predecided(Value::Blue),
        _ => Classification::Open,
    }
}
