use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::world::{Behavior, World, WorldError};
use crate::causality::CausalityError;
use crate::learner::Claim;
use crate::protocol::{FaultModel, Message, ParseError, ProcessId, Transition, Value, VariantParams};
use crate::trace::{Actor, Event, EventKind, Trace};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Uniform choice among enabled transitions.
    Random,
    /// Only supporters of the currently less supported value start
    /// experiments; on a tie anyone may.
    MinoritySteering,
    /// Apply the given transitions in order.
    Scripted(Vec<Transition>),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::MinoritySteering => "minority-steering",
            Policy::Scripted(_) => "scripted",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the policy name; `scripted` yields an empty script.
impl FromStr for Policy {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Policy::Random),
            "minority-steering" | "minority" => Ok(Policy::MinoritySteering),
            "scripted" => Ok(Policy::Scripted(Vec::new())),
            _ => Err(ParseError::new("scheduler policy", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub params: VariantParams,
    pub votes: Vec<Value>,
    pub seed: u64,
    pub policy: Policy,
    /// `(process, event index)`: the process crashes before the first step
    /// taken once the trace holds at least that many events.
    pub crashes: Vec<(ProcessId, usize)>,
    pub byzantine: Vec<(ProcessId, Behavior)>,
    /// Limit on scheduler steps (transitions).
    pub max_steps: usize,
    /// Experiments each process may start.
    pub budget: u32,
    /// Probe the learner every this many steps; 0 probes only at halt.
    pub probe_every: usize,
}

impl Scenario {
    pub fn new(params: VariantParams, votes: Vec<Value>) -> Self {
        Scenario {
            params,
            votes,
            seed: 0,
            policy: Policy::Random,
            crashes: Vec::new(),
            byzantine: Vec::new(),
            max_steps: 10_000,
            budget: 4,
            probe_every: 16,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        World::new(self.params, &self.votes, &self.byzantine, self.seed)?;
        let faulty = self.crashes.len() + self.byzantine.len();
        if faulty > self.params.f() {
            return Err(ScenarioError::TooManyFaults {
                count: faulty,
                f: self.params.f(),
            });
        }
        for (i, (p, _)) in self.crashes.iter().enumerate() {
            if p.index() >= self.params.n() {
                return Err(WorldError::UnknownProcess(*p).into());
            }
            if self.crashes[..i].iter().any(|(q, _)| q == p) || self.byzantine.iter().any(|(q, _)| q == p) {
                return Err(WorldError::Duplicate(*p).into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("{count} faults exceed f = {f}")]
    TooManyFaults { count: usize, f: usize },
    #[error("script step {step}: {transition} is not enabled")]
    ScriptDisabled { step: usize, transition: Transition },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaltReason {
    /// Decided, every alive correct process idle, and the decided value held
    /// by enough alive correct processes for a learner to see it.
    Quiescent,
    /// No transition enabled.
    Exhausted,
    MaxSteps,
    ScriptEnd,
    SafetyViolation,
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaltReason::Quiescent => "quiescent",
            HaltReason::Exhausted => "exhausted",
            HaltReason::MaxSteps => "max-steps",
            HaltReason::ScriptEnd => "script-end",
            HaltReason::SafetyViolation => "safety-violation",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeRecord {
    pub step: usize,
    pub event: usize,
    pub claims: Vec<Claim>,
    pub learned: Option<Value>,
    /// Decision rule on the history at probe time.
    pub oracle: Result<Option<Value>, CausalityError>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub trace: Trace,
    pub halt: HaltReason,
    pub decision: Result<Option<Value>, CausalityError>,
    pub steps: usize,
    pub reversing: usize,
    pub messages: usize,
    pub probes: Vec<ProbeRecord>,
    pub world: World,
}

impl RunReport {
    /// Largest number of responses any terminated experiment counted.
    pub fn max_responses(&self) -> u32 {
        self.world
            .records()
            .iter()
            .zip(self.world.consumption())
            .filter(|(r, _)| r.end_index.is_some() && r.status != crate::causality::ExperimentStatus::Aborted)
            .map(|(_, c)| c.responses)
            .max()
            .unwrap_or(0)
    }

    /// Fewest opposing responses behind any reversal.
    pub fn min_opposing_at_reversal(&self) -> Option<u32> {
        self.world
            .records()
            .iter()
            .zip(self.world.consumption())
            .filter(|(r, _)| r.is_reversing())
            .map(|(_, c)| c.opposing)
            .min()
    }
}

fn is_quiescent(world: &World, decided: Value) -> bool {
    let mut supporters = 0;
    for p in world.procs().iter().filter(|p| p.alive && p.is_correct()) {
        if !p.vote.is_idle() {
            return false;
        }
        if p.vote.value() == decided {
            supporters += 1;
        }
    }
    supporters >= world.params().decide_threshold()
}

fn steer(world: &World, enabled: Vec<Transition>) -> Vec<Transition> {
    let mut t = [0usize; 2];
    for p in world.procs().iter().filter(|p| p.alive && p.is_correct()) {
        t[p.vote.value().index()] += 1;
    }
    let minority = match t[0].cmp(&t[1]) {
        std::cmp::Ordering::Less => Some(Value::ALL[0]),
        std::cmp::Ordering::Greater => Some(Value::ALL[1]),
        std::cmp::Ordering::Equal => None,
    };
    let Some(minority) = minority else {
        return enabled;
    };
    enabled
        .into_iter()
        .filter(|tr| match tr {
            Transition::Start { process } => world.proc(*process).vote.value() == minority,
            Transition::Deliver(_) => true,
        })
        .collect()
}

fn probe(world: &mut World, step: usize, probes: &mut Vec<ProbeRecord>) {
    let event = world.event_count();
    let oracle = world.verdict();
    let (claims, learned) = world.probe();
    probes.push(ProbeRecord {
        step,
        event,
        claims,
        learned,
        oracle,
    });
}

/// Executes a scenario. The result is a function of the scenario alone.
pub fn run(scenario: &Scenario) -> Result<RunReport, ScenarioError> {
    scenario.validate()?;
    let mut world = World::new(
        scenario.params,
        &scenario.votes,
        &scenario.byzantine,
        scenario.seed,
    )?
    .recording();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut crashes = scenario.crashes.clone();
    crashes.sort_by_key(|&(p, at)| (at, p));
    let mut crashes = crashes.into_iter().peekable();
    let mut probes = Vec::new();
    let mut steps = 0;
    let halt = loop {
        while let Some(&(p, _)) = crashes.peek().filter(|(_, at)| *at <= world.event_count()) {
            crashes.next();
            world.crash(p)?;
        }
        if scenario.probe_every > 0 && steps > 0 && steps % scenario.probe_every == 0 {
            probe(&mut world, steps, &mut probes);
        }
        let verdict = world.verdict();
        let scripted = matches!(scenario.policy, Policy::Scripted(_));
        match verdict {
            Err(_) => break HaltReason::SafetyViolation,
            Ok(Some(c)) if !scripted && is_quiescent(&world, c) => break HaltReason::Quiescent,
            _ => {}
        }
        if steps >= scenario.max_steps {
            break HaltReason::MaxSteps;
        }
        let choice = match &scenario.policy {
            Policy::Scripted(script) => match script.get(steps) {
                None => break HaltReason::ScriptEnd,
                Some(t) if world.is_enabled(t) => *t,
                Some(t) => {
                    return Err(ScenarioError::ScriptDisabled {
                        step: steps,
                        transition: *t,
                    })
                }
            },
            policy => {
                let mut enabled = world.enabled(scenario.budget);
                if *policy == Policy::MinoritySteering {
                    enabled = steer(&world, enabled);
                }
                if enabled.is_empty() {
                    break HaltReason::Exhausted;
                }
                enabled[rng.gen_range(0..enabled.len())]
            }
        };
        world.step(&choice)?;
        steps += 1;
    };
    probe(&mut world, steps, &mut probes);
    Ok(RunReport {
        trace: world.trace(),
        halt,
        decision: world.verdict(),
        steps,
        reversing: world.reversal_count(),
        messages: world.messages_sent(),
        probes,
        world,
    })
}

/// Applies `schedule` to a copy of `world`, stopping at the first
/// transition that is not enabled.
pub fn apply_schedule(world: &World, schedule: &[Transition]) -> Result<World, ScenarioError> {
    let mut w = world.clone();
    for (step, t) in schedule.iter().enumerate() {
        if !w.is_enabled(t) {
            return Err(ScenarioError::ScriptDisabled { step, transition: *t });
        }
        w.step(t)?;
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("event {index}: does not begin a step")]
    NotAStep { index: usize },
    #[error("event {index}: replay produced {produced}, trace has {recorded}")]
    Diverged {
        index: usize,
        produced: String,
        recorded: String,
    },
    #[error("event {index}: replay produced no event, trace has {recorded}")]
    Missing { index: usize, recorded: String },
}

/// The transition that produced a step-opening process event.
pub fn transition_of(e: &Event) -> Option<Transition> {
    let Actor::Process(p) = e.actor else { return None };
    match e.kind {
        EventKind::ExperimentStart { .. } => Some(Transition::Start { process: p }),
        EventKind::QueryDelivered { source, nonce, .. } => {
            Some(Transition::Deliver(Message::query(p, source, nonce)))
        }
        EventKind::ResponseDelivered {
            sender, nonce, value, ..
        } => Some(Transition::Deliver(Message::response(p, sender, nonce, value))),
        _ => None,
    }
}

/// Re-executes the transitions recorded in `trace` and checks that every
/// derived event matches the recording exactly.
pub fn replay(trace: &Trace) -> Result<World, ReplayError> {
    let mut world = World::from_header(&trace.header)?.recording();
    let events = &trace.events;
    let mut i = 0;
    while i < events.len() {
        let e = &events[i];
        match (&e.kind, e.actor) {
            (EventKind::LearnerProbe { .. }, _) => {
                world.probe();
            }
            (EventKind::Crash, Actor::Process(p)) => world.crash(p)?,
            (_, Actor::Process(_)) => {
                let t = transition_of(e).ok_or(ReplayError::NotAStep { index: i })?;
                world.step(&t)?;
            }
            (_, Actor::Learner) => return Err(ReplayError::NotAStep { index: i }),
        }
        let produced = world.log().unwrap_or_default();
        let end = produced.len();
        for j in i..end {
            match events.get(j) {
                Some(rec) if *rec == produced[j] => {}
                Some(rec) => {
                    return Err(ReplayError::Diverged {
                        index: j,
                        produced: format!("{:?}", produced[j].kind),
                        recorded: format!("{:?}", rec.kind),
                    })
                }
                None => {
                    return Err(ReplayError::Diverged {
                        index: j,
                        produced: format!("{:?}", produced[j].kind),
                        recorded: "end of trace".into(),
                    })
                }
            }
        }
        if end < events.len() && !events[end].kind.opens_step() {
            return Err(ReplayError::Missing {
                index: end,
                recorded: format!("{:?}", events[end].kind),
            });
        }
        i = end;
    }
    Ok(world)
}

/// Scenario with the crash model's parameters for the given votes.
pub fn crash_scenario(votes: &[Value]) -> Result<Scenario, crate::protocol::ConfigError> {
    let f = (votes.len().saturating_sub(1)) / 3;
    let params = VariantParams::with_process_count(FaultModel::Crash, f, votes.len())?;
    Ok(Scenario::new(params, votes.to_vec()))
}
