//! Execution traces and their line-delimited text form.
//!
//! A trace file is UTF-8, one record per line, fields separated by single
//! spaces. The first line is the header:
//!
//! ```text
//! texel-trace v1 model=<crash|byzantine> f=<int> votes=<R|B...> seed=<u64> byzantine=<list>
//! ```
//!
//! `byzantine` is `-` or a comma-separated list of `<pid>:<behavior>`.
//! Every following line is one event:
//!
//! ```text
//! <index> <KIND> <actor> <key>=<value>...
//! ```
//!
//! | kind                 | actor    | fields                                                      |
//! |----------------------|----------|-------------------------------------------------------------|
//! | `EXPERIMENT_START`   | starter  | `nonce` `value` `clock`                                     |
//! | `QUERY_SENT`         | starter  | `dest` `nonce`                                              |
//! | `QUERY_DELIVERED`    | receiver | `source` `nonce` `effect=idle\|abort\|byzantine`            |
//! | `RESPONSE_SENT`      | sender   | `dest` `nonce` `value`                                      |
//! | `RESPONSE_DELIVERED` | receiver | `sender` `nonce` `value` `outcome=continuing\|reversing\|reaffirming\|stale` |
//! | `EXPERIMENT_END`     | owner    | `nonce` `outcome=reversing\|reaffirming\|aborted` `value`   |
//! | `CRASH`              | crashed  |                                                             |
//! | `LEARNER_PROBE`      | `learner`| `claims` `learned=<value>\|unknown`                         |
//!
//! Process ids print as `p<k>`, nonces as `<owner>.<serial>`, values as
//! `RED`/`BLUE`, and clocks as comma-separated integers. Fields appear in the
//! order listed. Indices are consecutive from 0.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::learner::VectorClock;
use crate::protocol::{
    format_votes, parse_votes, ConfigError, ExperimentOutcome, FaultModel, Nonce, ParseError, ProcessId,
    Value, VariantParams,
};
use crate::sim::Behavior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Actor {
    Process(ProcessId),
    Learner,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Process(p) => p.fmt(f),
            Actor::Learner => f.write_str("learner"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryEffect {
    /// Receiver was idle.
    Idle,
    /// Receiver aborted its running experiment.
    Abort,
    /// Receiver is Byzantine and answered according to its behavior.
    Byzantine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndOutcome {
    Reversing,
    Reaffirming,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    ExperimentStart {
        nonce: Nonce,
        value: Value,
        clock: VectorClock,
    },
    QuerySent {
        dest: ProcessId,
        nonce: Nonce,
    },
    QueryDelivered {
        source: ProcessId,
        nonce: Nonce,
        effect: QueryEffect,
    },
    ResponseSent {
        dest: ProcessId,
        nonce: Nonce,
        value: Value,
    },
    ResponseDelivered {
        sender: ProcessId,
        nonce: Nonce,
        value: Value,
        outcome: ExperimentOutcome,
    },
    ExperimentEnd {
        nonce: Nonce,
        outcome: EndOutcome,
        value: Value,
    },
    Crash,
    LearnerProbe {
        claims: usize,
        learned: Option<Value>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::ExperimentStart { .. } => "EXPERIMENT_START",
            EventKind::QuerySent { .. } => "QUERY_SENT",
            EventKind::QueryDelivered { .. } => "QUERY_DELIVERED",
            EventKind::ResponseSent { .. } => "RESPONSE_SENT",
            EventKind::ResponseDelivered { .. } => "RESPONSE_DELIVERED",
            EventKind::ExperimentEnd { .. } => "EXPERIMENT_END",
            EventKind::Crash => "CRASH",
            EventKind::LearnerProbe { .. } => "LEARNER_PROBE",
        }
    }

    /// Whether this event begins a scheduler-level step. The other kinds are
    /// effects emitted within the same indivisible transition.
    pub fn opens_step(&self) -> bool {
        matches!(
            self,
            EventKind::ExperimentStart { .. }
                | EventKind::QueryDelivered { .. }
                | EventKind::ResponseDelivered { .. }
                | EventKind::Crash
                | EventKind::LearnerProbe { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub index: usize,
    pub actor: Actor,
    pub kind: EventKind,
}

impl Event {
    pub fn process(&self) -> Option<ProcessId> {
        match self.actor {
            Actor::Process(p) => Some(p),
            Actor::Learner => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub params: VariantParams,
    pub votes: Vec<Value>,
    pub seed: u64,
    pub byzantine: Vec<(ProcessId, Behavior)>,
}

impl TraceHeader {
    pub fn is_faulty(&self, p: ProcessId) -> bool {
        self.byzantine.iter().any(|(q, _)| *q == p)
    }

    /// Processes whose support counts towards a decision.
    pub fn counted(&self) -> Vec<bool> {
        self.params.processes().map(|p| !self.is_faulty(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    /// Events up to (excluding) the step that opens at event `end`.
    pub fn prefix(&self, end: usize) -> Trace {
        Trace {
            header: self.header.clone(),
            events: self.events[..end.min(self.events.len())].to_vec(),
        }
    }

    /// Event positions at which scheduler-level steps begin.
    pub fn step_starts(&self) -> Vec<usize> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind.opens_step())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_header(&mut out, &self.header);
        for e in &self.events {
            write_event(&mut out, e);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header = parse_header(first).map_err(|reason| TraceError::Line { line: 1, reason })?;
        let mut events = Vec::new();
        for (i, line) in lines {
            let e = parse_event(line, &header).map_err(|reason| TraceError::Line { line: i + 1, reason })?;
            if e.index != events.len() {
                return Err(TraceError::Line {
                    line: i + 1,
                    reason: format!("expected index {}, found {}", events.len(), e.index),
                });
            }
            events.push(e);
        }
        Ok(Trace { header, events })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn write_header(out: &mut String, h: &TraceHeader) {
    let byz = if h.byzantine.is_empty() {
        "-".to_string()
    } else {
        h.byzantine
            .iter()
            .map(|(p, b)| format!("{p}:{b}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(
        out,
        "texel-trace v1 model={} f={} votes={} seed={} byzantine={}",
        h.params.model(),
        h.params.f(),
        format_votes(&h.votes),
        h.seed,
        byz
    );
}

pub(crate) fn write_event(out: &mut String, e: &Event) {
    let _ = write!(out, "{} {} {}", e.index, e.kind.name(), e.actor);
    match &e.kind {
        EventKind::ExperimentStart { nonce, value, clock } => {
            let _ = write!(out, " nonce={nonce} value={value} clock={clock}");
        }
        EventKind::QuerySent { dest, nonce } => {
            let _ = write!(out, " dest={dest} nonce={nonce}");
        }
        EventKind::QueryDelivered {
            source,
            nonce,
            effect,
        } => {
            let effect = match effect {
                QueryEffect::Idle => "idle",
                QueryEffect::Abort => "abort",
                QueryEffect::Byzantine => "byzantine",
            };
            let _ = write!(out, " source={source} nonce={nonce} effect={effect}");
        }
        EventKind::ResponseSent { dest, nonce, value } => {
            let _ = write!(out, " dest={dest} nonce={nonce} value={value}");
        }
        EventKind::ResponseDelivered {
            sender,
            nonce,
            value,
            outcome,
        } => {
            let _ = write!(
                out,
                " sender={sender} nonce={nonce} value={value} outcome={}",
                outcome_name(*outcome)
            );
        }
        EventKind::ExperimentEnd {
            nonce,
            outcome,
            value,
        } => {
            let outcome = match outcome {
                EndOutcome::Reversing => "reversing",
                EndOutcome::Reaffirming => "reaffirming",
                EndOutcome::Aborted => "aborted",
            };
            let _ = write!(out, " nonce={nonce} outcome={outcome} value={value}");
        }
        EventKind::Crash => {}
        EventKind::LearnerProbe { claims, learned } => {
            let _ = match learned {
                Some(v) => write!(out, " claims={claims} learned={v}"),
                None => write!(out, " claims={claims} learned=unknown"),
            };
        }
    }
    out.push('\n');
}

fn outcome_name(o: ExperimentOutcome) -> &'static str {
    match o {
        ExperimentOutcome::Continuing => "continuing",
        ExperimentOutcome::Reversing => "reversing",
        ExperimentOutcome::Reaffirming => "reaffirming",
        ExperimentOutcome::Stale => "stale",
    }
}

/// `key=value` fields of one record, in order.
pub(crate) struct Fields<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Fields<'a> {
    pub(crate) fn parse<I: Iterator<Item = &'a str>>(words: I) -> Result<Self, String> {
        words
            .map(|w| {
                w.split_once('=')
                    .ok_or_else(|| format!("expected key=value, found {w:?}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Fields)
    }

    pub(crate) fn raw(&self, key: &str) -> Result<&'a str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing field {key:?}"))
    }

    pub(crate) fn get<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| format!("bad value {raw:?} for field {key:?}"))
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, String> {
    let mut words = line.split_whitespace();
    if words.next() != Some("texel-trace") || words.next() != Some("v1") {
        return Err("not a texel-trace v1 header".into());
    }
    let fields = Fields::parse(words)?;
    let model: FaultModel = fields.get("model")?;
    let f: usize = fields.get("f")?;
    let votes = parse_votes(fields.raw("votes")?).map_err(|e| e.to_string())?;
    let params = VariantParams::with_process_count(model, f, votes.len()).map_err(|e| e.to_string())?;
    let seed = fields.get("seed")?;
    let byzantine = match fields.raw("byzantine")? {
        "-" => Vec::new(),
        list => list
            .split(',')
            .map(parse_assignment)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?,
    };
    Ok(TraceHeader {
        params,
        votes,
        seed,
        byzantine,
    })
}

/// Parses `p5:equivocate` (or `p5=equivocate`).
pub fn parse_assignment(s: &str) -> Result<(ProcessId, Behavior), ParseError> {
    let (p, b) = s
        .split_once([':', '='])
        .ok_or_else(|| ParseError::new("byzantine assignment", s))?;
    Ok((p.parse()?, b.parse()?))
}

fn parse_outcome(s: &str) -> Result<ExperimentOutcome, String> {
    match s {
        "continuing" => Ok(ExperimentOutcome::Continuing),
        "reversing" => Ok(ExperimentOutcome::Reversing),
        "reaffirming" => Ok(ExperimentOutcome::Reaffirming),
        "stale" => Ok(ExperimentOutcome::Stale),
        _ => Err(format!("bad outcome {s:?}")),
    }
}

fn parse_event(line: &str, header: &TraceHeader) -> Result<Event, String> {
    let mut words = line.split_whitespace();
    let index: usize = words
        .next()
        .and_then(|w| w.parse().ok())
        .ok_or("missing event index")?;
    let kind = words.next().ok_or("missing event kind")?;
    let actor_text = words.next().ok_or("missing actor")?;
    let actor = if actor_text == "learner" {
        Actor::Learner
    } else {
        let p: ProcessId = actor_text.parse().map_err(|e: ParseError| e.to_string())?;
        if p.index() >= header.params.n() {
            return Err(format!("actor {p} out of range"));
        }
        Actor::Process(p)
    };
    let fields = Fields::parse(words)?;
    let kind = match kind {
        "EXPERIMENT_START" => EventKind::ExperimentStart {
            nonce: fields.get("nonce")?,
            value: fields.get("value")?,
            clock: fields.get("clock")?,
        },
        "QUERY_SENT" => EventKind::QuerySent {
            dest: fields.get("dest")?,
            nonce: fields.get("nonce")?,
        },
        "QUERY_DELIVERED" => EventKind::QueryDelivered {
            source: fields.get("source")?,
            nonce: fields.get("nonce")?,
            effect: match fields.raw("effect")? {
                "idle" => QueryEffect::Idle,
                "abort" => QueryEffect::Abort,
                "byzantine" => QueryEffect::Byzantine,
                other => return Err(format!("bad effect {other:?}")),
            },
        },
        "RESPONSE_SENT" => EventKind::ResponseSent {
            dest: fields.get("dest")?,
            nonce: fields.get("nonce")?,
            value: fields.get("value")?,
        },
        "RESPONSE_DELIVERED" => EventKind::ResponseDelivered {
            sender: fields.get("sender")?,
            nonce: fields.get("nonce")?,
            value: fields.get("value")?,
            outcome: parse_outcome(fields.raw("outcome")?)?,
        },
        "EXPERIMENT_END" => EventKind::ExperimentEnd {
            nonce: fields.get("nonce")?,
            outcome: match fields.raw("outcome")? {
                "reversing" => EndOutcome::Reversing,
                "reaffirming" => EndOutcome::Reaffirming,
                "aborted" => EndOutcome::Aborted,
                other => return Err(format!("bad outcome {other:?}")),
            },
            value: fields.get("value")?,
        },
        "CRASH" => EventKind::Crash,
        "LEARNER_PROBE" => EventKind::LearnerProbe {
            claims: fields.get("claims")?,
            learned: match fields.raw("learned")? {
                "unknown" => None,
                v => Some(v.parse().map_err(|e: ParseError| e.to_string())?),
            },
        },
        other => return Err(format!("unknown event kind {other:?}")),
    };
    match (&kind, actor) {
        (EventKind::LearnerProbe { .. }, Actor::Learner) => {}
        (EventKind::LearnerProbe { .. }, _) | (_, Actor::Learner) => {
            return Err("only LEARNER_PROBE is attributed to the learner".into())
        }
        _ => {}
    }
    Ok(Event { index, actor, kind })
}
