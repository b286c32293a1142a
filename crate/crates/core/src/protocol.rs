//! The Texel state machine.
//!
//! Everything in this module is a pure function of its arguments. A process
//! holds a [`VoteState`] and a [`NonceSupply`]; the three transitions are
//! [`start_experiment`], [`handle_query`] and [`handle_response`]. The crash
//! and Byzantine variants differ only in the numbers carried by
//! [`VariantParams`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest process count supported; peer sets are stored as a 64-bit mask.
pub const MAX_PROCESSES: usize = 64;

/// One of the two candidate values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Red,
    Blue,
}

impl Value {
    pub const ALL: [Value; 2] = [Value::Red, Value::Blue];

    pub fn opposite(self) -> Value {
        match self {
            Value::Red => Value::Blue,
            Value::Blue => Value::Red,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Value::Red => 0,
            Value::Blue => 1,
        }
    }

    /// Single-letter form used by vote strings such as `RRBB`.
    pub fn letter(self) -> char {
        match self {
            Value::Red => 'R',
            Value::Blue => 'B',
        }
    }

    pub fn from_letter(c: char) -> Option<Value> {
        match c.to_ascii_uppercase() {
            'R' => Some(Value::Red),
            'B' => Some(Value::Blue),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Value::Red => "RED",
            Value::Blue => "BLUE",
        })
    }
}

impl FromStr for Value {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RED" | "R" => Ok(Value::Red),
            "BLUE" | "B" => Ok(Value::Blue),
            _ => Err(ParseError::new("value", s)),
        }
    }
}

/// Parses a positional vote string (`RRBB` means p0,p1 RED and p2,p3 BLUE).
pub fn parse_votes(s: &str) -> Result<Vec<Value>, ParseError> {
    s.chars()
        .map(|c| Value::from_letter(c).ok_or_else(|| ParseError::new("vote string", s)))
        .collect()
}

pub fn format_votes(votes: &[Value]) -> String {
    votes.iter().map(|v| v.letter()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("invalid {what}: {text:?}")]
pub struct ParseError {
    pub what: &'static str,
    pub text: String,
}

impl ParseError {
    pub fn new(what: &'static str, text: &str) -> Self {
        ParseError {
            what,
            text: text.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u8);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All process ids `p0..p{n-1}`.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> + Clone {
        (0..n).map(|i| ProcessId(i as u8))
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('p')
            .and_then(|d| d.parse::<u8>().ok())
            .filter(|&i| (i as usize) < MAX_PROCESSES)
            .map(ProcessId)
            .ok_or_else(|| ParseError::new("process id", s))
    }
}

/// Token matching responses to one experiment's query.
///
/// Transitions only ever compare nonces for equality. The derived ordering
/// exists so that message buffers can be stored deterministically; no
/// protocol decision depends on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce {
    owner: ProcessId,
    serial: u32,
}

impl Nonce {
    pub fn new(owner: ProcessId, serial: u32) -> Self {
        Nonce { owner, serial }
    }

    pub fn owner(self) -> ProcessId {
        self.owner
    }

    pub fn serial(self) -> u32 {
        self.serial
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.owner, self.serial)
    }
}

impl FromStr for Nonce {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (owner, serial) = s.split_once('.').ok_or_else(|| ParseError::new("nonce", s))?;
        let owner = owner.parse().map_err(|_| ParseError::new("nonce", s))?;
        let serial = serial.parse().map_err(|_| ParseError::new("nonce", s))?;
        Ok(Nonce::new(owner, serial))
    }
}

/// The unused nonces of one process. Taking a nonce retires it and every
/// nonce issued before it, so a nonce can never be handed out twice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NonceSupply {
    owner: ProcessId,
    next: u32,
}

impl NonceSupply {
    pub fn new(owner: ProcessId) -> Self {
        NonceSupply { owner, next: 0 }
    }

    pub fn owner(&self) -> ProcessId {
        self.owner
    }

    pub fn contains(&self, nonce: Nonce) -> bool {
        nonce.owner == self.owner && nonce.serial >= self.next
    }

    /// An unused nonce; does not consume it.
    pub fn fresh(&self) -> Nonce {
        Nonce::new(self.owner, self.next)
    }

    fn without(self, nonce: Nonce) -> Self {
        NonceSupply {
            owner: self.owner,
            next: nonce.serial + 1,
        }
    }
}

/// Set of process ids as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerSet(u64);

impl PeerSet {
    pub fn contains(self, p: ProcessId) -> bool {
        self.0 & (1 << p.0) != 0
    }

    pub fn with(self, p: ProcessId) -> Self {
        PeerSet(self.0 | (1 << p.0))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u64 {
        self.0
    }
}

impl FromIterator<ProcessId> for PeerSet {
    fn from_iter<I: IntoIterator<Item = ProcessId>>(iter: I) -> Self {
        iter.into_iter().fold(PeerSet::default(), PeerSet::with)
    }
}

/// Response counts per candidate value within one experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tallies([u32; 2]);

impl Tallies {
    /// Tallies at the start of an experiment: the process counts itself.
    pub fn starting(own: Value) -> Self {
        let mut t = Tallies::default();
        t.0[own.index()] = 1;
        t
    }

    pub fn get(&self, v: Value) -> u32 {
        self.0[v.index()]
    }

    fn bumped(mut self, v: Value) -> Self {
        self.0[v.index()] += 1;
        self
    }
}

/// State of a running experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Experiment {
    pub value: Value,
    pub nonce: Nonce,
    pub tallies: Tallies,
    /// Peers whose response has already been counted; `(nonce, sender)` is
    /// the deduplication key.
    pub heard: PeerSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VoteState {
    Supporting(Value),
    Experimenting(Experiment),
}

impl VoteState {
    /// The value this process currently supports.
    pub fn value(&self) -> Value {
        match self {
            VoteState::Supporting(v) => *v,
            VoteState::Experimenting(e) => e.value,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, VoteState::Supporting(_))
    }

    pub fn experiment(&self) -> Option<&Experiment> {
        match self {
            VoteState::Supporting(_) => None,
            VoteState::Experimenting(e) => Some(e),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Payload {
    Query {
        source: ProcessId,
        nonce: Nonce,
    },
    Response {
        sender: ProcessId,
        nonce: Nonce,
        value: Value,
    },
}

/// A buffered message together with its destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Message {
    pub dest: ProcessId,
    pub payload: Payload,
}

impl Message {
    pub fn query(dest: ProcessId, source: ProcessId, nonce: Nonce) -> Self {
        Message {
            dest,
            payload: Payload::Query { source, nonce },
        }
    }

    pub fn response(dest: ProcessId, sender: ProcessId, nonce: Nonce, value: Value) -> Self {
        Message {
            dest,
            payload: Payload::Response { sender, nonce, value },
        }
    }

    pub fn nonce(&self) -> Nonce {
        match self.payload {
            Payload::Query { nonce, .. } | Payload::Response { nonce, .. } => nonce,
        }
    }

    pub fn is_query(&self) -> bool {
        matches!(self.payload, Payload::Query { .. })
    }

    /// The process that put this message in the buffer.
    pub fn origin(&self) -> ProcessId {
        match self.payload {
            Payload::Query { source, .. } => source,
            Payload::Response { sender, .. } => sender,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultModel {
    Crash,
    Byzantine,
}

impl fmt::Display for FaultModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultModel::Crash => "crash",
            FaultModel::Byzantine => "byzantine",
        })
    }
}

impl FromStr for FaultModel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "crash" => Ok(FaultModel::Crash),
            "byzantine" | "byz" => Ok(FaultModel::Byzantine),
            _ => Err(ParseError::new("fault model", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("f must be at least 1")]
    ZeroFaults,
    #[error("{model} model with f={f} needs {expected} processes, got {actual}")]
    ProcessCount {
        model: FaultModel,
        f: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{0} processes exceed the supported maximum of {MAX_PROCESSES}")]
    TooManyProcesses(usize),
}

/// Process count and thresholds of one protocol variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariantParams {
    model: FaultModel,
    f: usize,
    n: usize,
    trigger: u32,
    decide_threshold: usize,
    learn_threshold: usize,
}

impl VariantParams {
    pub fn new(model: FaultModel, f: usize) -> Result<Self, ConfigError> {
        if f == 0 {
            return Err(ConfigError::ZeroFaults);
        }
        let params = match model {
            FaultModel::Crash => VariantParams {
                model,
                f,
                n: 3 * f + 1,
                trigger: f as u32,
                decide_threshold: 2 * f + 1,
                learn_threshold: 2 * f + 1,
            },
            FaultModel::Byzantine => VariantParams {
                model,
                f,
                n: 5 * f + 1,
                trigger: 2 * f as u32,
                decide_threshold: 3 * f + 1,
                learn_threshold: 4 * f + 1,
            },
        };
        if params.n > MAX_PROCESSES {
            return Err(ConfigError::TooManyProcesses(params.n));
        }
        Ok(params)
    }

    pub fn crash(f: usize) -> Result<Self, ConfigError> {
        Self::new(FaultModel::Crash, f)
    }

    pub fn byzantine(f: usize) -> Result<Self, ConfigError> {
        Self::new(FaultModel::Byzantine, f)
    }

    /// Checks that `n` is exactly the process count the variant needs.
    pub fn with_process_count(model: FaultModel, f: usize, n: usize) -> Result<Self, ConfigError> {
        let params = Self::new(model, f)?;
        if params.n != n {
            return Err(ConfigError::ProcessCount {
                model,
                f,
                expected: params.n,
                actual: n,
            });
        }
        Ok(params)
    }

    pub fn model(&self) -> FaultModel {
        self.model
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Tally value at which the next matching response ends the experiment.
    pub fn trigger(&self) -> u32 {
        self.trigger
    }

    pub fn decide_threshold(&self) -> usize {
        self.decide_threshold
    }

    pub fn learn_threshold(&self) -> usize {
        self.learn_threshold
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + Clone {
        ProcessId::all(self.n)
    }

    /// Every process except `me`, in id order.
    pub fn peers_of(&self, me: ProcessId) -> Vec<ProcessId> {
        self.processes().filter(|&p| p != me).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{0} is already experimenting")]
    AlreadyExperimenting(ProcessId),
    #[error("nonce {nonce} is not an unused nonce of {process}")]
    NonceUnavailable { process: ProcessId, nonce: Nonce },
    #[error("expected {expected} peers, got {actual}")]
    PeerCount { expected: usize, actual: usize },
    #[error("peer list of {0} must not contain itself")]
    SelfPeer(ProcessId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentOutcome {
    /// The response was counted and the experiment goes on.
    Continuing,
    /// The experiment ended with the process supporting the opposite value.
    Reversing,
    /// The experiment ended with the process keeping its value.
    Reaffirming,
    /// Not addressed to a running experiment, or a duplicate; discarded.
    Stale,
}

impl ExperimentOutcome {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ExperimentOutcome::Reversing | ExperimentOutcome::Reaffirming
        )
    }
}

pub fn init_process(proposal: Value) -> VoteState {
    VoteState::Supporting(proposal)
}

/// Result of [`start_experiment`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Started {
    pub state: VoteState,
    pub supply: NonceSupply,
    pub queries: Vec<Message>,
}

/// Begins an experiment: one query per peer, tallies counting only the
/// process's own vote.
pub fn start_experiment(
    state: &VoteState,
    supply: &NonceSupply,
    nonce: Nonce,
    params: &VariantParams,
    peers: &[ProcessId],
) -> Result<Started, ProtocolError> {
    let me = supply.owner();
    let value = match state {
        VoteState::Supporting(v) => *v,
        VoteState::Experimenting(_) => return Err(ProtocolError::AlreadyExperimenting(me)),
    };
    if !supply.contains(nonce) {
        return Err(ProtocolError::NonceUnavailable { process: me, nonce });
    }
    if peers.len() != params.n() - 1 {
        return Err(ProtocolError::PeerCount {
            expected: params.n() - 1,
            actual: peers.len(),
        });
    }
    if peers.contains(&me) {
        return Err(ProtocolError::SelfPeer(me));
    }
    let queries = peers.iter().map(|&p| Message::query(p, me, nonce)).collect();
    Ok(Started {
        state: VoteState::Experimenting(Experiment {
            value,
            nonce,
            tallies: Tallies::starting(value),
            heard: PeerSet::default(),
        }),
        supply: supply.without(nonce),
        queries,
    })
}

/// Answers a query with the supported value, aborting any running experiment.
pub fn handle_query(
    state: &VoteState,
    me: ProcessId,
    source: ProcessId,
    nonce: Nonce,
) -> (VoteState, Message) {
    let value = state.value();
    (
        VoteState::Supporting(value),
        Message::response(source, me, nonce, value),
    )
}

/// Counts a response towards the running experiment, ending it when the
/// tally for the response's value already stands at the trigger.
pub fn handle_response(
    state: &VoteState,
    sender: ProcessId,
    nonce: Nonce,
    value: Value,
    params: &VariantParams,
) -> (VoteState, ExperimentOutcome) {
    let exp = match state {
        VoteState::Experimenting(e) if e.nonce == nonce && !e.heard.contains(sender) => e,
        _ => return (*state, ExperimentOutcome::Stale),
    };
    if exp.tallies.get(value) == params.trigger() {
        let outcome = if value == exp.value {
            ExperimentOutcome::Reaffirming
        } else {
            ExperimentOutcome::Reversing
        };
        (VoteState::Supporting(value), outcome)
    } else {
        let next = Experiment {
            tallies: exp.tallies.bumped(value),
            heard: exp.heard.with(sender),
            ..*exp
        };
        (VoteState::Experimenting(next), ExperimentOutcome::Continuing)
    }
}

/// A scheduler's choice: which transition to perform next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Transition {
    /// Start an experiment with the process's next unused nonce.
    Start { process: ProcessId },
    /// Remove a message from the buffer and hand it to its destination.
    Deliver(Message),
}

impl Transition {
    pub fn actor(&self) -> ProcessId {
        match self {
            Transition::Start { process } => *process,
            Transition::Deliver(m) => m.dest,
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Start { process } => write!(f, "start {process}"),
            Transition::Deliver(m) => match m.payload {
                Payload::Query { source, nonce } => {
                    write!(f, "deliver-query {} source={} nonce={}", m.dest, source, nonce)
                }
                Payload::Response { sender, nonce, value } => write!(
                    f,
                    "deliver-response {} sender={} nonce={} value={}",
                    m.dest, sender, nonce, value
                ),
            },
        }
    }
}

impl FromStr for Transition {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("transition", s);
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(err)?;
        let actor: ProcessId = words.next().ok_or_else(err)?.parse().map_err(|_| err())?;
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(err)?;
            fields.insert(k, v);
        }
        let field = |k: &str| fields.get(k).copied().ok_or_else(err);
        match kind {
            "start" => Ok(Transition::Start { process: actor }),
            "deliver-query" => Ok(Transition::Deliver(Message::query(
                actor,
                field("source")?.parse().map_err(|_| err())?,
                field("nonce")?.parse().map_err(|_| err())?,
            ))),
            "deliver-response" => Ok(Transition::Deliver(Message::response(
                actor,
                field("sender")?.parse().map_err(|_| err())?,
                field("nonce")?.parse().map_err(|_| err())?,
                field("value")?.parse().map_err(|_| err())?,
            ))),
            _ => Err(err()),
        }
    }
}

/// What one process can see when deciding which of its transitions are enabled.
#[derive(Clone, Copy, Debug)]
pub struct ProcessView<'a> {
    pub pid: ProcessId,
    pub alive: bool,
    /// False once the process has used up its experiment budget.
    pub may_start: bool,
    pub vote: &'a VoteState,
    pub inbox: &'a [Message],
}

/// Every transition of one process whose precondition holds, in a fixed order:
/// the experiment start first, then deliveries in inbox order.
pub fn enabled_transitions(view: &ProcessView<'_>) -> Vec<Transition> {
    if !view.alive {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(view.inbox.len() + 1);
    if view.may_start && view.vote.is_idle() {
        out.push(Transition::Start { process: view.pid });
    }
    out.extend(
        view.inbox
            .iter()
            .filter(|m| m.dest == view.pid)
            .map(|m| Transition::Deliver(*m)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u8) -> ProcessId {
        ProcessId(i)
    }

    fn crash1() -> VariantParams {
        VariantParams::crash(1).unwrap()
    }

    fn experimenting(value: Value, nonce: Nonce, red: u32, blue: u32) -> VoteState {
        VoteState::Experimenting(Experiment {
            value,
            nonce,
            tallies: Tallies([red, blue]),
            heard: PeerSet::default(),
        })
    }

    #[test]
    fn init_supports_the_proposal() {
        assert_eq!(init_process(Value::Red), VoteState::Supporting(Value::Red));
        assert_eq!(init_process(Value::Blue), VoteState::Supporting(Value::Blue));
        let v = init_process(Value::Red).value();
        assert_eq!(v.opposite().opposite(), v);
    }

    #[test]
    fn variant_thresholds() {
        let c = VariantParams::crash(2).unwrap();
        assert_eq!(
            (c.n(), c.trigger(), c.decide_threshold(), c.learn_threshold()),
            (7, 2, 5, 5)
        );
        let b = VariantParams::byzantine(1).unwrap();
        assert_eq!(
            (b.n(), b.trigger(), b.decide_threshold(), b.learn_threshold()),
            (6, 2, 4, 5)
        );
        assert_eq!(VariantParams::crash(0), Err(ConfigError::ZeroFaults));
        assert!(matches!(
            VariantParams::with_process_count(FaultModel::Crash, 1, 5),
            Err(ConfigError::ProcessCount { expected: 4, .. })
        ));
    }

    #[test]
    fn start_sends_one_query_per_peer() {
        let params = crash1();
        let supply = NonceSupply::new(p(0));
        let x = supply.fresh();
        let started = start_experiment(
            &VoteState::Supporting(Value::Red),
            &supply,
            x,
            &params,
            &params.peers_of(p(0)),
        )
        .unwrap();
        assert_eq!(started.state, experimenting(Value::Red, x, 1, 0));
        assert_eq!(started.queries.len(), 3);
        assert!(started.queries.iter().all(|m| m.payload
            == Payload::Query {
                source: p(0),
                nonce: x
            }));
        assert!(started.queries.iter().all(|m| m.dest != p(0)));
        assert!(!started.supply.contains(x));
    }

    #[test]
    fn byzantine_start_queries_five_peers() {
        let params = VariantParams::byzantine(1).unwrap();
        let supply = NonceSupply::new(p(2));
        let peers = params.peers_of(p(2));
        let started = start_experiment(
            &VoteState::Supporting(Value::Blue),
            &supply,
            supply.fresh(),
            &params,
            &peers,
        )
        .unwrap();
        assert_eq!(started.queries.len(), peers.len());
        assert_eq!(started.queries.len(), 5 * params.f());
    }

    #[test]
    fn start_rejects_running_experiment_and_used_nonce() {
        let params = crash1();
        let supply = NonceSupply::new(p(0));
        let x = supply.fresh();
        let peers = params.peers_of(p(0));
        let running = experimenting(Value::Red, x, 1, 0);
        assert_eq!(
            start_experiment(&running, &supply, supply.fresh(), &params, &peers),
            Err(ProtocolError::AlreadyExperimenting(p(0)))
        );
        let started =
            start_experiment(&VoteState::Supporting(Value::Red), &supply, x, &params, &peers).unwrap();
        assert!(matches!(
            start_experiment(
                &VoteState::Supporting(Value::Red),
                &started.supply,
                x,
                &params,
                &peers
            ),
            Err(ProtocolError::NonceUnavailable { .. })
        ));
        let foreign = Nonce::new(p(1), 7);
        assert!(matches!(
            start_experiment(
                &VoteState::Supporting(Value::Red),
                &supply,
                foreign,
                &params,
                &peers
            ),
            Err(ProtocolError::NonceUnavailable { .. })
        ));
    }

    #[test]
    fn query_answers_with_supported_value() {
        let x = Nonce::new(p(2), 0);
        let (s, r) = handle_query(&VoteState::Supporting(Value::Red), p(1), p(2), x);
        assert_eq!(s, VoteState::Supporting(Value::Red));
        assert_eq!(r, Message::response(p(2), p(1), x, Value::Red));
    }

    #[test]
    fn query_aborts_running_experiment_without_changing_vote() {
        let y = Nonce::new(p(1), 0);
        let x = Nonce::new(p(2), 4);
        let (s, r) = handle_query(&experimenting(Value::Blue, y, 1, 0), p(1), p(2), x);
        assert_eq!(s, VoteState::Supporting(Value::Blue));
        assert_eq!(r, Message::response(p(2), p(1), x, Value::Blue));
    }

    #[test]
    fn response_at_trigger_reverses() {
        let x = Nonce::new(p(0), 0);
        let (s, o) = handle_response(
            &experimenting(Value::Red, x, 1, 1),
            p(3),
            x,
            Value::Blue,
            &crash1(),
        );
        assert_eq!(
            (s, o),
            (VoteState::Supporting(Value::Blue), ExperimentOutcome::Reversing)
        );
    }

    #[test]
    fn response_at_trigger_reaffirms() {
        let x = Nonce::new(p(0), 0);
        let (s, o) = handle_response(
            &experimenting(Value::Red, x, 1, 0),
            p(3),
            x,
            Value::Red,
            &crash1(),
        );
        assert_eq!(
            (s, o),
            (VoteState::Supporting(Value::Red), ExperimentOutcome::Reaffirming)
        );
    }

    #[test]
    fn response_below_trigger_counts() {
        let x = Nonce::new(p(0), 0);
        let (s, o) = handle_response(
            &experimenting(Value::Red, x, 1, 0),
            p(3),
            x,
            Value::Blue,
            &crash1(),
        );
        assert_eq!(o, ExperimentOutcome::Continuing);
        let e = s.experiment().unwrap();
        assert_eq!((e.tallies.get(Value::Red), e.tallies.get(Value::Blue)), (1, 1));
        assert!(e.heard.contains(p(3)));
    }

    #[test]
    fn idle_or_mismatched_responses_are_stale() {
        let x = Nonce::new(p(0), 0);
        let params = crash1();
        let idle = VoteState::Supporting(Value::Red);
        assert_eq!(
            handle_response(&idle, p(3), x, Value::Blue, &params),
            (idle, ExperimentOutcome::Stale)
        );
        let running = experimenting(Value::Red, x, 1, 0);
        let other = Nonce::new(p(0), 1);
        assert_eq!(
            handle_response(&running, p(3), other, Value::Blue, &params),
            (running, ExperimentOutcome::Stale)
        );
    }

    #[test]
    fn duplicate_sender_is_stale() {
        let params = VariantParams::byzantine(1).unwrap();
        let x = Nonce::new(p(0), 0);
        let (s, _) = handle_response(&experimenting(Value::Red, x, 1, 0), p(5), x, Value::Blue, &params);
        let (s2, o) = handle_response(&s, p(5), x, Value::Blue, &params);
        assert_eq!(o, ExperimentOutcome::Stale);
        assert_eq!(s2, s);
    }

    #[test]
    fn byzantine_flip_needs_third_opposing_response() {
        let params = VariantParams::byzantine(1).unwrap();
        let x = Nonce::new(p(0), 0);
        let mut state = experimenting(Value::Red, x, 1, 0);
        for (i, expect) in [
            ExperimentOutcome::Continuing,
            ExperimentOutcome::Continuing,
            ExperimentOutcome::Reversing,
        ]
        .into_iter()
        .enumerate()
        {
            let (s, o) = handle_response(&state, p(i as u8 + 1), x, Value::Blue, &params);
            assert_eq!(o, expect);
            state = s;
        }
        assert_eq!(state, VoteState::Supporting(Value::Blue));
    }

    #[test]
    fn enabled_transitions_cases() {
        let idle = VoteState::Supporting(Value::Red);
        let view = ProcessView {
            pid: p(0),
            alive: true,
            may_start: true,
            vote: &idle,
            inbox: &[],
        };
        assert_eq!(
            enabled_transitions(&view),
            vec![Transition::Start { process: p(0) }]
        );

        let x = Nonce::new(p(0), 0);
        let running = experimenting(Value::Red, x, 1, 0);
        let inbox = [
            Message::query(p(0), p(1), Nonce::new(p(1), 0)),
            Message::response(p(0), p(2), x, Value::Red),
        ];
        let view = ProcessView {
            vote: &running,
            inbox: &inbox,
            ..view
        };
        let enabled = enabled_transitions(&view);
        assert_eq!(
            enabled,
            inbox.iter().map(|m| Transition::Deliver(*m)).collect::<Vec<_>>()
        );

        let dead = ProcessView { alive: false, ..view };
        assert!(enabled_transitions(&dead).is_empty());
    }

    #[test]
    fn transition_text_round_trip() {
        let ts = [
            Transition::Start { process: p(3) },
            Transition::Deliver(Message::query(p(1), p(2), Nonce::new(p(2), 5))),
            Transition::Deliver(Message::response(p(2), p(1), Nonce::new(p(2), 5), Value::Blue)),
        ];
        for t in ts {
            assert_eq!(t.to_string().parse::<Transition>().unwrap(), t);
        }
    }
}
