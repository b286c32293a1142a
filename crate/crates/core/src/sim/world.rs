use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::causality::{
    CausalityError, CutSpace, ExperimentId, ExperimentRecord, ExperimentStatus, PrecedesDag,
};
use crate::learner::{detect_cut, Claim, VectorClock};
use crate::protocol::{
    enabled_transitions, handle_query, handle_response, init_process, start_experiment, ExperimentOutcome,
    FaultModel, Message, Nonce, NonceSupply, ParseError, Payload, ProcessId, ProcessView, Transition, Value,
    VariantParams, VoteState,
};
use crate::trace::{Actor, EndOutcome, Event, EventKind, QueryEffect, Trace, TraceHeader};

/// What a Byzantine process does when queried or probed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Always answer with the given value, or with the opposite of its own
    /// proposal when `None`.
    Lie(Option<Value>),
    /// Answer RED to even-numbered queriers and BLUE to odd-numbered ones.
    Equivocate,
    /// Never answer.
    Silent,
    /// Answer with random values, duplicate answers, and answers to made-up nonces.
    Spam,
}

impl Behavior {
    pub const KINDS: [Behavior; 4] = [
        Behavior::Lie(None),
        Behavior::Equivocate,
        Behavior::Silent,
        Behavior::Spam,
    ];
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Lie(None) => f.write_str("lie"),
            Behavior::Lie(Some(Value::Red)) => f.write_str("lie-red"),
            Behavior::Lie(Some(Value::Blue)) => f.write_str("lie-blue"),
            Behavior::Equivocate => f.write_str("equivocate"),
            Behavior::Silent => f.write_str("silent"),
            Behavior::Spam => f.write_str("spam"),
        }
    }
}

impl FromStr for Behavior {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lie" => Ok(Behavior::Lie(None)),
            "lie-red" => Ok(Behavior::Lie(Some(Value::Red))),
            "lie-blue" => Ok(Behavior::Lie(Some(Value::Blue))),
            "equivocate" => Ok(Behavior::Equivocate),
            "silent" => Ok(Behavior::Silent),
            "spam" => Ok(Behavior::Spam),
            _ => Err(ParseError::new("byzantine behavior", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Proc {
    pub vote: VoteState,
    pub supply: NonceSupply,
    pub alive: bool,
    pub behavior: Option<Behavior>,
    pub started: u32,
    pub clock: VectorClock,
    /// Clock associated with the vote when it was last (re)affirmed.
    pub claim_clock: VectorClock,
}

impl Proc {
    pub fn is_correct(&self) -> bool {
        self.behavior.is_none()
    }
}

/// Responses an experiment counted before it ended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Consumption {
    pub responses: u32,
    pub opposing: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("{0} is not enabled")]
    Disabled(Transition),
    #[error("{0} has crashed")]
    Crashed(ProcessId),
    #[error("expected {expected} votes, found {actual}")]
    VoteCount { expected: usize, actual: usize },
    #[error("{0} is out of range")]
    UnknownProcess(ProcessId),
    #[error("byzantine behaviors need the byzantine model")]
    ByzantineInCrashModel,
    #[error("{count} faulty processes exceed f = {f}")]
    TooManyFaulty { count: usize, f: usize },
    #[error("{0} is listed twice")]
    Duplicate(ProcessId),
}

/// The observable state used to compare worlds: everything except event
/// positions and the log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub procs: Vec<Proc>,
    pub buffer: BTreeMap<Message, u32>,
    pub experiments:
        BTreeMap<ExperimentId, (Nonce, Value, Value, ExperimentStatus, VectorClock, Consumption)>,
}

/// Full implementation state plus instrumentation.
#[derive(Clone, Debug)]
pub struct World {
    params: VariantParams,
    initial: Vec<Value>,
    seed: u64,
    byzantine: Vec<(ProcessId, Behavior)>,
    procs: Vec<Proc>,
    buffer: BTreeMap<Message, u32>,
    records: Vec<ExperimentRecord>,
    start_clocks: Vec<VectorClock>,
    consumption: Vec<Consumption>,
    by_process: Vec<Vec<usize>>,
    events: usize,
    sent: usize,
    log: Option<Vec<Event>>,
    verdict: OnceCell<Result<Option<Value>, CausalityError>>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl World {
    pub fn new(
        params: VariantParams,
        votes: &[Value],
        byzantine: &[(ProcessId, Behavior)],
        seed: u64,
    ) -> Result<Self, WorldError> {
        let n = params.n();
        if votes.len() != n {
            return Err(WorldError::VoteCount {
                expected: n,
                actual: votes.len(),
            });
        }
        if !byzantine.is_empty() && params.model() != FaultModel::Byzantine {
            return Err(WorldError::ByzantineInCrashModel);
        }
        if byzantine.len() > params.f() {
            return Err(WorldError::TooManyFaulty {
                count: byzantine.len(),
                f: params.f(),
            });
        }
        let mut procs: Vec<Proc> = params
            .processes()
            .map(|p| Proc {
                vote: init_process(votes[p.index()]),
                supply: NonceSupply::new(p),
                alive: true,
                behavior: None,
                started: 0,
                clock: VectorClock::zero(n),
                claim_clock: VectorClock::zero(n),
            })
            .collect();
        for &(p, b) in byzantine {
            let proc = procs.get_mut(p.index()).ok_or(WorldError::UnknownProcess(p))?;
            if proc.behavior.is_some() {
                return Err(WorldError::Duplicate(p));
            }
            proc.behavior = Some(b);
        }
        Ok(World {
            params,
            initial: votes.to_vec(),
            seed,
            byzantine: byzantine.to_vec(),
            procs,
            buffer: BTreeMap::new(),
            records: Vec::new(),
            start_clocks: Vec::new(),
            consumption: Vec::new(),
            by_process: vec![Vec::new(); n],
            events: 0,
            sent: 0,
            log: None,
            verdict: OnceCell::new(),
        })
    }

    pub fn from_header(header: &TraceHeader) -> Result<Self, WorldError> {
        World::new(header.params, &header.votes, &header.byzantine, header.seed)
    }

    /// Starts keeping an event log from this point on.
    pub fn recording(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn stop_recording(&mut self) {
        self.log = None;
    }

    pub fn params(&self) -> &VariantParams {
        &self.params
    }

    pub fn initial_votes(&self) -> &[Value] {
        &self.initial
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn byzantine(&self) -> &[(ProcessId, Behavior)] {
        &self.byzantine
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            params: self.params,
            votes: self.initial.clone(),
            seed: self.seed,
            byzantine: self.byzantine.clone(),
        }
    }

    pub fn procs(&self) -> &[Proc] {
        &self.procs
    }

    pub fn proc(&self, p: ProcessId) -> &Proc {
        &self.procs[p.index()]
    }

    pub fn buffer(&self) -> &BTreeMap<Message, u32> {
        &self.buffer
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn start_clocks(&self) -> &[VectorClock] {
        &self.start_clocks
    }

    pub fn consumption(&self) -> &[Consumption] {
        &self.consumption
    }

    /// Record indices of `p`'s experiments in start order.
    pub fn experiments_of(&self, p: ProcessId) -> &[usize] {
        &self.by_process[p.index()]
    }

    pub fn event_count(&self) -> usize {
        self.events
    }

    pub fn messages_sent(&self) -> usize {
        self.sent
    }

    pub fn log(&self) -> Option<&[Event]> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Vec<Event> {
        self.log.replace(Vec::new()).unwrap_or_default()
    }

    pub fn trace(&self) -> Trace {
        Trace {
            header: self.header(),
            events: self.log.clone().unwrap_or_default(),
        }
    }

    pub fn is_alive(&self, p: ProcessId) -> bool {
        self.procs[p.index()].alive
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        self.procs[p.index()].is_correct()
    }

    pub fn counted(&self) -> Vec<bool> {
        self.procs.iter().map(Proc::is_correct).collect()
    }

    pub fn reversal_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_reversing()).count()
    }

    /// Record index of the experiment that uses `nonce`.
    pub fn record_of(&self, nonce: Nonce) -> Option<usize> {
        let i = *self
            .by_process
            .get(nonce.owner().index())?
            .get(nonce.serial() as usize)?;
        (self.records[i].nonce == nonce).then_some(i)
    }

    pub fn current_record(&self, p: ProcessId) -> Option<usize> {
        self.proc(p)
            .vote
            .experiment()
            .and_then(|e| self.record_of(e.nonce))
    }

    pub fn inbox(&self, p: ProcessId) -> impl Iterator<Item = (&Message, &u32)> + '_ {
        let lo = Message::query(p, ProcessId(0), Nonce::new(ProcessId(0), 0));
        self.buffer.range(lo..).take_while(move |(m, _)| m.dest == p)
    }

    pub fn dag(&self) -> PrecedesDag {
        PrecedesDag::from_clocks(self.params.n(), self.records.clone(), &self.start_clocks)
    }

    pub fn cut_space(&self) -> CutSpace {
        CutSpace::new(
            &self.dag(),
            &self.initial,
            &self.counted(),
            self.params.decide_threshold(),
        )
    }

    /// The decision rule on the current history.
    pub fn verdict(&self) -> Result<Option<Value>, CausalityError> {
        self.verdict.get_or_init(|| self.cut_space().decision()).clone()
    }

    /// The value whose counted current supporters reach the decision
    /// threshold. The cut of all reversing experiments is always consistent
    /// and its support is the current votes, so such a value is decided.
    pub fn full_cut_decision(&self) -> Option<Value> {
        let mut t = [0usize; 2];
        for p in self.procs.iter().filter(|p| p.is_correct()) {
            t[p.vote.value().index()] += 1;
        }
        Value::ALL
            .into_iter()
            .find(|c| t[c.index()] >= self.params.decide_threshold())
    }

    pub fn snapshot(&self) -> Snapshot {
        let experiments = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    r.id,
                    (
                        r.nonce,
                        r.pre_value,
                        r.post_value,
                        r.status,
                        self.start_clocks[i].clone(),
                        self.consumption[i],
                    ),
                )
            })
            .collect();
        Snapshot {
            procs: self.procs.clone(),
            buffer: self.buffer.clone(),
            experiments,
        }
    }

    /// Enabled transitions, with experiment starts limited to processes that
    /// have started fewer than `budget` experiments. Byzantine processes never
    /// start experiments.
    pub fn enabled(&self, budget: u32) -> Vec<Transition> {
        let mut out = Vec::new();
        let mut inbox = Vec::new();
        for p in self.params.processes() {
            let proc = &self.procs[p.index()];
            inbox.clear();
            inbox.extend(self.inbox(p).map(|(m, _)| *m));
            out.extend(enabled_transitions(&ProcessView {
                pid: p,
                alive: proc.alive,
                may_start: proc.is_correct() && proc.started < budget,
                vote: &proc.vote,
                inbox: &inbox,
            }));
        }
        out
    }

    pub fn is_enabled(&self, t: &Transition) -> bool {
        let p = t.actor();
        if p.index() >= self.procs.len() || !self.procs[p.index()].alive {
            return false;
        }
        match t {
            Transition::Start { .. } => {
                self.procs[p.index()].is_correct() && self.procs[p.index()].vote.is_idle()
            }
            Transition::Deliver(m) => self.buffer.contains_key(m),
        }
    }

    fn emit(&mut self, actor: Actor, kind: EventKind) {
        if let Some(log) = &mut self.log {
            log.push(Event {
                index: self.events,
                actor,
                kind,
            });
        }
        self.events += 1;
    }

    fn send(&mut self, m: Message) {
        *self.buffer.entry(m).or_insert(0) += 1;
        self.sent += 1;
    }

    fn take(&mut self, m: &Message) -> bool {
        match self.buffer.get_mut(m) {
            Some(k) if *k > 1 => {
                *k -= 1;
                true
            }
            Some(_) => {
                self.buffer.remove(m);
                true
            }
            None => false,
        }
    }

    pub fn crash(&mut self, p: ProcessId) -> Result<(), WorldError> {
        let proc = self
            .procs
            .get_mut(p.index())
            .ok_or(WorldError::UnknownProcess(p))?;
        if !proc.alive {
            return Err(WorldError::Crashed(p));
        }
        proc.alive = false;
        self.emit(Actor::Process(p), EventKind::Crash);
        Ok(())
    }

    /// Clears every crash flag without logging anything.
    pub fn revive_all(&mut self) {
        for proc in &mut self.procs {
            proc.alive = true;
        }
    }

    /// Reads the claims of every alive process, logs the probe, and returns
    /// the claims with the value they let a learner infer.
    pub fn probe(&mut self) -> (Vec<Claim>, Option<Value>) {
        let claims = self.claims();
        let learned = detect_cut(&claims, &self.params);
        self.emit(
            Actor::Learner,
            EventKind::LearnerProbe {
                claims: claims.len(),
                learned,
            },
        );
        (claims, learned)
    }

    pub fn claims(&self) -> Vec<Claim> {
        let n = self.params.n();
        let mut out = Vec::new();
        for p in self.params.processes() {
            let proc = &self.procs[p.index()];
            if !proc.alive {
                continue;
            }
            let claim = |vote, clock| Claim {
                process: p,
                vote,
                clock,
            };
            match proc.behavior {
                None => out.push(claim(proc.vote.value(), proc.claim_clock.clone())),
                Some(Behavior::Lie(v)) => {
                    let v = v.unwrap_or(self.initial[p.index()].opposite());
                    out.push(claim(v, VectorClock::zero(n)));
                }
                Some(Behavior::Equivocate) => {
                    let v = if self.events.is_multiple_of(2) {
                        Value::Red
                    } else {
                        Value::Blue
                    };
                    out.push(claim(v, VectorClock::zero(n)));
                }
                Some(Behavior::Silent) => {}
                Some(Behavior::Spam) => {
                    let mut rng = self.rng_for(p, self.events as u64);
                    let v = if rng.gen() { Value::Red } else { Value::Blue };
                    let clock = (0..n).map(|_| rng.gen_range(0..4)).collect::<Vec<u32>>();
                    out.push(claim(v, VectorClock::from(clock)));
                }
            }
        }
        out
    }

    fn rng_for(&self, p: ProcessId, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(p.0 as u64 ^ mix(salt))))
    }

    /// Applies one transition atomically.
    pub fn step(&mut self, t: &Transition) -> Result<ExperimentOutcome, WorldError> {
        let p = t.actor();
        if p.index() >= self.procs.len() {
            return Err(WorldError::UnknownProcess(p));
        }
        if !self.procs[p.index()].alive {
            return Err(WorldError::Crashed(p));
        }
        match *t {
            Transition::Start { process } => self.start(process).map(|_| ExperimentOutcome::Continuing),
            Transition::Deliver(m) => {
                if !self.take(&m) {
                    return Err(WorldError::Disabled(*t));
                }
                match m.payload {
                    Payload::Query { source, nonce } => {
                        self.deliver_query(m.dest, source, nonce);
                        Ok(ExperimentOutcome::Continuing)
                    }
                    Payload::Response { sender, nonce, value } => {
                        Ok(self.deliver_response(m.dest, sender, nonce, value))
                    }
                }
            }
        }
    }

    fn start(&mut self, p: ProcessId) -> Result<(), WorldError> {
        let proc = &self.procs[p.index()];
        if !proc.is_correct() {
            return Err(WorldError::Disabled(Transition::Start { process: p }));
        }
        let nonce = proc.supply.fresh();
        let peers = self.params.peers_of(p);
        let started = start_experiment(&proc.vote, &proc.supply, nonce, &self.params, &peers)
            .map_err(|_| WorldError::Disabled(Transition::Start { process: p }))?;
        let value = started.state.value();
        let proc = &mut self.procs[p.index()];
        proc.vote = started.state;
        proc.supply = started.supply;
        proc.clock.tick(p);
        let seq = proc.started;
        proc.started += 1;
        let clock = proc.clock.clone();
        self.by_process[p.index()].push(self.records.len());
        self.records.push(ExperimentRecord {
            id: ExperimentId { process: p, seq },
            nonce,
            pre_value: value,
            post_value: value,
            status: ExperimentStatus::Running,
            start_index: self.events,
            end_index: None,
        });
        self.start_clocks.push(clock.clone());
        self.consumption.push(Consumption::default());
        self.emit(
            Actor::Process(p),
            EventKind::ExperimentStart { nonce, value, clock },
        );
        for q in started.queries {
            self.emit(Actor::Process(p), EventKind::QuerySent { dest: q.dest, nonce });
            self.send(q);
        }
        Ok(())
    }

    fn end(&mut self, p: ProcessId, rec: usize, outcome: EndOutcome, value: Value) {
        let r = &mut self.records[rec];
        r.post_value = value;
        r.end_index = Some(self.events);
        r.status = match outcome {
            EndOutcome::Reversing => ExperimentStatus::Reversing,
            EndOutcome::Reaffirming => ExperimentStatus::Reaffirming,
            EndOutcome::Aborted => ExperimentStatus::Aborted,
        };
        let nonce = r.nonce;
        let proc = &mut self.procs[p.index()];
        proc.claim_clock = proc.clock.clone();
        if outcome == EndOutcome::Reversing {
            self.verdict = OnceCell::new();
        }
        self.emit(
            Actor::Process(p),
            EventKind::ExperimentEnd {
                nonce,
                outcome,
                value,
            },
        );
    }

    fn deliver_query(&mut self, me: ProcessId, source: ProcessId, nonce: Nonce) {
        if let Some(b) = self.procs[me.index()].behavior {
            self.emit(
                Actor::Process(me),
                EventKind::QueryDelivered {
                    source,
                    nonce,
                    effect: QueryEffect::Byzantine,
                },
            );
            for r in self.byzantine_answers(me, b, source, nonce) {
                self.respond(me, r);
            }
            return;
        }
        if let Some(x) = self.record_of(nonce) {
            let piggybacked = self.start_clocks[x].clone();
            self.procs[me.index()].clock.absorb(&piggybacked);
        }
        let running = self.current_record(me);
        let (state, response) = handle_query(&self.procs[me.index()].vote, me, source, nonce);
        self.procs[me.index()].vote = state;
        self.emit(
            Actor::Process(me),
            EventKind::QueryDelivered {
                source,
                nonce,
                effect: if running.is_some() {
                    QueryEffect::Abort
                } else {
                    QueryEffect::Idle
                },
            },
        );
        if let Some(rec) = running {
            self.end(me, rec, EndOutcome::Aborted, state.value());
        }
        self.respond(me, response);
    }

    fn respond(&mut self, me: ProcessId, m: Message) {
        if let Payload::Response { nonce, value, .. } = m.payload {
            self.emit(
                Actor::Process(me),
                EventKind::ResponseSent {
                    dest: m.dest,
                    nonce,
                    value,
                },
            );
            self.send(m);
        }
    }

    fn byzantine_answers(&self, me: ProcessId, b: Behavior, source: ProcessId, nonce: Nonce) -> Vec<Message> {
        match b {
            Behavior::Lie(v) => {
                let v = v.unwrap_or(self.initial[me.index()].opposite());
                vec![Message::response(source, me, nonce, v)]
            }
            Behavior::Equivocate => {
                let v = if source.0.is_multiple_of(2) {
                    Value::Red
                } else {
                    Value::Blue
                };
                vec![Message::response(source, me, nonce, v)]
            }
            Behavior::Silent => Vec::new(),
            Behavior::Spam => {
                let salt = ((nonce.owner().0 as u64) << 32) | nonce.serial() as u64;
                let mut rng = self.rng_for(me, salt);
                let pick = |rng: &mut ChaCha8Rng| if rng.gen() { Value::Red } else { Value::Blue };
                let mut out = vec![Message::response(source, me, nonce, pick(&mut rng))];
                if rng.gen_bool(0.5) {
                    out.push(Message::response(source, me, nonce, pick(&mut rng)));
                }
                for _ in 0..rng.gen_range(0..3) {
                    let dest = ProcessId(rng.gen_range(0..self.params.n() as u8));
                    if dest == me {
                        continue;
                    }
                    let serial = rng.gen_range(0..self.procs[dest.index()].started + 2);
                    let fake = Nonce::new(dest, serial);
                    out.push(Message::response(dest, me, fake, pick(&mut rng)));
                }
                out
            }
        }
    }

    fn deliver_response(
        &mut self,
        me: ProcessId,
        sender: ProcessId,
        nonce: Nonce,
        value: Value,
    ) -> ExperimentOutcome {
        let running = self.current_record(me);
        let before = self.procs[me.index()].vote;
        let (state, outcome) = handle_response(&before, sender, nonce, value, &self.params);
        self.procs[me.index()].vote = state;
        self.emit(
            Actor::Process(me),
            EventKind::ResponseDelivered {
                sender,
                nonce,
                value,
                outcome,
            },
        );
        if outcome == ExperimentOutcome::Stale {
            return outcome;
        }
        let rec = running.expect("counted response belongs to the running experiment");
        let c = &mut self.consumption[rec];
        c.responses += 1;
        if value != before.value() {
            c.opposing += 1;
        }
        match outcome {
            ExperimentOutcome::Reversing => self.end(me, rec, EndOutcome::Reversing, value),
            ExperimentOutcome::Reaffirming => self.end(me, rec, EndOutcome::Reaffirming, value),
            _ => {}
        }
        outcome
    }
}
