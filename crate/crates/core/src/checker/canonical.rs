//! State keys for deduplication.
//!
//! [`KeyContext::key`] keeps only what can influence future transitions and
//! decisions: local protocol states, experiment counts, the reversing and
//! running experiments of each process with what their starts knew, and
//! pending messages that can still have an effect. Knowledge of an
//! experiment is summarised per process as the number of its reversing
//! experiments known plus whether its running experiment is known; nonces
//! disappear entirely (a running experiment is named by its owner).
//! Responses to experiments that are no longer running are dropped, since
//! delivering them changes nothing.
//!
//! [`exact_key`] keeps every recorded detail except event positions, with
//! nonces renamed by first appearance.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::learner::VectorClock;
use crate::protocol::{Nonce, Payload, ProcessId, Value, VoteState};
use crate::sim::World;

/// 128-bit digest of a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub u64, pub u64);

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn num(&mut self, mut x: u64) {
        loop {
            let b = (x & 0x7f) as u8;
            x >>= 7;
            if x == 0 {
                self.0.push(b);
                return;
            }
            self.0.push(b | 0x80);
        }
    }

    fn tag(&mut self, t: u8) {
        self.0.push(t);
    }

    fn digest(&self) -> StateKey {
        let h = |salt: u8| {
            let mut s = std::collections::hash_map::DefaultHasher::new();
            salt.hash(&mut s);
            self.0.hash(&mut s);
            s.finish()
        };
        StateKey(h(0), h(1))
    }
}

/// Per-process prefix counts of reversing experiments.
struct Reversals {
    prefix: Vec<u32>,
    offset: Vec<usize>,
    running: Vec<Option<u32>>,
}

impl Reversals {
    fn of(world: &World) -> Self {
        let n = world.params().n();
        let mut prefix = Vec::with_capacity(world.records().len() + n);
        let mut offset = Vec::with_capacity(n);
        let mut running = Vec::with_capacity(n);
        for p in world.params().processes() {
            offset.push(prefix.len());
            let mut acc = 0;
            prefix.push(acc);
            for &i in world.experiments_of(p) {
                acc += world.records()[i].is_reversing() as u32;
                prefix.push(acc);
            }
            running.push(world.current_record(p).map(|i| world.records()[i].id.seq));
        }
        Reversals {
            prefix,
            offset,
            running,
        }
    }

    fn clock(&self, enc: &mut Enc, clock: &VectorClock, inv: &[usize]) {
        let entries = clock.entries();
        for &r in inv {
            let k = entries[r];
            enc.num(self.prefix[self.offset[r] + k as usize] as u64);
            enc.tag(self.running[r].is_some_and(|s| s < k) as u8);
        }
    }
}

/// How states are identified during one exploration.
///
/// With per-process `budgets`, a process that has used its budget never
/// starts again, so what it knows, and stale queries it will receive while
/// idle, are forgotten. With `symmetry`, states that differ by a permutation
/// of processes sharing an initial vote and a budget are identified.
/// Without Byzantine processes every response is delivered at most once, so
/// the senders of responses are forgotten as well.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyContext {
    budgets: Option<Vec<u32>>,
    perms: Vec<Vec<usize>>,
    invs: Vec<Vec<usize>>,
    anonymous: bool,
}

impl KeyContext {
    pub fn new(world: &World, budgets: Option<Vec<u32>>, symmetry: bool) -> Self {
        let n = world.params().n();
        let anonymous = world.byzantine().is_empty();
        let perms = if symmetry && anonymous && n <= 8 {
            let budget = |i: usize| budgets.as_ref().map(|b| b[i]);
            let init = world.initial_votes();
            permutations(n, &|i, j| init[i] == init[j] && budget(i) == budget(j))
        } else {
            vec![(0..n).collect()]
        };
        let invs = perms
            .iter()
            .map(|p| {
                let mut inv = vec![0; n];
                for (old, &new) in p.iter().enumerate() {
                    inv[new] = old;
                }
                inv
            })
            .collect();
        KeyContext {
            budgets,
            perms,
            invs,
            anonymous,
        }
    }

    /// Number of process permutations tried per key.
    pub fn symmetry_order(&self) -> usize {
        self.perms.len()
    }

    pub fn key(&self, world: &World) -> StateKey {
        let rev = Reversals::of(world);
        let mut best: Option<Vec<u8>> = None;
        for (perm, inv) in self.perms.iter().zip(&self.invs) {
            let e = self.encode(world, &rev, perm, inv);
            if best.as_ref().is_none_or(|b| e < *b) {
                best = Some(e);
            }
        }
        Enc(best.expect("identity is always a symmetry")).digest()
    }

    fn frozen(&self, world: &World, q: ProcessId) -> bool {
        self.budgets
            .as_ref()
            .is_some_and(|b| world.proc(q).started >= b[q.index()])
    }

    fn encode(&self, world: &World, rev: &Reversals, perm: &[usize], inv: &[usize]) -> Vec<u8> {
        let mut enc = Enc(Vec::with_capacity(256));
        for &old in inv {
            let p = ProcessId(old as u8);
            let proc = world.proc(p);
            enc.tag(proc.alive as u8);
            enc.tag(world.initial_votes()[old].index() as u8);
            enc.num(proc.started as u64);
            vote(&mut enc, &proc.vote, perm, self.anonymous);
            if !self.frozen(world, p) {
                rev.clock(&mut enc, &proc.clock, inv);
            }
            for &i in world.experiments_of(p) {
                let r = &world.records()[i];
                if r.is_reversing() || r.end_index.is_none() {
                    enc.tag(r.is_reversing() as u8);
                    rev.clock(&mut enc, &world.start_clocks()[i], inv);
                }
            }
            enc.tag(0xff);
        }
        let mut flat = Enc(Vec::with_capacity(256));
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (m, &count) in world.buffer() {
            let begin = flat.0.len();
            let dest = perm[m.dest.index()] as u8;
            match m.payload {
                Payload::Query { source, nonce } => {
                    let Some(x) = world.record_of(nonce) else { continue };
                    let current = world.current_record(source) == Some(x);
                    let frozen = self.frozen(world, m.dest);
                    if frozen && world.proc(m.dest).vote.is_idle() && !current {
                        continue;
                    }
                    flat.tag(0);
                    flat.tag(dest);
                    flat.tag(perm[source.index()] as u8);
                    flat.tag(current as u8);
                    if !frozen {
                        rev.clock(&mut flat, &world.start_clocks()[x], inv);
                    }
                }
                Payload::Response { sender, nonce, value } => {
                    let current = world.proc(m.dest).vote.experiment().map(|x| x.nonce);
                    if current != Some(nonce) {
                        continue;
                    }
                    flat.tag(1);
                    flat.tag(dest);
                    flat.tag(if self.anonymous {
                        0xff
                    } else {
                        perm[sender.index()] as u8
                    });
                    flat.tag(value.index() as u8);
                }
            }
            flat.tag(0xfe);
            for _ in 0..count {
                spans.push((begin, flat.0.len()));
            }
        }
        spans.sort_unstable_by(|a, b| flat.0[a.0..a.1].cmp(&flat.0[b.0..b.1]));
        for (a, b) in spans {
            enc.0.extend_from_slice(&flat.0[a..b]);
        }
        enc.0
    }
}

fn vote(enc: &mut Enc, v: &VoteState, perm: &[usize], anonymous: bool) {
    match v {
        VoteState::Supporting(c) => {
            enc.tag(0);
            enc.tag(c.index() as u8);
        }
        VoteState::Experimenting(e) => {
            enc.tag(1);
            enc.tag(e.value.index() as u8);
            enc.num(e.tallies.get(Value::Red) as u64);
            enc.num(e.tallies.get(Value::Blue) as u64);
            if !anonymous {
                let bits = e.heard.bits();
                let heard: u64 = (0..perm.len())
                    .filter(|&i| bits & (1 << i) != 0)
                    .map(|i| 1 << perm[i])
                    .sum();
                enc.num(heard);
            }
        }
    }
}

/// Permutations of `0..n`, as old index to new index, mapping each `i` to
/// some `j` with `same(i, j)`.
fn permutations(n: usize, same: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    fn rec(
        i: usize,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
        same: &dyn Fn(usize, usize) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if i == perm.len() {
            out.push(perm.clone());
            return;
        }
        for j in 0..perm.len() {
            if !used[j] && same(i, j) {
                used[j] = true;
                perm[i] = j;
                rec(i + 1, perm, used, same, out);
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, &mut vec![0; n], &mut vec![false; n], same, &mut out);
    out
}

/// [`KeyContext::key`] with no budget and no symmetry.
pub fn causal_key(world: &World) -> StateKey {
    let n = world.params().n();
    let identity: Vec<usize> = (0..n).collect();
    let ctx = KeyContext {
        budgets: None,
        perms: vec![identity.clone()],
        invs: vec![identity],
        anonymous: world.byzantine().is_empty(),
    };
    ctx.key(world)
}

pub fn exact_key(world: &World) -> StateKey {
    let mut names: HashMap<Nonce, u64> = HashMap::new();
    let mut name = |n: Nonce| {
        let next = names.len() as u64;
        *names.entry(n).or_insert(next)
    };
    let identity: Vec<usize> = (0..world.params().n()).collect();
    let mut enc = Enc::default();
    let ordered = world
        .params()
        .processes()
        .flat_map(|p| world.experiments_of(p).iter().copied());
    for i in ordered {
        let r = &world.records()[i];
        enc.num(name(r.nonce));
        enc.tag(r.id.process.0);
        enc.num(r.id.seq as u64);
        enc.tag(r.pre_value.index() as u8);
        enc.tag(r.post_value.index() as u8);
        enc.tag(r.status as u8);
        for &c in world.start_clocks()[i].entries() {
            enc.num(c as u64);
        }
    }
    for p in world.params().processes() {
        let proc = world.proc(p);
        enc.tag(proc.alive as u8);
        enc.num(proc.started as u64);
        vote(&mut enc, &proc.vote, &identity, false);
        if let Some(e) = proc.vote.experiment() {
            enc.num(name(e.nonce));
        }
        for &c in proc.clock.entries().iter().chain(proc.claim_clock.entries()) {
            enc.num(c as u64);
        }
    }
    let mut msgs: Vec<(u8, u8, u8, u64, u8, u32)> = world
        .buffer()
        .iter()
        .map(|(m, &k)| match m.payload {
            Payload::Query { source, nonce } => (0, m.dest.0, source.0, name(nonce), 0, k),
            Payload::Response { sender, nonce, value } => {
                (1, m.dest.0, sender.0, name(nonce), value.index() as u8, k)
            }
        })
        .collect();
    msgs.sort_unstable();
    for (a, b, c, d, e, k) in msgs {
        enc.tag(a);
        enc.tag(b);
        enc.tag(c);
        enc.num(d);
        enc.tag(e);
        enc.num(k as u64);
    }
    enc.digest()
}
