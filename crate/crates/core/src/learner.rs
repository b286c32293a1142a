//! Vector-clock instrumentation and the decision learner.

use std::fmt;
use std::str::FromStr;

use crate::protocol::{FaultModel, ParseError, ProcessId, Value, VariantParams};
use crate::sim::World;
use crate::trace::Fields;

/// One counter per process; entry `p` counts the experiments of `p` that are
/// known to the holder.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VectorClock(Vec<u32>);

impl VectorClock {
    pub fn zero(n: usize) -> Self {
        VectorClock(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, p: ProcessId) -> u32 {
        self.0[p.index()]
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn tick(&mut self, p: ProcessId) {
        self.0[p.index()] += 1;
    }

    pub fn absorb(&mut self, other: &VectorClock) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = (*a).max(*b);
        }
    }
}

impl From<Vec<u32>> for VectorClock {
    fn from(v: Vec<u32>) -> Self {
        VectorClock(v)
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for VectorClock {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|c| c.parse().map_err(|_| ParseError::new("vector clock", s)))
            .collect::<Result<Vec<_>, _>>()
            .map(VectorClock)
    }
}

pub fn vc_on_experiment_start(clock: &VectorClock, me: ProcessId) -> VectorClock {
    let mut next = clock.clone();
    next.tick(me);
    next
}

pub fn vc_on_query_receipt(own: &VectorClock, piggybacked: &VectorClock) -> VectorClock {
    let mut next = own.clone();
    next.absorb(piggybacked);
    next
}

/// A process's answer to a learner probe.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Claim {
    pub process: ProcessId,
    pub vote: Value,
    pub clock: VectorClock,
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CLAIM {} vote={} clock={}",
            self.process, self.vote, self.clock
        )
    }
}

impl FromStr for Claim {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError::new("claim", s);
        let mut words = s.split_whitespace();
        if words.next() != Some("CLAIM") {
            return Err(err());
        }
        let process = words.next().ok_or_else(err)?.parse()?;
        let fields = Fields::parse(words).map_err(|_| err())?;
        Ok(Claim {
            process,
            vote: fields.get("vote").map_err(|_| err())?,
            clock: fields.get("clock").map_err(|_| err())?,
        })
    }
}

pub fn format_claims(claims: &[Claim]) -> String {
    claims.iter().map(|c| format!("{c}\n")).collect()
}

pub fn parse_claims(text: &str) -> Result<Vec<Claim>, ParseError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Reads every alive process's current vote and associated clock. Byzantine
/// processes answer according to their behavior.
pub fn learner_probe(world: &World) -> Vec<Claim> {
    world.claims()
}

/// Whether the two claims may belong to the same consistent cut: neither
/// knows of an experiment of the other that the other's own claim predates.
pub fn compatible(a: &Claim, b: &Claim) -> bool {
    b.clock.get(a.process) <= a.clock.get(a.process) && a.clock.get(b.process) <= b.clock.get(b.process)
}

/// The value a learner can infer from `claims`, if any.
///
/// Crash model: some set of at least `learn_threshold` pairwise compatible
/// claims votes unanimously. Byzantine model: at least `learn_threshold`
/// distinct processes claim the same value.
pub fn detect_cut(claims: &[Claim], params: &VariantParams) -> Option<Value> {
    let need = params.learn_threshold();
    let claims = dedup_by_process(claims);
    Value::ALL.into_iter().find(|&c| {
        let group: Vec<&Claim> = claims.iter().copied().filter(|cl| cl.vote == c).collect();
        match params.model() {
            FaultModel::Byzantine => group.len() >= need,
            FaultModel::Crash => group.len() >= need && max_clique(&group) >= need,
        }
    })
}

/// First claim per process; later duplicates are ignored.
fn dedup_by_process(claims: &[Claim]) -> Vec<&Claim> {
    let mut seen = 0u64;
    let mut out = Vec::with_capacity(claims.len());
    for c in claims {
        let bit = 1u64 << c.process.0;
        if seen & bit == 0 {
            seen |= bit;
            out.push(c);
        }
    }
    out
}

/// Size of the largest set of pairwise compatible claims.
fn max_clique(claims: &[&Claim]) -> usize {
    let k = claims.len();
    let adj: Vec<u64> = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i && compatible(claims[i], claims[j]))
                .fold(0u64, |m, j| m | 1 << j)
        })
        .collect();
    let mut best = 0;
    grow(
        &adj,
        0,
        if k == 64 { u64::MAX } else { (1u64 << k) - 1 },
        &mut best,
    );
    best
}

fn grow(adj: &[u64], size: usize, mut candidates: u64, best: &mut usize) {
    if candidates == 0 {
        *best = (*best).max(size);
        return;
    }
    while candidates != 0 {
        if size + candidates.count_ones() as usize <= *best {
            return;
        }
        let v = candidates.trailing_zeros() as usize;
        candidates &= !(1 << v);
        grow(adj, size + 1, candidates & adj[v], best);
    }
}
