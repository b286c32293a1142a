//! The precedence order over experiments, consistent cuts of reversing
//! experiments, and the decision rule evaluated over them.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::learner::VectorClock;
use crate::protocol::{Nonce, ProcessId, Value, VariantParams};
use crate::trace::{EndOutcome, EventKind, Trace};

/// Refuse to enumerate more prefix vectors than this.
pub const CUT_LIMIT: u64 = 1 << 24;

/// The `seq`-th experiment (from 0) started by `process`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExperimentId {
    pub process: ProcessId,
    pub seq: u32,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.process, self.seq)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentStatus {
    Running,
    Aborted,
    Reaffirming,
    Reversing,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentRecord {
    pub id: ExperimentId,
    pub nonce: Nonce,
    pub pre_value: Value,
    pub post_value: Value,
    pub status: ExperimentStatus,
    pub start_index: usize,
    pub end_index: Option<usize>,
}

impl ExperimentRecord {
    pub fn is_reversing(&self) -> bool {
        self.status == ExperimentStatus::Reversing
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CausalityError {
    #[error("event {index}: {process} starts an experiment while {running} is running")]
    Overlapping {
        index: usize,
        process: ProcessId,
        running: ExperimentId,
    },
    #[error("event {index}: nonce {nonce} does not belong to a started experiment")]
    UnknownNonce { index: usize, nonce: Nonce },
    #[error("event {index}: experiment with nonce {nonce} is not running")]
    NotRunning { index: usize, nonce: Nonce },
    #[error("edge {from} -> {to} does not follow start order")]
    BackwardEdge { from: ExperimentId, to: ExperimentId },
    #[error("{0} prefix vectors exceed the enumeration limit")]
    TooManyCuts(u64),
    #[error("cuts supporting both values exist")]
    SafetyViolation { red: ConsistentCut, blue: ConsistentCut },
}

/// Fixed-width bit set over experiment indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn with_len(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn contains(&self, i: usize) -> bool {
        self.0.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }
}

/// Experiments in start order, the direct edges between them, and the
/// transitive closure of those edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecedesDag {
    n: usize,
    records: Vec<ExperimentRecord>,
    edges: Vec<(usize, usize)>,
    preds: Vec<Bits>,
}

impl PrecedesDag {
    /// `records` must be in start order and every edge must point from an
    /// earlier start to a later one.
    pub fn from_edges(
        n: usize,
        records: Vec<ExperimentRecord>,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<Self, CausalityError> {
        edges.sort_unstable();
        edges.dedup();
        let m = records.len();
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(a, b) in &edges {
            if a >= b {
                return Err(CausalityError::BackwardEdge {
                    from: records[a].id,
                    to: records[b].id,
                });
            }
            incoming[b].push(a);
        }
        let mut preds: Vec<Bits> = Vec::with_capacity(m);
        for inc in &incoming {
            let mut set = Bits::with_len(m);
            for &a in inc {
                set.insert(a);
                set.union_with(&preds[a]);
            }
            preds.push(set);
        }
        Ok(PrecedesDag {
            n,
            records,
            edges,
            preds,
        })
    }

    /// The order as encoded by start clocks: `a` precedes `b` iff `b`'s
    /// start clock counts `a`.
    pub fn from_clocks(n: usize, records: Vec<ExperimentRecord>, clocks: &[VectorClock]) -> Self {
        let mut edges = Vec::new();
        for (b, rb) in records.iter().enumerate() {
            for (a, ra) in records.iter().enumerate().take(b) {
                if clocks[b].get(ra.id.process) > ra.id.seq && ra.id != rb.id {
                    edges.push((a, b));
                }
            }
        }
        PrecedesDag::from_edges(n, records, edges).expect("clock edges follow start order")
    }

    pub fn process_count(&self) -> usize {
        self.n
    }

    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether experiment `a` precedes experiment `b` (indices into [`records`](Self::records)).
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.preds[b].contains(a)
    }

    pub fn index_of(&self, id: ExperimentId) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }
}

/// Builds the precedence order from a trace: same-process succession, plus
/// an edge from `x` to every experiment its query's receiver starts later.
pub fn build_dag(trace: &Trace) -> Result<PrecedesDag, CausalityError> {
    let n = trace.header.params.n();
    let mut records: Vec<ExperimentRecord> = Vec::new();
    let mut by_nonce: HashMap<Nonce, usize> = HashMap::new();
    let mut running: Vec<Option<usize>> = vec![None; n];
    let mut last: Vec<Option<usize>> = vec![None; n];
    let mut received: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for e in &trace.events {
        let Some(p) = e.process() else { continue };
        match &e.kind {
            EventKind::ExperimentStart { nonce, value, .. } => {
                if let Some(r) = running[p.index()] {
                    return Err(CausalityError::Overlapping {
                        index: e.index,
                        process: p,
                        running: records[r].id,
                    });
                }
                let idx = records.len();
                let seq = last[p.index()].map_or(0, |l| records[l].id.seq + 1);
                if let Some(l) = last[p.index()] {
                    edges.push((l, idx));
                }
                edges.extend(received[p.index()].iter().map(|&a| (a, idx)));
                records.push(ExperimentRecord {
                    id: ExperimentId { process: p, seq },
                    nonce: *nonce,
                    pre_value: *value,
                    post_value: *value,
                    status: ExperimentStatus::Running,
                    start_index: e.index,
                    end_index: None,
                });
                by_nonce.insert(*nonce, idx);
                running[p.index()] = Some(idx);
                last[p.index()] = Some(idx);
            }
            EventKind::QueryDelivered { nonce, .. } => {
                let &x = by_nonce.get(nonce).ok_or(CausalityError::UnknownNonce {
                    index: e.index,
                    nonce: *nonce,
                })?;
                received[p.index()].push(x);
            }
            EventKind::ResponseDelivered { sender, nonce, .. } => {
                if !by_nonce.contains_key(nonce) && !trace.header.is_faulty(*sender) {
                    return Err(CausalityError::UnknownNonce {
                        index: e.index,
                        nonce: *nonce,
                    });
                }
            }
            EventKind::ExperimentEnd {
                nonce,
                outcome,
                value,
            } => {
                let x = by_nonce
                    .get(nonce)
                    .copied()
                    .filter(|&x| running[p.index()] == Some(x))
                    .ok_or(CausalityError::NotRunning {
                        index: e.index,
                        nonce: *nonce,
                    })?;
                let rec = &mut records[x];
                rec.post_value = *value;
                rec.end_index = Some(e.index);
                rec.status = match outcome {
                    EndOutcome::Aborted => ExperimentStatus::Aborted,
                    EndOutcome::Reaffirming => ExperimentStatus::Reaffirming,
                    EndOutcome::Reversing => ExperimentStatus::Reversing,
                };
                running[p.index()] = None;
            }
            _ => {}
        }
    }
    PrecedesDag::from_edges(n, records, edges)
}

/// Per-process number of included reversing experiments, in start order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConsistentCut {
    pub prefix: Vec<u32>,
}

impl fmt::Display for ConsistentCut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, k) in self.prefix.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Reversal {
    record: usize,
    post: Value,
    /// Number of reversing experiments of each process that precede this one.
    need: Vec<u32>,
}

/// A reversing experiment outside a supporting cut, run by a process that
/// supports the cut's value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CcvsViolation {
    pub cut: ConsistentCut,
    pub value: Value,
    pub experiment: ExperimentId,
}

impl fmt::Display for CcvsViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cut {} supports {} but {} reverses it",
            self.cut, self.value, self.experiment
        )
    }
}

/// Everything the decision rule needs: initial votes, which processes are
/// counted, and each process's reversing experiments with their pasts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutSpace {
    initial: Vec<Value>,
    counted: Vec<bool>,
    threshold: usize,
    reversals: Vec<Vec<Reversal>>,
}

impl CutSpace {
    pub fn new(dag: &PrecedesDag, initial: &[Value], counted: &[bool], threshold: usize) -> Self {
        let n = dag.process_count();
        let mut reversals: Vec<Vec<Reversal>> = vec![Vec::new(); n];
        let rev_idx: Vec<usize> = (0..dag.len())
            .filter(|&i| dag.records[i].is_reversing())
            .collect();
        for &i in &rev_idx {
            let mut need = vec![0u32; n];
            for &j in &rev_idx {
                if dag.precedes(j, i) {
                    need[dag.records[j].id.process.index()] += 1;
                }
            }
            let rec = &dag.records[i];
            reversals[rec.id.process.index()].push(Reversal {
                record: i,
                post: rec.post_value,
                need,
            });
        }
        CutSpace {
            initial: initial.to_vec(),
            counted: counted.to_vec(),
            threshold,
            reversals,
        }
    }

    pub fn for_trace(trace: &Trace) -> Result<(PrecedesDag, CutSpace), CausalityError> {
        let dag = build_dag(trace)?;
        let h = &trace.header;
        let space = CutSpace::new(&dag, &h.votes, &h.counted(), h.params.decide_threshold());
        Ok((dag, space))
    }

    pub fn reversal_count(&self) -> usize {
        self.reversals.iter().map(Vec::len).sum()
    }

    /// Number of prefix vectors the enumeration visits.
    pub fn candidate_count(&self) -> u64 {
        self.reversals
            .iter()
            .fold(1u64, |acc, r| acc.saturating_mul(r.len() as u64 + 1))
    }

    pub fn is_closed(&self, prefix: &[u32]) -> bool {
        self.reversals.iter().enumerate().all(|(p, revs)| {
            let k = prefix[p] as usize;
            k == 0
                || revs[k - 1]
                    .need
                    .iter()
                    .zip(prefix)
                    .all(|(need, have)| need <= have)
        })
    }

    /// Every consistent cut, the empty one first.
    pub fn cuts(&self) -> Result<impl Iterator<Item = ConsistentCut> + '_, CausalityError> {
        let total = self.candidate_count();
        if total > CUT_LIMIT {
            return Err(CausalityError::TooManyCuts(total));
        }
        let n = self.reversals.len();
        let mut next = Some(vec![0u32; n]);
        let odometer = std::iter::from_fn(move || {
            let current = next.take()?;
            let mut succ = current.clone();
            for p in 0..n {
                if (succ[p] as usize) < self.reversals[p].len() {
                    succ[p] += 1;
                    next = Some(succ);
                    break;
                }
                succ[p] = 0;
            }
            Some(current)
        });
        Ok(odometer
            .filter(|v| self.is_closed(v))
            .map(|prefix| ConsistentCut { prefix }))
    }

    /// Value supported by process `p` on `cut`.
    pub fn support_of(&self, cut: &ConsistentCut, p: usize) -> Value {
        match cut.prefix[p] {
            0 => self.initial[p],
            k => self.reversals[p][k as usize - 1].post,
        }
    }

    /// Counted supporters per value, indexed by [`Value::index`].
    pub fn support(&self, cut: &ConsistentCut) -> [usize; 2] {
        let mut t = [0; 2];
        for p in 0..self.initial.len() {
            if self.counted[p] {
                t[self.support_of(cut, p).index()] += 1;
            }
        }
        t
    }

    /// The cut containing every reversing experiment.
    pub fn full_cut(&self) -> ConsistentCut {
        ConsistentCut {
            prefix: self.reversals.iter().map(|r| r.len() as u32).collect(),
        }
    }

    /// Some cut supporting `c` with at least the decision threshold.
    pub fn supporting_cut(&self, c: Value) -> Result<Option<ConsistentCut>, CausalityError> {
        let full = self.full_cut();
        if self.support(&full)[c.index()] >= self.threshold {
            return Ok(Some(full));
        }
        Ok(self
            .cuts()?
            .find(|cut| self.support(cut)[c.index()] >= self.threshold))
    }

    /// The decided value, if any; cuts supporting both values are an error.
    pub fn decision(&self) -> Result<Option<Value>, CausalityError> {
        let mut found: [Option<ConsistentCut>; 2] = [None, None];
        for cut in self.cuts()? {
            let t = self.support(&cut);
            for c in Value::ALL {
                if t[c.index()] >= self.threshold && found[c.index()].is_none() {
                    found[c.index()] = Some(cut.clone());
                }
            }
            if found.iter().all(Option::is_some) {
                let [red, blue] = found;
                return Err(CausalityError::SafetyViolation {
                    red: red.unwrap(),
                    blue: blue.unwrap(),
                });
            }
        }
        Ok(Value::ALL.into_iter().find(|c| found[c.index()].is_some()))
    }

    /// For every supporting cut and every counted supporter of its value, the
    /// first reversing experiment of that supporter outside the cut.
    pub fn ccvs_violations(&self, dag: &PrecedesDag) -> Result<Vec<CcvsViolation>, CausalityError> {
        let mut out = Vec::new();
        for cut in self.cuts()? {
            let t = self.support(&cut);
            for c in Value::ALL {
                if t[c.index()] < self.threshold {
                    continue;
                }
                for p in 0..self.initial.len() {
                    if !self.counted[p] || self.support_of(&cut, p) != c {
                        continue;
                    }
                    if let Some(r) = self.reversals[p].get(cut.prefix[p] as usize) {
                        out.push(CcvsViolation {
                            cut: cut.clone(),
                            value: c,
                            experiment: dag.records[r.record].id,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn enumerate_cuts(dag: &PrecedesDag) -> Result<Vec<ConsistentCut>, CausalityError> {
    let n = dag.process_count();
    let space = CutSpace::new(dag, &vec![Value::Red; n], &vec![true; n], usize::MAX);
    let cuts = space.cuts()?.collect();
    Ok(cuts)
}

pub fn cut_support(cut: &ConsistentCut, trace: &Trace) -> Result<[usize; 2], CausalityError> {
    let (_, space) = CutSpace::for_trace(trace)?;
    Ok(space.support(cut))
}

pub fn detect_decision(trace: &Trace, params: &VariantParams) -> Result<Option<Value>, CausalityError> {
    let dag = build_dag(trace)?;
    let space = CutSpace::new(
        &dag,
        &trace.header.votes,
        &trace.header.counted(),
        params.decide_threshold(),
    );
    space.decision()
}

pub fn check_ccvs(trace: &Trace) -> Result<Vec<CcvsViolation>, CausalityError> {
    let (dag, space) = CutSpace::for_trace(trace)?;
    space.ccvs_violations(&dag)
}
