use std::collections::{HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::rc::Rc;

use super::canonical::{exact_key, KeyContext, StateKey};
use super::classify::{classify_state, Classification, SearchBounds};
use crate::protocol::{format_votes, ExperimentOutcome, Transition, Value, VariantParams};
use crate::sim::{World, WorldError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyKind {
    /// Deduplicate by [`KeyContext::key`].
    Causal,
    /// Deduplicate by [`exact_key`].
    Exact,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreConfig {
    /// Experiments each process may start.
    pub budget: u32,
    /// Per-process budgets overriding `budget`.
    pub budgets: Option<Vec<u32>>,
    /// Identify states equal up to a permutation of interchangeable
    /// processes.
    pub symmetry: bool,
    /// Longest explored execution, in transitions.
    pub max_depth: Option<usize>,
    /// Stop after visiting this many states.
    pub max_states: Option<usize>,
    /// Classify every visited state.
    pub classify: bool,
    pub bounds: SearchBounds,
    pub key: KeyKind,
    /// Keep at most this many witnesses per violation class.
    pub max_witnesses: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            budget: 2,
            budgets: None,
            symmetry: false,
            max_depth: None,
            max_states: None,
            classify: false,
            bounds: SearchBounds::default(),
            key: KeyKind::Causal,
            max_witnesses: 5,
        }
    }
}

/// A schedule from the initial state and what went wrong at its end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub schedule: Vec<Transition>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub decided: [usize; 2],
    pub predecided: [usize; 2],
    pub open: usize,
    pub dangerous: usize,
    pub inconclusive: usize,
}

impl ClassCounts {
    pub fn add(&mut self, c: &Classification) {
        match c {
            Classification::Decided(v) => self.decided[v.index()] += 1,
            Classification::Predecided(v) => self.predecided[v.index()] += 1,
            Classification::Open => self.open += 1,
            Classification::Dangerous(_) => self.dangerous += 1,
            Classification::Inconclusive => self.inconclusive += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachabilityReport {
    pub params: VariantParams,
    pub votes: Vec<Value>,
    pub budgets: Vec<u32>,
    pub symmetry: bool,
    pub max_depth: Option<usize>,
    pub depth_reached: usize,
    pub states: usize,
    pub transitions: usize,
    /// States by decision-rule outcome: RED, BLUE, undecided.
    pub decided: [usize; 3],
    pub classes: Option<ClassCounts>,
    pub truncated: bool,
    /// Histories with cuts supporting both values.
    pub consistency: Vec<Witness>,
    pub consistency_count: usize,
    pub ccvs: Vec<Witness>,
    pub ccvs_count: usize,
    /// Reversals after which the post-value is not decided.
    pub sharpness: Vec<Witness>,
    pub sharpness_count: usize,
    /// Reversals checked for sharpness.
    pub reversals_checked: usize,
    pub dangerous: Vec<Witness>,
    pub errors: Vec<String>,
}

impl ReachabilityReport {
    pub fn violation_count(&self) -> usize {
        self.consistency_count
            + self.ccvs_count
            + self.classes.as_ref().map_or(0, |c| c.dangerous)
            + self.errors.len()
    }

    /// Line-delimited text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "texel-report v1 model={} f={} votes={} budgets={} symmetry={} depth={}",
            self.params.model(),
            self.params.f(),
            format_votes(&self.votes),
            self.budgets
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.symmetry,
            self.max_depth.map_or("unbounded".to_string(), |d| d.to_string())
        );
        let _ = writeln!(
            out,
            "STATES count={} transitions={} depth_reached={} truncated={}",
            self.states, self.transitions, self.depth_reached, self.truncated
        );
        let _ = writeln!(
            out,
            "DECISIONS red={} blue={} undecided={}",
            self.decided[0], self.decided[1], self.decided[2]
        );
        if let Some(c) = &self.classes {
            let _ = writeln!(
                out,
                "CLASSES decided_red={} decided_blue={} predecided_red={} predecided_blue={} open={} dangerous={} inconclusive={}",
                c.decided[0], c.decided[1], c.predecided[0], c.predecided[1], c.open, c.dangerous, c.inconclusive
            );
        }
        let _ = writeln!(
            out,
            "VIOLATIONS consistency={} ccvs={} sharpness={} reversals_checked={}",
            self.consistency_count, self.ccvs_count, self.sharpness_count, self.reversals_checked
        );
        for (kind, list) in [
            ("consistency", &self.consistency),
            ("ccvs", &self.ccvs),
            ("sharpness", &self.sharpness),
            ("dangerous", &self.dangerous),
        ] {
            for w in list {
                let schedule: Vec<String> = w.schedule.iter().map(|t| t.to_string()).collect();
                let _ = writeln!(
                    out,
                    "WITNESS kind={kind} detail={:?} schedule={:?}",
                    w.detail,
                    schedule.join("; ")
                );
            }
        }
        for e in &self.errors {
            let _ = writeln!(out, "ERROR {e:?}");
        }
        out
    }
}

impl fmt::Display for ReachabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct Path {
    step: Transition,
    parent: Option<Rc<Path>>,
}

fn schedule_of(path: &Option<Rc<Path>>) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut cur = path.clone();
    while let Some(node) = cur {
        out.push(node.step);
        cur = node.parent.clone();
    }
    out.reverse();
    out
}

impl ExploreConfig {
    /// The budget of every process of `params`.
    pub fn budgets_for(&self, params: &VariantParams) -> Vec<u32> {
        self.budgets
            .clone()
            .unwrap_or_else(|| vec![self.budget; params.n()])
    }
}

enum Keyer {
    Causal(KeyContext),
    Exact,
}

impl Keyer {
    fn key(&self, world: &World) -> StateKey {
        match self {
            Keyer::Causal(ctx) => ctx.key(world),
            Keyer::Exact => exact_key(world),
        }
    }
}

fn record(list: &mut Vec<Witness>, count: &mut usize, max: usize, path: &Option<Rc<Path>>, detail: String) {
    *count += 1;
    if list.len() < max {
        list.push(Witness {
            schedule: schedule_of(path),
            detail,
        });
    }
}

/// Exploration of every execution from the initial state: breadth-first
/// under a depth bound, depth-first otherwise. The visited states, and so
/// the report apart from witnesses and `depth_reached`, do not depend on the
/// order.
pub fn explore(
    params: VariantParams,
    votes: &[Value],
    config: &ExploreConfig,
) -> Result<ReachabilityReport, WorldError> {
    explore_with(params, votes, config, |_, _| {})
}

/// As [`explore`], calling `visit` on every newly visited state.
pub fn explore_with(
    params: VariantParams,
    votes: &[Value],
    config: &ExploreConfig,
    mut visit: impl FnMut(&World, Option<&Classification>),
) -> Result<ReachabilityReport, WorldError> {
    let root = World::new(params, votes, &[], 0)?;
    let mut report = ReachabilityReport {
        params,
        votes: votes.to_vec(),
        budgets: config.budgets_for(&params),
        symmetry: config.symmetry,
        max_depth: config.max_depth,
        depth_reached: 0,
        states: 0,
        transitions: 0,
        decided: [0; 3],
        classes: config.classify.then(ClassCounts::default),
        truncated: false,
        consistency: Vec::new(),
        consistency_count: 0,
        ccvs: Vec::new(),
        ccvs_count: 0,
        sharpness: Vec::new(),
        sharpness_count: 0,
        reversals_checked: 0,
        dangerous: Vec::new(),
        errors: Vec::new(),
    };
    let budgets = config.budgets_for(&params);
    if budgets.len() != params.n() {
        return Err(WorldError::VoteCount {
            expected: params.n(),
            actual: budgets.len(),
        });
    }
    let keyer = match config.key {
        KeyKind::Causal => Keyer::Causal(KeyContext::new(&root, Some(budgets.clone()), config.symmetry)),
        KeyKind::Exact => Keyer::Exact,
    };
    let top = budgets.iter().copied().max().unwrap_or(0);
    let breadth_first = config.max_depth.is_some();
    let mut seen: HashSet<StateKey> = HashSet::new();
    seen.insert(keyer.key(&root));
    let mut work: VecDeque<(World, Option<Rc<Path>>, usize)> = VecDeque::from([(root, None, 0)]);
    let max = config.max_witnesses;
    loop {
        let next = if breadth_first {
            work.pop_front()
        } else {
            work.pop_back()
        };
        let Some((world, path, depth)) = next else { break };
        report.states += 1;
        report.depth_reached = report.depth_reached.max(depth);
        match world.verdict() {
            Ok(Some(c)) => report.decided[c.index()] += 1,
            Ok(None) => report.decided[2] += 1,
            Err(e) => {
                let detail = e.to_string();
                record(
                    &mut report.consistency,
                    &mut report.consistency_count,
                    max,
                    &path,
                    detail,
                );
            }
        }
        let class = config.classify.then(|| classify_state(&world, &config.bounds));
        if let Some(c) = &class {
            report.classes.as_mut().unwrap().add(c);
            if let Classification::Dangerous(f) = c {
                let detail = format!("dominated by {f:?}");
                let mut n = 0;
                record(&mut report.dangerous, &mut n, max, &path, detail);
            }
        }
        visit(&world, class.as_ref());
        if config.max_states.is_some_and(|m| report.states >= m) {
            report.truncated = true;
            break;
        }
        if config.max_depth.is_some_and(|d| depth >= d) {
            if !world.enabled(top).is_empty() {
                report.truncated = true;
            }
            continue;
        }
        for t in world.enabled(top) {
            if let Transition::Start { process } = t {
                if world.proc(process).started >= budgets[process.index()] {
                    continue;
                }
            }
            report.transitions += 1;
            let mut succ = world.clone();
            let outcome = match succ.step(&t) {
                Ok(o) => o,
                Err(e) => {
                    report.errors.push(format!("{t}: {e}"));
                    continue;
                }
            };
            let child = Some(Rc::new(Path {
                step: t,
                parent: path.clone(),
            }));
            if outcome == ExperimentOutcome::Reversing {
                report.reversals_checked += 1;
                let post = succ.proc(t.actor()).vote.value();
                match succ.verdict() {
                    Ok(Some(c)) if c == post => {}
                    other => {
                        let detail = format!("after {t}: decision {other:?}, post-value {post}");
                        record(
                            &mut report.sharpness,
                            &mut report.sharpness_count,
                            max,
                            &child,
                            detail,
                        );
                    }
                }
                match succ.cut_space().ccvs_violations(&succ.dag()) {
                    Ok(v) if v.is_empty() => {}
                    Ok(v) => {
                        let detail = v[0].to_string();
                        record(&mut report.ccvs, &mut report.ccvs_count, max, &child, detail);
                    }
                    Err(e) => report.errors.push(e.to_string()),
                }
            }
            if seen.insert(keyer.key(&succ)) {
                work.push_back((succ, child, depth + 1));
            }
        }
    }
    Ok(report)
}
