//! Acceptance suite. Prints one line per criterion and exits nonzero when a
//! criterion fails for a reason other than a documented gap.

use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texel_core::causality::check_ccvs;
use texel_core::checker::{
    check_pair, explore, refinement_trace, Classification, ExploreConfig, ReachabilityReport, SearchBounds,
};
use texel_core::protocol::{format_votes, ProcessId, Value, VariantParams};
use texel_core::sim::{
    apply_schedule, construct_nonblocking_execution, construct_nontriviality_execution, run, Behavior,
    ConstructError, HaltReason, Policy, RunReport, Scenario, World,
};

struct Outcome {
    pass: bool,
    detail: String,
    /// Why a failure is expected, when it is.
    gap: Option<String>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            detail,
            gap: None,
        }
    }
}

fn all_votes(n: usize) -> Vec<Vec<Value>> {
    (0..1u32 << n)
        .map(|bits| (0..n).map(|i| Value::ALL[((bits >> i) & 1) as usize]).collect())
        .collect()
}

fn is_unanimous(votes: &[Value]) -> bool {
    votes.iter().all(|&v| v == votes[0])
}

fn crash1() -> VariantParams {
    VariantParams::crash(1).unwrap()
}

/// The crash-model sweep shared by criteria 2, 6, 8 and 10.
struct Sweep {
    runs: Vec<(VariantParams, u64)>,
    ccvs: usize,
    ccvs_errors: usize,
    refinement_bad: Vec<String>,
    decided_runs: usize,
    single_decide: usize,
    probes: usize,
    learned: usize,
    unsound: Vec<String>,
    quiescent: usize,
    quiescent_missed: Vec<String>,
    max_responses: [u32; 2],
}

fn crash_scenario(params: VariantParams, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a5);
    let n = params.n();
    let votes: Vec<Value> = (0..n).map(|_| Value::ALL[rng.gen_range(0..2)]).collect();
    let mut sc = Scenario::new(params, votes);
    sc.seed = seed;
    if seed % 4 == 3 {
        sc.policy = Policy::MinoritySteering;
    }
    let mut procs: Vec<u8> = (0..n as u8).collect();
    procs.shuffle(&mut rng);
    let crashes = rng.gen_range(0..=params.f());
    sc.crashes = procs[..crashes]
        .iter()
        .map(|&p| (ProcessId(p), rng.gen_range(0..20 * n)))
        .collect();
    sc
}

fn sweep() -> Sweep {
    let mut s = Sweep {
        runs: Vec::new(),
        ccvs: 0,
        ccvs_errors: 0,
        refinement_bad: Vec::new(),
        decided_runs: 0,
        single_decide: 0,
        probes: 0,
        learned: 0,
        unsound: Vec::new(),
        quiescent: 0,
        quiescent_missed: Vec::new(),
        max_responses: [0; 2],
    };
    let bounds = SearchBounds::default();
    let plan = [(crash1(), 10_000u64), (VariantParams::crash(2).unwrap(), 1_000)];
    for (k, (params, count)) in plan.into_iter().enumerate() {
        for seed in 0..count {
            s.runs.push((params, seed));
            let report = run(&crash_scenario(params, seed)).unwrap();
            match check_ccvs(&report.trace) {
                Ok(v) => s.ccvs += v.len(),
                Err(_) => s.ccvs_errors += 1,
            }
            let tag = format!("f={} seed={seed}", params.f());
            match refinement_trace(&report.trace, &bounds) {
                Ok(r) if r.is_well_formed() => {
                    let decides = r.decides().count();
                    if matches!(report.decision, Ok(Some(_)))
                        && !matches!(r.initial, Classification::Decided(_))
                    {
                        s.decided_runs += 1;
                        s.single_decide += usize::from(decides == 1);
                    }
                }
                Ok(r) => s.refinement_bad.push(format!("{tag}: malformed {r}")),
                Err(e) => s.refinement_bad.push(format!("{tag}: {e}")),
            }
            learner_checks(&mut s, &report, &tag);
            s.max_responses[k] = s.max_responses[k].max(report.max_responses());
        }
    }
    s
}

fn learner_checks(s: &mut Sweep, report: &RunReport, tag: &str) {
    for p in &report.probes {
        s.probes += 1;
        if let Some(v) = p.learned {
            s.learned += 1;
            if p.oracle != Ok(Some(v)) {
                s.unsound.push(format!(
                    "{tag} step {}: learned {v}, oracle {:?}",
                    p.step, p.oracle
                ));
            }
        }
    }
    if report.halt == HaltReason::Quiescent {
        s.quiescent += 1;
        let last = report.probes.last().and_then(|p| p.learned);
        if last.is_none() || Ok(last) != report.decision {
            s.quiescent_missed
                .push(format!("{tag}: learned {last:?}, oracle {:?}", report.decision));
        }
    }
}

/// Exhaustive reports for criteria 1, 4 and 7.
struct Exhaustive {
    budget_one: Vec<ReachabilityReport>,
    profile: ReachabilityReport,
}

fn exhaustive() -> Exhaustive {
    let budget_one = all_votes(4)
        .iter()
        .map(|v| {
            let cfg = ExploreConfig {
                budget: 1,
                symmetry: true,
                classify: true,
                ..ExploreConfig::default()
            };
            explore(crash1(), v, &cfg).unwrap()
        })
        .collect();
    let cfg = ExploreConfig {
        budgets: Some(vec![2, 1, 1, 1]),
        symmetry: true,
        ..ExploreConfig::default()
    };
    let profile = explore(
        crash1(),
        &[Value::Red, Value::Red, Value::Blue, Value::Blue],
        &cfg,
    )
    .unwrap();
    Exhaustive { budget_one, profile }
}

fn criterion_1(x: &Exhaustive) -> Outcome {
    let reports: Vec<&ReachabilityReport> = x.budget_one.iter().chain([&x.profile]).collect();
    let states: usize = reports.iter().map(|r| r.states).sum();
    let bad: usize = reports.iter().map(|r| r.consistency_count + r.errors.len()).sum();
    let truncated = reports.iter().any(|r| r.truncated);
    let clean = bad == 0 && !truncated;
    let mut o = Outcome::new(
        false,
        format!(
            "budget 1 over 16 vectors plus budgets 2,1,1,1 on RRBB: {states} states, {bad} with cuts for both values"
        ),
    );
    if clean {
        o.gap = Some(
            "budget 2 for every process over 16 vectors is beyond test time \
             (RRBB alone has over 10^6 states at budgets 2,2,1,1); see README"
                .into(),
        );
    }
    o
}

fn criterion_2(s: &Sweep) -> Outcome {
    Outcome::new(
        s.ccvs == 0 && s.ccvs_errors == 0,
        format!(
            "{} runs (10000 at f=1, 1000 at f=2): {} violations, {} oracle errors",
            s.runs.len(),
            s.ccvs,
            s.ccvs_errors
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut ok = 0;
    let mut decided_other = Vec::new();
    let mut other = Vec::new();
    for votes in all_votes(4).into_iter().filter(|v| !is_unanimous(v)) {
        let w = World::new(crash1(), &votes, &[], 0).unwrap();
        for target in Value::ALL {
            let name = format!("{}->{target}", format_votes(&votes));
            match construct_nontriviality_execution(&w, target) {
                Ok(s) => match apply_schedule(&w, &s).map(|a| a.verdict()) {
                    Ok(Ok(Some(c))) if c == target => ok += 1,
                    r => other.push(format!("{name}: {r:?}")),
                },
                Err(ConstructError::DecidedOther(c)) => {
                    let minority = votes.iter().filter(|&&v| v == target).count() == 1;
                    if minority && w.verdict() == Ok(Some(c)) {
                        decided_other.push(name);
                    } else {
                        other.push(format!("{name}: already decided {c}"));
                    }
                }
                Err(e) => other.push(format!("{name}: {e}")),
            }
        }
    }
    let mut o = Outcome::new(
        decided_other.is_empty() && other.is_empty(),
        format!(
            "{ok}/28 vector-target pairs decided; {} impossible, {} failed{}",
            decided_other.len(),
            other.len(),
            other.first().map(|e| format!(" ({e})")).unwrap_or_default()
        ),
    );
    if other.is_empty() && decided_other.len() == 8 {
        o.gap = Some(
            "the 8 minority targets of 3-1 vectors start decided for the majority \
             (3 of 4 > 2/3), so no execution can decide the minority"
                .into(),
        );
    }
    o
}

fn criterion_4(x: &Exhaustive) -> Outcome {
    let mut ok = 0;
    let mut bad = Vec::new();
    for votes in all_votes(4) {
        let w = World::new(crash1(), &votes, &[], 0).unwrap();
        for p in 0..4u8 {
            let failed = [ProcessId(p)];
            let good = construct_nonblocking_execution(&w, &failed).is_ok_and(|(c, s)| {
                s.iter().all(|t| t.actor() != failed[0])
                    && apply_schedule(&w, &s).is_ok_and(|a| a.verdict() == Ok(Some(c)))
            });
            if good {
                ok += 1;
            } else {
                bad.push(format!("{} without p{p}", format_votes(&votes)));
            }
        }
    }
    let classified: usize = x.budget_one.iter().map(|r| r.states).sum();
    let dangerous: usize = x
        .budget_one
        .iter()
        .map(|r| r.classes.as_ref().map_or(0, |c| c.dangerous + c.inconclusive))
        .sum();
    let clean = bad.is_empty() && dangerous == 0;
    let mut o = Outcome::new(
        false,
        format!(
            "{ok}/64 constructions replay to a decision; {classified} budget-1 states classified, \
             {dangerous} dangerous or inconclusive"
        ),
    );
    if clean {
        o.gap = Some(
            "the budget-2 classification is not exhaustive in-suite, for the same cost as criterion 1".into(),
        );
    }
    o
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs = 0;
    let mut violations = Vec::new();
    let mut seed = 0;
    while pairs < 1_000 {
        let params = if seed % 4 == 0 {
            VariantParams::crash(2).unwrap()
        } else {
            crash1()
        };
        let votes: Vec<Value> = (0..params.n()).map(|_| Value::ALL[rng.gen_range(0..2)]).collect();
        let mut w = World::new(params, &votes, &[], seed).unwrap();
        seed += 1;
        let steps = rng.gen_range(0..40);
        for _ in 0..steps {
            let enabled = w.enabled(3);
            if enabled.is_empty() {
                break;
            }
            w.step(&enabled[rng.gen_range(0..enabled.len())]).unwrap();
        }
        let enabled = w.enabled(3);
        if enabled.len() < 2 {
            continue;
        }
        let a = enabled[rng.gen_range(0..enabled.len())];
        let b = enabled[rng.gen_range(0..enabled.len())];
        if a.actor() == b.actor() {
            continue;
        }
        pairs += 1;
        if let Err(e) = check_pair(&w, &a, &b) {
            violations.push(format!("{a} / {b}: {e}"));
        }
    }
    Outcome::new(
        violations.is_empty(),
        format!("{pairs} sampled pairs, {} counterexamples", violations.len()),
    )
}

fn criterion_6(s: &Sweep) -> Outcome {
    Outcome::new(
        s.refinement_bad.is_empty() && s.single_decide == s.decided_runs,
        format!(
            "{} traces mapped, {} illegal or malformed{}; {}/{} deciding traces with exactly one DECIDE",
            s.runs.len(),
            s.refinement_bad.len(),
            s.refinement_bad
                .first()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default(),
            s.single_decide,
            s.decided_runs
        ),
    )
}

fn criterion_7(x: &Exhaustive) -> Outcome {
    let reports: Vec<&ReachabilityReport> = x.budget_one.iter().chain([&x.profile]).collect();
    let checked: usize = reports.iter().map(|r| r.reversals_checked).sum();
    let bad: usize = reports.iter().map(|r| r.sharpness_count).sum();
    Outcome::new(
        bad == 0 && checked > 0,
        format!("{checked} reversals in the criterion-1 explorations, {bad} not followed by a decision"),
    )
}

fn criterion_8(s: &Sweep) -> Outcome {
    Outcome::new(
        s.unsound.is_empty() && s.quiescent_missed.is_empty(),
        format!(
            "{} probes, {} learned, {} unsound; {} quiescent halts, {} missed{}",
            s.probes,
            s.learned,
            s.unsound.len(),
            s.quiescent,
            s.quiescent_missed.len(),
            s.unsound
                .iter()
                .chain(&s.quiescent_missed)
                .next()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default()
        ),
    )
}

/// Byzantine sweep for criteria 9 and 10.
struct ByzSweep {
    runs: usize,
    split: usize,
    weak_flips: usize,
    min_opposing: Option<u32>,
    max_responses: u32,
}

fn byzantine_sweep() -> ByzSweep {
    let params = VariantParams::byzantine(1).unwrap();
    let mut s = ByzSweep {
        runs: 0,
        split: 0,
        weak_flips: 0,
        min_opposing: None,
        max_responses: 0,
    };
    for behavior in Behavior::KINDS {
        for seed in 0..2_500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb12a);
            let votes: Vec<Value> = (0..params.n()).map(|_| Value::ALL[rng.gen_range(0..2)]).collect();
            let mut sc = Scenario::new(params, votes);
            sc.seed = seed;
            sc.byzantine = vec![(ProcessId(rng.gen_range(0..params.n() as u8)), behavior)];
            sc.max_steps = 4_000;
            let report = run(&sc).unwrap();
            s.runs += 1;
            s.split += usize::from(report.decision.is_err());
            if let Some(m) = report.min_opposing_at_reversal() {
                s.weak_flips += usize::from(m <= 2 * params.f() as u32);
                s.min_opposing = Some(s.min_opposing.map_or(m, |x| x.min(m)));
            }
            s.max_responses = s.max_responses.max(report.max_responses());
        }
    }
    s
}

fn criterion_9(b: &ByzSweep) -> Outcome {
    Outcome::new(
        b.split == 0 && b.weak_flips == 0,
        format!(
            "{} runs (4 behaviors x 2500): {} with both values decided, {} flips on <= 2f opposing, fewest opposing {:?}",
            b.runs, b.split, b.weak_flips, b.min_opposing
        ),
    )
}

fn criterion_10(s: &Sweep, b: &ByzSweep) -> Outcome {
    let [f1, f2] = s.max_responses;
    Outcome::new(
        f1 <= 2 && f2 <= 4 && b.max_responses <= 4,
        format!(
            "most responses behind a terminated experiment: {f1} at f=1 (bound 2), {f2} at f=2 (bound 4), \
             {} Byzantine f=1 (bound 4)",
            b.max_responses
        ),
    )
}

fn main() -> ExitCode {
    let mut unexpected = 0;
    let mut report = |id: usize, name: &str, start: Instant, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {name:<16} {status}  {}  [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if let Some(gap) = &o.gap {
            println!("             known gap: {gap}");
        }
        if !o.pass && o.gap.is_none() {
            unexpected += 1;
        }
    };

    let t = Instant::now();
    let x = exhaustive();
    report(1, "consistency", t, criterion_1(&x));
    let t = Instant::now();
    let s = sweep();
    report(2, "ccvs", t, criterion_2(&s));
    report(3, "non-triviality", Instant::now(), criterion_3());
    report(4, "non-blocking", Instant::now(), criterion_4(&x));
    report(5, "diamond", Instant::now(), criterion_5());
    report(6, "refinement", Instant::now(), criterion_6(&s));
    report(7, "f=1 sharpness", Instant::now(), criterion_7(&x));
    report(8, "learner", Instant::now(), criterion_8(&s));
    let t = Instant::now();
    let b = byzantine_sweep();
    report(9, "byzantine", t, criterion_9(&b));
    report(10, "termination", Instant::now(), criterion_10(&s, &b));

    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria failed unexpectedly");
        ExitCode::FAILURE
    }
}
