use std::collections::{HashMap, HashSet};

use texel_core::checker::{
    check_diamond, classify_state, decidable_by, decidable_by_few, exact_key, explore, explore_with,
    refinement_trace, subsets, AbstractStep, Classification, Decidability, ExploreConfig, KeyContext,
    SearchBounds, StateKey,
};
use texel_core::protocol::{parse_votes, ProcessId, Transition, Value, VariantParams};
use texel_core::sim::{apply_schedule, construct_nonblocking_execution, run, Scenario, World};

fn params() -> VariantParams {
    VariantParams::crash(1).unwrap()
}

fn world(votes: &str) -> World {
    World::new(params(), &parse_votes(votes).unwrap(), &[], 0).unwrap()
}

fn config(budget: u32) -> ExploreConfig {
    ExploreConfig {
        budget,
        ..ExploreConfig::default()
    }
}

#[test]
fn unanimous_states_all_decided() {
    for budget in [0, 1] {
        let r = explore(params(), &parse_votes("RRRR").unwrap(), &config(budget)).unwrap();
        assert_eq!(r.decided, [r.states, 0, 0]);
        assert_eq!(r.violation_count(), 0);
    }
}

#[test]
fn budget_one_has_no_violations() {
    for votes in ["RRRB", "RRBB", "RBRB"] {
        let r = explore(params(), &parse_votes(votes).unwrap(), &config(1)).unwrap();
        assert!(!r.truncated);
        assert_eq!(r.violation_count(), 0, "{}", r.to_text());
        assert_eq!(r.sharpness_count, 0);
        assert!(r.reversals_checked > 0);
    }
}

#[test]
fn depth_bound_truncates_breadth_first() {
    let mut cfg = config(1);
    cfg.max_depth = Some(3);
    let r = explore(params(), &parse_votes("RRBB").unwrap(), &cfg).unwrap();
    assert!(r.truncated);
    assert_eq!(r.depth_reached, 3);
    let mut shallow = cfg.clone();
    shallow.max_depth = Some(1);
    let r1 = explore(params(), &parse_votes("RRBB").unwrap(), &shallow).unwrap();
    assert_eq!(r1.states, 5);
}

#[test]
fn symmetry_visits_one_state_per_orbit() {
    for votes in ["RRBB", "RRRB"] {
        let v = parse_votes(votes).unwrap();
        let root = World::new(params(), &v, &[], 0).unwrap();
        let ctx = KeyContext::new(&root, Some(vec![1; 4]), true);
        let mut full: HashSet<StateKey> = HashSet::new();
        let plain = explore_with(params(), &v, &config(1), |w, _| {
            full.insert(ctx.key(w));
        })
        .unwrap();
        let mut reduced: HashSet<StateKey> = HashSet::new();
        let mut cfg = config(1);
        cfg.symmetry = true;
        let sym = explore_with(params(), &v, &cfg, |w, _| {
            assert!(reduced.insert(ctx.key(w)));
        })
        .unwrap();
        assert_eq!(full, reduced);
        assert!(sym.states < plain.states);
        assert_eq!(sym.violation_count(), plain.violation_count());
    }
}

/// States sharing a key must agree on the decision and on the keys of
/// their successors, up to steps that leave the key unchanged (delivering
/// a stale message, for instance).
#[test]
fn causal_key_is_a_bisimulation() {
    let budgets = vec![1, 1, 1, 1];
    let root = world("RRBB");
    for symmetry in [false, true] {
        let ctx = KeyContext::new(&root, Some(budgets.clone()), symmetry);
        let successors = |w: &World, own: StateKey| -> Vec<StateKey> {
            let mut keys: Vec<StateKey> = w
                .enabled(1)
                .into_iter()
                .map(|t| {
                    let mut s = w.clone();
                    s.step(&t).unwrap();
                    ctx.key(&s)
                })
                .filter(|k| *k != own)
                .collect();
            keys.sort();
            keys.dedup();
            keys
        };
        let mut reps: HashMap<StateKey, World> = HashMap::new();
        let mut exact: HashMap<StateKey, StateKey> = HashMap::new();
        reps.insert(ctx.key(&root), root.clone());
        let mut frontier = vec![root.clone()];
        let mut merged = 0;
        for _ in 0..9 {
            let mut next = Vec::new();
            for w in &frontier {
                for t in w.enabled(1) {
                    let mut s = w.clone();
                    s.step(&t).unwrap();
                    let k = ctx.key(&s);
                    if let Some(&prev) = exact.get(&exact_key(&s)) {
                        assert_eq!(prev, k, "exact key finer than causal key");
                    }
                    exact.insert(exact_key(&s), k);
                    match reps.get(&k) {
                        Some(rep) => {
                            if rep.snapshot() != s.snapshot() {
                                merged += 1;
                                assert_eq!(rep.verdict(), s.verdict());
                                assert_eq!(successors(rep, k), successors(&s, k));
                            }
                        }
                        None => {
                            reps.insert(k, s.clone());
                            next.push(s);
                        }
                    }
                }
            }
            frontier = next;
        }
        assert!(merged > 1000, "only {merged} merged pairs compared");
    }
}

#[test]
fn decidable_by_examples() {
    let b = SearchBounds::default();
    let decided = world("RRRB");
    assert_eq!(
        decidable_by(&decided, &[ProcessId(0)], Value::Red, &b),
        Decidability::Yes(vec![])
    );
    let reds = [ProcessId(0), ProcessId(1), ProcessId(2)];
    assert!(decidable_by(&world("RRBB"), &reds, Value::Red, &b).is_yes());
    assert_eq!(
        decidable_by(&world("RRBB"), &[], Value::Blue, &b),
        Decidability::NoWithinBound
    );
    // The witness replays.
    let Decidability::Yes(s) = decidable_by(&world("RBBR"), &reds, Value::Blue, &b) else {
        panic!("three processes can decide BLUE");
    };
    assert_eq!(
        apply_schedule(&world("RBBR"), &s).unwrap().verdict(),
        Ok(Some(Value::Blue))
    );
    assert!(s.iter().all(|t| reds.contains(&t.actor())));
}

/// The exact search restricted to a few actors agrees with the generic
/// bounded search, which may also start new experiments.
#[test]
fn few_actor_search_agrees_with_generic_search() {
    let bounds = SearchBounds {
        depth: 24,
        extra_starts: 1,
        max_states: 200_000,
    };
    let mut compared = 0;
    let mut yes = 0;
    for seed in 0..40u64 {
        let mut sc = Scenario::new(
            params(),
            parse_votes(["RRBB", "RBRB", "BRRB"][seed as usize % 3]).unwrap(),
        );
        sc.seed = seed;
        sc.max_steps = 6 + (seed as usize * 7) % 30;
        let report = run(&sc).unwrap();
        let w = report.world;
        if w.verdict().unwrap().is_some() {
            continue;
        }
        for f in subsets(4, 1) {
            for c in Value::ALL {
                let fast = decidable_by_few(&w, &f, c).is_yes();
                let slow = decidable_by(&w, &f, c, &bounds).is_yes();
                assert_eq!(fast, slow, "seed {seed} F={f:?} c={c}");
                compared += 1;
                yes += fast as usize;
            }
        }
    }
    assert!(compared > 100 && yes > 0, "{compared} comparisons, {yes} yes");
}

#[test]
fn fresh_states_are_not_dangerous() {
    let b = SearchBounds::default();
    for votes in ["RRBB", "RBRB", "RRRB", "BBBR"] {
        let c = classify_state(&world(votes), &b);
        assert!(
            !matches!(c, Classification::Dangerous(_) | Classification::Inconclusive),
            "{votes}: {c:?}"
        );
    }
}

#[test]
fn nonblocking_schedules_replay_inside_classification() {
    let w = world("RRBB");
    for f in subsets(4, 1) {
        let (c, s) = construct_nonblocking_execution(&w, &f).unwrap();
        assert!(s.iter().all(|t: &Transition| !f.contains(&t.actor())));
        assert_eq!(apply_schedule(&w, &s).unwrap().verdict(), Ok(Some(c)));
    }
}

#[test]
fn classified_exploration_of_tiny_instance() {
    let cfg = ExploreConfig {
        budgets: Some(vec![1, 1, 0, 0]),
        classify: true,
        ..ExploreConfig::default()
    };
    let r = explore(params(), &parse_votes("RBRB").unwrap(), &cfg).unwrap();
    let classes = r.classes.clone().unwrap();
    assert_eq!(classes.dangerous, 0, "{}", r.to_text());
    assert_eq!(classes.inconclusive, 0);
    assert!(classes.predecided.iter().sum::<usize>() > 0);
    assert!(classes.open > 0);
}

#[test]
fn refinement_after_decision_stutters() {
    let mut sc = Scenario::new(params(), parse_votes("RBBR").unwrap());
    sc.seed = 5;
    let report = run(&sc).unwrap();
    let r = refinement_trace(&report.trace, &SearchBounds::default()).unwrap();
    assert!(r.is_well_formed());
    let first = r.decides().next();
    if let Some((at, _)) = first {
        assert!(r
            .steps
            .iter()
            .filter(|(i, _)| *i > at)
            .all(|(_, s)| *s == AbstractStep::Stutter));
    }
}

#[test]
fn diamond_on_explored_states() {
    let mut states = Vec::new();
    let mut cfg = config(1);
    cfg.max_states = Some(400);
    explore_with(params(), &parse_votes("RRBB").unwrap(), &cfg, |w, _| {
        states.push(w.clone())
    })
    .unwrap();
    let report = check_diamond(&states, 1, Some(8));
    assert!(report.pairs > 500);
    assert!(report.violations.is_empty(), "{:?}", report.violations.first());
}
