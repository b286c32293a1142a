//! Order independence of transitions at distinct processes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{Transition, Value, VariantParams};
use crate::sim::{World, WorldError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiamondViolation {
    pub first: Transition,
    pub second: Transition,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiamondReport {
    pub states: usize,
    pub pairs: usize,
    pub violations: Vec<DiamondViolation>,
}

/// Checks one pair of transitions: each stays enabled after the other, and
/// both orders reach the same state.
pub fn check_pair(world: &World, a: &Transition, b: &Transition) -> Result<(), String> {
    let run = |x: &Transition, y: &Transition| -> Result<World, String> {
        let mut w = world.clone();
        w.stop_recording();
        w.step(x).map_err(|e| format!("{x} not enabled: {e}"))?;
        w.step(y).map_err(|e| format!("{x} disables {y}: {e}"))?;
        Ok(w)
    };
    let ab = run(a, b)?;
    let ba = run(b, a)?;
    if ab.snapshot() != ba.snapshot() {
        return Err("orders reach different states".into());
    }
    Ok(())
}

/// Every pair of enabled transitions at distinct processes in every given
/// state, at most `max_pairs` per state.
pub fn check_diamond(states: &[World], budget: u32, max_pairs: Option<usize>) -> DiamondReport {
    let mut report = DiamondReport::default();
    for w in states {
        report.states += 1;
        let enabled = w.enabled(budget);
        let mut checked = 0;
        'pairs: for (i, a) in enabled.iter().enumerate() {
            for b in &enabled[i + 1..] {
                if a.actor() == b.actor() {
                    continue;
                }
                if max_pairs.is_some_and(|m| checked >= m) {
                    break 'pairs;
                }
                checked += 1;
                if let Err(reason) = check_pair(w, a, b) {
                    report.violations.push(DiamondViolation {
                        first: *a,
                        second: *b,
                        reason,
                    });
                }
            }
        }
        report.pairs += checked;
    }
    report
}

/// Checks `samples` pairs drawn from random states: random votes, a random
/// walk of up to `walk` steps, then two enabled transitions at distinct
/// processes.
pub fn sample_diamond(
    params: VariantParams,
    samples: usize,
    walk: usize,
    seed: u64,
) -> Result<DiamondReport, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DiamondReport::default();
    let budget = 3;
    while report.pairs < samples {
        let votes: Vec<Value> = (0..params.n()).map(|_| Value::ALL[rng.gen_range(0..2)]).collect();
        let mut w = World::new(params, &votes, &[], rng.gen())?;
        for _ in 0..rng.gen_range(0..=walk) {
            let enabled = w.enabled(budget);
            if enabled.is_empty() {
                break;
            }
            w.step(&enabled[rng.gen_range(0..enabled.len())])?;
        }
        report.states += 1;
        let enabled = w.enabled(budget);
        if enabled.is_empty() {
            continue;
        }
        let a = enabled[rng.gen_range(0..enabled.len())];
        let others: Vec<Transition> = enabled
            .iter()
            .copied()
            .filter(|b| b.actor() != a.actor())
            .collect();
        if others.is_empty() {
            continue;
        }
        let b = others[rng.gen_range(0..others.len())];
        report.pairs += 1;
        if let Err(reason) = check_pair(&w, &a, &b) {
            report.violations.push(DiamondViolation {
                first: a,
                second: b,
                reason,
            });
        }
    }
    Ok(report)
}
