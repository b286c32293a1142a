use std::fmt::{self, Write as _};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use texel_core::causality::{check_ccvs, CausalityError};
use texel_core::checker::{explore, sample_diamond, ExploreConfig, ReachabilityReport};
use texel_core::protocol::{format_votes, FaultModel, Value, VariantParams};
use texel_core::sim::{replay, run, HaltReason, RunReport, Scenario};
use texel_core::trace::{EndOutcome, EventKind, Trace};

/// Text to print and whether a violation occurred.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub text: String,
    pub violation: bool,
}

/// What a trace alone says about its run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub decided: Result<Option<Value>, CausalityError>,
    pub reversing: usize,
    pub messages: usize,
    pub events: usize,
}

impl Summary {
    pub fn of(trace: &Trace) -> Result<Self> {
        let world = replay(trace).context("replaying trace")?;
        let mut reversing = 0;
        let mut messages = 0;
        for e in &trace.events {
            match e.kind {
                EventKind::ExperimentEnd {
                    outcome: EndOutcome::Reversing,
                    ..
                } => reversing += 1,
                EventKind::QuerySent { .. } | EventKind::ResponseSent { .. } => messages += 1,
                _ => {}
            }
        }
        Ok(Summary {
            decided: world.verdict(),
            reversing,
            messages,
            events: trace.events.len(),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.decided {
            Ok(Some(v)) => write!(f, "decided={v}")?,
            Ok(None) => f.write_str("decided=none")?,
            Err(_) => f.write_str("decided=CONFLICT")?,
        }
        write!(
            f,
            " reversing={} messages={} events={}",
            self.reversing, self.messages, self.events
        )
    }
}

/// Safety problems of one run: an inconsistent history, CCVS violations,
/// or a correct process flipping on too few opposing responses.
fn violations(report: &RunReport) -> Vec<String> {
    let mut out = Vec::new();
    if let Err(e) = &report.decision {
        out.push(e.to_string());
    }
    match check_ccvs(&report.trace) {
        Ok(v) => out.extend(v.iter().map(|v| format!("ccvs: {v}"))),
        Err(e) => out.push(format!("ccvs: {e}")),
    }
    let params = report.trace.header.params;
    if params.model() == FaultModel::Byzantine {
        if let Some(m) = report
            .min_opposing_at_reversal()
            .filter(|&m| m <= params.trigger())
        {
            out.push(format!("a correct process reversed on {m} opposing responses"));
        }
    }
    out
}

pub fn cmd_run(sc: &Scenario, trace_path: &Path) -> Result<Outcome> {
    let report = run(sc)?;
    fs::write(trace_path, report.trace.to_text())
        .with_context(|| format!("writing {}", trace_path.display()))?;
    let summary = Summary::of(&report.trace)?;
    let problems = violations(&report);
    let mut text = format!("{summary} halt={} steps={}\n", report.halt, report.steps);
    for p in &problems {
        let _ = writeln!(text, "VIOLATION {p}");
    }
    let _ = writeln!(text, "trace {}", trace_path.display());
    Ok(Outcome {
        text,
        violation: report.halt == HaltReason::SafetyViolation || !problems.is_empty(),
    })
}

/// Parses `A..B` (half-open) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Range<u64>> {
    let range = match s.split_once("..") {
        Some((a, b)) => a.trim().parse()?..b.trim().parse()?,
        None => {
            let a: u64 = s.trim().parse()?;
            a..a + 1
        }
    };
    if range.is_empty() {
        bail!("empty seed range {s:?}");
    }
    Ok(range)
}

pub fn cmd_sweep(template: &Scenario, seeds: Range<u64>, traces: Option<&Path>) -> Result<Outcome> {
    if let Some(dir) = traces {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut decided = [0usize; 3];
    let mut at_start = 0;
    let mut steps = 0usize;
    let mut max_steps = 0;
    let mut reversing = 0usize;
    let mut ccvs = 0;
    let mut safety = 0;
    let mut halts: Vec<(HaltReason, usize)> = Vec::new();
    let mut first = Vec::new();
    let runs = seeds.end - seeds.start;
    for seed in seeds.clone() {
        let mut sc = template.clone();
        sc.seed = seed;
        let report = run(&sc)?;
        if let Some(dir) = traces {
            let path: PathBuf = dir.join(format!("trace-{seed}.txt"));
            fs::write(&path, report.trace.to_text())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        match report.decision {
            Ok(Some(v)) => {
                decided[v.index()] += 1;
                at_start += usize::from(report.steps == 0);
            }
            Ok(None) => decided[2] += 1,
            Err(_) => {}
        }
        steps += report.steps;
        max_steps = max_steps.max(report.steps);
        reversing += report.reversing;
        let problems = violations(&report);
        ccvs += problems.iter().filter(|p| p.starts_with("ccvs")).count();
        if !problems.is_empty() || report.halt == HaltReason::SafetyViolation {
            safety += 1;
            if first.is_empty() {
                first = problems
                    .into_iter()
                    .map(|p| format!("seed {seed}: {p}"))
                    .collect();
            }
        }
        match halts.iter_mut().find(|(h, _)| *h == report.halt) {
            Some((_, k)) => *k += 1,
            None => halts.push((report.halt, 1)),
        }
    }
    let mut text = String::new();
    let _ = writeln!(
        text,
        "texel-sweep v1 model={} f={} votes={} scheduler={} seeds={}..{}",
        template.params.model(),
        template.params.f(),
        format_votes(&template.votes),
        template.policy,
        seeds.start,
        seeds.end
    );
    let rate = |k: usize| k as f64 / runs as f64;
    let _ = writeln!(
        text,
        "RUNS count={runs} red={} blue={} undecided={} decided_rate={:.4} decided_at_start={:.4}",
        decided[0],
        decided[1],
        decided[2],
        rate(decided[0] + decided[1]),
        rate(at_start)
    );
    let _ = writeln!(
        text,
        "STEPS mean={:.2} max={max_steps} reversing_mean={:.3}",
        steps as f64 / runs as f64,
        reversing as f64 / runs as f64
    );
    let halts: Vec<String> = halts.iter().map(|(h, k)| format!("{h}={k}")).collect();
    let _ = writeln!(text, "HALTS {}", halts.join(" "));
    let _ = writeln!(text, "VIOLATIONS ccvs={ccvs} runs_with_violations={safety}");
    for p in first {
        let _ = writeln!(text, "FIRST {p}");
    }
    Ok(Outcome {
        text,
        violation: safety > 0,
    })
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub f: usize,
    /// Initial votes; every vector when `None`.
    pub votes: Option<Vec<Value>>,
    pub explore: ExploreConfig,
    pub diamond: Option<usize>,
    pub sharpness: bool,
    pub seed: u64,
}

pub fn cmd_check(opts: &CheckOptions) -> Result<Outcome> {
    let params = VariantParams::crash(opts.f)?;
    let mut text = String::new();
    let mut violation = false;
    if let Some(samples) = opts.diamond {
        let r = sample_diamond(params, samples, 40, opts.seed)?;
        let _ = writeln!(
            text,
            "DIAMOND f={} samples={} states={} counterexamples={}",
            opts.f,
            r.pairs,
            r.states,
            r.violations.len()
        );
        for v in r.violations.iter().take(5) {
            let _ = writeln!(text, "COUNTEREXAMPLE {} / {}: {}", v.first, v.second, v.reason);
        }
        violation |= !r.violations.is_empty();
        if !opts.sharpness && opts.votes.is_none() {
            return Ok(Outcome { text, violation });
        }
    }
    let vectors: Vec<Vec<Value>> = match &opts.votes {
        Some(v) => vec![v.clone()],
        None => (0..1u32 << params.n())
            .map(|bits| {
                (0..params.n())
                    .map(|i| Value::ALL[((bits >> i) & 1) as usize])
                    .collect()
            })
            .collect(),
    };
    let mut sharp = [0usize; 2];
    for votes in &vectors {
        let r: ReachabilityReport = explore(params, votes, &opts.explore)?;
        text.push_str(&r.to_text());
        if r.truncated {
            let _ = writeln!(
                text,
                "NOTICE exploration incomplete: stopped at {} states; raise --max-states or lower the budget",
                r.states
            );
        }
        sharp[0] += r.reversals_checked;
        sharp[1] += r.sharpness_count;
        violation |= r.violation_count() > 0;
        if opts.sharpness || opts.f == 1 {
            violation |= r.sharpness_count > 0;
        }
    }
    if opts.sharpness {
        let _ = writeln!(
            text,
            "SHARPNESS vectors={} reversals={} counterexamples={}",
            vectors.len(),
            sharp[0],
            sharp[1]
        );
    }
    Ok(Outcome { text, violation })
}

pub fn cmd_learn(trace_path: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(trace_path).with_context(|| format!("reading {}", trace_path.display()))?;
    let trace = Trace::parse(&text).with_context(|| format!("parsing {}", trace_path.display()))?;
    let summary = Summary::of(&trace)?;
    let mut world = replay(&trace)?;
    let (claims, learned) = world.probe();
    let oracle = world.verdict();
    let agree = match (learned, &oracle) {
        (None, _) => true,
        (Some(v), Ok(Some(o))) => v == *o,
        (Some(_), _) => false,
    };
    let mut out = format!("{summary}\n");
    let learned_text = learned.map_or("unknown".to_string(), |v| v.to_string());
    let oracle_text = match &oracle {
        Ok(Some(v)) => v.to_string(),
        Ok(None) => "undecided".into(),
        Err(_) => "CONFLICT".into(),
    };
    let _ = writeln!(
        out,
        "learned={learned_text} oracle={oracle_text} claims={} agree={agree}",
        claims.len()
    );
    Ok(Outcome {
        text: out,
        violation: !agree,
    })
}
