use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use texel_cli::{cmd_check, cmd_learn, cmd_run, cmd_sweep, parse_seeds, CheckOptions, Outcome, ScenarioFile};
use texel_core::checker::ExploreConfig;
use texel_core::protocol::parse_votes;
use texel_core::sim::Scenario;

/// Simulate, check and probe the Texel consensus protocol.
///
/// Exit status: 0 when clean, 1 when a safety violation or counterexample
/// was found, 2 on usage, parse or I/O errors.
#[derive(Parser)]
#[command(name = "texel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and print a summary.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Trace output path [default: texel-<seed>.trace].
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario template over a range of seeds.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Half-open seed range, e.g. 0..1000.
        #[arg(long, default_value = "0..1000")]
        seeds: String,
        /// Write every run's trace into this directory as trace-<seed>.txt.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Explore a crash-model instance exhaustively and check invariants.
    Check(CheckArgs),
    /// Replay a trace, probe at its end and compare with the oracle.
    Learn { trace: PathBuf },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML); flags override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// crash or byzantine.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    f: Option<usize>,
    /// Initial votes, one letter per process, e.g. RRBB.
    #[arg(long)]
    votes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// random or minority-steering.
    #[arg(long)]
    scheduler: Option<String>,
    /// Crash pK once the trace holds E events, as pK@E. Repeatable.
    #[arg(long = "crash")]
    crashes: Vec<String>,
    /// Make pK Byzantine, as pK=behavior. Repeatable.
    #[arg(long = "byz")]
    byzantine: Vec<String>,
    /// Experiments each process may start.
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Probe the learner every this many steps (0: only at the end).
    #[arg(long)]
    probe_every: Option<usize>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario> {
        let mut file = match &self.scenario {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ScenarioFile::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => {
                let votes = self
                    .votes
                    .as_deref()
                    .context("--votes or --scenario is required")?;
                ScenarioFile::new(self.f.unwrap_or(1), votes)
            }
        };
        if let Some(m) = &self.model {
            file.model = m.clone();
        }
        if let Some(f) = self.f {
            file.f = f;
        }
        if let Some(v) = &self.votes {
            file.votes = v.clone();
        }
        if let Some(s) = self.seed {
            file.seed = s;
        }
        if let Some(s) = &self.scheduler {
            file.scheduler = s.clone();
        }
        if !self.crashes.is_empty() {
            file.crashes = self.crashes.clone();
        }
        if !self.byzantine.is_empty() {
            file.byzantine = self.byzantine.clone();
        }
        if let Some(b) = self.budget {
            file.budget = b;
        }
        if let Some(m) = self.max_steps {
            file.max_steps = m;
        }
        if let Some(p) = self.probe_every {
            file.probe_every = p;
        }
        Ok(file.to_scenario()?)
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    f: usize,
    /// Initial votes; every vector when omitted.
    #[arg(long)]
    votes: Option<String>,
    /// Experiments each process may start.
    #[arg(long, default_value_t = 1)]
    budget: u32,
    /// Per-process budgets, e.g. 2,1,1,1; overrides --budget.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<u32>>,
    /// Merge states equal up to a permutation of interchangeable processes.
    #[arg(long)]
    symmetry: bool,
    /// Explore breadth-first up to this many transitions.
    #[arg(long)]
    depth: Option<usize>,
    /// Stop after this many states per vote vector.
    #[arg(long, default_value_t = 5_000_000)]
    max_states: usize,
    /// Classify every state and count DANGEROUS ones.
    #[arg(long)]
    classify: bool,
    /// Sample transition pairs at distinct processes instead of exploring.
    #[arg(long)]
    diamond: bool,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Check that every reversal is followed by a decision for its new
    /// value, over every vote vector unless --votes is given.
    #[arg(long = "f1-sharpness")]
    sharpness: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Run { scenario, trace } => {
            let sc = scenario.resolve()?;
            let path = trace.unwrap_or_else(|| PathBuf::from(format!("texel-{}.trace", sc.seed)));
            cmd_run(&sc, &path)
        }
        Command::Sweep {
            scenario,
            seeds,
            traces,
        } => cmd_sweep(&scenario.resolve()?, parse_seeds(&seeds)?, traces.as_deref()),
        Command::Check(args) => {
            let opts = CheckOptions {
                f: args.f,
                votes: args.votes.as_deref().map(parse_votes).transpose()?,
                explore: ExploreConfig {
                    budget: args.budget,
                    budgets: args.budgets,
                    symmetry: args.symmetry,
                    max_depth: args.depth,
                    max_states: Some(args.max_states),
                    classify: args.classify,
                    ..ExploreConfig::default()
                },
                diamond: args.diamond.then_some(args.samples),
                sharpness: args.sharpness,
                seed: args.seed,
            };
            let outcome = cmd_check(&opts)?;
            if let Some(path) = args.report {
                fs::write(&path, &outcome.text).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(outcome)
        }
        Command::Learn { trace } => cmd_learn(&trace),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            if outcome.violation {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
