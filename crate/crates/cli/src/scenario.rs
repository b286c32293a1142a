//! Scenario files: a TOML document mirroring [`Scenario`].
//!
//! ```toml
//! model = "crash"
//! f = 1
//! votes = "RRBB"
//! seed = 7
//! scheduler = "random"
//! crashes = ["p3@12"]
//! byzantine = []
//! budget = 4
//! max_steps = 10000
//! probe_every = 16
//! ```
//!
//! Only `f` and `votes` are required. A crash `pK@E` stops process `K` once
//! the trace holds `E` events; a Byzantine entry `pK=behavior` names one of
//! `lie`, `lie-red`, `lie-blue`, `equivocate`, `silent` or `spam`.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use texel_core::protocol::{format_votes, parse_votes, FaultModel, ProcessId, VariantParams};
use texel_core::sim::{Policy, Scenario};
use texel_core::trace::parse_assignment;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_model")]
    pub model: String,
    pub f: usize,
    pub votes: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheduler")]
    pub scheduler: String,
    #[serde(default)]
    pub crashes: Vec<String>,
    #[serde(default)]
    pub byzantine: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_probe_every")]
    pub probe_every: usize,
}

fn default_model() -> String {
    "crash".into()
}

fn default_scheduler() -> String {
    "random".into()
}

fn default_budget() -> u32 {
    4
}

fn default_max_steps() -> usize {
    10_000
}

fn default_probe_every() -> usize {
    16
}

impl ScenarioFile {
    pub fn new(f: usize, votes: &str) -> Self {
        ScenarioFile {
            model: default_model(),
            f,
            votes: votes.into(),
            seed: 0,
            scheduler: default_scheduler(),
            crashes: Vec::new(),
            byzantine: Vec::new(),
            budget: default_budget(),
            max_steps: default_max_steps(),
            probe_every: default_probe_every(),
        }
    }

    /// Parses a document. Errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
        file.to_scenario().map_err(|e| match line_of(text, e.key) {
            Some(line) => anyhow!("line {line}: {:#}", e.error),
            None => e.error,
        })?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    pub fn to_scenario(&self) -> Result<Scenario, KeyedError> {
        let model: FaultModel = keyed("model", self.model.parse().map_err(anyhow::Error::from))?;
        let votes = keyed("votes", parse_votes(&self.votes).map_err(anyhow::Error::from))?;
        let params = keyed(
            "f",
            VariantParams::with_process_count(model, self.f, votes.len()).map_err(anyhow::Error::from),
        )?;
        let mut sc = Scenario::new(params, votes);
        sc.seed = self.seed;
        sc.policy = keyed("scheduler", self.scheduler.parse().map_err(anyhow::Error::from))?;
        if matches!(sc.policy, Policy::Scripted(_)) {
            return Err(KeyedError {
                key: "scheduler",
                error: anyhow!("scripted schedules cannot be given in a scenario file"),
            });
        }
        sc.crashes = keyed("crashes", self.crashes.iter().map(|c| parse_crash(c)).collect())?;
        sc.byzantine = keyed(
            "byzantine",
            self.byzantine
                .iter()
                .map(|b| parse_assignment(b).map_err(anyhow::Error::from))
                .collect(),
        )?;
        sc.budget = self.budget;
        sc.max_steps = self.max_steps;
        sc.probe_every = self.probe_every;
        keyed("crashes", sc.validate().map_err(anyhow::Error::from))?;
        Ok(sc)
    }

    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        if matches!(sc.policy, Policy::Scripted(_)) {
            bail!("scripted schedules cannot be written to a scenario file");
        }
        Ok(ScenarioFile {
            model: sc.params.model().to_string(),
            f: sc.params.f(),
            votes: format_votes(&sc.votes),
            seed: sc.seed,
            scheduler: sc.policy.name().into(),
            crashes: sc.crashes.iter().map(|(p, at)| format!("{p}@{at}")).collect(),
            byzantine: sc.byzantine.iter().map(|(p, b)| format!("{p}={b}")).collect(),
            budget: sc.budget,
            max_steps: sc.max_steps,
            probe_every: sc.probe_every,
        })
    }
}

/// A conversion error and the field it concerns.
#[derive(Debug)]
pub struct KeyedError {
    pub key: &'static str,
    pub error: anyhow::Error,
}

impl std::fmt::Display for KeyedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {:#}", self.key, self.error)
    }
}

impl std::error::Error for KeyedError {}

fn keyed<T>(key: &'static str, r: Result<T>) -> Result<T, KeyedError> {
    r.map_err(|error| KeyedError { key, error })
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            l.trim_start()
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

/// Parses `p3@12`.
pub fn parse_crash(s: &str) -> Result<(ProcessId, usize)> {
    let (p, at) = s
        .split_once('@')
        .with_context(|| format!("crash {s:?} is not of the form pK@EVENT"))?;
    let at = at
        .parse()
        .with_context(|| format!("crash {s:?}: bad event index"))?;
    Ok((p.parse()?, at))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut file = ScenarioFile::new(1, "RRRBBB");
        file.model = "byzantine".into();
        file.seed = 3;
        file.byzantine = vec!["p5=equivocate".into()];
        file.scheduler = "minority-steering".into();
        let text = file.to_toml();
        let back = ScenarioFile::parse(&text).unwrap();
        assert_eq!(back, file);
        let sc = back.to_scenario().unwrap();
        assert_eq!(ScenarioFile::from_scenario(&sc).unwrap(), file);
    }

    #[test]
    fn defaults() {
        let file = ScenarioFile::parse("f = 1\nvotes = \"RRBB\"\n").unwrap();
        let sc = file.to_scenario().unwrap();
        assert_eq!(sc.params.n(), 4);
        assert_eq!(sc.policy, Policy::Random);
        assert_eq!(sc.budget, 4);
    }

    #[test]
    fn errors_name_lines() {
        let e = ScenarioFile::parse("f = 1\nseed = 2\nvotes = \"RRXB\"\n").unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        let e = ScenarioFile::parse("f = 1\nvotes = \"RRBB\"\ncrashes = [\"p9@1\"]\n").unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        let e = ScenarioFile::parse("f = 1\nvotes = RRBB\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }
}
