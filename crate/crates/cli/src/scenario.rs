//! Scenario files: one JSON document holding every input a command may need.

use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use slfcert::candidates::{Candidate, CandidateSpec};
use slfcert::checker::GridSpec;
use slfcert::connector::{ConnectorInput, FcipGrid};
use slfcert::lqg::{LqgGrid, LqgProblem};
use slfcert::montecarlo::SimConfig;
use slfcert::sde::{builtin_example, SdeSystem, SystemSpec};

pub const SEED_ENV: &str = "SLFCERT_SEED";

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemRef {
    Builtin(String),
    Inline(SystemSpec),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimSection {
    #[serde(flatten)]
    pub config: SimConfig,
    pub x0: Option<Vec<f64>>,
    pub x0_list: Option<Vec<Vec<f64>>>,
    pub eta_list: Option<Vec<f64>>,
    #[serde(default)]
    pub hit_eps_sensitivity: bool,
}

fn default_range() -> f64 {
    0.6
}

fn default_points() -> usize {
    601
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothSection {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub inner: Option<String>,
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: Option<SystemRef>,
    pub candidate: Option<CandidateSpec>,
    #[serde(default)]
    pub rates: Vec<String>,
    pub grid: Option<GridSpec>,
    pub tol: Option<f64>,
    /// Connectors for the forward-completeness surrogate, one per coordinate.
    pub connectors: Option<Vec<ConnectorInput>>,
    pub fcip_grid: Option<FcipGrid>,
    pub lqg: Option<LqgProblem>,
    pub lqg_grid: Option<LqgGrid>,
    pub sim: Option<SimSection>,
    pub smooth: Option<SmoothSection>,
    pub seed: Option<u64>,
}

pub struct Loaded {
    pub scenario: Scenario,
    pub sha256: String,
    pub seed: Option<u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed precedence: command-line flag, then the environment, then the file.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| {
            format!("{SEED_ENV}={v:?} is not an unsigned integer")
        })?)),
        Err(_) => Ok(file),
    }
}

pub fn load(path: &Path, seed_flag: Option<u64>) -> anyhow::Result<Loaded> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let mut scenario: Scenario = serde_path_to_error::deserialize(de)
        .map_err(|e| anyhow::anyhow!("malformed scenario at {}: {}", e.path(), e.inner()))?;
    let seed = resolve_seed(seed_flag, scenario.seed)?;
    if let Some(s) = seed {
        if let Some(sim) = scenario.sim.as_mut() {
            sim.config.seed = s;
        }
        scenario
            .fcip_grid
            .get_or_insert_with(FcipGrid::default)
            .seed = s;
        scenario.lqg_grid.get_or_insert_with(LqgGrid::default).seed = s;
    }
    Ok(Loaded {
        scenario,
        sha256: hex(&Sha256::digest(&bytes)),
        seed,
    })
}

impl Scenario {
    pub fn system(&self) -> anyhow::Result<SdeSystem> {
        Ok(match &self.system {
            None => bail!("scenario has no `system`"),
            Some(SystemRef::Builtin(name)) => builtin_example(name)?,
            Some(SystemRef::Inline(spec)) => SdeSystem::from_spec(spec).context("system")?,
        })
    }

    pub fn candidate(&self) -> anyhow::Result<Candidate> {
        let spec = self
            .candidate
            .as_ref()
            .context("scenario has no `candidate`")?;
        Candidate::from_spec(spec).context("candidate")
    }
}
