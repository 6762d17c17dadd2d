//! Run configuration and the seed plumbing shared by the CLI and the
//! acceptance harness.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_aco, run_scan, AcoConfig, ScanConfig};
use crate::channel::ChannelParams;
use crate::ddpg::{evaluate, Agent, EvalSummary, RunResult, TrainConfig, TrainError};
use crate::env::{generate_map, EnvError, EnvParams, UrbanMap};
use crate::mdp::{MdpConfig, MdpError, StepRecord, UavEnv};
use crate::precoding::LinkConfig;
use crate::seed::{derive_indexed, derive_seed};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub realizations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { realizations: 25 }
    }
}

/// Everything a run needs; a run is reproducible from this file alone.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub env: EnvParams,
    pub channel: ChannelParams,
    pub link: LinkConfig,
    pub mdp: MdpConfig,
    pub train: TrainConfig,
    pub scan: ScanConfig,
    pub aco: AcoConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.channel.validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        self.aco.validate().map_err(ConfigError::Invalid)?;
        let m = &self.mdp;
        if !(m.flight_time > 0.0 && m.max_speed > 0.0 && m.kappa_cov > 0.0) || m.max_steps == 0 {
            return Err(ConfigError::Invalid(
                "mdp flight_time, max_speed, kappa_cov and max_steps must be positive".into(),
            ));
        }
        if !(self.link.bandwidth_hz > 0.0 && self.link.file_size_bits > 0.0) {
            return Err(ConfigError::Invalid("link bandwidth and file size must be positive".into()));
        }
        if self.eval.realizations == 0 {
            return Err(ConfigError::Invalid("eval.realizations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn map_seed(&self) -> u64 {
        derive_seed(self.seed, "map")
    }

    pub fn gt_seed(&self) -> u64 {
        derive_seed(self.seed, "gts")
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, "train")
    }

    /// Reset seeds for the evaluation realizations.
    pub fn realization_seeds(&self) -> Vec<u64> {
        (0..self.eval.realizations as u64)
            .map(|i| derive_indexed(self.seed, "eval", i))
            .collect()
    }

    pub fn generate_map(&self) -> Result<UrbanMap, EnvError> {
        generate_map(&self.env, self.map_seed(), self.gt_seed())
    }

    pub fn env<'m>(&self, map: &'m UrbanMap) -> UavEnv<'m> {
        UavEnv::new(map, self.channel.clone(), self.link.clone(), self.mdp.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Drl,
    Aco,
    Scan,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Drl, Strategy::Aco, Strategy::Scan];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Drl => "drl",
            Strategy::Aco => "aco",
            Strategy::Scan => "scan",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drl" => Ok(Strategy::Drl),
            "aco" => Ok(Strategy::Aco),
            "scan" => Ok(Strategy::Scan),
            other => Err(format!("unknown strategy '{other}' (expected drl, aco or scan)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("strategy drl needs a trained agent")]
    MissingAgent,
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Per-realization results plus the trajectory log of every run.
#[derive(Debug, Clone)]
pub struct StrategyEval {
    pub summary: EvalSummary,
    pub trajectories: Vec<Vec<StepRecord>>,
}

/// Runs `strategy` once per realization seed. DRL and ACO start where
/// [`UavEnv::reset`] places the UAV for that seed (ACO at its own cruise
/// altitude); Scan always starts at the lower-left corner.
pub fn evaluate_strategy(
    strategy: Strategy,
    cfg: &RunConfig,
    map: &UrbanMap,
    agent: Option<&Agent>,
) -> Result<StrategyEval, EvalError> {
    let mut env = cfg.env(map);
    let seeds = cfg.realization_seeds();
    let mut runs = Vec::with_capacity(seeds.len());
    let mut trajectories = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let run = match strategy {
            Strategy::Drl => {
                let agent = agent.ok_or(EvalError::MissingAgent)?;
                let mut r = evaluate(agent, &mut env, &[seed])?.runs.remove(0);
                r.realization = i;
                r
            }
            Strategy::Aco => {
                let p = env.reset(seed).position;
                let aco_seed = derive_indexed(cfg.seed, "aco", i as u64);
                run_aco(&mut env, &cfg.aco, [p.x, p.y], i, aco_seed)?.1
            }
            Strategy::Scan => run_scan(&mut env, &cfg.scan, i, seed)?,
        };
        trajectories.push(env.records().to_vec());
        runs.push(run);
    }
    Ok(StrategyEval {
        summary: EvalSummary::from_runs(runs),
        trajectories,
    })
}

/// Per-realization rows followed by a `mean` row.
pub fn write_eval_csv<W: std::io::Write>(mut out: W, strategy: Strategy, summary: &EvalSummary) -> std::io::Result<()> {
    writeln!(out, "strategy,realization,mission_time,completed,steps,served")?;
    for RunResult {
        realization,
        mission_time,
        completed,
        steps,
        served,
    } in &summary.runs
    {
        writeln!(out, "{strategy},{realization},{mission_time},{},{steps},{served}", u8::from(*completed))?;
    }
    let n = summary.runs.len().max(1) as f64;
    let mean_steps = summary.runs.iter().map(|r| r.steps as f64).sum::<f64>() / n;
    let mean_served = summary.runs.iter().map(|r| r.served as f64).sum::<f64>() / n;
    writeln!(
        out,
        "{strategy},mean,{},{},{mean_steps},{mean_served}",
        summary.mean_time, summary.completion_rate
    )
}
