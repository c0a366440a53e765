use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, standard_grid, train, Controller, EvalSpec, TrainerConfig};
use crate::agents::Variant;
use crate::error::{invalid, Result};
use crate::metrics::MetricsReport;
use crate::scenario::AnomalySpec;
use crate::sim::EpisodeDoc;

/// How to obtain the policy of one sweep entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAgent {
    pub variant: Variant,
    /// Saved controller to evaluate.
    #[serde(default)]
    pub checkpoint: Option<String>,
    /// Training config used to train the variant first when no checkpoint
    /// is given.
    #[serde(default)]
    pub train: Option<String>,
}

/// Grid evaluation of several agents against the no-control baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Episode document, relative to the sweep config.
    pub route: String,
    pub agents: Vec<SweepAgent>,
    #[serde(default = "standard_grid")]
    pub cells: Vec<(f64, f64)>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
}

fn default_seeds() -> usize {
    20
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(rel)
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.agents.is_empty() || cfg.cells.is_empty() || cfg.seeds == 0 {
            return Err(invalid("sweep needs agents, cells and at least one seed"));
        }
        Ok(cfg)
    }
}

/// Obtains the controller for a sweep entry: rule-based variants directly,
/// learned ones from a checkpoint or by training.
pub fn sweep_controller(agent: &SweepAgent, config_path: &Path) -> Result<Controller> {
    if !agent.variant.is_learned() {
        return Controller::rule(agent.variant);
    }
    if let Some(ck) = &agent.checkpoint {
        let c = Controller::load(&resolve(config_path, ck))?;
        if c.spec.variant != agent.variant {
            return Err(invalid(format!("checkpoint holds {}, sweep entry asks for {}", c.spec.variant, agent.variant)));
        }
        return Ok(c);
    }
    let Some(tc) = &agent.train else {
        return Err(invalid(format!("{} needs a checkpoint or a training config", agent.variant)));
    };
    let tc_path = resolve(config_path, tc);
    let mut cfg = TrainerConfig::load(&tc_path)?;
    cfg.agent.variant = agent.variant;
    cfg.agent.beta = None;
    let doc = EpisodeDoc::load(&cfg.episode_path(&tc_path))?;
    Ok(train(&cfg, &doc, |_| {})?.controller)
}

/// Runs every agent on every cell; one report row per (agent, cell).
pub fn run_sweep(cfg: &SweepConfig, config_path: &Path) -> Result<MetricsReport> {
    let doc = EpisodeDoc::load(&resolve(config_path, &cfg.route))?;
    let spec = EvalSpec {
        cells: cfg.cells.clone(),
        anomalies: cfg.anomalies.clone(),
        n_seeds: cfg.seeds,
        base_seed: cfg.base_seed,
        ..EvalSpec::default()
    };
    let mut report = MetricsReport::default();
    for agent in &cfg.agents {
        let controller = sweep_controller(agent, config_path)?;
        report.rows.extend(evaluate(&controller, &doc, &spec)?.into_iter().map(|c| c.row));
    }
    Ok(report)
}
