use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_episode, Controller, RunOptions};
use crate::agents::Variant;
use crate::error::{invalid, Result};
use crate::metrics::{compute_metrics, EpisodeMetrics, ReportRow};
use crate::scenario::{AnomalySpec, ScenarioDraw};
use crate::sim::EpisodeDoc;

/// Evaluation grid and seeding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    /// `(sigma_d, sigma_s)` cells.
    pub cells: Vec<(f64, f64)>,
    pub anomalies: Vec<AnomalySpec>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub balance_weight: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            cells: standard_grid(),
            anomalies: Vec::new(),
            n_seeds: 20,
            base_seed: 1_000,
            balance_weight: crate::env::DEFAULT_BALANCE_WEIGHT,
        }
    }
}

impl EvalSpec {
    /// Scenario draw and simulator seed for seed index `i` of a cell. The
    /// same draw is used for the treated agent and for the baseline.
    pub fn draw(&self, cell: (f64, f64), i: usize) -> (ScenarioDraw, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(i as u64 + 1);
        let draw = ScenarioDraw::sample(&mut rng, cell.0, cell.1, &self.anomalies);
        (draw, rng.random())
    }

    pub fn anomaly_label(&self) -> String {
        if self.anomalies.is_empty() {
            "none".to_string()
        } else {
            self.anomalies.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";")
        }
    }
}

/// The standard evaluation grid, five unique cells: `sigma_s` in
/// {0.1, 0.2, 0.3} at `sigma_d = 1`, and `sigma_d` in {1, 2, 3} at
/// `sigma_s = 0.1`.
pub fn standard_grid() -> Vec<(f64, f64)> {
    vec![(1.0, 0.1), (1.0, 0.2), (1.0, 0.3), (2.0, 0.1), (3.0, 0.1)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub sigma: (f64, f64),
    pub treated: Vec<EpisodeMetrics>,
    pub baseline: Vec<EpisodeMetrics>,
    pub row: ReportRow,
}

/// Runs `controller` and the no-control baseline on identical draws for
/// every cell of `spec`.
pub fn evaluate(controller: &Controller, doc: &EpisodeDoc, spec: &EvalSpec) -> Result<Vec<CellResult>> {
    if spec.n_seeds == 0 {
        return Err(invalid("evaluation needs at least one seed"));
    }
    for a in &spec.anomalies {
        a.validate(&doc.route, &doc.sim)?;
    }
    let nc = Controller::rule(Variant::Nc)?;
    let opts = RunOptions {
        balance_weight: spec.balance_weight,
        ..RunOptions::default()
    };
    let mut out = Vec::with_capacity(spec.cells.len());
    for &cell in &spec.cells {
        let mut treated = Vec::with_capacity(spec.n_seeds);
        let mut baseline = Vec::with_capacity(spec.n_seeds);
        for i in 0..spec.n_seeds {
            let (draw, seed) = spec.draw(cell, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            treated.push(compute_metrics(&run_episode(controller, doc, &draw, seed, &opts, &mut rng, None)?));
            baseline.push(compute_metrics(&run_episode(&nc, doc, &draw, seed, &opts, &mut rng, None)?));
        }
        let row = ReportRow::from_paired(
            controller.spec.variant.as_str(),
            &doc.route.name,
            cell,
            &spec.anomaly_label(),
            &treated,
            &baseline,
        )?;
        out.push(CellResult {
            sigma: cell,
            treated,
            baseline,
            row,
        });
    }
    Ok(out)
}
