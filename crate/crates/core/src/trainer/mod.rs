//! Episode rollouts, the training loop and paired-seed evaluation.

mod eval;
mod rollout;
mod sweep;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

pub use eval::{evaluate, standard_grid, CellResult, EvalSpec};
pub use sweep::{run_sweep, sweep_controller, SweepAgent, SweepConfig};
pub use rollout::{run_episode, Cv2Sample, DecisionEntry, EpisodeLog, RunOptions, TrajectorySample, TripRecord};

use crate::agents::{Agent, AgentSpec, Batch, Learner, UpdateStats, Variant};
use crate::env::{EventGraph, Experience, ReplayBuffer};
use crate::error::{invalid, Result};
use crate::neural::Checkpoint;
use crate::scenario::{AnomalySpec, ScenarioDraw};
use crate::sim::EpisodeDoc;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Training run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Episode document, resolved relative to the config file.
    pub episode: String,
    pub episodes: usize,
    pub seed: u64,
    pub agent: AgentSpec,
    /// Reward balance `w` between regularity and holding.
    pub balance_weight: f64,
    /// `sigma_d` drawn uniformly from this range each training episode.
    pub sigma_d_range: (f64, f64),
    pub sigma_s_range: (f64, f64),
    pub anomalies: Vec<AnomalySpec>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episode: String::new(),
            episodes: 300,
            seed: 0,
            agent: AgentSpec::default(),
            balance_weight: crate::env::DEFAULT_BALANCE_WEIGHT,
            sigma_d_range: (0.0, 3.0),
            sigma_s_range: (0.0, 0.3),
            anomalies: Vec::new(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(invalid("episodes must be >= 1"));
        }
        for (name, (lo, hi)) in [("sigma_d_range", self.sigma_d_range), ("sigma_s_range", self.sigma_s_range)] {
            if !(lo >= 0.0 && hi >= lo) {
                return Err(invalid(format!("{name} must satisfy 0 <= lo <= hi")));
            }
        }
        if !(0.0..=1.0).contains(&self.balance_weight) {
            return Err(invalid("balance weight must lie in [0, 1]"));
        }
        self.agent.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Path of the episode document relative to the config at `config_path`.
    pub fn episode_path(&self, config_path: &Path) -> std::path::PathBuf {
        config_path.parent().unwrap_or(Path::new(".")).join(&self.episode)
    }
}

/// The policies driving a fleet: one shared agent, or one per bus.
#[derive(Clone, Debug)]
pub struct Controller {
    pub spec: AgentSpec,
    pub agents: Vec<Agent>,
}

impl Controller {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, n_buses: usize, rng: &mut R) -> Result<Self> {
        let n = if spec.shared_params || !spec.variant.is_learned() { 1 } else { n_buses.max(1) };
        let agents = (0..n).map(|_| Agent::new(spec.clone(), rng)).collect::<Result<_>>()?;
        Ok(Self { spec, agents })
    }

    /// Rule-based controller (no networks).
    pub fn rule(variant: Variant) -> Result<Self> {
        if variant.is_learned() {
            return Err(invalid(format!("{variant} needs trained networks")));
        }
        Self::new(AgentSpec::for_variant(variant), 1, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn agent_for(&self, bus: usize) -> &Agent {
        if self.agents.len() == 1 {
            &self.agents[0]
        } else {
            &self.agents[bus]
        }
    }

    pub fn learners(&self) -> impl Iterator<Item = &Learner> {
        self.agents.iter().filter_map(|a| a.learner.as_ref())
    }

    /// Writes one checkpoint directory per agent (`agent_<i>`) under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, l) in self.learners().enumerate() {
            l.to_checkpoint()?.save(&dir.join(format!("agent_{i}")))?;
        }
        let index = serde_json::json!({ "agents": self.agents.len(), "spec": self.spec });
        std::fs::write(dir.join("controller.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }

    /// Loads a controller saved by [`Controller::save`], or a single
    /// learner checkpoint directory.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().unwrap_or(Path::new(".")).to_path_buf() };
        let index = dir.join("controller.json");
        if !index.exists() {
            let learner = Learner::from_checkpoint(&Checkpoint::load(&dir)?)?;
            return Ok(Self {
                spec: learner.spec.clone(),
                agents: vec![Agent {
                    spec: learner.spec.clone(),
                    learner: Some(learner),
                }],
            });
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&index)?)?;
        let spec: AgentSpec = serde_json::from_value(v["spec"].clone())?;
        let n = v["agents"].as_u64().unwrap_or(1) as usize;
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let learner = if spec.variant.is_learned() {
                Some(Learner::from_checkpoint(&Checkpoint::load(&dir.join(format!("agent_{i}")))?)?)
            } else {
                None
            };
            agents.push(Agent { spec: spec.clone(), learner });
        }
        Ok(Self { spec, agents })
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub critic_loss: Option<f64>,
    pub mean_aht: f64,
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("episode,mean_reward,critic_loss,mean_aht\n");
    for r in rows {
        let loss = r.critic_loss.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.episode, r.mean_reward, loss, r.mean_aht));
    }
    out
}

pub struct TrainOutcome {
    pub controller: Controller,
    pub curves: Vec<CurveRow>,
    pub buffers: Vec<ReplayBuffer>,
    pub updates: u64,
}

/// Algorithm-style training loop: roll out an episode with exploration,
/// then, once more than `buffer_threshold` experiences are stored, run
/// `updates_per_episode` update rounds.
pub fn train(cfg: &TrainerConfig, doc: &EpisodeDoc, mut progress: impl FnMut(&CurveRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    doc.validate()?;
    let spec = &cfg.agent;
    if !spec.variant.is_learned() {
        return Err(invalid(format!("{} is not trainable", spec.variant)));
    }
    let n_buses = doc.route.n_services;
    let mut init_rng = stream(cfg.seed, 10);
    let mut episode_rng = stream(cfg.seed, 11);
    let mut act_rng = stream(cfg.seed, 12);
    let mut sample_rng = stream(cfg.seed, 13);
    let mut controller = Controller::new(spec.clone(), n_buses, &mut init_rng)?;
    let mut buffers: Vec<ReplayBuffer> = (0..n_buses).map(|_| ReplayBuffer::new(spec.buffer_capacity, 0)).collect();
    let mut curves = Vec::with_capacity(cfg.episodes);
    let mut updates = 0u64;
    let mut cursor = 0usize;
    for ep in 0..cfg.episodes {
        let sd = episode_rng.random_range(cfg.sigma_d_range.0..=cfg.sigma_d_range.1);
        let ss = episode_rng.random_range(cfg.sigma_s_range.0..=cfg.sigma_s_range.1);
        let draw = ScenarioDraw::sample(&mut episode_rng, sd, ss, &cfg.anomalies);
        let seed: u64 = episode_rng.random();
        let opts = RunOptions {
            noise_std: spec.noise_at(ep, cfg.episodes),
            record_trajectory: false,
            balance_weight: cfg.balance_weight,
        };
        let log = run_episode(&controller, doc, &draw, seed, &opts, &mut act_rng, Some(&mut buffers))?;
        let stored: usize = buffers.iter().map(ReplayBuffer::len).sum();
        let mut losses = Vec::new();
        if stored > spec.buffer_threshold {
            for _ in 0..spec.updates_per_episode {
                for stats in update_round(&mut controller, &buffers, &mut cursor, &mut sample_rng)? {
                    losses.push(stats.critic_loss);
                    updates += 1;
                }
            }
        }
        let holds: Vec<f64> = log.decisions.iter().map(|d| d.hold_s).collect();
        let row = CurveRow {
            episode: ep,
            mean_reward: log.mean_reward().unwrap_or(0.0),
            critic_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            mean_aht: if holds.is_empty() { 0.0 } else { holds.iter().sum::<f64>() / holds.len() as f64 },
        };
        progress(&row);
        curves.push(row);
    }
    Ok(TrainOutcome {
        controller,
        curves,
        buffers,
        updates,
    })
}

fn sample_batch<R: Rng + ?Sized>(buffer: &ReplayBuffer, c: usize, rng: &mut R) -> Result<Option<Batch>> {
    let exps = buffer.sample(rng, c);
    if exps.is_empty() {
        return Ok(None);
    }
    Batch::from_experiences(&exps).map(Some)
}

/// One update per learner. Shared parameters draw from the per-bus buffers
/// in round-robin order; independent learners use their own bus's buffer.
fn update_round<R: Rng + ?Sized>(controller: &mut Controller, buffers: &[ReplayBuffer], cursor: &mut usize, rng: &mut R) -> Result<Vec<UpdateStats>> {
    let c = controller.spec.batch_size;
    let n = buffers.len();
    let shared = controller.agents.len() == 1;
    let mut out = Vec::new();
    for (k, agent) in controller.agents.iter_mut().enumerate() {
        let Some(learner) = agent.learner.as_mut() else { continue };
        let (main, fresh) = if shared {
            let pick = (0..n).map(|j| (*cursor + j) % n).find(|&j| !buffers[j].is_empty());
            let Some(j) = pick else { continue };
            *cursor = (j + 1) % n;
            let f = (0..n).map(|d| (j + 1 + d) % n).find(|&m| !buffers[m].is_empty()).unwrap_or(j);
            (j, f)
        } else {
            (k, k)
        };
        let Some(batch) = sample_batch(&buffers[main], c, rng)? else { continue };
        let fresh_batch = if learner.meta.is_some() { sample_batch(&buffers[fresh], c, rng)? } else { None };
        out.push(learner.update(&batch, fresh_batch.as_ref(), rng)?);
    }
    Ok(out)
}

/// Git-style blob hash (`sha1("blob <len>\0" + bytes)`) of a fixture file.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Run manifest: full configuration plus the hash of the episode fixture.
pub fn run_manifest(cfg: &TrainerConfig, fixture_bytes: &[u8], updates: u64) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "fixture_hash": content_hash(fixture_bytes),
        "updates": updates,
        "crate_version": env!("CARGO_PKG_VERSION"),
    })
}

/// Mean meta weights grouped by the event count of each graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    /// event count -> (number of graphs, mean weight vector).
    pub by_event_count: BTreeMap<usize, (usize, Vec<f64>)>,
}

impl WeightProfile {
    pub fn from_graphs<'a>(learner: &Learner, graphs: impl IntoIterator<Item = &'a EventGraph>) -> Result<Self> {
        let mut sums: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        for g in graphs {
            let w = learner.distortion_weights(g)?;
            let entry = sums.entry(g.event_count()).or_insert_with(|| (0, vec![0.0; w.len()]));
            entry.0 += 1;
            for (s, x) in entry.1.iter_mut().zip(&w) {
                *s += x;
            }
        }
        for (n, v) in sums.values_mut() {
            v.iter_mut().for_each(|x| *x /= *n as f64);
        }
        Ok(Self { by_event_count: sums })
    }

    /// Mean weight on the top quarter of quantiles over graphs whose event
    /// count satisfies `pred`, weighting each group by its size.
    pub fn top_quartile_mean(&self, pred: impl Fn(usize) -> bool) -> Option<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (&ec, (n, w)) in &self.by_event_count {
            if !pred(ec) || w.is_empty() {
                continue;
            }
            let q = (w.len() / 4).max(1);
            let top = w[w.len() - q..].iter().sum::<f64>() / q as f64;
            total += top * *n as f64;
            count += n;
        }
        (count > 0).then(|| total / count as f64)
    }
}

/// Experiences collected by rolling out `controller` greedily.
pub fn collect_experiences(controller: &Controller, doc: &EpisodeDoc, draws: &[(ScenarioDraw, u64)]) -> Result<Vec<Experience>> {
    let n = doc.route.n_services;
    let mut buffers: Vec<ReplayBuffer> = (0..n).map(|_| ReplayBuffer::new(usize::MAX >> 1, 0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (draw, seed) in draws {
        run_episode(controller, doc, draw, *seed, &RunOptions::default(), &mut rng, Some(&mut buffers))?;
    }
    let mut all: Vec<Experience> = buffers.iter().flat_map(|b| b.iter().cloned()).collect();
    all.sort_by(|a, b| a.t_state.total_cmp(&b.t_state).then(a.bus.cmp(&b.bus)));
    Ok(all)
}
