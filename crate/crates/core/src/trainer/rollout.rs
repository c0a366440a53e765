use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Controller;
use crate::agents::Variant;
use crate::env::{compute_reward, observe, DecisionLog, DecisionRecord, Experience, Observation, ReplayBuffer};
use crate::error::Result;
use crate::metrics::cv2;
use crate::scenario::ScenarioDraw;
use crate::sim::{init_episode, DepartureSample, EpisodeDoc, EventKind, Passenger, Phase, SimState};

/// Per-episode knobs of a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Exploration std; 0 disables exploration.
    pub noise_std: f64,
    pub record_trajectory: bool,
    pub balance_weight: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            noise_std: 0.0,
            record_trajectory: false,
            balance_weight: crate::env::DEFAULT_BALANCE_WEIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub bus: usize,
    pub stop: usize,
    pub time: f64,
    pub obs: Observation,
    pub action: f64,
    pub hold_s: f64,
    /// Filled in at the bus's next stop arrival.
    pub reward: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub tick: u64,
    pub time: f64,
    pub bus: usize,
    pub position_km: f64,
    pub phase: Phase,
    /// Onboard count over capacity.
    pub occupancy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cv2Sample {
    pub time: f64,
    pub cv2: f64,
    pub n_headways: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub bus: usize,
    pub dispatch_time: f64,
    pub terminal_arrival: Option<f64>,
    pub cumulative_hold: f64,
}

/// Everything recorded during one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub variant: Variant,
    pub route: String,
    pub n_stops: usize,
    pub headway: f64,
    pub capacity: usize,
    pub draw: ScenarioDraw,
    pub decisions: Vec<DecisionEntry>,
    pub trajectory: Vec<TrajectorySample>,
    pub cv2: Vec<Cv2Sample>,
    pub passengers: Vec<Passenger>,
    pub departures: Vec<DepartureSample>,
    pub trips: Vec<TripRecord>,
    pub end_time: f64,
}

impl EpisodeLog {
    pub fn mean_reward(&self) -> Option<f64> {
        let r: Vec<f64> = self.decisions.iter().filter_map(|d| d.reward).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    /// Trajectory as CSV: `tick,bus_id,position_km,phase,occupancy`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("tick,bus_id,position_km,phase,occupancy\n");
        for s in &self.trajectory {
            out.push_str(&format!("{},{},{},{},{}\n", s.tick, s.bus, s.position_km, s.phase.as_str(), s.occupancy));
        }
        out
    }
}

/// Runs one episode under `controller`. When `buffers` is given, completed
/// experiences are pushed to the acting bus's buffer.
pub fn run_episode<R: Rng + ?Sized>(
    controller: &Controller,
    doc: &EpisodeDoc,
    draw: &ScenarioDraw,
    seed: u64,
    opts: &RunOptions,
    rng: &mut R,
    mut buffers: Option<&mut [ReplayBuffer]>,
) -> Result<EpisodeLog> {
    let mut state = init_episode(&doc.route, &doc.demand, &doc.sim, seed)?;
    draw.install(&mut state)?;
    let n_buses = state.buses.len();
    let n_stops = doc.route.n_stops();
    let headway = doc.route.dispatch_headway_mean;
    let max_hold = doc.sim.max_hold_s;
    let mut log = EpisodeLog {
        seed,
        variant: controller.spec.variant,
        route: doc.route.name.clone(),
        n_stops,
        headway,
        capacity: doc.sim.capacity,
        draw: draw.clone(),
        decisions: Vec::new(),
        trajectory: Vec::new(),
        cv2: Vec::new(),
        passengers: Vec::new(),
        departures: Vec::new(),
        trips: Vec::new(),
        end_time: 0.0,
    };
    let mut dlog = DecisionLog::default();
    let mut pending: Vec<Option<(DecisionRecord, usize)>> = vec![None; n_buses];
    let mut events = Vec::new();
    while !state.is_finished() {
        draw.on_tick(&mut state)?;
        events.clear();
        state.advance(&mut events)?;
        for ev in &events {
            if ev.kind != EventKind::BusArrivedAtStop {
                continue;
            }
            let (i, stop, now) = (ev.bus_id, ev.stop_index, ev.time);
            let last = stop + 1 == n_stops;
            let obs = observe(&state, i)?;
            if let Some((prev, idx)) = pending[i].take() {
                let rr = compute_reward(&state, prev.action, opts.balance_weight);
                log.decisions[idx].reward = Some(rr.r);
                if let Some(bufs) = buffers.as_deref_mut() {
                    bufs[i].push(Experience {
                        bus: i,
                        s: prev.obs,
                        a: prev.action,
                        r: rr.r,
                        s_next: obs,
                        done: last,
                        g: dlog.collect_events(&prev, now, n_stops, headway),
                        t_state: prev.time,
                        t_next: now,
                    });
                }
            }
            if last {
                continue;
            }
            let a = controller.agent_for(i).act(&obs, headway, max_hold, opts.noise_std, rng)?;
            let hold_s = a * max_hold;
            state.apply_holding(i, hold_s)?;
            let rec = DecisionRecord {
                bus: i,
                stop,
                time: now,
                obs,
                action: a,
            };
            dlog.push(rec);
            log.decisions.push(DecisionEntry {
                bus: i,
                stop,
                time: now,
                obs,
                action: a,
                hold_s,
                reward: None,
            });
            pending[i] = Some((rec, log.decisions.len() - 1));
        }
        record_tick(&state, &mut log, opts.record_trajectory);
    }
    log.end_time = state.clock;
    log.trips = state
        .buses
        .iter()
        .map(|b| TripRecord {
            bus: b.id,
            dispatch_time: b.dispatch_time,
            terminal_arrival: b.terminal_arrival_time,
            cumulative_hold: b.cumulative_hold,
        })
        .collect();
    log.departures = std::mem::take(&mut state.departures);
    log.passengers = std::mem::take(&mut state.passengers);
    Ok(log)
}

fn record_tick(state: &SimState, log: &mut EpisodeLog, trajectory: bool) {
    let headways = state.fleet_headways();
    log.cv2.push(Cv2Sample {
        time: state.clock,
        cv2: cv2(&headways, state.route.dispatch_headway_mean),
        n_headways: headways.len(),
    });
    if trajectory {
        let cap = state.cfg.capacity as f64;
        for b in state.active_buses() {
            log.trajectory.push(TrajectorySample {
                tick: state.ticks,
                time: state.clock,
                bus: b.id,
                position_km: b.position,
                phase: b.phase,
                occupancy: b.occupancy.len() as f64 / cap,
            });
        }
    }
}
