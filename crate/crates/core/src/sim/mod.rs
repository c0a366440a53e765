//! Seeded discrete-event simulation of buses on a single linear route.
//!
//! The simulator advances in fixed ticks. Each tick spawns passengers,
//! dispatches scheduled buses, resolves dwell/holding phase ends and moves
//! cruising buses leader-first so that followers can be clamped behind
//! their leader.

mod config;
mod engine;

pub use config::{DemandMatrix, EpisodeDoc, RouteSpec, SimConfig};
pub use engine::{dwell_time, init_episode};

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::AnomalySpec;

/// Distance a follower keeps behind its leader, in km (1 m).
pub const FOLLOW_GAP_KM: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    WaitingDispatch,
    Cruising,
    Dwelling,
    Holding,
    Finished,
}

impl Phase {
    /// Dispatched and still on the route.
    pub fn is_active(self) -> bool {
        matches!(self, Phase::Cruising | Phase::Dwelling | Phase::Holding)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::WaitingDispatch => "waiting-dispatch",
            Phase::Cruising => "cruising",
            Phase::Dwelling => "dwelling",
            Phase::Holding => "holding",
            Phase::Finished => "finished",
        }
    }
}

/// Snapshot taken when a bus reaches a stop, before any holding decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalInfo {
    pub stop: usize,
    pub time: f64,
    pub n_alight: usize,
    pub n_board: usize,
    pub left_behind: usize,
    pub onboard_after_alight: usize,
    pub waiting_before_board: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusState {
    pub id: usize,
    pub phase: Phase,
    /// km from the origin terminal.
    pub position: f64,
    /// Cruising speed on the current link in km/h, before anomaly multipliers.
    pub link_speed: f64,
    /// Multiplier applied by traffic-interruption anomalies (1 when unaffected).
    pub speed_multiplier: f64,
    /// Passenger ids currently on board.
    pub occupancy: Vec<u32>,
    pub next_stop: usize,
    pub phase_end_time: f64,
    pub cumulative_hold: f64,
    pub dispatch_time: f64,
    pub pending_hold: f64,
    pub awaiting_decision: bool,
    pub last_arrival: Option<ArrivalInfo>,
    /// Arrival time at the final terminal, if the bus completed the route.
    pub terminal_arrival_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passenger {
    pub origin: u16,
    pub dest: u16,
    pub arrival_time: f64,
    pub board_time: Option<f64>,
    pub alight_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopState {
    pub index: usize,
    /// FIFO of waiting passenger ids.
    pub queue: VecDeque<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    BusArrivedAtStop,
    BusDepartedStop,
    BusFinished,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub kind: EventKind,
    pub bus_id: usize,
    pub stop_index: usize,
    pub time: f64,
}

/// Occupancy of a bus as it leaves a (non-terminal) stop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureSample {
    pub bus: usize,
    pub stop: usize,
    pub time: f64,
    pub occupancy: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoardAlight {
    pub n_alight: usize,
    pub n_board: usize,
    pub left_behind: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SimRngs {
    pub dispatch: ChaCha8Rng,
    pub demand: ChaCha8Rng,
    pub speed: ChaCha8Rng,
    pub surge: ChaCha8Rng,
}

/// Complete dynamic world state of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub route: RouteSpec,
    /// Demand in effect for this episode (after any scenario scaling).
    pub demand: DemandMatrix,
    pub cfg: SimConfig,
    pub clock: f64,
    pub ticks: u64,
    pub buses: Vec<BusState>,
    pub stops: Vec<StopState>,
    pub passengers: Vec<Passenger>,
    /// Episode-level speed scale applied to every sampled link speed.
    pub speed_scale: f64,
    /// Installed demand-surge anomalies.
    pub surges: Vec<AnomalySpec>,
    pub departures: Vec<DepartureSample>,
    pub alighted: usize,
    pub(crate) rngs: SimRngs,
}

/// Passenger accounting used by the conservation invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassengerCounts {
    pub spawned: usize,
    pub waiting: usize,
    pub onboard: usize,
    pub alighted: usize,
}

impl PassengerCounts {
    pub fn conserved(&self) -> bool {
        self.spawned == self.waiting + self.onboard + self.alighted
    }
}
