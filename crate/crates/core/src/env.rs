//! Multi-agent view of the simulator: observations at stop arrivals,
//! regularity rewards, asynchronous event graphs and per-agent replay.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::metrics::cv2;
use crate::sim::{Phase, SimState};

pub const OBS_DIM: usize = 4;
/// Ego node features: normalized observation plus action.
pub const EGO_FEATURES: usize = OBS_DIM + 1;
/// Event node features: normalized observation, action, stop offset, time offset.
pub const NODE_FEATURES: usize = OBS_DIM + 3;
/// Reward balance between regularity and intervention.
pub const DEFAULT_BALANCE_WEIGHT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub h_fwd: f64,
    pub h_bwd: f64,
    pub onboard: usize,
    pub waiting: usize,
    /// `[h_fwd / H, h_bwd / H, onboard / capacity, waiting / capacity]`.
    pub normalized: [f64; OBS_DIM],
}

impl Observation {
    pub fn new(h_fwd: f64, h_bwd: f64, onboard: usize, waiting: usize, headway: f64, capacity: usize) -> Self {
        let cap = capacity as f64;
        Self {
            h_fwd,
            h_bwd,
            onboard,
            waiting,
            normalized: [h_fwd / headway, h_bwd / headway, onboard as f64 / cap, waiting as f64 / cap],
        }
    }
}

/// Observation of a bus that has just arrived at a stop.
pub fn observe(state: &SimState, bus_id: usize) -> Result<Observation> {
    let bus = state
        .buses
        .get(bus_id)
        .ok_or_else(|| precondition(format!("no bus {bus_id}")))?;
    let info = match bus.last_arrival {
        Some(info) if bus.phase == Phase::Dwelling && info.time == state.clock => info,
        _ => {
            return Err(precondition(format!(
                "bus {bus_id} is not at a decision point (phase {})",
                bus.phase.as_str()
            )))
        }
    };
    let (h_fwd, h_bwd) = state.project_headways(bus_id);
    Ok(Observation::new(
        h_fwd,
        h_bwd,
        info.onboard_after_alight,
        info.waiting_before_board,
        state.route.dispatch_headway_mean,
        state.cfg.capacity,
    ))
}

/// Holding command: strength `a` in [0, 1] scaled by the maximum hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCmd {
    pub a: f64,
    pub max_hold: f64,
}

impl ActionCmd {
    pub fn new(a: f64, max_hold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(precondition(format!("action {a} outside [0, 1]")));
        }
        Ok(Self { a, max_hold })
    }

    pub fn hold_seconds(&self) -> f64 {
        self.a * self.max_hold
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub r: f64,
    pub cv2: f64,
    pub a: f64,
    pub w: f64,
}

impl RewardRecord {
    pub fn new(cv2: f64, a: f64, w: f64) -> Self {
        Self {
            r: -(1.0 - w) * cv2 - w * a,
            cv2,
            a,
            w,
        }
    }
}

/// Headway variability of the active fleet with the schedule headway as the
/// expected value.
pub fn fleet_cv2(state: &SimState) -> f64 {
    cv2(&state.fleet_headways(), state.route.dispatch_headway_mean)
}

/// Reward for an agent whose previous action was `a`, evaluated at the
/// current instant.
pub fn compute_reward(state: &SimState, a: f64, w: f64) -> RewardRecord {
    RewardRecord::new(fleet_cv2(state), a, w)
}

/// One logged control decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub bus: usize,
    pub stop: usize,
    pub time: f64,
    pub obs: Observation,
    pub action: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub bus: usize,
    pub obs: Observation,
    pub action: f64,
    /// Stop index offset relative to the ego decision (signed).
    pub d_stop: i64,
    /// Seconds after the ego decision.
    pub dt: f64,
}

/// Other buses' control events between two consecutive decisions of the ego.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGraph {
    pub ego: DecisionRecord,
    pub nodes: Vec<EventNode>,
    pub n_stops: usize,
    pub headway_scale: f64,
}

impl EventGraph {
    pub fn ego_features(&self) -> [f64; EGO_FEATURES] {
        let n = self.ego.obs.normalized;
        [n[0], n[1], n[2], n[3], self.ego.action]
    }

    pub fn node_features(&self) -> Vec<[f64; NODE_FEATURES]> {
        self.nodes
            .iter()
            .map(|e| {
                let n = e.obs.normalized;
                [
                    n[0],
                    n[1],
                    n[2],
                    n[3],
                    e.action,
                    e.d_stop as f64 / self.n_stops as f64,
                    e.dt / self.headway_scale,
                ]
            })
            .collect()
    }

    /// Number of control events including the ego's own.
    pub fn event_count(&self) -> usize {
        self.nodes.len() + 1
    }
}

/// Time-ordered record of every decision in an episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub records: Vec<DecisionRecord>,
}

impl DecisionLog {
    pub fn push(&mut self, rec: DecisionRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.time <= rec.time));
        self.records.push(rec);
    }

    /// Builds the event graph of `ego`: all other buses' decisions strictly
    /// inside `(ego.time, t_now)`.
    pub fn collect_events(&self, ego: &DecisionRecord, t_now: f64, n_stops: usize, headway_scale: f64) -> EventGraph {
        let start = self.records.partition_point(|r| r.time <= ego.time);
        let nodes = self.records[start..]
            .iter()
            .take_while(|r| r.time < t_now)
            .filter(|r| r.bus != ego.bus)
            .map(|r| EventNode {
                bus: r.bus,
                obs: r.obs,
                action: r.action,
                d_stop: r.stop as i64 - ego.stop as i64,
                dt: r.time - ego.time,
            })
            .collect();
        EventGraph {
            ego: *ego,
            nodes,
            n_stops,
            headway_scale,
        }
    }
}

/// Replay tuple `(s, a, r, s', g)`; `done` marks arrival at the final terminal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub bus: usize,
    pub s: Observation,
    pub a: f64,
    pub r: f64,
    pub s_next: Observation,
    pub done: bool,
    pub g: EventGraph,
    pub t_state: f64,
    pub t_next: f64,
}

/// Ring buffer of experiences for one agent.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    threshold: usize,
    items: Vec<(u64, Experience)>,
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, threshold: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            threshold,
            items: Vec::new(),
            head: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, exp: Experience) {
        let entry = (self.pushed, exp);
        self.pushed += 1;
        if self.items.len() < self.capacity {
            self.items.push(entry);
        } else {
            self.items[self.head] = entry;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Up to `c` distinct experiences drawn uniformly; empty unless more
    /// than `threshold` are stored.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, c: usize) -> Vec<&Experience> {
        if self.items.len() <= self.threshold || c == 0 {
            return Vec::new();
        }
        sample_indices(rng, self.items.len(), c.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i].1)
            .collect()
    }

    /// Sequence numbers of stored entries, oldest first.
    pub fn sequence_numbers(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.items.iter().map(|(s, _)| *s).collect();
        v.sort_unstable();
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter().map(|(_, e)| e)
    }

    /// Writes one JSON object per line.
    pub fn dump_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut entries: Vec<&(u64, Experience)> = self.items.iter().collect();
        entries.sort_by_key(|(s, _)| *s);
        for (_, e) in entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs() -> Observation {
        Observation::new(300.0, 300.0, 10, 5, 300.0, 120)
    }

    fn dec(bus: usize, stop: usize, time: f64) -> DecisionRecord {
        DecisionRecord {
            bus,
            stop,
            time,
            obs: obs(),
            action: 0.5,
        }
    }

    fn exp(i: usize) -> Experience {
        let g = DecisionLog::default().collect_events(&dec(0, 0, 0.0), 1.0, 10, 300.0);
        Experience {
            bus: 0,
            s: obs(),
            a: i as f64 / 1000.0,
            r: -0.1,
            s_next: obs(),
            done: false,
            g,
            t_state: 0.0,
            t_next: 1.0,
        }
    }

    #[test]
    fn reward_arithmetic() {
        assert_eq!(RewardRecord::new(0.0, 0.0, 0.2).r, 0.0);
        assert!((RewardRecord::new(1.0, 0.5, 0.2).r + 0.9).abs() < 1e-12);
    }

    #[test]
    fn events_exclude_ego_and_boundaries() {
        let mut log = DecisionLog::default();
        let ego = dec(0, 3, 100.0);
        log.push(dec(1, 1, 100.0));
        log.push(ego);
        log.push(dec(1, 2, 150.0));
        log.push(dec(0, 4, 160.0));
        log.push(dec(2, 5, 170.0));
        log.push(dec(3, 6, 199.0));
        log.push(dec(2, 6, 200.0));
        let g = log.collect_events(&ego, 200.0, 10, 300.0);
        let buses: Vec<usize> = g.nodes.iter().map(|n| n.bus).collect();
        assert_eq!(buses, vec![1, 2, 3]);
        assert!(g.nodes.iter().all(|n| n.dt > 0.0 && n.dt <= 100.0));
        assert_eq!(g.nodes[0].d_stop, -1);
        assert_eq!(g.event_count(), 4);
        let empty = log.collect_events(&ego, 140.0, 10, 300.0);
        assert!(empty.nodes.is_empty());
    }

    #[test]
    fn replay_threshold_is_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(10, 0);
        assert!(b.sample(&mut rng, 1).is_empty());
        b.push(exp(1));
        assert_eq!(b.sample(&mut rng, 1)[0].a, exp(1).a);

        let mut b = ReplayBuffer::new(10, 3);
        for i in 0..3 {
            b.push(exp(i));
        }
        assert!(b.sample(&mut rng, 2).is_empty());
        b.push(exp(3));
        assert_eq!(b.sample(&mut rng, 2).len(), 2);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(5, 0);
        for i in 0..12 {
            b.push(exp(i));
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.sequence_numbers(), vec![7, 8, 9, 10, 11]);
        let mut actions: Vec<f64> = b.iter().map(|e| e.a).collect();
        actions.sort_by(f64::total_cmp);
        assert_eq!(actions, (7..12).map(|i| i as f64 / 1000.0).collect::<Vec<_>>());
    }

    #[test]
    fn sample_without_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = ReplayBuffer::new(100, 0);
        for i in 0..20 {
            b.push(exp(i));
        }
        for _ in 0..50 {
            let mut got: Vec<u64> = b.sample(&mut rng, 20).iter().map(|e| (e.a * 1000.0).round() as u64).collect();
            got.sort_unstable();
            got.dedup();
            assert_eq!(got.len(), 20);
        }
    }

    #[test]
    fn jsonl_dump_lines() {
        let mut b = ReplayBuffer::new(4, 0);
        for i in 0..3 {
            b.push(exp(i));
        }
        let mut out = Vec::new();
        b.dump_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let back: Experience = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(back, exp(2));
    }

    #[test]
    fn action_bounds() {
        assert!(ActionCmd::new(1.2, 180.0).is_err());
        assert_eq!(ActionCmd::new(0.5, 180.0).unwrap().hold_seconds(), 90.0);
    }
}
