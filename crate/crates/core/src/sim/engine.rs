use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::*;
use crate::error::{invalid, precondition, Result};
use crate::scenario::AnomalyKind;

const MIN_DISPATCH_GAP_S: f64 = 60.0;
const TIME_EPS: f64 = 1e-9;

const STREAM_DISPATCH: u64 = 1;
const STREAM_DEMAND: u64 = 2;
const STREAM_SPEED: u64 = 3;
const STREAM_SURGE: u64 = 4;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Single-door sequential service time at a stop.
pub fn dwell_time(n_alight: usize, n_board: usize, cfg: &SimConfig) -> f64 {
    cfg.alight_time_per_pax * n_alight as f64 + cfg.board_time_per_pax * n_board as f64
}

/// Builds the initial state: every bus waiting for dispatch at a cumulative
/// Gaussian headway (at least 60 s apart), empty stops, clock at zero.
pub fn init_episode(route: &RouteSpec, demand: &DemandMatrix, cfg: &SimConfig, seed: u64) -> Result<SimState> {
    route.validate()?;
    demand.validate()?;
    cfg.validate()?;
    if demand.n_stops() != route.n_stops() {
        return Err(invalid(format!(
            "demand covers {} stops, route has {}",
            demand.n_stops(),
            route.n_stops()
        )));
    }
    let mut rngs = SimRngs {
        dispatch: stream(seed, STREAM_DISPATCH),
        demand: stream(seed, STREAM_DEMAND),
        speed: stream(seed, STREAM_SPEED),
        surge: stream(seed, STREAM_SURGE),
    };

    let mut buses = Vec::with_capacity(route.n_services);
    let mut t = 0.0;
    for id in 0..route.n_services {
        if id > 0 {
            let z: f64 = rngs.dispatch.sample(StandardNormal);
            let gap = route.dispatch_headway_mean + route.dispatch_headway_std * z;
            t += gap.max(MIN_DISPATCH_GAP_S);
        }
        buses.push(BusState {
            id,
            phase: Phase::WaitingDispatch,
            position: 0.0,
            link_speed: 0.0,
            speed_multiplier: 1.0,
            occupancy: Vec::new(),
            next_stop: 0,
            phase_end_time: 0.0,
            cumulative_hold: 0.0,
            dispatch_time: t,
            pending_hold: 0.0,
            awaiting_decision: false,
            last_arrival: None,
            terminal_arrival_time: None,
        });
    }
    let stops = (0..route.n_stops())
        .map(|index| StopState {
            index,
            queue: Default::default(),
        })
        .collect();

    Ok(SimState {
        route: route.clone(),
        demand: demand.clone(),
        cfg: cfg.clone(),
        clock: 0.0,
        ticks: 0,
        buses,
        stops,
        passengers: Vec::new(),
        speed_scale: 1.0,
        surges: Vec::new(),
        departures: Vec::new(),
        alighted: 0,
        rngs,
    })
}

impl SimState {
    pub fn last_stop(&self) -> usize {
        self.route.n_stops() - 1
    }

    pub fn is_finished(&self) -> bool {
        self.clock >= self.cfg.horizon - TIME_EPS || self.buses.iter().all(|b| b.phase == Phase::Finished)
    }

    pub fn active_buses(&self) -> impl Iterator<Item = &BusState> {
        self.buses.iter().filter(|b| b.phase.is_active())
    }

    pub fn passenger_counts(&self) -> PassengerCounts {
        PassengerCounts {
            spawned: self.passengers.len(),
            waiting: self.stops.iter().map(|s| s.queue.len()).sum(),
            onboard: self.buses.iter().map(|b| b.occupancy.len()).sum(),
            alighted: self.alighted,
        }
    }

    /// Appends Poisson arrivals for every OD pair over an interval of `dt`
    /// seconds, stamped with the current clock.
    pub fn spawn_passengers(&mut self, dt: f64) {
        debug_assert!(dt > 0.0);
        let now = self.clock;
        let n = self.demand.n_stops();
        for i in 0..n {
            for j in (i + 1)..n {
                let rate = self.demand.rates[i][j];
                if rate <= 0.0 {
                    continue;
                }
                let lambda = rate * dt / 3600.0;
                let k = Poisson::new(lambda)
                    .map(|p| p.sample(&mut self.rngs.demand) as usize)
                    .unwrap_or(0);
                for _ in 0..k {
                    let id = self.passengers.len() as u32;
                    self.passengers.push(Passenger {
                        origin: i as u16,
                        dest: j as u16,
                        arrival_time: now,
                        board_time: None,
                        alight_time: None,
                    });
                    self.stops[i].queue.push_back(id);
                }
            }
        }
    }

    /// Alights passengers destined for `stop`, then boards the queue FIFO up
    /// to capacity. Passengers that do not fit stay queued.
    pub fn board_alight(&mut self, bus_id: usize, stop: usize) -> BoardAlight {
        let now = self.clock;
        let cap = self.cfg.capacity;
        let passengers = &mut self.passengers;
        let bus = &mut self.buses[bus_id];

        let before = bus.occupancy.len();
        bus.occupancy.retain(|&pid| {
            let p = &mut passengers[pid as usize];
            if p.dest as usize == stop {
                p.alight_time = Some(now);
                false
            } else {
                true
            }
        });
        let n_alight = before - bus.occupancy.len();
        self.alighted += n_alight;

        let queue = &mut self.stops[stop].queue;
        let mut n_board = 0;
        while bus.occupancy.len() < cap {
            let Some(pid) = queue.pop_front() else { break };
            passengers[pid as usize].board_time = Some(now);
            bus.occupancy.push(pid);
            n_board += 1;
        }
        BoardAlight {
            n_alight,
            n_board,
            left_behind: queue.len(),
        }
    }

    /// Schedules a hold of `hold_seconds` after the current dwell ends.
    pub fn apply_holding(&mut self, bus_id: usize, hold_seconds: f64) -> Result<()> {
        let max_hold = self.cfg.max_hold_s;
        let bus = self
            .buses
            .get_mut(bus_id)
            .ok_or_else(|| precondition(format!("no bus {bus_id}")))?;
        if !(hold_seconds.is_finite() && (0.0..=max_hold).contains(&hold_seconds)) {
            return Err(precondition(format!(
                "hold of {hold_seconds} s outside [0, {max_hold}]"
            )));
        }
        if bus.phase != Phase::Dwelling {
            return Err(precondition(format!(
                "bus {bus_id} is {} and cannot be held",
                bus.phase.as_str()
            )));
        }
        bus.pending_hold = hold_seconds;
        bus.cumulative_hold += hold_seconds;
        bus.awaiting_decision = false;
        Ok(())
    }

    fn sample_link_speed(&mut self) -> f64 {
        let [lo, hi] = self.cfg.speed_noise;
        let u: f64 = self.rngs.speed.random_range(lo..hi);
        self.cfg.nominal_speed * u * self.speed_scale
    }

    fn leader_of(&self, bus_id: usize) -> Option<usize> {
        (0..bus_id).rev().find(|&j| self.buses[j].phase.is_active())
    }

    fn depart(&mut self, i: usize, events: &mut Vec<SimEvent>) {
        let now = self.clock;
        let stop = self.buses[i].next_stop;
        let bus = &mut self.buses[i];
        bus.awaiting_decision = false;
        bus.pending_hold = 0.0;
        if stop == self.route.n_stops() - 1 {
            bus.phase = Phase::Finished;
            events.push(SimEvent {
                kind: EventKind::BusFinished,
                bus_id: i,
                stop_index: stop,
                time: now,
            });
            return;
        }
        self.departures.push(DepartureSample {
            bus: i,
            stop,
            time: now,
            occupancy: bus.occupancy.len(),
        });
        bus.phase = Phase::Cruising;
        bus.next_stop = stop + 1;
        events.push(SimEvent {
            kind: EventKind::BusDepartedStop,
            bus_id: i,
            stop_index: stop,
            time: now,
        });
        let speed = self.sample_link_speed();
        self.buses[i].link_speed = speed;
    }

    fn inject_surge(&mut self, stop: usize) {
        let now = self.clock;
        let n = self.route.n_stops();
        let mut extra = 0u32;
        for s in &self.surges {
            if s.kind == AnomalyKind::DemandSurge
                && s.targets.contains(&stop)
                && now >= s.window.0
                && now < s.window.1
            {
                extra += s.extra_pax;
            }
        }
        if extra == 0 || stop + 1 >= n {
            return;
        }
        let row = &self.demand.rates[stop];
        let total: f64 = row[stop + 1..].iter().sum();
        for _ in 0..extra {
            let dest = if total > 0.0 {
                let mut u: f64 = self.rngs.surge.random::<f64>() * total;
                let mut d = n - 1;
                for (j, &r) in row.iter().enumerate().skip(stop + 1) {
                    if r <= 0.0 {
                        continue;
                    }
                    if u < r {
                        d = j;
                        break;
                    }
                    u -= r;
                }
                d
            } else {
                self.rngs.surge.random_range(stop + 1..n)
            };
            let id = self.passengers.len() as u32;
            self.passengers.push(Passenger {
                origin: stop as u16,
                dest: dest as u16,
                arrival_time: now,
                board_time: None,
                alight_time: None,
            });
            self.stops[stop].queue.push_back(id);
        }
    }

    fn arrive(&mut self, i: usize, events: &mut Vec<SimEvent>) {
        let now = self.clock;
        let stop = self.buses[i].next_stop;
        self.buses[i].position = self.route.stop_positions[stop];
        events.push(SimEvent {
            kind: EventKind::BusArrivedAtStop,
            bus_id: i,
            stop_index: stop,
            time: now,
        });
        if !self.surges.is_empty() {
            self.inject_surge(stop);
        }
        let waiting_before_board = self.stops[stop].queue.len();
        let ba = self.board_alight(i, stop);
        let dwell = dwell_time(ba.n_alight, ba.n_board, &self.cfg);
        let last = stop == self.route.n_stops() - 1;
        let bus = &mut self.buses[i];
        bus.phase = Phase::Dwelling;
        bus.phase_end_time = now + dwell;
        bus.pending_hold = 0.0;
        bus.awaiting_decision = !last;
        bus.last_arrival = Some(ArrivalInfo {
            stop,
            time: now,
            n_alight: ba.n_alight,
            n_board: ba.n_board,
            left_behind: ba.left_behind,
            onboard_after_alight: bus.occupancy.len() - ba.n_board,
            waiting_before_board,
        });
        if last {
            bus.terminal_arrival_time = Some(now);
        }
    }

    /// Passengers reaching a stop while a bus is still serving it board
    /// directly; during dwelling each one extends the dwell by `t_b`.
    fn late_boarding(&mut self) {
        let now = self.clock;
        let cap = self.cfg.capacity;
        let t_b = self.cfg.board_time_per_pax;
        let last = self.route.n_stops() - 1;
        for i in 0..self.buses.len() {
            let phase = self.buses[i].phase;
            if !matches!(phase, Phase::Dwelling | Phase::Holding) {
                continue;
            }
            let stop = self.buses[i].next_stop;
            if stop == last {
                continue;
            }
            let queue = &mut self.stops[stop].queue;
            let bus = &mut self.buses[i];
            let mut n = 0;
            while bus.occupancy.len() < cap {
                let Some(pid) = queue.pop_front() else { break };
                self.passengers[pid as usize].board_time = Some(now);
                bus.occupancy.push(pid);
                n += 1;
            }
            if phase == Phase::Dwelling {
                bus.phase_end_time += t_b * n as f64;
            }
        }
    }

    /// Advances the clock by one tick and appends the events it produced.
    pub fn advance(&mut self, events: &mut Vec<SimEvent>) -> Result<()> {
        if self.clock >= self.cfg.horizon - TIME_EPS {
            return Err(precondition("clock already at horizon"));
        }
        let dt = self.cfg.tick;
        self.clock = (self.clock + dt).min(self.cfg.horizon);
        self.ticks += 1;
        let now = self.clock;

        self.spawn_passengers(dt);

        for i in 0..self.buses.len() {
            if self.buses[i].phase == Phase::WaitingDispatch && self.buses[i].dispatch_time <= now + TIME_EPS {
                let speed = self.sample_link_speed();
                let bus = &mut self.buses[i];
                bus.phase = Phase::Cruising;
                bus.position = 0.0;
                bus.next_stop = 0;
                bus.link_speed = speed;
            }
        }

        for i in 0..self.buses.len() {
            loop {
                let bus = &mut self.buses[i];
                match bus.phase {
                    Phase::Dwelling if bus.phase_end_time <= now + TIME_EPS => {
                        if bus.pending_hold > 0.0 {
                            bus.phase = Phase::Holding;
                            bus.phase_end_time += bus.pending_hold;
                            bus.pending_hold = 0.0;
                            bus.awaiting_decision = false;
                        } else {
                            self.depart(i, events);
                            break;
                        }
                    }
                    Phase::Holding if bus.phase_end_time <= now + TIME_EPS => {
                        self.depart(i, events);
                        break;
                    }
                    _ => break,
                }
            }
        }

        self.late_boarding();

        for i in 0..self.buses.len() {
            if self.buses[i].phase != Phase::Cruising {
                continue;
            }
            let allowed = self
                .leader_of(i)
                .map(|j| self.buses[j].position - FOLLOW_GAP_KM)
                .unwrap_or(f64::INFINITY);
            let bus = &self.buses[i];
            let step = bus.link_speed * bus.speed_multiplier * dt / 3600.0;
            let target = self.route.stop_positions[bus.next_stop];
            let pos = bus.position;
            if pos + step >= target && allowed >= target {
                self.arrive(i, events);
            } else {
                let moved = (pos + step).min(allowed).min(target);
                self.buses[i].position = moved.max(pos);
            }
        }

        if now >= self.cfg.horizon - TIME_EPS {
            for bus in self.buses.iter_mut() {
                if bus.phase != Phase::Finished {
                    bus.phase = Phase::Finished;
                    bus.awaiting_decision = false;
                    events.push(SimEvent {
                        kind: EventKind::BusFinished,
                        bus_id: bus.id,
                        stop_index: bus.next_stop,
                        time: now,
                    });
                }
            }
        }
        Ok(())
    }

    /// Projected forward and backward headways of `bus_id` in seconds.
    ///
    /// Gaps are converted to time at the nominal speed. A follower still
    /// waiting at the terminal contributes its remaining time to dispatch.
    /// Missing neighbours fall back to the scheduled headway.
    pub fn project_headways(&self, bus_id: usize) -> (f64, f64) {
        let v = self.cfg.nominal_speed;
        let sentinel = self.route.dispatch_headway_mean;
        let me = &self.buses[bus_id];
        let h_fwd = match self.leader_of(bus_id) {
            Some(j) => ((self.buses[j].position - me.position).max(0.0)) / v * 3600.0,
            None => sentinel,
        };
        let follower = self.buses[bus_id + 1..]
            .iter()
            .find(|b| b.phase != Phase::Finished);
        let h_bwd = match follower {
            Some(f) if f.phase.is_active() => (me.position - f.position).max(0.0) / v * 3600.0,
            Some(f) => me.position / v * 3600.0 + (f.dispatch_time - self.clock).max(0.0),
            None => sentinel,
        };
        (h_fwd, h_bwd)
    }

    /// Headways (seconds) between every pair of consecutive active buses.
    pub fn fleet_headways(&self) -> Vec<f64> {
        let v = self.cfg.nominal_speed;
        let active: Vec<&BusState> = self.active_buses().collect();
        active
            .windows(2)
            .map(|w| (w[0].position - w[1].position).max(0.0) / v * 3600.0)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_route(n_services: usize, std: f64) -> RouteSpec {
        RouteSpec {
            name: String::new(),
            stop_positions: vec![0.0, 1.0, 2.0, 3.0],
            n_services,
            dispatch_headway_mean: 300.0,
            dispatch_headway_std: std,
        }
    }

    fn state(n_services: usize, std: f64) -> SimState {
        let route = small_route(n_services, std);
        init_episode(&route, &DemandMatrix::zeros(4), &SimConfig::default(), 7).unwrap()
    }

    #[test]
    fn dwell_time_examples() {
        let cfg = SimConfig::default();
        assert_eq!(dwell_time(0, 0, &cfg), 0.0);
        assert!((dwell_time(5, 10, &cfg) - 39.0).abs() < 1e-12);
        assert!((dwell_time(1, 0, &cfg) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_schedule() {
        let s = state(2, 0.0);
        let times: Vec<f64> = s.buses.iter().map(|b| b.dispatch_time).collect();
        assert_eq!(times, vec![0.0, 300.0]);
        assert!(s.buses.iter().all(|b| b.phase == Phase::WaitingDispatch));
        assert_eq!(s.clock, 0.0);
    }

    #[test]
    fn dispatch_gaps_clamped() {
        let mut route = small_route(50, 5000.0);
        route.dispatch_headway_mean = 100.0;
        let s = init_episode(&route, &DemandMatrix::zeros(4), &SimConfig::default(), 3).unwrap();
        for w in s.buses.windows(2) {
            assert!(w[1].dispatch_time - w[0].dispatch_time >= 60.0 - 1e-9);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SimConfig::default();
        cfg.board_time_per_pax = 0.0;
        assert!(init_episode(&small_route(2, 0.0), &DemandMatrix::zeros(4), &cfg, 0).is_err());
        let mut cfg = SimConfig::default();
        cfg.speed_noise = [1.2, 0.6];
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::default();
        cfg.capacity = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lower_triangular_demand_rejected() {
        let mut rates = vec![vec![0.0; 3]; 3];
        rates[2][0] = 5.0;
        assert!(DemandMatrix::new(rates).is_err());
        let mut rates = vec![vec![0.0; 3]; 3];
        rates[1][1] = 5.0;
        assert!(DemandMatrix::new(rates).is_err());
    }

    #[test]
    fn zero_rates_never_spawn() {
        let mut s = state(2, 0.0);
        for _ in 0..1000 {
            s.clock += 1.0;
            s.spawn_passengers(1.0);
        }
        assert!(s.passengers.is_empty());
    }

    fn queue_passengers(s: &mut SimState, stop: usize, dest: usize, n: usize) {
        for _ in 0..n {
            let id = s.passengers.len() as u32;
            s.passengers.push(Passenger {
                origin: stop as u16,
                dest: dest as u16,
                arrival_time: 0.0,
                board_time: None,
                alight_time: None,
            });
            s.stops[stop].queue.push_back(id);
        }
    }

    #[test]
    fn board_alight_capacity() {
        let mut s = state(2, 0.0);
        assert_eq!(
            s.board_alight(0, 1),
            BoardAlight { n_alight: 0, n_board: 0, left_behind: 0 }
        );

        // 119 on board bound for stop 3, five waiting at stop 1
        queue_passengers(&mut s, 0, 3, 119);
        s.board_alight(0, 0);
        queue_passengers(&mut s, 1, 2, 5);
        let ba = s.board_alight(0, 1);
        assert_eq!(ba, BoardAlight { n_alight: 0, n_board: 1, left_behind: 4 });
        assert_eq!(s.buses[0].occupancy.len(), 120);

        queue_passengers(&mut s, 2, 3, 130);
        let ba = s.board_alight(1, 2);
        assert_eq!(ba, BoardAlight { n_alight: 0, n_board: 120, left_behind: 10 });
        // the alighters at stop 2 leave bus 0
        let ba = s.board_alight(0, 2);
        assert_eq!(ba.n_alight, 1);
        assert!(s.passenger_counts().conserved());
    }

    fn run_until_decision(s: &mut SimState, bus: usize) {
        let mut ev = Vec::new();
        while !s.buses[bus].awaiting_decision {
            s.advance(&mut ev).unwrap();
        }
    }

    #[test]
    fn holding_bounds() {
        let mut s = state(2, 0.0);
        run_until_decision(&mut s, 0);
        assert!(s.apply_holding(0, 200.0).is_err());
        assert!(s.apply_holding(0, -1.0).is_err());
        let dwell_end = s.buses[0].phase_end_time;
        s.apply_holding(0, 180.0).unwrap();
        let mut ev = Vec::new();
        while s.buses[0].phase != Phase::Holding {
            s.advance(&mut ev).unwrap();
        }
        assert_eq!(s.buses[0].phase_end_time, dwell_end + 180.0);
        assert_eq!(s.buses[0].cumulative_hold, 180.0);
        while s.buses[0].phase == Phase::Holding {
            s.advance(&mut ev).unwrap();
        }
        let dep = ev
            .iter()
            .find(|e| e.kind == EventKind::BusDepartedStop && e.bus_id == 0)
            .unwrap();
        assert!(dep.time >= dwell_end + 180.0 && dep.time < dwell_end + 181.0);
    }

    #[test]
    fn zero_hold_departs_at_dwell_end() {
        let mut s = state(2, 0.0);
        run_until_decision(&mut s, 0);
        let dwell_end = s.buses[0].phase_end_time;
        s.apply_holding(0, 0.0).unwrap();
        let mut ev = Vec::new();
        while !ev.iter().any(|e: &SimEvent| e.kind == EventKind::BusDepartedStop) {
            s.advance(&mut ev).unwrap();
            assert_ne!(s.buses[0].phase, Phase::Holding);
        }
        assert!(s.clock >= dwell_end && s.clock < dwell_end + 1.0 + 1e-9);
    }

    #[test]
    fn holding_rejected_while_cruising() {
        let mut s = state(2, 0.0);
        let mut ev = Vec::new();
        s.advance(&mut ev).unwrap();
        s.advance(&mut ev).unwrap();
        assert_eq!(s.buses[0].phase, Phase::Cruising);
        assert!(s.apply_holding(0, 10.0).is_err());
    }

    #[test]
    fn kinematics_one_tick() {
        let mut s = state(2, 0.0);
        let mut ev = Vec::new();
        run_until_decision(&mut s, 0);
        s.apply_holding(0, 0.0).unwrap();
        while s.buses[0].phase != Phase::Cruising {
            s.advance(&mut ev).unwrap();
        }
        s.buses[0].link_speed = 30.0;
        s.buses[0].position = 0.0;
        s.advance(&mut ev).unwrap();
        assert!((s.buses[0].position - 30.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn follower_clamped_behind_leader() {
        let mut s = state(2, 0.0);
        let mut ev = Vec::new();
        s.buses[0].phase = Phase::Cruising;
        s.buses[0].position = 0.5;
        s.buses[0].next_stop = 1;
        s.buses[0].link_speed = 1.0;
        s.buses[1].phase = Phase::Cruising;
        s.buses[1].position = 0.49;
        s.buses[1].next_stop = 1;
        s.buses[1].link_speed = 100.0;
        s.buses[1].dispatch_time = 0.0;
        s.advance(&mut ev).unwrap();
        let lead = 0.5 + 1.0 / 3600.0;
        assert!((s.buses[1].position - (lead - FOLLOW_GAP_KM)).abs() < 1e-12);
    }

    #[test]
    fn horizon_finishes_everyone() {
        let mut cfg = SimConfig::default();
        cfg.horizon = 50.0;
        let s0 = init_episode(&small_route(3, 0.0), &DemandMatrix::zeros(4), &cfg, 1).unwrap();
        let mut s = s0;
        let mut ev = Vec::new();
        while !s.is_finished() {
            s.advance(&mut ev).unwrap();
        }
        assert!(s.buses.iter().all(|b| b.phase == Phase::Finished));
        let finished = ev.iter().filter(|e| e.kind == EventKind::BusFinished).count();
        assert_eq!(finished, 3);
        assert!(ev.iter().all(|e| e.time <= 50.0));
        assert!(s.advance(&mut ev).is_err());
    }

    #[test]
    fn headway_projection() {
        let mut s = state(3, 0.0);
        for b in s.buses.iter_mut() {
            b.phase = Phase::Cruising;
        }
        s.buses[0].position = 2.5;
        s.buses[1].position = 2.5;
        s.buses[2].position = 0.0;
        let (h_fwd, h_bwd) = s.project_headways(1);
        assert_eq!(h_fwd, 0.0);
        assert!((h_bwd - 2.5 / 30.0 * 3600.0).abs() < 1e-9);
        // 5 km at 30 km/h
        s.buses[0].position = 5.0;
        s.buses[1].position = 0.0;
        assert!((s.project_headways(1).0 - 600.0).abs() < 1e-9);

        // lone bus in service
        s.buses[0].phase = Phase::Finished;
        s.buses[2].phase = Phase::Finished;
        assert_eq!(s.project_headways(1), (300.0, 300.0));
    }
}
