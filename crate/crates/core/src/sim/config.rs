//! Static inputs of an episode: route geometry, passenger demand and
//! physical constants, plus the JSON document that bundles them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scenario::ScenarioSpec;

fn default_max_hold() -> f64 {
    180.0
}

/// Physical and temporal constants shared by every bus on the route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds per alighting passenger.
    #[serde(rename = "t_a")]
    pub alight_time_per_pax: f64,
    /// Seconds per boarding passenger.
    #[serde(rename = "t_b")]
    pub board_time_per_pax: f64,
    /// Nominal cruising speed in km/h.
    #[serde(rename = "v_kmh")]
    pub nominal_speed: f64,
    /// Per-link uniform speed noise bounds `[lo, hi]`.
    pub speed_noise: [f64; 2],
    pub capacity: usize,
    #[serde(rename = "tick_s")]
    pub tick: f64,
    #[serde(rename = "horizon_s")]
    pub horizon: f64,
    /// Maximum holding duration per decision (seconds).
    #[serde(default = "default_max_hold")]
    pub max_hold_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            alight_time_per_pax: 1.8,
            board_time_per_pax: 3.0,
            nominal_speed: 30.0,
            speed_noise: [0.6, 1.2],
            capacity: 120,
            tick: 1.0,
            horizon: 4.0 * 3600.0,
            max_hold_s: default_max_hold(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_a", self.alight_time_per_pax),
            ("t_b", self.board_time_per_pax),
            ("v_kmh", self.nominal_speed),
            ("speed_noise[0]", self.speed_noise[0]),
            ("speed_noise[1]", self.speed_noise[1]),
            ("tick_s", self.tick),
            ("horizon_s", self.horizon),
            ("max_hold_s", self.max_hold_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.speed_noise[0] >= self.speed_noise[1] {
            return Err(invalid(format!(
                "speed_noise lower bound {} must be below upper bound {}",
                self.speed_noise[0], self.speed_noise[1]
            )));
        }
        if self.capacity == 0 {
            return Err(invalid("capacity must be >= 1"));
        }
        Ok(())
    }
}

/// Geometry and dispatch schedule of a single linear route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Stop positions in km from the origin terminal; the last entry is the route length.
    #[serde(rename = "stops_km")]
    pub stop_positions: Vec<f64>,
    #[serde(rename = "services")]
    pub n_services: usize,
    #[serde(rename = "headway_mean_s")]
    pub dispatch_headway_mean: f64,
    #[serde(rename = "headway_std_s")]
    pub dispatch_headway_std: f64,
}

impl RouteSpec {
    pub fn route_length(&self) -> f64 {
        self.stop_positions.last().copied().unwrap_or(0.0)
    }

    pub fn n_stops(&self) -> usize {
        self.stop_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stop_positions.len() < 2 {
            return Err(invalid("route needs at least two stops"));
        }
        if self.stop_positions[0] < 0.0 || !self.stop_positions[0].is_finite() {
            return Err(invalid("first stop position must be finite and >= 0"));
        }
        for w in self.stop_positions.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(invalid(format!(
                    "stop positions must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if self.n_services < 2 {
            return Err(invalid("route needs at least two services"));
        }
        if !(self.dispatch_headway_mean.is_finite() && self.dispatch_headway_mean > 0.0) {
            return Err(invalid("headway_mean_s must be > 0"));
        }
        if !(self.dispatch_headway_std.is_finite() && self.dispatch_headway_std >= 0.0) {
            return Err(invalid("headway_std_s must be >= 0"));
        }
        Ok(())
    }
}

/// Origin-destination passenger arrival rates in passengers per hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandMatrix {
    #[serde(rename = "rates_pax_per_hour")]
    pub rates: Vec<Vec<f64>>,
}

impl DemandMatrix {
    /// Builds a matrix after checking the forward-travel invariant.
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { rates };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            rates: vec![vec![0.0; n]; n],
        }
    }

    pub fn n_stops(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rates.len();
        for (i, row) in self.rates.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!("demand row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, &r) in row.iter().enumerate() {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(invalid(format!("demand[{i}][{j}] = {r} is not a finite non-negative rate")));
                }
                if j <= i && r != 0.0 {
                    return Err(invalid(format!(
                        "demand[{i}][{j}] = {r}: passengers must travel forward (j > i)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Multiplies every rate by `factor` (factor must be >= 0).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rates: self
                .rates
                .iter()
                .map(|row| row.iter().map(|r| r * factor).collect())
                .collect(),
        }
    }

    pub fn outbound_total(&self, origin: usize) -> f64 {
        self.rates[origin].iter().sum()
    }
}

/// Route, demand and simulation constants as read from a JSON episode file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDoc {
    pub route: RouteSpec,
    pub demand: DemandMatrix,
    pub sim: SimConfig,
    #[serde(default)]
    pub scenario: ScenarioSpec,
}

impl EpisodeDoc {
    pub fn validate(&self) -> Result<()> {
        self.route.validate()?;
        self.demand.validate()?;
        self.sim.validate()?;
        if self.demand.n_stops() != self.route.n_stops() {
            return Err(invalid(format!(
                "demand matrix is {}x{} but the route has {} stops",
                self.demand.n_stops(),
                self.demand.n_stops(),
                self.route.n_stops()
            )));
        }
        self.scenario.validate(&self.route, &self.sim)?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
