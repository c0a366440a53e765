//! Episode-level perturbations (demand and speed scaling) and anomaly
//! events (traffic interruptions, demand surges).

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sim::{RouteSpec, SimConfig, SimState};

/// Lower bound for the sampled speed scale.
pub const MIN_SPEED_SCALE: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub sigma_d: f64,
    #[serde(default)]
    pub sigma_s: f64,
    #[serde(default)]
    pub resample_per_episode: bool,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d.is_finite() && self.sigma_d >= 0.0) {
            return Err(invalid(format!("sigma_d must be >= 0, got {}", self.sigma_d)));
        }
        if !(self.sigma_s.is_finite() && self.sigma_s >= 0.0) {
            return Err(invalid(format!("sigma_s must be >= 0, got {}", self.sigma_s)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    Interruption,
    DemandSurge,
}

/// A traffic interruption (targets are bus ids) or a demand surge
/// (targets are stop indices), active during `window` = `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub targets: Vec<usize>,
    #[serde(default = "one")]
    pub factor: f64,
    #[serde(default)]
    pub extra_pax: u32,
    pub window: (f64, f64),
}

fn one() -> f64 {
    1.0
}

impl AnomalySpec {
    pub fn interruption(targets: Vec<usize>, factor: f64, window: (f64, f64)) -> Self {
        Self {
            kind: AnomalyKind::Interruption,
            targets,
            factor,
            extra_pax: 0,
            window,
        }
    }

    pub fn demand_surge(targets: Vec<usize>, extra_pax: u32, window: (f64, f64)) -> Self {
        Self {
            kind: AnomalyKind::DemandSurge,
            targets,
            factor: 1.0,
            extra_pax,
            window,
        }
    }

    pub fn validate(&self, route: &RouteSpec, cfg: &SimConfig) -> Result<()> {
        let (start, end) = self.window;
        if !(start >= 0.0 && end > start && end <= cfg.horizon) {
            return Err(invalid(format!(
                "anomaly window ({start}, {end}) must lie within [0, {}]",
                cfg.horizon
            )));
        }
        if self.targets.is_empty() {
            return Err(invalid("anomaly needs at least one target"));
        }
        match self.kind {
            AnomalyKind::Interruption => {
                if !(self.factor > 0.0 && self.factor <= 1.0) {
                    return Err(invalid(format!("interruption factor {} not in (0, 1]", self.factor)));
                }
                if let Some(&t) = self.targets.iter().find(|&&t| t >= route.n_services) {
                    return Err(invalid(format!("interruption targets unknown bus {t}")));
                }
            }
            AnomalyKind::DemandSurge => {
                if let Some(&t) = self.targets.iter().find(|&&t| t >= route.n_stops()) {
                    return Err(invalid(format!("surge targets unknown stop {t}")));
                }
            }
        }
        Ok(())
    }
}

/// Compact textual form used on the command line:
/// `interruption:factor=0.1,buses=0+2,window=1800-2400` or
/// `surge:extra=50,stops=2+5+7,window=1800-5400`.
impl std::str::FromStr for AnomalySpec {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("anomaly '{s}' lacks a kind prefix")))?;
        let kind = match kind {
            "interruption" => AnomalyKind::Interruption,
            "surge" | "demand-surge" => AnomalyKind::DemandSurge,
            other => return Err(invalid(format!("unknown anomaly kind '{other}'"))),
        };
        let mut spec = AnomalySpec {
            kind,
            targets: Vec::new(),
            factor: 1.0,
            extra_pax: 0,
            window: (0.0, 0.0),
        };
        for kv in rest.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("bad anomaly field '{kv}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(format!("bad number '{v}'")));
            match k {
                "factor" => spec.factor = num(v)?,
                "extra" => spec.extra_pax = num(v)? as u32,
                "buses" | "stops" | "targets" => {
                    spec.targets = v
                        .split('+')
                        .map(|t| t.parse::<usize>().map_err(|_| invalid(format!("bad target '{t}'"))))
                        .collect::<Result<_>>()?
                }
                "window" => {
                    let (a, b) = v
                        .split_once('-')
                        .ok_or_else(|| invalid(format!("bad window '{v}'")))?;
                    spec.window = (num(a)?, num(b)?);
                }
                other => return Err(invalid(format!("unknown anomaly field '{other}'"))),
            }
        }
        Ok(spec)
    }
}

impl std::fmt::Display for AnomalySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let targets: Vec<String> = self.targets.iter().map(|t| t.to_string()).collect();
        match self.kind {
            AnomalyKind::Interruption => write!(
                f,
                "interruption:factor={},buses={},window={}-{}",
                self.factor,
                targets.join("+"),
                self.window.0,
                self.window.1
            ),
            AnomalyKind::DemandSurge => write!(
                f,
                "surge:extra={},stops={},window={}-{}",
                self.extra_pax,
                targets.join("+"),
                self.window.0,
                self.window.1
            ),
        }
    }
}

/// Scenario block of an episode document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
}

impl ScenarioSpec {
    pub fn validate(&self, route: &RouteSpec, cfg: &SimConfig) -> Result<()> {
        self.perturbation.validate()?;
        for a in &self.anomalies {
            a.validate(route, cfg)?;
        }
        Ok(())
    }
}

/// p_d ~ N(1, sigma_d^2), floored at 0.
pub fn sample_demand_scale<R: Rng + ?Sized>(rng: &mut R, sigma_d: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (1.0 + sigma_d * z).max(0.0)
}

/// p_s ~ N(1, sigma_s^2), floored at [`MIN_SPEED_SCALE`].
pub fn sample_speed_scale<R: Rng + ?Sized>(rng: &mut R, sigma_s: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (1.0 + sigma_s * z).max(MIN_SPEED_SCALE)
}

/// Sets each targeted bus's speed multiplier to `factor` while the clock is
/// inside the window and back to exactly 1 outside it. Call once per tick.
pub fn apply_interruption(state: &mut SimState, spec: &AnomalySpec) -> Result<()> {
    if spec.targets.is_empty() {
        return Err(invalid("interruption needs at least one target bus"));
    }
    if let Some(&t) = spec.targets.iter().find(|&&t| t >= state.buses.len()) {
        return Err(invalid(format!("interruption targets unknown bus {t}")));
    }
    let inside = state.clock >= spec.window.0 && state.clock < spec.window.1;
    let m = if inside { spec.factor } else { 1.0 };
    for &t in &spec.targets {
        state.buses[t].speed_multiplier = m;
    }
    Ok(())
}

/// Installs a demand surge: while the window is open, every bus arrival at a
/// targeted stop first injects `extra_pax` passengers into that stop's queue.
pub fn apply_demand_surge(state: &mut SimState, spec: &AnomalySpec) -> Result<()> {
    if let Some(&t) = spec.targets.iter().find(|&&t| t >= state.stops.len()) {
        return Err(invalid(format!("surge targets unknown stop {t}")));
    }
    if spec.extra_pax > 0 {
        state.surges.push(spec.clone());
    }
    Ok(())
}

/// Realised scenario draws for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDraw {
    pub p_d: f64,
    pub p_s: f64,
    pub anomalies: Vec<AnomalySpec>,
}

impl ScenarioDraw {
    pub fn identity() -> Self {
        Self {
            p_d: 1.0,
            p_s: 1.0,
            anomalies: Vec::new(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, sigma_d: f64, sigma_s: f64, anomalies: &[AnomalySpec]) -> Self {
        Self {
            p_d: sample_demand_scale(rng, sigma_d),
            p_s: sample_speed_scale(rng, sigma_s),
            anomalies: anomalies.to_vec(),
        }
    }

    /// Applies the episode-level scales and installs surges on a fresh state.
    pub fn install(&self, state: &mut SimState) -> Result<()> {
        state.demand = state.demand.scaled(self.p_d);
        state.speed_scale = self.p_s;
        for a in &self.anomalies {
            if a.kind == AnomalyKind::DemandSurge {
                apply_demand_surge(state, a)?;
            }
        }
        Ok(())
    }

    /// Per-tick hook applying interruptions.
    pub fn on_tick(&self, state: &mut SimState) -> Result<()> {
        for a in &self.anomalies {
            if a.kind == AnomalyKind::Interruption {
                apply_interruption(state, a)?;
            }
        }
        Ok(())
    }
}

/// Picks `k` distinct targets out of `n` uniformly, sorted ascending.
pub fn random_targets<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample_indices(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}
