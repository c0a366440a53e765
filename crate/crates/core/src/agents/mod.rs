//! Holding policies: no control, the forward-headway rule, a scalar
//! actor-critic and the quantile actor-critic family.

mod critic;
mod learner;
mod meta;
pub mod quantile;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use critic::{actor_network, scalar_critic, CriticCache, QuantileCritic};
pub use learner::{Batch, CriticNet, Learner, MetaStep, UpdateStats};
pub use meta::{MetaCache, MetaWeightNet};
pub use quantile::{
    ascending_permutation, distorted_q, huber, quantile_huber, quantile_td_loss, wang_weights, CriticLossForm, FractionMode, QuantileGrid,
    QuantileSet,
};

use crate::env::Observation;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Nc,
    Fh,
    Iac,
    IqncN,
    IqncUcf,
    IqncCf,
    IqncM,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Nc,
        Variant::Fh,
        Variant::Iac,
        Variant::IqncN,
        Variant::IqncUcf,
        Variant::IqncCf,
        Variant::IqncM,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nc => "nc",
            Variant::Fh => "fh",
            Variant::Iac => "iac",
            Variant::IqncN => "iqnc-n",
            Variant::IqncUcf => "iqnc-ucf",
            Variant::IqncCf => "iqnc-cf",
            Variant::IqncM => "iqnc-m",
        }
    }

    /// Whether the variant has trainable networks.
    pub fn is_learned(self) -> bool {
        !matches!(self, Variant::Nc | Variant::Fh)
    }

    pub fn is_distributional(self) -> bool {
        matches!(self, Variant::IqncN | Variant::IqncUcf | Variant::IqncCf | Variant::IqncM)
    }

    /// Wang distortion parameter implied by the variant.
    pub fn default_beta(self) -> Option<f64> {
        match self {
            Variant::IqncUcf => Some(0.8),
            Variant::IqncCf => Some(-0.8),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == lower)
            .ok_or_else(|| invalid(format!("unknown agent variant '{s}'")))
    }
}

/// Forward-headway holding rule parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FhConfig {
    /// Target headway; `None` uses the route's dispatch headway.
    pub h0: Option<f64>,
    /// Equilibrium delay (s).
    pub d_bar: f64,
    pub gain: f64,
}

impl Default for FhConfig {
    fn default() -> Self {
        Self {
            h0: None,
            d_bar: 30.0,
            gain: 0.5,
        }
    }
}

impl FhConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) || !(self.d_bar >= 0.0) || self.h0.is_some_and(|h| !(h > 0.0)) {
            return Err(invalid(format!("bad forward-headway rule {self:?}")));
        }
        Ok(())
    }
}

/// Holding time `max(0, d_bar + g (H0 - h_fwd))`, capped at `max_hold`.
pub fn fh_hold(h_fwd: f64, cfg: &FhConfig, schedule_headway: f64, max_hold: f64) -> f64 {
    let h0 = cfg.h0.unwrap_or(schedule_headway);
    (cfg.d_bar + cfg.gain * (h0 - h_fwd)).max(0.0).min(max_hold)
}

/// Agent hyperparameters; everything except `variant` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSpec {
    pub variant: Variant,
    /// Online quantile count.
    pub k: usize,
    /// Target quantile count.
    pub k_prime: usize,
    pub kappa: f64,
    pub gamma: f64,
    /// Wang parameter; defaults from the variant.
    pub beta: Option<f64>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_meta: f64,
    pub target_mix: f64,
    /// Experiences stored before updates start.
    pub buffer_threshold: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub noise_std: f64,
    /// Exploration std reached at the end of training (linear decay).
    pub noise_final: f64,
    pub hidden: usize,
    pub n_cos: usize,
    pub meta_dim: usize,
    pub meta_hidden: usize,
    pub fractions: FractionMode,
    pub loss_form: CriticLossForm,
    pub target_actor: bool,
    pub shared_params: bool,
    pub updates_per_episode: usize,
    /// Critic-only updates performed before the actor (and meta net) start
    /// moving.
    pub actor_warmup: usize,
    pub fh: FhConfig,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            variant: Variant::IqncN,
            k: 32,
            k_prime: 32,
            kappa: 1.0,
            gamma: 0.99,
            beta: None,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            lr_meta: 1e-3,
            target_mix: 0.005,
            buffer_threshold: 2000,
            buffer_capacity: 100_000,
            batch_size: 64,
            noise_std: 0.1,
            noise_final: 0.0,
            hidden: 64,
            n_cos: 64,
            meta_dim: 16,
            meta_hidden: 32,
            fractions: FractionMode::Even,
            loss_form: CriticLossForm::QuantileHuber,
            target_actor: false,
            shared_params: true,
            updates_per_episode: 1,
            actor_warmup: 0,
            fh: FhConfig::default(),
        }
    }
}

impl AgentSpec {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta.or(self.variant.default_beta())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k_prime == 0 {
            return Err(invalid("K and K' must be >= 1"));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.target_mix > 0.0 && self.target_mix <= 1.0) {
            return Err(invalid(format!("target mix must lie in (0, 1], got {}", self.target_mix)));
        }
        for (name, lr) in [("actor", self.lr_actor), ("critic", self.lr_critic), ("meta", self.lr_meta)] {
            if !(lr > 0.0) {
                return Err(invalid(format!("{name} learning rate must be > 0")));
            }
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.hidden == 0 || self.n_cos == 0 {
            return Err(invalid("batch size, buffer capacity and widths must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_final >= 0.0) {
            return Err(invalid("exploration noise must be >= 0"));
        }
        self.fh.validate()
    }

    /// Exploration std after `episode` of `total` training episodes.
    pub fn noise_at(&self, episode: usize, total: usize) -> f64 {
        let frac = if total <= 1 { 0.0 } else { episode as f64 / (total - 1) as f64 };
        self.noise_std + (self.noise_final - self.noise_std) * frac.min(1.0)
    }
}

/// A policy ready to act: the rule-based variants carry no networks.
#[derive(Clone, Debug)]
pub struct Agent {
    pub spec: AgentSpec,
    pub learner: Option<Learner>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let learner = if spec.variant.is_learned() {
            Some(Learner::new(spec.clone(), rng)?)
        } else {
            None
        };
        Ok(Self { spec, learner })
    }

    /// Holding strength in `[0, 1]`. `noise_std > 0` adds clamped Gaussian
    /// exploration to learned policies.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, schedule_headway: f64, max_hold: f64, noise_std: f64, rng: &mut R) -> Result<f64> {
        match self.spec.variant {
            Variant::Nc => Ok(0.0),
            Variant::Fh => Ok(if max_hold > 0.0 {
                fh_hold(obs.h_fwd, &self.spec.fh, schedule_headway, max_hold) / max_hold
            } else {
                0.0
            }),
            _ => {
                let learner = self.learner.as_ref().ok_or_else(|| invalid("learned agent without networks"))?;
                let mu = learner.policy(obs)?;
                if noise_std > 0.0 {
                    let n = Normal::new(0.0, noise_std).map_err(|e| invalid(e.to_string()))?;
                    Ok((mu + n.sample(rng)).clamp(0.0, 1.0))
                } else {
                    Ok(mu)
                }
            }
        }
    }
}
