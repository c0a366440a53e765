use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::critic::{actor_network, scalar_critic, QuantileCritic};
use super::meta::{MetaCache, MetaWeightNet};
use super::quantile::{ascending_permutation, quantile_td_loss, wang_weights, QuantileGrid};
use super::{AgentSpec, Variant};
use crate::env::{EventGraph, Experience, Observation, OBS_DIM};
use crate::error::{invalid, precondition, Error, Result};
use crate::neural::{adam_step, copy_to_target, AdamConfig, AdamState, Checkpoint, Mlp, ParamBuilder, ParameterSet};

const DIVERGENCE_LIMIT: f64 = 1e6;
const SA_DIM: usize = OBS_DIM + 1;

/// Minibatch columns in network-ready form.
#[derive(Clone, Debug)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub s_next: Array2<f64>,
    pub done: Vec<bool>,
    pub graphs: Vec<EventGraph>,
}

impl Batch {
    pub fn from_experiences(exps: &[&Experience]) -> Result<Self> {
        if exps.is_empty() {
            return Err(precondition("empty minibatch"));
        }
        let rows = |f: &dyn Fn(&Experience) -> &Observation| {
            Array2::from_shape_fn((exps.len(), OBS_DIM), |(i, j)| f(exps[i]).normalized[j])
        };
        Ok(Self {
            s: rows(&|e| &e.s),
            a: exps.iter().map(|e| e.a).collect(),
            r: exps.iter().map(|e| e.r).collect(),
            s_next: rows(&|e| &e.s_next),
            done: exps.iter().map(|e| e.done).collect(),
            graphs: exps.iter().map(|e| e.g.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CriticNet {
    Quantile(QuantileCritic),
    Scalar(Mlp),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// `None` while the actor is still warming up.
    pub actor_objective: Option<f64>,
    pub meta_grad_norm: Option<f64>,
}

/// Result of one meta-gradient evaluation.
#[derive(Clone, Debug)]
pub struct MetaStep {
    /// `dJ'/d eta` (ascent direction).
    pub grad_eta: Vec<f64>,
    /// `dJ/d theta` under the meta weights (ascent direction).
    pub grad_theta: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy)]
enum Weighting<'a> {
    Uniform,
    Wang(f64),
    Meta(&'a ParameterSet),
}

struct ActorPass {
    objective: f64,
    grad_theta: Vec<f64>,
    widths: Vec<f64>,
    /// `dZ/da` per sample, columns in ascending order of the quantile values.
    sorted_da: Array2<f64>,
    meta: Vec<MetaCache>,
}

/// Networks, parameters and optimiser state of one learned policy.
#[derive(Clone, Debug)]
pub struct Learner {
    pub spec: AgentSpec,
    pub actor: Mlp,
    pub critic: CriticNet,
    pub meta: Option<MetaWeightNet>,
    pub theta: ParameterSet,
    pub theta_target: Option<ParameterSet>,
    pub phi: ParameterSet,
    pub phi_target: ParameterSet,
    pub eta: Option<ParameterSet>,
    adam_theta: AdamState,
    adam_phi: AdamState,
    adam_eta: AdamState,
    pub updates: u64,
}

fn sa_rows(s: ArrayView2<f64>, a: &[f64]) -> Array2<f64> {
    let mut x = Array2::zeros((s.nrows(), SA_DIM));
    x.slice_mut(s![.., ..OBS_DIM]).assign(&s);
    for (i, v) in a.iter().enumerate() {
        x[[i, OBS_DIM]] = *v;
    }
    x
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if !spec.variant.is_learned() {
            return Err(invalid(format!("{} has no trainable networks", spec.variant)));
        }
        let mut ab = ParamBuilder::new();
        let actor = actor_network(&mut ab, OBS_DIM, spec.hidden)?;
        let theta = ab.build("actor", rng);
        let mut cb = ParamBuilder::new();
        let critic = if spec.variant.is_distributional() {
            CriticNet::Quantile(QuantileCritic::new(&mut cb, SA_DIM, spec.hidden, spec.n_cos)?)
        } else {
            CriticNet::Scalar(scalar_critic(&mut cb, SA_DIM, spec.hidden)?)
        };
        let phi = cb.build("critic", rng);
        let mut phi_target = phi.clone();
        phi_target.rename("critic_target");
        let (meta, eta) = if spec.variant == Variant::IqncM {
            let mut mb = ParamBuilder::new();
            let net = MetaWeightNet::new(&mut mb, spec.k, spec.meta_dim, spec.meta_hidden)?;
            (Some(net), Some(mb.build("meta", rng)))
        } else {
            (None, None)
        };
        let theta_target = spec.target_actor.then(|| {
            let mut t = theta.clone();
            t.rename("actor_target");
            t
        });
        Ok(Self {
            adam_theta: AdamState::new(theta.len()),
            adam_phi: AdamState::new(phi.len()),
            adam_eta: AdamState::new(eta.as_ref().map_or(0, |e| e.len())),
            spec,
            actor,
            critic,
            meta,
            theta,
            theta_target,
            phi,
            phi_target,
            eta,
            updates: 0,
        })
    }

    /// Deterministic action `mu_theta(s)`.
    pub fn policy(&self, obs: &Observation) -> Result<f64> {
        Ok(self.actor.forward_one(&self.theta, &obs.normalized)?[0])
    }

    fn actions(&self, theta: &ParameterSet, s: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.actor.forward(theta, s)?.0.column(0).to_vec())
    }

    /// Quantile values (or the scalar value as one column) at `(s, a)`.
    pub fn values(&self, phi: &ParameterSet, s: ArrayView2<f64>, a: &[f64], taus: &[f64]) -> Result<Array2<f64>> {
        let x = sa_rows(s, a);
        match &self.critic {
            CriticNet::Quantile(c) => Ok(c.forward(phi, x.view(), taus)?.0),
            CriticNet::Scalar(m) => Ok(m.forward(phi, x.view())?.0),
        }
    }

    /// Values together with their derivative with respect to the action.
    fn values_and_action_grad(&self, phi: &ParameterSet, s: ArrayView2<f64>, a: &[f64], taus: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = sa_rows(s, a);
        let mut dx = Array2::zeros(x.raw_dim());
        dx.column_mut(OBS_DIM).fill(1.0);
        match &self.critic {
            CriticNet::Quantile(c) => {
                let (f, df) = c.trunk.jvp_input(phi, x.view(), dx.view())?;
                let (e, _) = c.embed.forward(phi, taus)?;
                let (b, k, d) = (f.nrows(), e.nrows(), f.ncols());
                let mut m = Array2::zeros((b * k, d));
                let mut dm = Array2::zeros((b * k, d));
                for r in 0..b * k {
                    let (i, j) = (r / k, r % k);
                    for c2 in 0..d {
                        m[[r, c2]] = f[[i, c2]] * e[[j, c2]];
                        dm[[r, c2]] = df[[i, c2]] * e[[j, c2]];
                    }
                }
                let (z, dz) = c.head.jvp_input(phi, m.view(), dm.view())?;
                let shape = (b, k);
                Ok((
                    z.into_shape_with_order(shape).expect("reshape"),
                    dz.into_shape_with_order(shape).expect("reshape"),
                ))
            }
            CriticNet::Scalar(m) => m.jvp_input(phi, x.view(), dx.view()),
        }
    }

    fn grid<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<QuantileGrid> {
        match self.critic {
            CriticNet::Quantile(_) => self.spec.fractions.grid(k, rng),
            CriticNet::Scalar(_) => QuantileGrid::even(1),
        }
    }

    /// Critic loss and its gradient with respect to `phi` on fixed grids.
    pub fn critic_loss_and_grad(&self, phi: &ParameterSet, batch: &Batch, grid: &QuantileGrid, grid_prime: &QuantileGrid) -> Result<(f64, Vec<f64>)> {
        let b = batch.len();
        let actor_params = self.theta_target.as_ref().unwrap_or(&self.theta);
        let a_next = self.actions(actor_params, batch.s_next.view())?;
        let next = self.values(&self.phi_target, batch.s_next.view(), &a_next, &grid_prime.midpoints)?;
        let mut target = next;
        for (i, mut row) in target.axis_iter_mut(Axis(0)).enumerate() {
            let cont = if batch.done[i] { 0.0 } else { self.spec.gamma };
            row.mapv_inplace(|z| batch.r[i] + cont * z);
        }
        let x = sa_rows(batch.s.view(), &batch.a);
        let mut grad = phi.zeros_like();
        let loss = match &self.critic {
            CriticNet::Quantile(c) => {
                let (z, cache) = c.forward(phi, x.view(), &grid.midpoints)?;
                let (loss, dz) = quantile_td_loss(&z, &grid.midpoints, &target, &grid_prime.midpoints, self.spec.kappa, self.spec.loss_form)?;
                c.backward(phi, &cache, &dz, &mut grad)?;
                loss
            }
            CriticNet::Scalar(m) => {
                let (q, cache) = m.forward(phi, x.view())?;
                let diff = &q - &target;
                let loss = 0.5 * diff.mapv(|d| d * d).sum() / b as f64;
                let dq = diff / b as f64;
                m.backward(phi, &cache, dq.view(), &mut grad)?;
                loss
            }
        };
        Ok((loss, grad))
    }

    fn weights_for(&self, weighting: Weighting, batch: &Batch, grid: &QuantileGrid) -> Result<(Array2<f64>, Vec<MetaCache>)> {
        let (b, k) = (batch.len(), grid.len());
        match weighting {
            Weighting::Uniform => Ok((Array2::ones((b, k)), Vec::new())),
            Weighting::Wang(beta) => {
                let w = wang_weights(beta, &grid.midpoints)?;
                Ok((Array2::from_shape_fn((b, k), |(_, j)| w[j]), Vec::new()))
            }
            Weighting::Meta(eta) => {
                let net = self.meta.as_ref().ok_or_else(|| invalid("meta weights requested without a meta network"))?;
                if net.k != k {
                    return Err(Error::DimensionMismatch { expected: net.k, got: k });
                }
                let mut w = Array2::zeros((b, k));
                let mut caches = Vec::with_capacity(b);
                for (i, g) in batch.graphs.iter().enumerate() {
                    let (wi, cache) = net.forward(eta, g)?;
                    w.row_mut(i).assign(&ndarray::ArrayView1::from(&wi[..]));
                    caches.push(cache);
                }
                Ok((w, caches))
            }
        }
    }

    fn spec_weighting(&self) -> Weighting<'_> {
        match (self.spec.variant, self.spec.beta(), &self.eta) {
            (Variant::IqncM, _, Some(eta)) => Weighting::Meta(eta),
            (_, Some(beta), _) if self.spec.variant.is_distributional() => Weighting::Wang(beta),
            _ => Weighting::Uniform,
        }
    }

    /// Batch-mean distorted value of the current policy and its gradient.
    fn actor_pass(&self, theta: &ParameterSet, batch: &Batch, grid: &QuantileGrid, weighting: Weighting) -> Result<ActorPass> {
        let b = batch.len();
        let (mu, cache) = self.actor.forward(theta, batch.s.view())?;
        let a: Vec<f64> = mu.column(0).to_vec();
        let (z, dz) = self.values_and_action_grad(&self.phi, batch.s.view(), &a, &grid.midpoints)?;
        let widths = grid.widths();
        let (w, meta) = self.weights_for(weighting, batch, grid)?;
        let k = z.ncols();
        let mut objective = 0.0;
        let mut dj_da = Array2::zeros((b, 1));
        let mut sorted_da = Array2::zeros((b, k));
        for i in 0..b {
            let row: Vec<f64> = z.row(i).to_vec();
            let perm = ascending_permutation(&row);
            let mut g = 0.0;
            for (rank, &src) in perm.iter().enumerate() {
                let c = widths[rank] * w[[i, rank]] / b as f64;
                objective += c * row[src];
                g += c * dz[[i, src]];
                sorted_da[[i, rank]] = dz[[i, src]];
            }
            dj_da[[i, 0]] = g;
        }
        let mut grad_theta = theta.zeros_like();
        self.actor.backward(theta, &cache, dj_da.view(), &mut grad_theta)?;
        Ok(ActorPass {
            objective,
            grad_theta,
            widths,
            sorted_da,
            meta,
        })
    }

    /// Policy objective `J(theta)` and `dJ/dtheta` under the variant's weights.
    pub fn actor_objective_and_grad(&self, theta: &ParameterSet, batch: &Batch, grid: &QuantileGrid) -> Result<(f64, Vec<f64>)> {
        let pass = self.actor_pass(theta, batch, grid, self.spec_weighting())?;
        Ok((pass.objective, pass.grad_theta))
    }

    /// Meta objective `J'(theta')` on `fresh`, with
    /// `theta' = theta + lr_actor * dJ(theta, eta)/dtheta` from `batch`.
    pub fn meta_objective(&self, eta: &ParameterSet, batch: &Batch, fresh: &Batch, grid: &QuantileGrid) -> Result<f64> {
        let pass = self.actor_pass(&self.theta, batch, grid, Weighting::Meta(eta))?;
        let theta_prime = self.stepped_theta(&pass.grad_theta)?;
        Ok(self.actor_pass(&theta_prime, fresh, grid, Weighting::Uniform)?.objective)
    }

    fn stepped_theta(&self, grad: &[f64]) -> Result<ParameterSet> {
        let mut next = self.theta.clone();
        let lr = self.spec.lr_actor;
        let v: Vec<f64> = self.theta.values().iter().zip(grad).map(|(t, g)| t + lr * g).collect();
        next.set_values(&v)?;
        Ok(next)
    }

    /// Exact second-order gradient of the meta objective with respect to eta.
    pub fn meta_gradient(&self, batch: &Batch, fresh: &Batch, grid: &QuantileGrid) -> Result<MetaStep> {
        let (net, eta) = match (&self.meta, &self.eta) {
            (Some(n), Some(e)) => (n, e),
            _ => return Err(invalid("meta gradient needs a meta network")),
        };
        let pass = self.actor_pass(&self.theta, batch, grid, Weighting::Meta(eta))?;
        let theta_prime = self.stepped_theta(&pass.grad_theta)?;
        let outer = self.actor_pass(&theta_prime, fresh, grid, Weighting::Uniform)?;
        // Directional derivative of mu_theta(s_b) along dJ'/dtheta'.
        let (_, dmu) = self.actor.jvp(&self.theta, batch.s.view(), &outer.grad_theta)?;
        let b = batch.len() as f64;
        let mut grad_eta = eta.zeros_like();
        for (i, cache) in pass.meta.iter().enumerate() {
            let scale = self.spec.lr_actor * dmu[[i, 0]] / b;
            let u: Vec<f64> = (0..net.k).map(|r| scale * pass.widths[r] * pass.sorted_da[[i, r]]).collect();
            net.backward(eta, cache, &u, &mut grad_eta)?;
        }
        if let Some(i) = grad_eta.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("meta gradient at {}", eta.name_of_index(i))));
        }
        Ok(MetaStep {
            grad_eta,
            grad_theta: pass.grad_theta,
            objective: pass.objective,
        })
    }

    /// One Adam step on the critic; returns the loss before the step.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64> {
        let grid = self.grid(self.spec.k, rng)?;
        let grid_prime = self.grid(self.spec.k_prime, rng)?;
        let (loss, grad) = self.critic_loss_and_grad(&self.phi, batch, &grid, &grid_prime)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged(loss));
        }
        adam_step(&mut self.phi, &grad, &mut self.adam_phi, &AdamConfig::new(self.spec.lr_critic))?;
        Ok(loss)
    }

    /// One critic step, one actor step and (for the meta variant) one meta
    /// step, followed by the soft target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, fresh: Option<&Batch>, rng: &mut R) -> Result<UpdateStats> {
        let critic_loss = self.critic_update(batch, rng)?;
        if self.updates < self.spec.actor_warmup as u64 {
            copy_to_target(&self.phi, &mut self.phi_target, self.spec.target_mix)?;
            self.updates += 1;
            return Ok(UpdateStats {
                critic_loss,
                actor_objective: None,
                meta_grad_norm: None,
            });
        }

        let actor_grid = if self.meta.is_some() { QuantileGrid::even(self.spec.k)? } else { self.grid(self.spec.k, rng)? };
        let mut meta_grad_norm = None;
        let (objective, grad_theta, grad_eta) = match (&self.meta, fresh) {
            (Some(_), Some(fresh)) => {
                let step = self.meta_gradient(batch, fresh, &actor_grid)?;
                meta_grad_norm = Some(step.grad_eta.iter().map(|g| g * g).sum::<f64>().sqrt());
                (step.objective, step.grad_theta, Some(step.grad_eta))
            }
            (Some(_), None) => return Err(precondition("meta update needs a fresh minibatch")),
            _ => {
                let (j, g) = self.actor_objective_and_grad(&self.theta, batch, &actor_grid)?;
                (j, g, None)
            }
        };
        let ascent: Vec<f64> = grad_theta.iter().map(|g| -g).collect();
        adam_step(&mut self.theta, &ascent, &mut self.adam_theta, &AdamConfig::new(self.spec.lr_actor))?;
        if let (Some(eta), Some(g)) = (self.eta.as_mut(), grad_eta) {
            let ascent: Vec<f64> = g.iter().map(|v| -v).collect();
            adam_step(eta, &ascent, &mut self.adam_eta, &AdamConfig::new(self.spec.lr_meta))?;
        }
        copy_to_target(&self.phi, &mut self.phi_target, self.spec.target_mix)?;
        if let Some(t) = self.theta_target.as_mut() {
            copy_to_target(&self.theta, t, self.spec.target_mix)?;
        }
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective: Some(objective),
            meta_grad_norm,
        })
    }

    /// Meta distortion weights for one event graph (uniform for other variants).
    pub fn distortion_weights(&self, graph: &EventGraph) -> Result<Vec<f64>> {
        match (&self.meta, &self.eta) {
            (Some(net), Some(eta)) => net.weights(eta, graph),
            _ => {
                let grid = QuantileGrid::even(self.spec.k)?;
                match self.spec.beta() {
                    Some(beta) => wang_weights(beta, &grid.midpoints),
                    None => Ok(vec![1.0; self.spec.k]),
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut sets = vec![self.theta.clone(), self.phi.clone(), self.phi_target.clone()];
        sets.extend(self.theta_target.clone());
        sets.extend(self.eta.clone());
        Ok(Checkpoint {
            step: self.updates,
            sets,
            meta: serde_json::json!({ "agent": serde_json::to_value(&self.spec)? }),
        })
    }

    /// Rebuilds a learner from a checkpoint written by [`Learner::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: AgentSpec = serde_json::from_value(ck.meta["agent"].clone())?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut learner = Self::new(spec, &mut rng)?;
        let load = |dst: &mut ParameterSet| -> Result<()> {
            let src = ck.get(dst.name()).ok_or_else(|| invalid(format!("checkpoint lacks '{}'", dst.name())))?;
            if src.entries() != dst.entries() {
                return Err(invalid(format!("checkpoint layout of '{}' does not match", dst.name())));
            }
            dst.set_values(src.values())
        };
        load(&mut learner.theta)?;
        load(&mut learner.phi)?;
        load(&mut learner.phi_target)?;
        if let Some(t) = learner.theta_target.as_mut() {
            load(t)?;
        }
        if let Some(e) = learner.eta.as_mut() {
            load(e)?;
        }
        learner.updates = ck.step;
        Ok(learner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DecisionRecord, EventNode};
    use crate::neural::gradcheck::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(rng: &mut ChaCha8Rng) -> Observation {
        Observation::new(
            rng.random_range(0.0..900.0),
            rng.random_range(0.0..900.0),
            rng.random_range(0..100),
            rng.random_range(0..30),
            600.0,
            120,
        )
    }

    fn experiences(n: usize, seed: u64) -> Vec<Experience> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let s = obs(&mut rng);
                let a = rng.random_range(0.0..1.0);
                let ego = DecisionRecord {
                    bus: 0,
                    stop: 2,
                    time: 100.0,
                    obs: s,
                    action: a,
                };
                let nodes = (0..i % 4)
                    .map(|j| EventNode {
                        bus: j + 1,
                        obs: obs(&mut rng),
                        action: rng.random_range(0.0..1.0),
                        d_stop: j as i64 - 1,
                        dt: 30.0 * (j + 1) as f64,
                    })
                    .collect();
                Experience {
                    bus: 0,
                    s,
                    a,
                    r: -rng.random_range(0.0..1.0),
                    s_next: obs(&mut rng),
                    done: i % 5 == 0,
                    g: EventGraph {
                        ego,
                        nodes,
                        n_stops: 10,
                        headway_scale: 600.0,
                    },
                    t_state: 100.0,
                    t_next: 200.0,
                }
            })
            .collect()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let e = experiences(n, seed);
        let refs: Vec<&Experience> = e.iter().collect();
        Batch::from_experiences(&refs).unwrap()
    }

    fn tiny(variant: Variant) -> Learner {
        let spec = AgentSpec {
            variant,
            k: 4,
            k_prime: 3,
            hidden: 6,
            n_cos: 5,
            meta_dim: 4,
            meta_hidden: 5,
            lr_actor: 0.5,
            ..AgentSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut l = Learner::new(spec, &mut rng).unwrap();
        // Nonzero biases keep pre-activations off the ReLU kink; the target
        // is decorrelated from the online critic and the meta head woken up.
        let v: Vec<f64> = l.phi.values().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
        l.phi.set_values(&v).unwrap();
        let v: Vec<f64> = l.phi_target.values().iter().map(|x| 0.9 * x + 0.01).collect();
        l.phi_target.set_values(&v).unwrap();
        if let Some(eta) = l.eta.as_mut() {
            let v: Vec<f64> = (0..eta.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
            eta.set_values(&v).unwrap();
        }
        l
    }

    fn with(p: &ParameterSet, v: &[f64]) -> ParameterSet {
        let mut q = p.clone();
        q.set_values(v).unwrap();
        q
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        for variant in [Variant::IqncN, Variant::Iac] {
            let l = tiny(variant);
            let b = batch(6, 1);
            let (g, gp) = (l.grid(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), l.grid(3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
            let (_, grad) = l.critic_loss_and_grad(&l.phi, &b, &g, &gp).unwrap();
            let fd = central_difference(l.phi.values(), 1e-6, |v| l.critic_loss_and_grad(&with(&l.phi, v), &b, &g, &gp).unwrap().0);
            let err = relative_error(&grad, &fd);
            assert!(err < 1e-5, "{variant}: {err}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        for variant in [Variant::IqncN, Variant::IqncUcf, Variant::IqncM, Variant::Iac] {
            let l = tiny(variant);
            let b = batch(5, 2);
            let g = QuantileGrid::even(if variant == Variant::Iac { 1 } else { 4 }).unwrap();
            let (_, grad) = l.actor_objective_and_grad(&l.theta, &b, &g).unwrap();
            let fd = central_difference(l.theta.values(), 1e-6, |v| l.actor_objective_and_grad(&with(&l.theta, v), &b, &g).unwrap().0);
            let err = relative_error(&grad, &fd);
            assert!(err < 1e-5, "{variant}: {err}");
        }
    }

    #[test]
    fn meta_gradient_matches_finite_differences() {
        let l = tiny(Variant::IqncM);
        let (b, fresh) = (batch(5, 3), batch(4, 4));
        let g = QuantileGrid::even(4).unwrap();
        let step = l.meta_gradient(&b, &fresh, &g).unwrap();
        let eta = l.eta.clone().unwrap();
        let fd = central_difference(eta.values(), 1e-6, |v| l.meta_objective(&with(&eta, v), &b, &fresh, &g).unwrap());
        let err = relative_error(&step.grad_eta, &fd);
        assert!(err < 1e-4, "{err}");
        assert!(step.grad_eta.iter().any(|x| x.abs() > 1e-12));
    }

    #[test]
    fn frozen_meta_head_has_zero_meta_gradient() {
        let mut l = tiny(Variant::IqncM);
        let eta = l.eta.as_mut().unwrap();
        let last = *l.meta.as_ref().unwrap().head.layers.last().unwrap();
        let vals = eta.values_mut();
        vals[last.w..last.w + last.n_in * last.n_out].fill(0.0);
        // With a zero last layer the weights are uniform; only that layer's
        // own parameters can move them.
        let step = l.meta_gradient(&batch(5, 3), &batch(4, 4), &QuantileGrid::even(4).unwrap()).unwrap();
        let eta = l.eta.as_ref().unwrap();
        for e in eta.entries() {
            if !e.name.starts_with("meta.head.1") {
                assert!(step.grad_eta[e.range()].iter().all(|g| *g == 0.0), "{}", e.name);
            }
        }
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let mut l = tiny(Variant::IqncN);
        let CriticNet::Quantile(c) = l.critic.clone() else { unreachable!() };
        let last = *c.head.layers.last().unwrap();
        let v = l.phi.values_mut();
        v[last.w..last.w + last.n_in].fill(0.0);
        let (_, grad) = l.actor_objective_and_grad(&l.theta, &batch(4, 5), &QuantileGrid::even(4).unwrap()).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_critic_zero_reward_no_discount_gives_zero_loss() {
        let mut l = tiny(Variant::IqncN);
        l.spec.gamma = 0.0;
        l.phi.values_mut().fill(0.0);
        let mut exps = experiences(4, 6);
        exps.iter_mut().for_each(|e| e.r = 0.0);
        let refs: Vec<&Experience> = exps.iter().collect();
        let b = Batch::from_experiences(&refs).unwrap();
        let g = QuantileGrid::even(4).unwrap();
        let (loss, _) = l.critic_loss_and_grad(&l.phi, &b, &g, &QuantileGrid::even(3).unwrap()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn actor_climbs_quadratic_bowl() {
        // Policy-gradient chain rule with dQ/da = -2 (a - 0.7).
        let l = tiny(Variant::IqncN);
        let mut theta = l.theta.clone();
        let mut adam = AdamState::new(theta.len());
        let s = batch(8, 7).s;
        for _ in 0..3000 {
            let (mu, cache) = l.actor.forward(&theta, s.view()).unwrap();
            let dj = mu.mapv(|a| 2.0 * (a - 0.7) / 8.0);
            let mut g = theta.zeros_like();
            l.actor.backward(&theta, &cache, dj.view(), &mut g).unwrap();
            adam_step(&mut theta, &g, &mut adam, &AdamConfig::new(1e-2)).unwrap();
        }
        let (mu, _) = l.actor.forward(&theta, s.view()).unwrap();
        assert!(mu.iter().all(|a| (a - 0.7).abs() < 0.01), "{mu:?}");
    }

    #[test]
    fn update_changes_parameters_and_stays_finite() {
        let mut l = tiny(Variant::IqncM);
        let before = (l.theta.values().to_vec(), l.phi.values().to_vec(), l.eta.clone().unwrap().values().to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = l.update(&batch(8, 8), Some(&batch(8, 9)), &mut rng).unwrap();
        assert!(stats.critic_loss.is_finite());
        assert!(stats.meta_grad_norm.unwrap() > 0.0);
        assert_ne!(before.0, l.theta.values());
        assert_ne!(before.1, l.phi.values());
        assert_ne!(before.2, l.eta.as_ref().unwrap().values());
        assert!(l.update(&batch(8, 8), None, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_policy() {
        let l = tiny(Variant::IqncM);
        let dir = tempfile::tempdir().unwrap();
        l.to_checkpoint().unwrap().save(dir.path()).unwrap();
        let back = Learner::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
        assert_eq!(back.theta.values(), l.theta.values());
        assert_eq!(back.eta.as_ref().unwrap().values(), l.eta.as_ref().unwrap().values());
        assert_eq!(back.spec, l.spec);
    }

    #[test]
    fn meta_weights_start_uniform_with_mean_one() {
        let spec = AgentSpec::for_variant(Variant::IqncM);
        let l = Learner::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let e = experiences(3, 1);
        for x in &e {
            let w = l.distortion_weights(&x.g).unwrap();
            assert_eq!(w.len(), 32);
            assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }
}
