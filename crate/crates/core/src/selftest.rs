//! Built-in numerical oracles: loss values, distortion weights and
//! finite-difference checks of every differentiable operation.

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agents::{quantile_huber, wang_weights, AgentSpec, Batch, Learner, QuantileCritic, QuantileGrid, Variant};
use crate::env::{DecisionRecord, EventGraph, EventNode, Experience, Observation};
use crate::error::Result;
use crate::neural::gradcheck::{central_difference, relative_error};
use crate::neural::{Activation, AttentionAggregator, Mlp, NetworkSpec, ParamBuilder, ParameterSet, QuantileEmbedding};

/// Outcome of one oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured error (or value) and its tolerance.
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn below(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value.is_finite() && value < tolerance,
            value,
            tolerance,
        }
    }
}

fn with(p: &ParameterSet, v: &[f64]) -> ParameterSet {
    let mut q = p.clone();
    q.set_values(v).expect("same length");
    q
}

fn random_obs<R: Rng + ?Sized>(rng: &mut R) -> Observation {
    Observation::new(
        rng.random_range(0.0..900.0),
        rng.random_range(0.0..900.0),
        rng.random_range(0..100),
        rng.random_range(0..30),
        600.0,
        120,
    )
}

/// Random experiences whose event graphs hold 0 to 3 other nodes.
pub fn synthetic_experiences(n: usize, seed: u64) -> Vec<Experience> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = random_obs(&mut rng);
            let a = rng.random_range(0.0..1.0);
            let nodes = (0..i % 4)
                .map(|j| EventNode {
                    bus: j + 1,
                    obs: random_obs(&mut rng),
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
                s_next: random_obs(&mut rng),
                done: i % 5 == 0,
                g: EventGraph {
                    ego: DecisionRecord {
                        bus: 0,
                        stop: 2,
                        time: 100.0,
                        obs: s,
                        action: a,
                    },
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

pub fn synthetic_batch(n: usize, seed: u64) -> Result<Batch> {
    let e = synthetic_experiences(n, seed);
    let refs: Vec<&Experience> = e.iter().collect();
    Batch::from_experiences(&refs)
}

/// A small learner whose parameters are perturbed away from ReLU kinks and
/// whose meta head is switched on, for derivative checks.
pub fn probe_learner(variant: Variant) -> Result<Learner> {
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
    let mut l = Learner::new(spec, &mut rng)?;
    let v: Vec<f64> = l.phi.values().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
    l.phi.set_values(&v)?;
    let v: Vec<f64> = l.phi_target.values().iter().map(|x| 0.9 * x + 0.01).collect();
    l.phi_target.set_values(&v)?;
    if let Some(eta) = l.eta.as_mut() {
        let v: Vec<f64> = (0..eta.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        eta.set_values(&v)?;
    }
    Ok(l)
}

/// Loss and distortion oracles.
pub fn value_checks() -> Result<Vec<Check>> {
    let mut out = vec![
        Check::below("quantile_huber(0, 0.5, 1) = 0", quantile_huber(0.0, 0.5, 1.0).abs(), 1e-12),
        Check::below("quantile_huber(0.5, 0.5, 1) = 0.0625", (quantile_huber(0.5, 0.5, 1.0) - 0.0625).abs(), 1e-12),
        Check::below("quantile_huber(-2, 0.9, 1) = 0.15", (quantile_huber(-2.0, 0.9, 1.0) - 0.15).abs(), 1e-12),
    ];
    let mut gap: f64 = 0.0;
    for tau in [0.1, 0.5, 0.9] {
        for side in [1.0, -1.0] {
            let k = side * 1.0;
            gap = gap.max((quantile_huber(k - 1e-12, tau, 1.0) - quantile_huber(k + 1e-12, tau, 1.0)).abs());
        }
    }
    out.push(Check::below("quantile_huber continuous at |delta| = kappa", gap, 1e-9));

    let grid = QuantileGrid::even(32)?;
    let flat = wang_weights(0.0, &grid.midpoints)?;
    out.push(Check::below(
        "wang(0) is identically 1",
        flat.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max),
        1e-12,
    ));
    let centre = wang_weights(0.8, &[0.5])?[0];
    out.push(Check::below("wang(0.8) at 0.5 = exp(-0.32)", (centre - (-0.32f64).exp()).abs(), 1e-9));
    let fine = QuantileGrid::even(1000)?;
    for beta in [-0.8, -0.3, 0.3, 0.8] {
        let w = wang_weights(beta, &fine.midpoints)?;
        let integral = w.iter().sum::<f64>() / 1000.0;
        out.push(Check::below(&format!("wang({beta}) integrates to 1"), (integral - 1.0).abs(), 1e-3));
        let monotone = w.windows(2).all(|p| if beta > 0.0 { p[1] < p[0] } else { p[1] > p[0] });
        out.push(Check::below(&format!("wang({beta}) monotone"), if monotone { 0.0 } else { 1.0 }, 0.5));
    }
    Ok(out)
}

/// Finite-difference checks of every differentiable operation.
pub fn gradient_checks() -> Result<Vec<Check>> {
    const TOL: f64 = 1e-5;
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Dense network, parameters and input.
    let mut b = ParamBuilder::new();
    let mlp = Mlp::new(&mut b, "net", &NetworkSpec::new(&[3, 6, 5, 2], Activation::Tanh, Activation::Sigmoid))?;
    let params = b.build("net", &mut rng);
    let x = array![[0.3, -0.2, 0.9], [-0.5, 0.4, 0.1]];
    let dy = array![[1.0, -0.5], [0.25, 2.0]];
    let (_, cache) = mlp.forward(&params, x.view())?;
    let mut grad = params.zeros_like();
    let dx = mlp.backward(&params, &cache, dy.view(), &mut grad)?;
    let fd = central_difference(params.values(), 1e-6, |v| {
        (&mlp.forward(&with(&params, v), x.view()).expect("forward").0 * &dy).sum()
    });
    out.push(Check::below("mlp parameter gradient", relative_error(&grad, &fd), TOL));
    let xs = x.as_slice().expect("contiguous").to_vec();
    let fd = central_difference(&xs, 1e-6, |v| {
        let xv = Array2::from_shape_vec((2, 3), v.to_vec()).expect("shape");
        (&mlp.forward(&params, xv.view()).expect("forward").0 * &dy).sum()
    });
    out.push(Check::below("mlp input gradient", relative_error(dx.as_slice().expect("contiguous"), &fd), TOL));

    // Quantile embedding.
    let mut b = ParamBuilder::new();
    let emb = QuantileEmbedding::new(&mut b, "emb", 5, 4)?;
    let params = b.build("emb", &mut rng);
    let taus = [0.1, 0.45, 0.8];
    let dy = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
    let (_, cache) = emb.forward(&params, &taus)?;
    let mut grad = params.zeros_like();
    emb.backward(&params, &cache, &dy, &mut grad)?;
    let fd = central_difference(params.values(), 1e-6, |v| {
        (&emb.forward(&with(&params, v), &taus).expect("forward").0 * &dy).sum()
    });
    out.push(Check::below("quantile embedding gradient", relative_error(&grad, &fd), TOL));

    // Attention over 0, 1 and 4 nodes.
    let mut b = ParamBuilder::new();
    let att = AttentionAggregator::new(&mut b, "att", 3, 2, 4);
    let params = b.build("att", &mut rng);
    let ego = [0.2, -0.4, 0.7];
    for n_nodes in [0usize, 1, 4] {
        let nodes: Vec<Vec<f64>> = (0..n_nodes).map(|i| vec![0.3 * i as f64 - 0.5, 0.1 + 0.2 * i as f64]).collect();
        let dout = [0.5, -1.0, 0.25, 0.75];
        let (_, cache) = att.forward(&params, &ego, &nodes)?;
        let mut grad = params.zeros_like();
        att.backward(&params, &cache, &dout, &mut grad)?;
        let fd = central_difference(params.values(), 1e-6, |v| {
            let (y, _) = att.forward(&with(&params, v), &ego, &nodes).expect("forward");
            y.iter().zip(&dout).map(|(a, b)| a * b).sum()
        });
        out.push(Check::below(&format!("attention gradient ({n_nodes} nodes)"), relative_error(&grad, &fd), TOL));
    }

    // Quantile critic input gradient (the action derivative feeds the actor).
    let mut b = ParamBuilder::new();
    let critic = QuantileCritic::new(&mut b, 5, 6, 5)?;
    let mut params = b.build("critic", &mut rng);
    let v: Vec<f64> = params.values().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect();
    params.set_values(&v)?;
    let xin = array![[0.1, 0.5, -0.2, 0.3, 0.6]];
    let taus = [0.2, 0.5, 0.9];
    let dz = array![[1.0, 0.5, -0.3]];
    let (_, cache) = critic.forward(&params, xin.view(), &taus)?;
    let mut grad = params.zeros_like();
    let dx = critic.backward(&params, &cache, &dz, &mut grad)?;
    let fd = central_difference(xin.as_slice().expect("contiguous"), 1e-6, |v| {
        let xv = Array2::from_shape_vec((1, 5), v.to_vec()).expect("shape");
        (&critic.forward(&params, xv.view(), &taus).expect("forward").0 * &dz).sum()
    });
    out.push(Check::below("quantile critic input gradient", relative_error(dx.as_slice().expect("contiguous"), &fd), TOL));

    // Critic loss, actor objective and meta gradient of full learners.
    let g4 = QuantileGrid::even(4)?;
    let g3 = QuantileGrid::even(3)?;
    for variant in [Variant::IqncN, Variant::Iac] {
        let l = probe_learner(variant)?;
        let batch = synthetic_batch(6, 1)?;
        let (gk, gkp) = if variant == Variant::Iac { (QuantileGrid::even(1)?, QuantileGrid::even(1)?) } else { (g4.clone(), g3.clone()) };
        let (_, grad) = l.critic_loss_and_grad(&l.phi, &batch, &gk, &gkp)?;
        let fd = central_difference(l.phi.values(), 1e-6, |v| {
            l.critic_loss_and_grad(&with(&l.phi, v), &batch, &gk, &gkp).expect("loss").0
        });
        out.push(Check::below(&format!("critic loss gradient ({variant})"), relative_error(&grad, &fd), TOL));
    }
    for variant in [Variant::IqncN, Variant::IqncUcf, Variant::IqncCf, Variant::IqncM, Variant::Iac] {
        let l = probe_learner(variant)?;
        let batch = synthetic_batch(5, 2)?;
        let g = if variant == Variant::Iac { QuantileGrid::even(1)? } else { g4.clone() };
        let (_, grad) = l.actor_objective_and_grad(&l.theta, &batch, &g)?;
        let fd = central_difference(l.theta.values(), 1e-6, |v| {
            l.actor_objective_and_grad(&with(&l.theta, v), &batch, &g).expect("objective").0
        });
        out.push(Check::below(&format!("actor objective gradient ({variant})"), relative_error(&grad, &fd), TOL));
    }
    let l = probe_learner(Variant::IqncM)?;
    let (batch, fresh) = (synthetic_batch(5, 3)?, synthetic_batch(4, 4)?);
    let step = l.meta_gradient(&batch, &fresh, &g4)?;
    let eta = l.eta.clone().expect("meta learner has eta");
    let fd = central_difference(eta.values(), 1e-6, |v| {
        l.meta_objective(&with(&eta, v), &batch, &fresh, &g4).expect("meta objective")
    });
    out.push(Check::below("meta second-order gradient", relative_error(&step.grad_eta, &fd), 1e-4));
    Ok(out)
}

/// All oracles.
pub fn run() -> Result<Vec<Check>> {
    let mut all = value_checks()?;
    all.extend(gradient_checks()?);
    Ok(all)
}
