use crate::env::{EventGraph, EGO_FEATURES, NODE_FEATURES};
use crate::error::Result;
use crate::neural::{softmax, Activation, AttentionAggregator, AttentionCache, Mlp, MlpCache, NetworkSpec, ParamBuilder, ParameterSet};

/// Maps an event graph to distortion weights over the quantile midpoints:
/// attention over the other buses' events, then an MLP over
/// `[ego, context, 1 / event_count]` to `K` logits. Weights are `K * softmax`,
/// so they average to one; the last layer starts at zero (uniform weights).
#[derive(Clone, Debug, PartialEq)]
pub struct MetaWeightNet {
    pub attention: AttentionAggregator,
    pub head: Mlp,
    pub k: usize,
}

#[derive(Clone, Debug)]
pub struct MetaCache {
    attention: AttentionCache,
    head: MlpCache,
    probs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MetaWeightNet {
    pub fn new(builder: &mut ParamBuilder, k: usize, att_dim: usize, hidden: usize) -> Result<Self> {
        let attention = AttentionAggregator::new(builder, "meta.attention", EGO_FEATURES, NODE_FEATURES, att_dim);
        let head = Mlp::new(
            builder,
            "meta.head",
            &NetworkSpec::new(&[EGO_FEATURES + att_dim + 1, hidden, k], Activation::Tanh, Activation::Identity).with_final_init(0.0),
        )?;
        Ok(Self { attention, head, k })
    }

    pub fn forward(&self, params: &ParameterSet, graph: &EventGraph) -> Result<(Vec<f64>, MetaCache)> {
        let ego = graph.ego_features();
        let nodes = graph.node_features();
        let (ctx, attention) = self.attention.forward(params, &ego, &nodes)?;
        let mut input = Vec::with_capacity(EGO_FEATURES + ctx.len() + 1);
        input.extend_from_slice(&ego);
        input.extend_from_slice(&ctx);
        input.push(1.0 / graph.event_count() as f64);
        let x = ndarray::Array2::from_shape_vec((1, input.len()), input).expect("row");
        let (logits, head) = self.head.forward(params, x.view())?;
        let probs = softmax(logits.as_slice().expect("contiguous"));
        let weights: Vec<f64> = probs.iter().map(|p| p * self.k as f64).collect();
        Ok((
            weights.clone(),
            MetaCache {
                attention,
                head,
                probs,
                weights,
            },
        ))
    }

    pub fn weights(&self, params: &ParameterSet, graph: &EventGraph) -> Result<Vec<f64>> {
        Ok(self.forward(params, graph)?.0)
    }

    /// Accumulates into `grad` the gradient of `sum_i dw_i * w_i`.
    pub fn backward(&self, params: &ParameterSet, cache: &MetaCache, dw: &[f64], grad: &mut [f64]) -> Result<()> {
        let s = &cache.probs;
        let mean: f64 = dw.iter().zip(s).map(|(u, p)| u * p).sum();
        let kf = self.k as f64;
        let dlogits: Vec<f64> = dw.iter().zip(s).map(|(u, p)| kf * p * (u - mean)).collect();
        let dl = ndarray::Array2::from_shape_vec((1, self.k), dlogits).expect("row");
        let dinput = self.head.backward(params, &cache.head, dl.view(), grad)?;
        let d_att = self.attention.d_att;
        let dctx: Vec<f64> = dinput.row(0).iter().skip(EGO_FEATURES).take(d_att).copied().collect();
        self.attention.backward(params, &cache.attention, &dctx, grad)
    }
}
